"""End-to-end engine: hazard maps -> class draws -> damage -> loss -> ledger.

Realizations form a flat grid of n_maps x n_realizations_per_map cells per
asset; cell c belongs to map c // R. Every stochastic purpose (class,
collapse, damage, cost, replacement cost) draws from its own counter-based
substream keyed by asset index (and component), so reruns are bit-identical
and editing one asset's inputs never perturbs another asset's draws.

A SourceMask freezes individual sources for one-way sensitivity runs: frozen
maps sit at the per-site median exp(mu), frozen classes at the most probable
class, frozen damage at the most probable state (collapse fires when its
probability exceeds one half), frozen costs at their medians.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import rng
from .analysis import (
    PrioritizationResult,
    SensitivityRun,
    prioritize,
    summarize_regional_losses,
    what_if_inspect,
)
from .config import RunConfig, load_selection
from .decomposition import (
    BiasReport,
    CovarianceReport,
    Ledger,
    VarianceDecomposition,
    bias_report,
    decompose_bridge,
    decompose_regional,
    write_ledger_csv,
)
from .errors import DataError
from .fragility import FragilityDatabase, collapse_probability, in_state_matrix, load_fragility
from .imputation import (
    ChainConstraintSet,
    ExposureClassDistribution,
    ScoreFile,
    class_hash,
    class_key,
    derive_quantities,
    distribution_for_asset,
    load_constraints,
    load_score_file,
    truth_distribution,
)
from .inventory import Inventory, load_inventory, load_schema
from .loss import LossModel, load_loss_model
from .hazard import ScenarioHazardInput, load_hazard, sample_fields

INCOMPLETE_MARKER = "_INCOMPLETE"


@dataclass(frozen=True)
class SourceMask:
    """Which stochastic sources stay live; False freezes a source."""

    gmrf: bool = True
    damage: bool = True
    exposure: bool = True
    cost: bool = True


SOURCE_MASKS: Mapping[str, SourceMask] = {
    "all": SourceMask(),
    "none": SourceMask(gmrf=False, damage=False, exposure=False, cost=False),
    "gmrf": SourceMask(gmrf=True, damage=False, exposure=False, cost=False),
    "damage": SourceMask(gmrf=False, damage=True, exposure=False, cost=False),
    "exposure": SourceMask(gmrf=False, damage=False, exposure=True, cost=False),
    "loss": SourceMask(gmrf=False, damage=False, exposure=False, cost=True),
}


@dataclass(frozen=True)
class LoadedInputs:
    """Every parsed input file for one run."""

    inventory: Inventory
    score_file: ScoreFile | None
    constraints: ChainConstraintSet
    fragilities: FragilityDatabase
    loss_model: LossModel
    hazard: ScenarioHazardInput


def load_inputs(config: RunConfig) -> LoadedInputs:
    missing = [str(p) for p in config.input_paths().values() if not p.is_file()]
    if missing:
        raise DataError(f"input file(s) not found: {missing}")
    schema = load_schema(config.schema)
    inventory = load_inventory(config.inventory, schema)
    score_file = None
    if config.scores is not None:
        score_file = load_score_file(config.scores, schema)
    constraints = ChainConstraintSet()
    if config.constraints is not None:
        constraints = load_constraints(config.constraints, schema)
    return LoadedInputs(
        inventory=inventory,
        score_file=score_file,
        constraints=constraints,
        fragilities=load_fragility(config.fragility),
        loss_model=load_loss_model(config.loss_model),
        hazard=load_hazard(config.hazard),
    )


def chained_attributes(inputs: LoadedInputs) -> tuple[str, ...]:
    if inputs.score_file is not None:
        return inputs.score_file.chain
    return tuple(inputs.inventory.schema.names)


def build_distributions(
    inputs: LoadedInputs, truth: bool
) -> dict[str, ExposureClassDistribution]:
    """Joint class distribution per asset: imputed mixture or one-hot truth."""
    attrs = chained_attributes(inputs)
    out: dict[str, ExposureClassDistribution] = {}
    for asset in inputs.inventory.assets:
        if truth:
            out[asset.asset_id] = truth_distribution(asset, attrs, inputs.inventory.schema)
        else:
            sf = inputs.score_file or ScoreFile(chain=attrs, temperatures={}, assets={})
            out[asset.asset_id] = distribution_for_asset(
                sf, asset, inputs.inventory.schema, inputs.constraints
            )
    return out


def _site_columns(inputs: LoadedInputs) -> list[int]:
    by_id = {s.asset_id: i for i, s in enumerate(inputs.hazard.sites)}
    cols = []
    for asset in inputs.inventory.assets:
        col = by_id.get(asset.asset_id)
        if col is None:
            raise DataError(f"asset {asset.asset_id!r} has no hazard site")
        cols.append(col)
    return cols


def _cost_arrays(model: LossModel, component: str, n_states: int) -> tuple[np.ndarray, np.ndarray]:
    """Median and dispersion per state (index 0 = undamaged, cost 0)."""
    med = np.zeros(n_states + 1)
    disp = np.zeros(n_states + 1)
    for k in range(1, n_states + 1):
        uc = model.unit_cost(component, k)
        med[k] = uc.median
        disp[k] = uc.dispersion
    return med, disp


def run_engine(
    inputs: LoadedInputs,
    distributions: Mapping[str, ExposureClassDistribution],
    n_maps: int,
    r_per_map: int,
    seed: int,
    mask: SourceMask = SourceMask(),
) -> Ledger:
    """Sample the full loss ledger: n_maps x r_per_map cells per asset."""
    if r_per_map < 1 or n_maps < 1:
        raise DataError("n_maps and r_per_map must be >= 1")
    inventory = inputs.inventory
    model = inputs.loss_model
    fragdb = inputs.fragilities
    cols = _site_columns(inputs)
    if mask.gmrf:
        fields = sample_fields(inputs.hazard, n_maps, seed)
        im_table = fields.maps
        row_idx = np.repeat(np.arange(n_maps), r_per_map)
    else:
        im_table = np.exp(inputs.hazard.median_ln_im)[None, :]
        row_idx = np.zeros(n_maps * r_per_map, dtype=int)
    n_total = n_maps * r_per_map
    n_assets = len(inventory.assets)
    losses = np.empty((n_total, n_assets))
    codes = np.empty((n_total, n_assets), dtype=np.int32)
    catalogs: list[tuple[str, ...]] = []

    for j, asset in enumerate(inventory.assets):
        dist = distributions.get(asset.asset_id)
        if dist is None:
            raise DataError(f"no class distribution for asset {asset.asset_id!r}")
        ims = im_table[:, cols[j]]
        labels = [dist.label(c) for c in range(dist.n_classes)]
        quants = [derive_quantities(asset, lab, model.ruleset) for lab in labels]

        if mask.exposure and dist.n_classes > 1:
            u = rng.substream(seed, rng.CLASS, j).random(n_total)
            code = np.minimum(
                np.searchsorted(np.cumsum(dist.probs), u, side="right"),
                dist.n_classes - 1,
            ).astype(np.int32)
        else:
            code = np.full(n_total, dist.argmax(), dtype=np.int32)

        class_masks = [code == c for c in range(dist.n_classes)]

        if fragdb.triggers:
            pc_rows = np.stack(
                [
                    np.atleast_1d(collapse_probability(fragdb, lab, q, ims))
                    for lab, q in zip(labels, quants)
                ]
            )
            pcell = pc_rows[code, row_idx]
            if mask.damage:
                collapsed = rng.substream(seed, rng.COLLAPSE, j).random(n_total) < pcell
            else:
                collapsed = pcell > 0.5
            rpc_cell: np.ndarray | float = model.rpc_median(asset)
            if mask.cost and model.rpc_dispersion > 0.0:
                z_rpc = rng.substream(seed, rng.RPC, j).standard_normal(n_total)
                rpc_cell = rpc_cell * np.exp(model.rpc_dispersion * z_rpc)
        else:
            collapsed = None

        re_cells = np.zeros(n_total)
        comp_names = sorted({c for q in quants for c, n in q.items() if n > 0})
        matrix_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for comp in comp_names:
            per_class = []
            any_disp = False
            for lab, q in zip(labels, quants):
                n_j = q.get(comp, 0)
                if n_j <= 0:
                    per_class.append(None)
                    continue
                curve = fragdb.resolve(lab, comp)
                cached = matrix_cache.get(id(curve))
                if cached is None:
                    probs, _ = in_state_matrix(curve, ims)
                    cached = (np.cumsum(probs, axis=-1), np.argmax(probs, axis=-1))
                    matrix_cache[id(curve)] = cached
                med, disp = _cost_arrays(model, comp, curve.n_states)
                if np.any(disp > 0.0):
                    any_disp = True
                per_class.append((cached[0], cached[1], n_j, med, disp, curve.n_states))
            u_d = (
                rng.substream(seed, rng.DAMAGE, j, rng.component_key(comp)).random(n_total)
                if mask.damage
                else None
            )
            z_c = (
                rng.substream(seed, rng.COST, j, rng.component_key(comp)).standard_normal(n_total)
                if mask.cost and any_disp
                else None
            )
            for c, entry in enumerate(per_class):
                if entry is None:
                    continue
                cmask = class_masks[c]
                if not cmask.any():
                    continue
                cum, most_probable, n_j, med, disp, n_states = entry
                rows = row_idx[cmask]
                if u_d is not None:
                    st = np.minimum(
                        (cum[rows] <= u_d[cmask, None]).sum(axis=1), n_states
                    )
                else:
                    st = most_probable[rows]
                cost = n_j * med[st]
                if z_c is not None:
                    cost = cost * np.exp(disp[st] * z_c[cmask])
                re_cells[cmask] += cost

        if collapsed is not None:
            losses[:, j] = np.where(collapsed, rpc_cell, re_cells)
        else:
            losses[:, j] = re_cells
        codes[:, j] = code
        catalogs.append(tuple(class_hash(lab) for lab in labels))

    return Ledger(
        asset_ids=tuple(inventory.asset_ids),
        class_ids=tuple(catalogs),
        class_codes=codes,
        losses=losses,
        seed=int(seed),
        n_maps=int(n_maps),
    )


def validate_inputs(config: RunConfig) -> list[str]:
    """Cross-check coverage without simulating; findings, not exceptions.

    Checks: all paths exist, every file parses, every asset has a hazard
    site, every reachable (class, component) has a fragility curve, every
    reachable (component, state) has a unit cost, and replacement cost
    resolves wherever collapse can trigger.
    """
    findings: list[str] = []
    missing = [str(p) for p in config.input_paths().values() if not p.is_file()]
    for m in missing:
        findings.append(f"missing input file: {m}")
    if findings:
        return findings
    try:
        inputs = load_inputs(config)
    except DataError as exc:
        return [str(exc)]
    try:
        distributions = build_distributions(inputs, truth=False)
    except DataError as exc:
        return [str(exc)]
    try:
        _site_columns(inputs)
    except DataError as exc:
        findings.append(str(exc))
    model = inputs.loss_model
    fragdb = inputs.fragilities
    for asset in inputs.inventory.assets:
        dist = distributions[asset.asset_id]
        for c in range(dist.n_classes):
            label = dist.label(c)
            try:
                quants = derive_quantities(asset, label, model.ruleset)
            except DataError as exc:
                findings.append(str(exc))
                continue
            if fragdb.triggers:
                try:
                    model.rpc_median(asset)
                except DataError as exc:
                    findings.append(str(exc))
            for comp in sorted(q for q, n in quants.items() if n > 0):
                try:
                    curve = fragdb.resolve(label, comp)
                except DataError as exc:
                    findings.append(str(exc))
                    continue
                for k in range(1, curve.n_states + 1):
                    try:
                        model.unit_cost(comp, k)
                    except DataError as exc:
                        findings.append(str(exc))
    return sorted(set(findings))


@dataclass(frozen=True)
class RunResult:
    """Everything a full run produced, with artifact paths for the CLI."""

    config: RunConfig
    ledgers: Mapping[str, Ledger]
    regional: Mapping[str, VarianceDecomposition]
    reports: Mapping[str, CovarianceReport]
    per_bridge: Mapping[str, list[VarianceDecomposition]]
    prioritization: PrioritizationResult | None
    sensitivity: list[SensitivityRun]
    bias: BiasReport | None
    artifacts: list[Path]


def _cv(var: float, mean: float) -> float | None:
    return math.sqrt(var) / mean if mean > 0.0 else None


def _decomp_dict(d: VarianceDecomposition, with_classes: bool = True) -> dict:
    out = {
        "scope": d.scope,
        "mean": d.mean,
        "baseline_var": d.baseline_var,
        "exposure_var": d.exposure_var,
        "total_var": d.total_var,
        "cv_total": _cv(d.total_var, d.mean),
        "cv_baseline": _cv(d.baseline_var, d.mean),
        "cv_exposure": _cv(d.exposure_var, d.mean),
        "diagnostics": dict(d.diagnostics),
    }
    if d.bias is not None:
        out["bias"] = d.bias
    if with_classes and d.class_stats:
        out["class_stats"] = [
            {"class_id": c.class_id, "count": c.count, "pi": c.pi, "mean": c.mean, "var": c.var}
            for c in d.class_stats
        ]
    return out


def _report_dict(r: CovarianceReport) -> dict:
    return {
        "method": r.method,
        "per_bridge_baseline_sum": r.per_bridge_baseline_sum,
        "per_bridge_exposure_sum": r.per_bridge_exposure_sum,
        "baseline_cross_sum": r.baseline_cross_sum,
        "exposure_cross_sum": r.exposure_cross_sum,
        "small_cell_count": r.small_cell_count,
    }


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_bridge_report(
    path: Path,
    inventory: Inventory,
    decomps: list[VarianceDecomposition],
    bias: BiasReport | None,
) -> None:
    header = [
        "asset_id", "latitude", "longitude", "mean", "baseline_var", "exposure_var",
        "total_var", "cv_total", "exposure_share", "n_classes",
        "single_realization_classes",
    ]
    if bias is not None:
        header += ["bias", "bias_pct"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for d in decomps:
            asset = inventory.get(d.scope)
            cv = _cv(d.total_var, d.mean)
            share = d.exposure_var / d.total_var if d.total_var > 0.0 else 0.0
            row = [
                d.scope, repr(asset.latitude), repr(asset.longitude), repr(d.mean),
                repr(d.baseline_var), repr(d.exposure_var), repr(d.total_var),
                "" if cv is None else repr(cv), repr(share), len(d.class_stats),
                d.diagnostics.get("single_realization_classes", 0),
            ]
            if bias is not None:
                b = bias.per_asset[d.scope]
                pct = bias.per_asset_pct[d.scope]
                row += [repr(b), "" if pct is None else repr(pct)]
            writer.writerow(row)


def _write_prioritization(
    path: Path, result: PrioritizationResult, class_labels: Mapping[str, str]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["rank", "asset_id", "exposure_var", "cumulative_fraction", "selected", "truth_class"]
        )
        for i, r in enumerate(result.ranked, start=1):
            selected = r.asset_id in result.selection
            writer.writerow(
                [
                    i, r.asset_id, repr(r.exposure_contribution),
                    repr(r.cumulative_fraction), int(selected),
                    class_labels.get(r.asset_id, "unknown"),
                ]
            )


def _write_cumulative_plot(path: Path, result: PrioritizationResult) -> None:
    n = len(result.ranked)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank_fraction", "cumulative_fraction"])
        for i, r in enumerate(result.ranked, start=1):
            writer.writerow([repr(i / n), repr(r.cumulative_fraction)])


def _write_bridge_map(path: Path, inventory: Inventory, decomps: list[VarianceDecomposition]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["asset_id", "latitude", "longitude", "mean_loss", "cv_total", "exposure_share"]
        )
        for d in decomps:
            asset = inventory.get(d.scope)
            cv = _cv(d.total_var, d.mean)
            share = d.exposure_var / d.total_var if d.total_var > 0.0 else 0.0
            writer.writerow(
                [
                    d.scope, repr(asset.latitude), repr(asset.longitude), repr(d.mean),
                    "" if cv is None else repr(cv), repr(share),
                ]
            )


def _write_sensitivity(path: Path, runs: list[SensitivityRun], all_variance: float) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["source", "q05", "q25", "q50", "q75", "q95", "mean", "variance", "share_of_total"]
        )
        for run in runs:
            share = run.variance / all_variance if all_variance > 0.0 else ""
            writer.writerow(
                [run.source]
                + [repr(q) for q in run.quantiles]
                + [repr(run.mean), repr(run.variance), "" if share == "" else repr(share)]
            )


def _truth_class_labels(inputs: LoadedInputs) -> dict[str, str]:
    """Ground-truth class key per asset where complete, for grouping reports."""
    attrs = chained_attributes(inputs)
    labels: dict[str, str] = {}
    for asset in inputs.inventory.assets:
        try:
            dist = truth_distribution(asset, attrs, inputs.inventory.schema)
        except DataError:
            continue
        labels[asset.asset_id] = class_key(dist.label(0))
    return labels


def run(config: RunConfig) -> RunResult:
    """Execute the configured pipeline and write all artifacts.

    A marker file _INCOMPLETE sits in the output directory while the run is
    in flight and is removed on success, so interrupted output is
    recognizable.
    """
    inputs = load_inputs(config)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("run in progress or failed; artifacts may be partial\n")
    artifacts: list[Path] = []

    modes = ["imputed", "truth"] if config.mode == "both" else [config.mode]
    distributions: dict[str, dict] = {}
    for mode in modes:
        dists = build_distributions(inputs, truth=(mode == "truth"))
        if mode == "imputed" and config.what_if_selection is not None:
            selection = load_selection(config.what_if_selection)
            dists = what_if_inspect(inputs.inventory, dists, selection)
        distributions[mode] = dists

    ledgers: dict[str, Ledger] = {}
    regional: dict[str, VarianceDecomposition] = {}
    reports: dict[str, CovarianceReport] = {}
    per_bridge: dict[str, list[VarianceDecomposition]] = {}
    for mode in modes:
        ledger = run_engine(
            inputs,
            distributions[mode],
            config.n_maps,
            config.n_realizations_per_map,
            config.master_seed,
        )
        ledgers[mode] = ledger
        if config.write_ledger:
            p = out / f"ledger_{mode}.csv"
            write_ledger_csv(ledger, p)
            artifacts.append(p)

    bias = None
    if config.mode == "both":
        bias = bias_report(ledgers["imputed"], ledgers["truth"])

    prioritization = None
    sensitivity: list[SensitivityRun] = []
    if config.decompose:
        for mode in modes:
            ledger = ledgers[mode]
            decomps = [decompose_bridge(ledger, a) for a in ledger.asset_ids]
            if bias is not None and mode == "imputed":
                decomps = [
                    replace(d, bias=bias.per_asset[d.scope]) for d in decomps
                ]
            per_bridge[mode] = decomps
            reg, rep = decompose_regional(ledger, method=config.method)
            if bias is not None and mode == "imputed":
                reg = replace(reg, bias=bias.regional)
            regional[mode] = reg
            reports[mode] = rep
            p = out / f"bridge_report_{mode}.csv"
            _write_bridge_report(
                p, inputs.inventory, decomps, bias if mode == "imputed" else None
            )
            artifacts.append(p)

        payload = {
            mode: {
                "regional": _decomp_dict(regional[mode]),
                "covariance_report": _report_dict(reports[mode]),
                "per_bridge": [_decomp_dict(d) for d in per_bridge[mode]],
            }
            for mode in modes
        }
        if bias is not None:
            payload["bias"] = {
                "regional": bias.regional,
                "regional_pct": bias.regional_pct,
                "per_asset": dict(bias.per_asset),
                "per_asset_pct": dict(bias.per_asset_pct),
            }
        p = out / "decomposition.json"
        _write_json(p, payload)
        artifacts.append(p)

        ranking_mode = "imputed" if "imputed" in per_bridge else modes[0]
        truth_labels = _truth_class_labels(inputs)
        prioritization = prioritize(
            per_bridge[ranking_mode],
            top_fraction=config.top_fraction,
            class_labels=truth_labels,
        )
        p = out / "prioritization.csv"
        _write_prioritization(p, prioritization, truth_labels)
        artifacts.append(p)
        p = out / "plot_cumulative_contribution.csv"
        _write_cumulative_plot(p, prioritization)
        artifacts.append(p)
        p = out / "plot_bridge_map.csv"
        _write_bridge_map(p, inputs.inventory, per_bridge[ranking_mode])
        artifacts.append(p)

        if bias is not None:
            p = out / "bias_report.json"
            _write_json(
                p,
                {
                    "regional": bias.regional,
                    "regional_pct": bias.regional_pct,
                    "per_asset": dict(bias.per_asset),
                    "per_asset_pct": dict(bias.per_asset_pct),
                },
            )
            artifacts.append(p)

        if config.sensitivity_sources:
            sens_mode = "truth" if config.mode == "truth" else "imputed"
            all_run = summarize_regional_losses(
                "all", ledgers[sens_mode].regional_losses()
            )
            for source in config.sensitivity_sources:
                ledger = run_engine(
                    inputs,
                    distributions[sens_mode],
                    config.n_maps,
                    config.n_realizations_per_map,
                    config.master_seed,
                    mask=SOURCE_MASKS[source],
                )
                sensitivity.append(
                    summarize_regional_losses(source, ledger.regional_losses())
                )
            p = out / "sensitivity.csv"
            _write_sensitivity(p, sensitivity + [all_run], all_run.variance)
            artifacts.append(p)

    marker.unlink()
    return RunResult(
        config=config,
        ledgers=ledgers,
        regional=regional,
        reports=reports,
        per_bridge=per_bridge,
        prioritization=prioritization,
        sensitivity=sensitivity,
        bias=bias,
        artifacts=artifacts,
    )


def run_sensitivity_source(config: RunConfig, source: str) -> SensitivityRun:
    """One-way sensitivity: only `source` stochastic, quantile summary."""
    mask = SOURCE_MASKS.get(source)
    if mask is None:
        raise DataError(
            f"unknown sensitivity source {source!r}; choose from {sorted(SOURCE_MASKS)}"
        )
    inputs = load_inputs(config)
    dists = build_distributions(inputs, truth=(config.mode == "truth"))
    ledger = run_engine(
        inputs,
        dists,
        config.n_maps,
        config.n_realizations_per_map,
        config.master_seed,
        mask=mask,
    )
    return summarize_regional_losses(source, ledger.regional_losses())
