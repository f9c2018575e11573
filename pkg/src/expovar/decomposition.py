"""Law-of-total-variance estimators over realization ledgers.

A ledger holds, for every realization, each bridge's sampled class and loss.
Bridge-level decomposition groups losses by class: the class-probability-
weighted conditional variance is the baseline part, the spread of conditional
means is the exposure-information part, and their sum is the total.

Regionally the same split is available through two routes. The direct route
treats the whole per-realization class vector as one joint class and reuses
the bridge estimator on regional loss, O(B). The pairwise route expands the
cross-bridge covariance terms cell by cell and is kept for audits, O(B^2).
Both estimate the same population quantities; finite-sample values differ.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

# Pairwise bookkeeping above this many bridges costs more than it audits.
PAIRWISE_LIMIT = 200


@dataclass(eq=False)
class Ledger:
    """Columnar realization ledger: classes and losses per (realization, asset).

    class_codes[r, b] indexes into class_ids[b], the per-asset catalog of
    class identifiers (stable 8-hex hashes of the class label).
    """

    asset_ids: tuple[str, ...]
    class_ids: tuple[tuple[str, ...], ...]
    class_codes: np.ndarray
    losses: np.ndarray
    seed: int | None = None
    n_maps: int | None = None

    def __post_init__(self) -> None:
        b = len(self.asset_ids)
        if b == 0:
            raise DataError("ledger has no assets")
        if len(set(self.asset_ids)) != b:
            raise DataError("ledger has duplicate asset ids")
        if len(self.class_ids) != b:
            raise DataError("class_ids must have one catalog per asset")
        self.class_codes = np.asarray(self.class_codes)
        self.losses = np.asarray(self.losses, dtype=float)
        if self.class_codes.shape != self.losses.shape or self.class_codes.ndim != 2:
            raise DataError(
                f"ledger shapes disagree: codes {self.class_codes.shape}, "
                f"losses {self.losses.shape}"
            )
        if self.class_codes.shape[1] != b:
            raise DataError("ledger width must equal the asset count")
        for j, catalog in enumerate(self.class_ids):
            hi = int(self.class_codes[:, j].max(initial=0))
            if hi >= len(catalog):
                raise DataError(
                    f"asset {self.asset_ids[j]!r}: class code {hi} outside catalog "
                    f"of {len(catalog)}"
                )
        if np.any(self.class_codes < 0):
            raise DataError("negative class code")
        if not np.all(np.isfinite(self.losses)):
            raise DataError("non-finite loss in ledger")

    @property
    def n_realizations(self) -> int:
        return int(self.losses.shape[0])

    @property
    def n_assets(self) -> int:
        return int(self.losses.shape[1])

    def column(self, asset_id: str) -> int:
        try:
            return self.asset_ids.index(asset_id)
        except ValueError:
            raise DataError(f"asset {asset_id!r} not in ledger") from None

    def regional_losses(self) -> np.ndarray:
        return self.losses.sum(axis=1)


@dataclass(frozen=True)
class ClassStat:
    """Per-class sample statistics: occupancy, conditional mean and variance."""

    class_id: str
    count: int
    pi: float
    mean: float
    var: float


@dataclass(frozen=True)
class VarianceDecomposition:
    """Total-variance split for one scope (an asset id, or "regional")."""

    scope: str
    mean: float
    baseline_var: float
    exposure_var: float
    total_var: float
    bias: float | None = None
    class_stats: tuple[ClassStat, ...] = ()
    diagnostics: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.total_var != self.baseline_var + self.exposure_var:
            raise DataError(f"{self.scope}: total variance is not the defining sum")
        if self.baseline_var < 0.0 or self.exposure_var < 0.0:
            raise DataError(f"{self.scope}: negative variance part")
        if self.class_stats:
            s = math.fsum(c.pi for c in self.class_stats)
            if abs(s - 1.0) > 1e-9:
                raise DataError(f"{self.scope}: class probabilities sum to {s!r}")


@dataclass(frozen=True)
class CovarianceReport:
    """Regional split into per-bridge sums and cross-bridge covariance terms."""

    method: str
    per_bridge_baseline_sum: float
    per_bridge_exposure_sum: float
    baseline_cross_sum: float
    exposure_cross_sum: float
    small_cell_count: int = 0


def _group_stats(codes: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, ...]:
    """Counts, means, and ddof-1 variances of y grouped by code (two-pass)."""
    uniq, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y)
    means = sums / counts
    resid = y - means[inverse]
    m2 = np.bincount(inverse, weights=resid * resid)
    vars = np.where(counts > 1, m2 / np.maximum(counts - 1, 1), 0.0)
    return uniq, inverse, counts, means, vars


def _decompose_column(
    codes: np.ndarray, y: np.ndarray, scope: str, catalog: tuple[str, ...] | None
) -> VarianceDecomposition:
    r = len(y)
    if r < 2:
        raise DataError(f"{scope}: need at least 2 realizations, got {r}")
    uniq, _, counts, means, vars = _group_stats(codes, y)
    pi = counts / r
    mean = math.fsum(p * m for p, m in zip(pi, means))
    baseline = math.fsum(p * v for p, v in zip(pi, vars))
    exposure = math.fsum(p * (m - mean) ** 2 for p, m in zip(pi, means))
    singles = int(np.sum(counts == 1))
    stats = tuple(
        ClassStat(
            class_id=catalog[int(u)] if catalog is not None else str(int(u)),
            count=int(n),
            pi=float(p),
            mean=float(m),
            var=float(v),
        )
        for u, n, p, m, v in zip(uniq, counts, pi, means, vars)
    )
    return VarianceDecomposition(
        scope=scope,
        mean=mean,
        baseline_var=baseline,
        exposure_var=exposure,
        total_var=baseline + exposure,
        class_stats=stats,
        diagnostics={"single_realization_classes": singles},
    )


def decompose_bridge(ledger: Ledger, asset_id: str) -> VarianceDecomposition:
    """Class-conditional variance split of one bridge's sampled losses."""
    b = ledger.column(asset_id)
    return _decompose_column(
        ledger.class_codes[:, b], ledger.losses[:, b], asset_id, ledger.class_ids[b]
    )


def _joint_codes(codes: np.ndarray) -> np.ndarray:
    """Map each realization's class vector to a dense joint-class index."""
    _, inverse = np.unique(codes, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def _decompose_regional_direct(ledger: Ledger) -> tuple[VarianceDecomposition, CovarianceReport]:
    rl = ledger.regional_losses()
    joint = _joint_codes(ledger.class_codes)
    decomp = _decompose_column(joint, rl, "regional", None)
    per_base = math.fsum(
        decompose_bridge(ledger, a).baseline_var for a in ledger.asset_ids
    )
    per_exp = math.fsum(
        decompose_bridge(ledger, a).exposure_var for a in ledger.asset_ids
    )
    report = CovarianceReport(
        method="direct",
        per_bridge_baseline_sum=per_base,
        per_bridge_exposure_sum=per_exp,
        baseline_cross_sum=decomp.baseline_var - per_base,
        exposure_cross_sum=decomp.exposure_var - per_exp,
        small_cell_count=int(decomp.diagnostics["single_realization_classes"]),
    )
    return decomp, report


def _decompose_regional_pairwise(
    ledger: Ledger,
) -> tuple[VarianceDecomposition, CovarianceReport]:
    r = ledger.n_realizations
    if r < 2:
        raise DataError(f"regional: need at least 2 realizations, got {r}")
    b_count = ledger.n_assets
    # marginal per-bridge statistics, reindexed to dense codes
    dense: list[np.ndarray] = []
    k_sizes: list[int] = []
    means_by_code: list[np.ndarray] = []
    bridge_mean: list[float] = []
    base_terms: list[float] = []
    exp_terms: list[float] = []
    singles = 0
    for b in range(b_count):
        y = ledger.losses[:, b]
        uniq, inverse, counts, means, vars = _group_stats(ledger.class_codes[:, b], y)
        pi = counts / r
        mu = math.fsum(p * m for p, m in zip(pi, means))
        base_terms.append(math.fsum(p * v for p, v in zip(pi, vars)))
        exp_terms.append(math.fsum(p * (m - mu) ** 2 for p, m in zip(pi, means)))
        singles += int(np.sum(counts == 1))
        dense.append(inverse)
        k_sizes.append(len(uniq))
        means_by_code.append(means)
        bridge_mean.append(mu)

    base_cross_parts: list[float] = []
    exp_cross_parts: list[float] = []
    small_cells = 0
    for b1 in range(b_count):
        y1 = ledger.losses[:, b1]
        for b2 in range(b1 + 1, b_count):
            y2 = ledger.losses[:, b2]
            k2 = k_sizes[b2]
            cell = dense[b1] * k2 + dense[b2]
            n_cells = k_sizes[b1] * k2
            counts = np.bincount(cell, minlength=n_cells)
            m1 = np.zeros(n_cells)
            m2c = np.zeros(n_cells)
            occupied = counts > 0
            np.divide(
                np.bincount(cell, weights=y1, minlength=n_cells),
                counts, out=m1, where=occupied,
            )
            np.divide(
                np.bincount(cell, weights=y2, minlength=n_cells),
                counts, out=m2c, where=occupied,
            )
            cross = np.bincount(
                cell, weights=(y1 - m1[cell]) * (y2 - m2c[cell]), minlength=n_cells
            )
            multi = counts > 1
            cov = np.zeros(n_cells)
            cov[multi] = cross[multi] / (counts[multi] - 1)
            small_cells += int(np.sum(counts == 1))
            pi_cell = counts / r
            base_cross_parts.append(float(pi_cell @ cov))
            # exposure cross term pairs marginal conditional means under the
            # joint cell weights
            i_idx = np.arange(n_cells) // k2
            j_idx = np.arange(n_cells) % k2
            d1 = means_by_code[b1][i_idx] - bridge_mean[b1]
            d2 = means_by_code[b2][j_idx] - bridge_mean[b2]
            exp_cross_parts.append(float(pi_cell @ (d1 * d2)))

    base_cross = 2.0 * math.fsum(base_cross_parts)
    exp_cross = 2.0 * math.fsum(exp_cross_parts)
    baseline = math.fsum(base_terms) + base_cross
    exposure = math.fsum(exp_terms) + exp_cross
    diagnostics = {
        "single_realization_classes": singles,
        "single_realization_cells": small_cells,
    }
    clamped = 0
    if baseline < 0.0:
        baseline = 0.0
        clamped += 1
    if exposure < 0.0:
        exposure = 0.0
        clamped += 1
    if clamped:
        diagnostics["negative_variance_clamped"] = clamped
    mean = math.fsum(bridge_mean)
    decomp = VarianceDecomposition(
        scope="regional",
        mean=mean,
        baseline_var=baseline,
        exposure_var=exposure,
        total_var=baseline + exposure,
        diagnostics=diagnostics,
    )
    report = CovarianceReport(
        method="pairwise",
        per_bridge_baseline_sum=math.fsum(base_terms),
        per_bridge_exposure_sum=math.fsum(exp_terms),
        baseline_cross_sum=base_cross,
        exposure_cross_sum=exp_cross,
        small_cell_count=small_cells,
    )
    return decomp, report


def decompose_regional(
    ledger: Ledger, method: str = "auto"
) -> tuple[VarianceDecomposition, CovarianceReport]:
    """Regional variance split; method is "direct", "pairwise", or "auto".

    "auto" uses the pairwise expansion up to PAIRWISE_LIMIT bridges and the
    O(B) joint-class route beyond it. A single-asset ledger reduces to the
    bridge estimator under either route.
    """
    if method == "auto":
        method = "pairwise" if ledger.n_assets <= PAIRWISE_LIMIT else "direct"
    if method == "direct":
        return _decompose_regional_direct(ledger)
    if method == "pairwise":
        return _decompose_regional_pairwise(ledger)
    raise DataError(f"unknown decomposition method {method!r}")


@dataclass(frozen=True)
class BiasReport:
    """Signed mean-loss gap, imputed minus truth, per asset and regionally."""

    per_asset: Mapping[str, float]
    per_asset_pct: Mapping[str, float | None]
    regional: float
    regional_pct: float | None


def bias_report(imputed: Ledger, truth: Ledger) -> BiasReport:
    """Mean-loss bias between an imputed-mode and a truth-mode ledger."""
    if imputed.asset_ids != truth.asset_ids:
        raise DataError("bias report needs identical asset sets in both ledgers")
    if imputed.seed is not None and truth.seed is not None and imputed.seed != truth.seed:
        raise DataError("bias report needs both ledgers drawn under one seed")
    mu_imp = imputed.losses.mean(axis=0)
    mu_tru = truth.losses.mean(axis=0)
    per_asset = {}
    per_pct = {}
    for j, asset_id in enumerate(imputed.asset_ids):
        d = float(mu_imp[j] - mu_tru[j])
        per_asset[asset_id] = d
        per_pct[asset_id] = None if mu_tru[j] == 0.0 else 100.0 * d / float(mu_tru[j])
    reg_imp = float(imputed.regional_losses().mean())
    reg_tru = float(truth.regional_losses().mean())
    regional = reg_imp - reg_tru
    return BiasReport(
        per_asset=per_asset,
        per_asset_pct=per_pct,
        regional=regional,
        regional_pct=None if reg_tru == 0.0 else 100.0 * regional / reg_tru,
    )


def write_ledger_csv(ledger: Ledger, path: str | Path) -> None:
    """Persist as audit CSV: realization_id, asset_id, class_hash, loss."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["realization_id", "asset_id", "class_hash", "loss"])
        for r in range(ledger.n_realizations):
            for b, asset_id in enumerate(ledger.asset_ids):
                code = int(ledger.class_codes[r, b])
                writer.writerow(
                    [r, asset_id, ledger.class_ids[b][code], repr(float(ledger.losses[r, b]))]
                )


def load_ledger_csv(path: str | Path) -> Ledger:
    """Read an audit CSV back into a columnar ledger."""
    path = Path(path)
    by_asset_losses: dict[str, dict[int, float]] = {}
    by_asset_codes: dict[str, dict[int, str]] = {}
    max_r = -1
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ledger: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        need = {"realization_id", "asset_id", "class_hash", "loss"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: ledger needs columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                r = int(row["realization_id"])
                loss = float(row["loss"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path} line {lineno}: bad numeric field") from exc
            asset_id = row["asset_id"]
            by_asset_losses.setdefault(asset_id, {})[r] = loss
            by_asset_codes.setdefault(asset_id, {})[r] = row["class_hash"]
            max_r = max(max_r, r)
    if max_r < 0:
        raise DataError(f"{path}: empty ledger")
    n_r = max_r + 1
    asset_ids = tuple(by_asset_losses)
    losses = np.empty((n_r, len(asset_ids)))
    codes = np.empty((n_r, len(asset_ids)), dtype=np.int32)
    catalogs = []
    for j, asset_id in enumerate(asset_ids):
        rows_l = by_asset_losses[asset_id]
        rows_c = by_asset_codes[asset_id]
        if len(rows_l) != n_r:
            raise DataError(
                f"{path}: asset {asset_id!r} has {len(rows_l)} rows, expected {n_r}"
            )
        catalog: dict[str, int] = {}
        for r in range(n_r):
            try:
                losses[r, j] = rows_l[r]
                h = rows_c[r]
            except KeyError:
                raise DataError(
                    f"{path}: asset {asset_id!r} missing realization {r}"
                ) from None
            codes[r, j] = catalog.setdefault(h, len(catalog))
        catalogs.append(tuple(catalog))
    return Ledger(
        asset_ids=asset_ids,
        class_ids=tuple(catalogs),
        class_codes=codes,
        losses=losses,
    )
