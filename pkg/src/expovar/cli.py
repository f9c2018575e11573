"""Command-line entry points.

Subcommands: run, validate, decompose, prioritize, sensitivity. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure. All
randomness flows from --seed / the configured master seed, so repeating a
command reproduces its artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .analysis import prioritize, summarize_regional_losses
from .config import SOURCES, load_config
from .decomposition import (
    VarianceDecomposition,
    decompose_bridge,
    decompose_regional,
    load_ledger_csv,
)
from .errors import ConfigError, DataError, NumericError
from .pipeline import (
    SOURCE_MASKS,
    _decomp_dict,
    _report_dict,
    _write_prioritization,
    _write_sensitivity,
    build_distributions,
    load_inputs,
    run,
    run_engine,
    validate_inputs,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expovar",
        description=(
            "Quantify how probabilistic attribute imputation shifts and widens "
            "regional seismic loss estimates."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument(
            "--threads", type=int, default=1,
            help="worker bound; the engine's kernels are vectorized single-process, "
                 "so values above 1 are accepted for interface compatibility",
        )
        p.add_argument("--out", type=str, default=None, help="override the output location")

    p_run = sub.add_parser("run", help="execute the full pipeline from a config file")
    p_run.add_argument("config", help="TOML or JSON run configuration")
    common(p_run)

    p_val = sub.add_parser("validate", help="cross-check inputs without simulating")
    p_val.add_argument("config", help="TOML or JSON run configuration")

    p_dec = sub.add_parser("decompose", help="decompose a persisted realization ledger")
    p_dec.add_argument("ledger", help="ledger CSV (realization_id, asset_id, class_hash, loss)")
    p_dec.add_argument(
        "--method", choices=("auto", "direct", "pairwise"), default="auto",
        help="regional estimator route",
    )
    p_dec.add_argument("--out", type=str, default=None, help="write JSON here instead of stdout")

    p_pri = sub.add_parser("prioritize", help="rank bridges from a bridge-report CSV")
    p_pri.add_argument("report", help="bridge report CSV with asset_id and exposure_var columns")
    p_pri.add_argument("--top", type=float, default=0.10, help="selection fraction (0, 1]")
    p_pri.add_argument("--out", type=str, default=None, help="write CSV here instead of stdout")

    p_sen = sub.add_parser("sensitivity", help="re-run with a single stochastic source")
    p_sen.add_argument("config", help="TOML or JSON run configuration")
    p_sen.add_argument("--source", choices=SOURCES, required=True)
    common(p_sen)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    result = run(config)
    for mode, reg in result.regional.items():
        print(
            f"{mode}: regional mean {reg.mean:.6g}, baseline var {reg.baseline_var:.6g}, "
            f"exposure var {reg.exposure_var:.6g}, total var {reg.total_var:.6g}"
        )
    if result.bias is not None:
        pct = result.bias.regional_pct
        suffix = "" if pct is None else f" ({pct:+.2f}%)"
        print(f"regional bias {result.bias.regional:.6g}{suffix}")
    for p in result.artifacts:
        print(f"wrote {p}")
    return 0


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    findings = validate_inputs(config)
    if not findings:
        print("ok: inputs are complete and consistent")
        return 0
    for f in findings:
        print(f"finding: {f}")
    return 3


def _cmd_decompose(args) -> int:
    ledger = load_ledger_csv(args.ledger)
    regional, report = decompose_regional(ledger, method=args.method)
    payload = {
        "regional": _decomp_dict(regional),
        "covariance_report": _report_dict(report),
        "per_bridge": [
            _decomp_dict(decompose_bridge(ledger, a)) for a in ledger.asset_ids
        ],
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _read_bridge_report(path: str) -> list[VarianceDecomposition]:
    decomps = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"asset_id", "exposure_var"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: bridge report needs columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                exposure = float(row["exposure_var"])
                baseline = float(row.get("baseline_var") or 0.0)
                mean = float(row.get("mean") or 0.0)
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: bad numeric field") from exc
            decomps.append(
                VarianceDecomposition(
                    scope=row["asset_id"],
                    mean=mean,
                    baseline_var=baseline,
                    exposure_var=exposure,
                    total_var=baseline + exposure,
                )
            )
    if not decomps:
        raise DataError(f"{path}: empty bridge report")
    return decomps


def _cmd_prioritize(args) -> int:
    decomps = _read_bridge_report(args.report)
    result = prioritize(decomps, top_fraction=args.top)
    if args.out:
        _write_prioritization(Path(args.out), result, {})
        print(f"wrote {args.out}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["rank", "asset_id", "exposure_var", "cumulative_fraction", "selected"])
        for i, r in enumerate(result.ranked, start=1):
            writer.writerow(
                [i, r.asset_id, repr(r.exposure_contribution), repr(r.cumulative_fraction),
                 int(r.asset_id in result.selection)]
            )
    return 0


def _cmd_sensitivity(args) -> int:
    config = load_config(args.config).with_overrides(seed=args.seed)
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    inputs = load_inputs(config)
    dists = build_distributions(inputs, truth=(config.mode == "truth"))
    runs = []
    for source in (args.source, "all"):
        ledger = run_engine(
            inputs, dists, config.n_maps, config.n_realizations_per_map,
            config.master_seed, mask=SOURCE_MASKS[source],
        )
        runs.append(summarize_regional_losses(source, ledger.regional_losses()))
    target, all_run = runs
    if args.out:
        _write_sensitivity(Path(args.out), [target, all_run], all_run.variance)
        print(f"wrote {args.out}")
    else:
        share = target.variance / all_run.variance if all_run.variance > 0.0 else float("nan")
        q = target.quantiles
        print(
            f"{target.source}: q05 {q[0]:.6g}, q25 {q[1]:.6g}, q50 {q[2]:.6g}, "
            f"q75 {q[3]:.6g}, q95 {q[4]:.6g}, variance {target.variance:.6g} "
            f"({share:.1%} of all-sources variance)"
        )
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "validate": _cmd_validate,
    "decompose": _cmd_decompose,
    "prioritize": _cmd_prioritize,
    "sensitivity": _cmd_sensitivity,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
