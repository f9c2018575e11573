"""Inspection prioritization, what-if truth substitution, and one-way
sensitivity summaries.

Prioritization ranks bridges by their marginal exposure-information variance
(each bridge decomposed on its own), so inspecting the top fraction targets
the assets whose attribute ambiguity adds the most regional variance. Cross-
bridge mean-covariance terms are deliberately left out of the ranking; the
what-if re-run captures them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .decomposition import VarianceDecomposition
from .errors import DataError
from .imputation import ExposureClassDistribution, truth_distribution
from .inventory import Inventory

SENSITIVITY_SOURCES = ("gmrf", "damage", "exposure", "loss")


@dataclass(frozen=True)
class RankedBridge:
    asset_id: str
    exposure_contribution: float
    cumulative_fraction: float


@dataclass(frozen=True)
class PrioritizationResult:
    """Bridges ordered by descending exposure-variance contribution.

    `selection` holds the asset ids making up the requested top fraction.
    `group_contributions` splits the selection's combined contribution by a
    caller-supplied label per asset (ground-truth class where available,
    otherwise "unknown").
    """

    ranked: tuple[RankedBridge, ...]
    selection: frozenset[str]
    top_fraction: float
    total_exposure_var: float
    group_contributions: Mapping[str, float]

    def __post_init__(self) -> None:
        contribs = [r.exposure_contribution for r in self.ranked]
        if any(b > a for a, b in zip(contribs, contribs[1:])):
            raise DataError("ranking is not in non-increasing contribution order")
        fracs = [r.cumulative_fraction for r in self.ranked]
        if any(b < a for a, b in zip(fracs, fracs[1:])):
            raise DataError("cumulative fractions must be non-decreasing")
        if fracs and abs(fracs[-1] - 1.0) > 1e-12:
            raise DataError(f"cumulative fractions end at {fracs[-1]!r}, not 1")


def prioritize(
    per_bridge: Iterable[VarianceDecomposition],
    top_fraction: float = 0.1,
    class_labels: Mapping[str, str] | None = None,
) -> PrioritizationResult:
    """Rank bridges by exposure variance and select the top fraction.

    Ties break on asset_id so the ranking is deterministic. When every
    contribution is zero the cumulative curve falls back to the diagonal i/n.
    The selection size is ceil(n * top_fraction), at least one asset.
    """
    decomps = list(per_bridge)
    if not decomps:
        raise DataError("prioritize needs at least one bridge decomposition")
    if not 0.0 < top_fraction <= 1.0:
        raise DataError(f"top_fraction must be in (0, 1], got {top_fraction!r}")
    for d in decomps:
        if d.exposure_var < 0.0:
            raise DataError(f"{d.scope}: negative exposure variance")
    ordered = sorted(decomps, key=lambda d: (-d.exposure_var, d.scope))
    total = math.fsum(d.exposure_var for d in ordered)
    n = len(ordered)
    ranked = []
    running = 0.0
    for i, d in enumerate(ordered):
        running += d.exposure_var
        frac = running / total if total > 0.0 else (i + 1) / n
        ranked.append(RankedBridge(d.scope, d.exposure_var, frac))
    n_select = max(1, math.ceil(n * top_fraction))
    selection = frozenset(r.asset_id for r in ranked[:n_select])
    groups: dict[str, float] = {}
    for r in ranked[:n_select]:
        label = (class_labels or {}).get(r.asset_id, "unknown")
        groups[label] = groups.get(label, 0.0) + r.exposure_contribution
    return PrioritizationResult(
        ranked=tuple(ranked),
        selection=selection,
        top_fraction=top_fraction,
        total_exposure_var=total,
        group_contributions=groups,
    )


def what_if_inspect(
    inventory: Inventory,
    distributions: Mapping[str, ExposureClassDistribution],
    selection: Iterable[str],
) -> dict[str, ExposureClassDistribution]:
    """Replace selected assets' class distributions with one-hot truth.

    Unselected entries pass through unchanged (same objects). Every selected
    asset must carry ground-truth values for the distribution's attributes.
    """
    chosen = set(selection)
    unknown = sorted(chosen - set(distributions))
    if unknown:
        raise DataError(f"selection not covered by distributions: {unknown}")
    out: dict[str, ExposureClassDistribution] = {}
    for asset_id, dist in distributions.items():
        if asset_id in chosen:
            asset = inventory.get(asset_id)
            out[asset_id] = truth_distribution(asset, dist.attributes, inventory.schema)
        else:
            out[asset_id] = dist
    return out


@dataclass(frozen=True)
class SensitivityRun:
    """Regional-loss spread when a single uncertainty source is left live."""

    source: str
    quantiles: tuple[float, float, float, float, float]
    variance: float
    mean: float

    def __post_init__(self) -> None:
        q = self.quantiles
        if any(b < a for a, b in zip(q, q[1:])):
            raise DataError(f"{self.source}: quantiles must be non-decreasing")
        if self.variance < 0.0:
            raise DataError(f"{self.source}: negative variance")


def summarize_regional_losses(source: str, regional_losses: np.ndarray) -> SensitivityRun:
    """Five-number quantile summary plus variance of a regional-loss sample."""
    y = np.asarray(regional_losses, dtype=float).reshape(-1)
    if y.size < 1:
        raise DataError("no regional losses to summarize")
    q = np.quantile(y, [0.05, 0.25, 0.50, 0.75, 0.95])
    if y.size > 1 and np.any(y != y[0]):
        var = float(np.var(y, ddof=1))
    else:
        # A constant sample has zero variance by definition; np.var can
        # return a tiny positive residue from floating-point cancellation.
        var = 0.0
    return SensitivityRun(
        source=source,
        quantiles=tuple(float(v) for v in q),
        variance=var,
        mean=float(y.mean()),
    )


def one_way_sensitivity(config, source: str) -> SensitivityRun:
    """Run the pipeline with only `source` stochastic and summarize the spread.

    Sources: "gmrf" (sample fields; most-probable class and damage states,
    median costs), "damage" (median field; sample states), "exposure" (sample
    class only), "loss" (sample unit costs only). "none" freezes everything
    (control run) and "all" leaves everything live.
    """
    from .pipeline import run_sensitivity_source

    return run_sensitivity_source(config, source)
