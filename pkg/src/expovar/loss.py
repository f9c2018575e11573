"""Repair-cost model: collapse-weighted replacement plus component repair.

Loss for a bridge at one intensity level is L = RP + RE. RP is the
replacement cost weighted by (or conditioned on) collapse; RE aggregates
n_j * UC_{j,k} over components and damage states, scaled by (1 - p_c).
Unit costs and the replacement cost are lognormal with a point value as the
zero-dispersion case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError
from .fragility import FragilityDatabase, collapse_probability, in_state_matrix
from .imputation import QuantityRuleset, derive_quantities
from .inventory import AssetRecord


@dataclass(frozen=True)
class UnitCost:
    """Lognormal unit repair cost: median and log-space dispersion."""

    median: float
    dispersion: float = 0.0

    def __post_init__(self) -> None:
        if self.median < 0.0 or not math.isfinite(self.median):
            raise DataError(f"unit-cost median must be >= 0, got {self.median!r}")
        if self.dispersion < 0.0 or not math.isfinite(self.dispersion):
            raise DataError(f"unit-cost dispersion must be >= 0, got {self.dispersion!r}")

    @property
    def mean(self) -> float:
        return self.median * math.exp(self.dispersion**2 / 2.0)

    def draw(self, z: float) -> float:
        return self.median * math.exp(self.dispersion * z)


@dataclass(frozen=True)
class LossModel:
    """Unit costs per (component, state), replacement-cost rules, quantity rules."""

    unit_costs: Mapping[tuple[str, int], UnitCost]
    rpc_flat: float | None = None
    rpc_per_deck_area: float | None = None
    rpc_dispersion: float = 0.0
    ruleset: QuantityRuleset = field(default_factory=QuantityRuleset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "unit_costs", dict(self.unit_costs))
        for (comp, state), uc in self.unit_costs.items():
            if state < 1:
                raise DataError(
                    f"unit cost for {comp!r} references state {state}; states start at 1"
                )
        if self.rpc_dispersion < 0.0:
            raise DataError("replacement-cost dispersion must be >= 0")

    def unit_cost(self, component: str, state: int) -> UnitCost:
        uc = self.unit_costs.get((component, state))
        if uc is None:
            raise DataError(f"no unit cost for component {component!r}, state {state}")
        return uc

    def rpc_median(self, asset: AssetRecord) -> float:
        """Replacement cost for one asset: override, then area rate, then flat."""
        if asset.replacement_cost is not None:
            return float(asset.replacement_cost)
        if self.rpc_per_deck_area is not None:
            area = asset.side_values.get("deck_area")
            if area is not None:
                return float(self.rpc_per_deck_area) * float(area)
        if self.rpc_flat is not None:
            return float(self.rpc_flat)
        raise DataError(f"asset {asset.asset_id!r}: replacement cost unresolved")

    def rpc_mean(self, asset: AssetRecord) -> float:
        return self.rpc_median(asset) * math.exp(self.rpc_dispersion**2 / 2.0)

    def missing_cost_entries(self, db: FragilityDatabase) -> list[tuple[str, int]]:
        """(component, state) pairs the fragility DB can reach without a cost."""
        missing = []
        for component in db.components:
            states = max(c.n_states for c in db.curves_for(component))
            for k in range(1, states + 1):
                if (component, k) not in self.unit_costs:
                    missing.append((component, k))
        return missing


@dataclass(frozen=True)
class BridgeLossSample:
    """One realized bridge loss, split into replacement and repair parts."""

    asset_id: str
    map_id: int
    realization_id: int
    class_label: Mapping[str, str]
    total: float
    replacement_part: float
    repairable_part: float
    per_component: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.replacement_part < 0.0 or self.repairable_part < 0.0:
            raise DataError(f"asset {self.asset_id!r}: negative loss part")
        if abs(self.total - (self.replacement_part + self.repairable_part)) > 1e-9 * max(
            1.0, abs(self.total)
        ):
            raise DataError(f"asset {self.asset_id!r}: total != RP + RE")


def expected_loss(
    asset: AssetRecord,
    class_label: Mapping[str, str],
    im: float,
    model: LossModel,
    fragilities: FragilityDatabase,
) -> tuple[float, float, float, dict[str, float]]:
    """Analytical expectation of (L, RP, RE, per-component RE) at one im.

    Uses mean unit costs; the state-probability denominator is carried as
    written even though exhaustive states make it 1.
    """
    if im <= 0.0:
        raise DataError("intensity measure must be positive")
    quantities = derive_quantities(asset, class_label, model.ruleset)
    p_c = collapse_probability(fragilities, class_label, quantities, float(im))
    # a database without collapse triggers needs no replacement-cost data
    rp = model.rpc_mean(asset) * p_c if fragilities.triggers else 0.0
    per_component: dict[str, float] = {}
    for component in sorted(quantities):
        n_j = quantities[component]
        if n_j <= 0:
            continue
        curve = fragilities.resolve(class_label, component)
        p, _ = in_state_matrix(curve, np.asarray(float(im)))
        denom = float(p[1:].sum() + p[0])
        contrib = 0.0
        for k in range(1, curve.n_states + 1):
            contrib += n_j * model.unit_cost(component, k).mean * (float(p[k]) / denom)
        per_component[component] = contrib * (1.0 - p_c)
    re = math.fsum(per_component.values())
    return rp + re, rp, re, per_component


def sample_loss(
    asset: AssetRecord,
    class_label: Mapping[str, str],
    im: float,
    model: LossModel,
    fragilities: FragilityDatabase,
    stream: np.random.Generator,
    map_id: int = 0,
    realization_id: int = 0,
) -> BridgeLossSample:
    """Draw one realized loss. The collapse draw comes first and, when it
    fires, short-circuits every component draw.
    """
    if im <= 0.0:
        raise DataError("intensity measure must be positive")
    quantities = derive_quantities(asset, class_label, model.ruleset)
    p_c = collapse_probability(fragilities, class_label, quantities, float(im))
    if stream.random() < p_c:
        rpc = model.rpc_median(asset)
        if model.rpc_dispersion > 0.0:
            rpc *= math.exp(model.rpc_dispersion * stream.standard_normal())
        return BridgeLossSample(
            asset_id=asset.asset_id,
            map_id=map_id,
            realization_id=realization_id,
            class_label=dict(class_label),
            total=rpc,
            replacement_part=rpc,
            repairable_part=0.0,
            per_component={},
        )
    per_component: dict[str, float] = {}
    for component in sorted(quantities):
        n_j = quantities[component]
        if n_j <= 0:
            continue
        curve = fragilities.resolve(class_label, component)
        p, _ = in_state_matrix(curve, np.asarray(float(im)))
        state = min(
            int(np.searchsorted(np.cumsum(p), stream.random(), side="right")),
            curve.n_states,
        )
        cost = 0.0
        if state >= 1:
            uc = model.unit_cost(component, state)
            z = stream.standard_normal() if uc.dispersion > 0.0 else 0.0
            cost = n_j * uc.draw(z)
        per_component[component] = cost
    re = math.fsum(per_component.values())
    return BridgeLossSample(
        asset_id=asset.asset_id,
        map_id=map_id,
        realization_id=realization_id,
        class_label=dict(class_label),
        total=re,
        replacement_part=0.0,
        repairable_part=re,
        per_component=per_component,
    )


def load_loss_model(path: str | Path) -> LossModel:
    """Read the loss-model JSON: unit costs, rpc rules, quantity ruleset."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    unit_costs: dict[tuple[str, int], UnitCost] = {}
    for i, rec in enumerate(raw.get("unit_costs", [])):
        try:
            key = (str(rec["component"]), int(rec["state"]))
            if key in unit_costs:
                raise DataError(f"{path}: duplicate unit cost for {key}")
            unit_costs[key] = UnitCost(
                median=float(rec["median"]),
                dispersion=float(rec.get("dispersion", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed unit-cost record {i}: {exc}") from exc
    if not unit_costs:
        raise DataError(f"{path}: loss model has no unit costs")
    rpc = raw.get("rpc", {})
    q = raw.get("quantities", {})
    defaults = QuantityRuleset()
    ruleset = QuantityRuleset(
        bent_attribute=str(q.get("bent_attribute", defaults.bent_attribute)),
        abutment_attribute=str(q.get("abutment_attribute", defaults.abutment_attribute)),
        n_col_attribute=str(q.get("n_col_attribute", defaults.n_col_attribute)),
        span_attribute=str(q.get("span_attribute", defaults.span_attribute)),
        multi_column_bent=str(q.get("multi_column_bent", defaults.multi_column_bent)),
        single_column_bent=str(q.get("single_column_bent", defaults.single_column_bent)),
        pier_wall_bent=str(q.get("pier_wall_bent", defaults.pier_wall_bent)),
        seat_abutment=str(q.get("seat_abutment", defaults.seat_abutment)),
        joint_seals_per_span=int(q.get("joint_seals_per_span", defaults.joint_seals_per_span)),
        bearings_per_span=int(q.get("bearings_per_span", defaults.bearings_per_span)),
        abutment_seats=int(q.get("abutment_seats", defaults.abutment_seats)),
    )
    return LossModel(
        unit_costs=unit_costs,
        rpc_flat=None if "flat" not in rpc else float(rpc["flat"]),
        rpc_per_deck_area=None if "per_deck_area" not in rpc else float(rpc["per_deck_area"]),
        rpc_dispersion=float(rpc.get("dispersion", 0.0)),
        ruleset=ruleset,
    )
