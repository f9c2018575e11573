"""Score calibration and classifier-chain composition of exposure classes.

Raw classifier scores become calibrated per-attribute probabilities via a
temperature-scaled softmax. Per-attribute distributions (some conditional on
an upstream attribute) are chained into one joint distribution over complete
attribute combinations, engineering constraints prune impossible classes, and
a deterministic ruleset expands each class into component quantities.
"""

from __future__ import annotations

import json
import math
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import DataError
from .inventory import AssetRecord, AttributeSchema

# Temperature search window; outside it the softmax is numerically degenerate.
T_MIN = 0.05
T_MAX = 20.0


@dataclass(frozen=True)
class ScoreVector:
    """Latent classifier scores for one attribute, one value per category."""

    attribute: str
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.scores:
            raise DataError(f"attribute {self.attribute!r}: empty score vector")
        if not all(math.isfinite(s) for s in self.scores):
            raise DataError(f"attribute {self.attribute!r}: non-finite score")


@dataclass(frozen=True)
class CalibratedDistribution:
    """Calibrated category probabilities for one attribute."""

    attribute: str
    probs: tuple[float, ...]
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature <= 0.0 or not math.isfinite(self.temperature):
            raise DataError(f"attribute {self.attribute!r}: temperature must be positive")
        if any(p < 0.0 or p > 1.0 or not math.isfinite(p) for p in self.probs):
            raise DataError(f"attribute {self.attribute!r}: probability outside [0, 1]")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise DataError(
                f"attribute {self.attribute!r}: probabilities sum to {sum(self.probs)!r}"
            )


@dataclass(frozen=True)
class ConditionalDistribution:
    """Per-attribute distributions keyed by the value of an upstream attribute."""

    attribute: str
    parent: str
    tables: Mapping[str, CalibratedDistribution]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tables", MappingProxyType(dict(self.tables)))
        for dist in self.tables.values():
            if dist.attribute != self.attribute:
                raise DataError(
                    f"conditional table for {self.attribute!r} holds a distribution "
                    f"for {dist.attribute!r}"
                )


@dataclass(frozen=True)
class ConstraintRule:
    """If `when_attribute` equals `when_value`, `then_attribute` must be in `allowed`."""

    when_attribute: str
    when_value: str
    then_attribute: str
    allowed: tuple[str, ...]


@dataclass(frozen=True)
class ChainConstraintSet:
    rules: tuple[ConstraintRule, ...] = ()

    def permits(self, label: Mapping[str, str]) -> bool:
        for rule in self.rules:
            if label.get(rule.when_attribute) != rule.when_value:
                continue
            value = label.get(rule.then_attribute)
            if value is not None and value not in rule.allowed:
                return False
        return True


@dataclass(frozen=True)
class ExposureClassDistribution:
    """Joint distribution over complete attribute combinations for one asset.

    `pruned_mass` records probability removed by constraint filtering before
    renormalization; nonzero values flag inconsistent upstream tables.
    """

    asset_id: str
    attributes: tuple[str, ...]
    classes: tuple[tuple[str, ...], ...]
    probs: tuple[float, ...]
    pruned_mass: float = 0.0

    def __post_init__(self) -> None:
        if len(self.classes) != len(self.probs) or not self.classes:
            raise DataError(f"asset {self.asset_id!r}: empty class distribution")
        if len(set(self.classes)) != len(self.classes):
            raise DataError(f"asset {self.asset_id!r}: duplicate class labels")
        if any(p < 0.0 for p in self.probs):
            raise DataError(f"asset {self.asset_id!r}: negative class probability")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise DataError(
                f"asset {self.asset_id!r}: class probabilities sum to {sum(self.probs)!r}"
            )

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def label(self, index: int) -> dict[str, str]:
        return dict(zip(self.attributes, self.classes[index]))

    def items(self):
        for values, p in zip(self.classes, self.probs):
            yield dict(zip(self.attributes, values)), p

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


def class_key(label: Mapping[str, str]) -> str:
    """Canonical one-line form of a class label, attribute names sorted."""
    return "|".join(f"{a}={label[a]}" for a in sorted(label))


def class_hash(label: Mapping[str, str]) -> str:
    """Stable 8-hex-digit identifier of a class label, used in ledger files."""
    return f"{zlib.crc32(class_key(label).encode('utf-8')):08x}"


def softmax(scores: ScoreVector, temperature: float = 1.0) -> CalibratedDistribution:
    """Temperature-scaled softmax, computed with the max-shift trick."""
    if not math.isfinite(temperature) or temperature <= 0.0:
        raise DataError(f"temperature must be positive, got {temperature!r}")
    arr = np.asarray(scores.scores, dtype=float)
    z = (arr - arr.max()) / temperature
    e = np.exp(z)
    probs = e / e.sum()
    return CalibratedDistribution(
        attribute=scores.attribute,
        probs=tuple(float(p) for p in probs),
        temperature=float(temperature),
    )


def point_mass(attribute: str, value: str, schema: AttributeSchema) -> CalibratedDistribution:
    """Degenerate distribution for an attribute whose value is already known."""
    spec = schema.get(attribute)
    schema.validate_value(attribute, value)
    probs = tuple(1.0 if v == value else 0.0 for v in spec.allowed_values)
    return CalibratedDistribution(attribute=attribute, probs=probs)


def _nll(scores: np.ndarray, true_idx: np.ndarray, temperature: float) -> float:
    z = scores / temperature
    return float(np.sum(logsumexp(z, axis=1) - z[np.arange(len(z)), true_idx]))


def _golden_section(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_temperature(validation: list[tuple[ScoreVector, int]]) -> float:
    """Pick the temperature minimizing validation negative log-likelihood.

    Searches T in [T_MIN, T_MAX] by golden section on log T, then checks the
    optimum against T=1 and both bounds so the returned value never loses to
    any of them. A dense 200-point grid backs up the search when the
    quasi-convexity assumption fails.
    """
    if not validation:
        raise DataError("temperature fit needs a non-empty validation set")
    k = len(validation[0][0].scores)
    for sv, true in validation:
        if len(sv.scores) != k:
            raise DataError("score vectors in one validation set must share a length")
        if not 0 <= true < k:
            raise DataError(f"true category index {true} out of range for K={k}")
    scores = np.array([sv.scores for sv, _ in validation], dtype=float)
    true_idx = np.array([t for _, t in validation], dtype=int)

    if np.all(scores.max(axis=1) == scores.min(axis=1)):
        warnings.warn(
            "all score vectors are constant across classes; likelihood does not "
            "depend on temperature, returning T=1",
            RuntimeWarning,
        )
        return 1.0

    def nll_logt(x: float) -> float:
        return _nll(scores, true_idx, math.exp(x))

    t_gs = math.exp(_golden_section(nll_logt, math.log(T_MIN), math.log(T_MAX)))
    # Exact ties break toward canonical temperatures (1.0 first, then bounds):
    # the float likelihood saturates flat near a bound, where the interior
    # point golden section stops at is arbitrary.
    candidates = [1.0, T_MIN, T_MAX, t_gs]
    values = [_nll(scores, true_idx, t) for t in candidates]
    if values[3] > min(values) + 1e-12:
        # quasi-convexity failed; fall back to the dense grid
        grid = np.exp(np.linspace(math.log(T_MIN), math.log(T_MAX), 200))
        grid_nll = [_nll(scores, true_idx, t) for t in grid]
        g = int(np.argmin(grid_nll))
        candidates.append(float(grid[g]))
        values.append(grid_nll[g])
    best = min(values)
    fitted = next(t for t, v in zip(candidates, values) if v <= best + 1e-12)
    if fitted <= T_MIN * (1.0 + 1e-6) or fitted >= T_MAX * (1.0 - 1e-6):
        warnings.warn(
            f"fitted temperature {fitted:.4g} sits at a search bound; the "
            "validation set is likely too small or one-sided",
            RuntimeWarning,
        )
    return float(fitted)


def compose_chain(
    per_attribute: list[CalibratedDistribution | ConditionalDistribution],
    constraints: ChainConstraintSet,
    schema: AttributeSchema,
    asset_id: str,
) -> ExposureClassDistribution:
    """Multiply chained per-attribute distributions into a joint class distribution.

    Distributions are given in chain order, parents before dependents.
    Zero-probability combinations are dropped; constraint-pruned mass is
    renormalized away and reported on the result.
    """
    names = [d.attribute for d in per_attribute]
    if len(set(names)) != len(names):
        raise DataError(f"asset {asset_id!r}: duplicate attribute in chain")
    for d in per_attribute:
        if d.attribute not in schema:
            raise DataError(f"asset {asset_id!r}: attribute {d.attribute!r} not in schema")
        if isinstance(d, ConditionalDistribution):
            if d.parent not in names[: names.index(d.attribute)]:
                raise DataError(
                    f"asset {asset_id!r}: attribute {d.attribute!r} conditions on "
                    f"{d.parent!r}, which does not precede it in the chain"
                )

    position = {n: i for i, n in enumerate(names)}
    combos: list[tuple[tuple[str, ...], float]] = [((), 1.0)]
    for dist in per_attribute:
        allowed = schema.get(dist.attribute).allowed_values
        extended: list[tuple[tuple[str, ...], float]] = []
        for values, p in combos:
            if isinstance(dist, ConditionalDistribution):
                parent_value = values[position[dist.parent]]
                table = dist.tables.get(parent_value)
                if table is None:
                    raise DataError(
                        f"asset {asset_id!r}: no conditional table for "
                        f"{dist.attribute!r} given {dist.parent}={parent_value!r}"
                    )
                probs = table.probs
            else:
                probs = dist.probs
            if len(probs) != len(allowed):
                raise DataError(
                    f"asset {asset_id!r}: distribution for {dist.attribute!r} has "
                    f"{len(probs)} entries, schema allows {len(allowed)}"
                )
            for category, q in zip(allowed, probs):
                joint = p * q
                if joint > 0.0:
                    extended.append((values + (category,), joint))
        combos = extended
        if not combos:
            raise DataError(f"asset {asset_id!r}: chain produced no realizable class")

    survivors: list[tuple[tuple[str, ...], float]] = []
    pruned = 0.0
    for values, p in combos:
        label = dict(zip(names, values))
        if constraints.permits(label):
            survivors.append((values, p))
        else:
            pruned += p
    if not survivors:
        raise DataError(f"asset {asset_id!r}: constraints pruned every class")
    total = math.fsum(p for _, p in survivors)
    return ExposureClassDistribution(
        asset_id=asset_id,
        attributes=tuple(names),
        classes=tuple(v for v, _ in survivors),
        probs=tuple(p / total for _, p in survivors),
        pruned_mass=pruned,
    )


@dataclass(frozen=True)
class QuantityRuleset:
    """Bindings and per-span factors for expanding a class into component counts.

    Attribute and category names are data, not code; the ruleset maps the
    engine's structural roles onto whatever the schema calls them. Seat-only
    components (joint seals, bearings, abutment seats) vanish for
    diaphragm-type abutments.
    """

    bent_attribute: str = "bent_type"
    abutment_attribute: str = "abutment_type"
    n_col_attribute: str = "n_col"
    span_attribute: str = "n_spans"
    multi_column_bent: str = "MCB"
    single_column_bent: str = "SCB"
    pier_wall_bent: str = "PWB"
    seat_abutment: str = "S"
    joint_seals_per_span: int = 1
    bearings_per_span: int = 4
    abutment_seats: int = 2


def derive_quantities(
    asset: AssetRecord,
    class_label: Mapping[str, str],
    ruleset: QuantityRuleset = QuantityRuleset(),
) -> dict[str, int]:
    """Expand a complete class label into component counts for one asset.

    Bents = spans - 1. Multi-column bents carry n_col columns each, single
    column bents one, pier-wall bents one wall and no columns. Counts given
    explicitly in the asset record override the derived values.
    """
    spans_raw = (
        class_label.get(ruleset.span_attribute)
        or asset.known_attributes.get(ruleset.span_attribute)
        or asset.side_values.get(ruleset.span_attribute)
    )
    if spans_raw is None:
        raise DataError(f"asset {asset.asset_id!r}: span count unavailable")
    spans = int(spans_raw)
    if spans < 1:
        raise DataError(f"asset {asset.asset_id!r}: span count {spans} must be >= 1")
    bents = spans - 1

    columns = 0
    pier_walls = 0
    if bents > 0:
        bent = class_label.get(ruleset.bent_attribute) or asset.known_attributes.get(
            ruleset.bent_attribute
        )
        if bent is None:
            raise DataError(f"asset {asset.asset_id!r}: bent type unavailable")
        if bent == ruleset.multi_column_bent:
            n_col = class_label.get(ruleset.n_col_attribute) or asset.known_attributes.get(
                ruleset.n_col_attribute
            )
            if n_col is None:
                raise DataError(
                    f"asset {asset.asset_id!r}: multi-column bent without a column count"
                )
            columns = int(n_col) * bents
        elif bent == ruleset.single_column_bent:
            columns = bents
        elif bent == ruleset.pier_wall_bent:
            pier_walls = bents
        else:
            raise DataError(f"asset {asset.asset_id!r}: unknown bent category {bent!r}")

    abutment = class_label.get(ruleset.abutment_attribute) or asset.known_attributes.get(
        ruleset.abutment_attribute
    )
    seat = abutment == ruleset.seat_abutment
    quantities = {
        "column": columns,
        "pier_wall": pier_walls,
        "joint_seal": ruleset.joint_seals_per_span * spans if seat else 0,
        "bearing": ruleset.bearings_per_span * spans if seat else 0,
        "abutment_seat": ruleset.abutment_seats if seat else 0,
    }
    quantities.update(asset.component_quantities)
    return quantities


@dataclass(frozen=True)
class ScoreFile:
    """Parsed score/probability input: chain order, temperatures, per-asset entries."""

    chain: tuple[str, ...]
    temperatures: Mapping[str, float]
    assets: Mapping[str, dict]

    def __post_init__(self) -> None:
        object.__setattr__(self, "temperatures", MappingProxyType(dict(self.temperatures)))
        object.__setattr__(self, "assets", MappingProxyType(dict(self.assets)))


def _entry_to_distribution(
    attribute: str, entry: dict, temperature: float, schema: AttributeSchema, where: str
) -> CalibratedDistribution:
    if "probs" in entry:
        probs = tuple(float(p) for p in entry["probs"])
        return CalibratedDistribution(attribute=attribute, probs=probs)
    if "scores" in entry:
        sv = ScoreVector(attribute=attribute, scores=tuple(float(s) for s in entry["scores"]))
        return softmax(sv, temperature)
    raise DataError(f"{where}: entry for {attribute!r} needs 'scores' or 'probs'")


def load_score_file(path: str | Path, schema: AttributeSchema) -> ScoreFile:
    """Read the per-asset score/probability JSON.

    Layout: {"chain": [...], "temperatures": {attr: T} and/or
    "calibration": {attr: [{"scores": [...], "true": k}, ...]},
    "assets": {asset_id: {attr: {"scores"|"probs": [...]} |
    {"parent": attr, "tables": {category: {...}}}}}}.
    Calibration blocks are fitted here, once per attribute.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    chain = tuple(raw.get("chain", ()))
    if not chain:
        raise DataError(f"{path}: score file must declare a non-empty 'chain'")
    for name in chain:
        if name not in schema:
            raise DataError(f"{path}: chain attribute {name!r} not in schema")

    temperatures = {name: 1.0 for name in chain}
    for name, t in raw.get("temperatures", {}).items():
        if name not in schema:
            raise DataError(f"{path}: temperature for unknown attribute {name!r}")
        temperatures[name] = float(t)
    for name, samples in raw.get("calibration", {}).items():
        if name not in schema:
            raise DataError(f"{path}: calibration data for unknown attribute {name!r}")
        validation = [
            (ScoreVector(name, tuple(float(s) for s in rec["scores"])), int(rec["true"]))
            for rec in samples
        ]
        temperatures[name] = fit_temperature(validation)

    return ScoreFile(chain=chain, temperatures=temperatures, assets=raw.get("assets", {}))


def load_constraints(path: str | Path, schema: AttributeSchema) -> ChainConstraintSet:
    """Read the declarative constraint JSON: [{"when": {a: v}, "then": {b: [..]}}]."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    rules = []
    for i, rec in enumerate(raw.get("rules", [])):
        when = rec.get("when", {})
        then = rec.get("then", {})
        if len(when) != 1 or not then:
            raise DataError(f"{path}: rule {i} needs exactly one 'when' and a 'then'")
        (when_attr, when_value), = when.items()
        schema.validate_value(when_attr, str(when_value), where=f"rule {i}")
        for then_attr, allowed in then.items():
            allowed_t = tuple(str(v) for v in allowed)
            for v in allowed_t:
                schema.validate_value(then_attr, v, where=f"rule {i}")
            rules.append(
                ConstraintRule(
                    when_attribute=when_attr,
                    when_value=str(when_value),
                    then_attribute=then_attr,
                    allowed=allowed_t,
                )
            )
    return ChainConstraintSet(tuple(rules))


def distribution_for_asset(
    score_file: ScoreFile,
    asset: AssetRecord,
    schema: AttributeSchema,
    constraints: ChainConstraintSet,
) -> ExposureClassDistribution:
    """Build the joint class distribution for one asset.

    Attributes the asset already knows enter as point masses; the rest must
    have a score-file entry (marginal or conditional on an upstream value).
    """
    entries = score_file.assets.get(asset.asset_id, {})
    per_attribute: list[CalibratedDistribution | ConditionalDistribution] = []
    for name in score_file.chain:
        if name in asset.known_attributes:
            per_attribute.append(point_mass(name, asset.known_attributes[name], schema))
            continue
        entry = entries.get(name)
        if entry is None:
            raise DataError(
                f"asset {asset.asset_id!r}: attribute {name!r} unknown and no scores supplied"
            )
        where = f"asset {asset.asset_id}"
        temperature = score_file.temperatures.get(name, 1.0)
        if "tables" in entry:
            parent = entry.get("parent")
            if not parent:
                raise DataError(f"{where}: conditional entry for {name!r} needs 'parent'")
            tables = {
                str(cat): _entry_to_distribution(name, sub, temperature, schema, where)
                for cat, sub in entry["tables"].items()
            }
            per_attribute.append(
                ConditionalDistribution(attribute=name, parent=str(parent), tables=tables)
            )
        else:
            per_attribute.append(_entry_to_distribution(name, entry, temperature, schema, where))
    return compose_chain(per_attribute, constraints, schema, asset.asset_id)


def truth_distribution(
    asset: AssetRecord,
    attributes: tuple[str, ...],
    schema: AttributeSchema,
) -> ExposureClassDistribution:
    """One-hot class distribution from an asset's ground-truth attributes.

    Attributes absent from the truth set fall back to known values; any gap
    is an error, since a truth run needs every chained attribute resolved.
    """
    values = []
    for name in attributes:
        value = asset.ground_truth_attributes.get(name) or asset.known_attributes.get(name)
        if value is None:
            raise DataError(
                f"asset {asset.asset_id!r}: no ground-truth value for attribute {name!r}"
            )
        schema.validate_value(name, value, where=f"asset {asset.asset_id} (truth)")
        values.append(value)
    return ExposureClassDistribution(
        asset_id=asset.asset_id,
        attributes=tuple(attributes),
        classes=(tuple(values),),
        probs=(1.0,),
    )
