"""Asset data model, schema validation, and inventory file I/O.

An inventory is a CSV with one row per bridge: ``asset_id, lat, lon``, one
column per schema attribute (empty cell = value unknown), optional
``n_<component>`` quantity columns, optional ``rpc`` (replacement cost),
optional ``gt_<attribute>`` ground-truth columns, and any further numeric
columns carried through as opaque side values for downstream providers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

CATEGORICAL = "categorical"
DISCRETE_COUNT = "discrete-count"


@dataclass(frozen=True)
class AttributeSpec:
    """One attribute: a name, a kind, and its closed list of category labels.

    Discrete-count attributes cap at `max_count` (default 7); higher counts
    are field-survey outliers and rejected when the schema is built.
    """

    name: str
    kind: str
    allowed_values: tuple[str, ...]
    max_count: int = 7

    def __post_init__(self) -> None:
        if self.kind not in (CATEGORICAL, DISCRETE_COUNT):
            raise DataError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if not self.allowed_values:
            raise DataError(f"attribute {self.name!r}: empty allowed_values")
        if len(set(self.allowed_values)) != len(self.allowed_values):
            raise DataError(f"attribute {self.name!r}: duplicate allowed_values")
        if self.kind == DISCRETE_COUNT:
            try:
                ints = [int(v) for v in self.allowed_values]
            except ValueError as exc:
                raise DataError(
                    f"attribute {self.name!r}: discrete-count values must be integers"
                ) from exc
            if sorted(ints) != list(range(min(ints), max(ints) + 1)):
                raise DataError(
                    f"attribute {self.name!r}: discrete-count values must be contiguous"
                )
            if max(ints) > self.max_count:
                raise DataError(
                    f"attribute {self.name!r}: counts above {self.max_count} are "
                    "treated as outliers; raise max_count explicitly to allow them"
                )


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered catalog of attributes and their value spaces."""

    attributes: tuple[AttributeSpec, ...]

    def __post_init__(self) -> None:
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise DataError("schema attribute names must be unique")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def get(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise DataError(f"unknown attribute {name!r}")

    def __contains__(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def validate_value(self, name: str, value: str, where: str = "") -> None:
        spec = self.get(name)
        if value not in spec.allowed_values:
            ctx = f" ({where})" if where else ""
            raise DataError(
                f"value {value!r} not allowed for attribute {name!r}{ctx}; "
                f"allowed: {list(spec.allowed_values)}"
            )


@dataclass(frozen=True)
class AssetRecord:
    """One bridge: location, known/truth attributes, quantities, cost data."""

    asset_id: str
    latitude: float
    longitude: float
    known_attributes: dict[str, str] = field(default_factory=dict)
    component_quantities: dict[str, int] = field(default_factory=dict)
    ground_truth_attributes: dict[str, str] = field(default_factory=dict)
    replacement_cost: float | None = None
    side_values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise DataError(f"asset {self.asset_id!r}: latitude {self.latitude} out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise DataError(f"asset {self.asset_id!r}: longitude {self.longitude} out of range")
        for comp, n in self.component_quantities.items():
            if n < 0 or n != int(n):
                raise DataError(
                    f"asset {self.asset_id!r}: component {comp!r} count {n} must be a "
                    "non-negative integer"
                )


@dataclass(frozen=True)
class Inventory:
    schema: AttributeSchema
    assets: tuple[AssetRecord, ...]

    def __post_init__(self) -> None:
        if not self.assets:
            raise DataError("inventory is empty")
        ids = [a.asset_id for a in self.assets]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise DataError(f"duplicate asset_id(s): {dupes}")
        for a in self.assets:
            for name, value in a.known_attributes.items():
                self.schema.validate_value(name, value, where=f"asset {a.asset_id}")
            for name, value in a.ground_truth_attributes.items():
                self.schema.validate_value(name, value, where=f"asset {a.asset_id} (truth)")

    def get(self, asset_id: str) -> AssetRecord:
        for a in self.assets:
            if a.asset_id == asset_id:
                return a
        raise DataError(f"unknown asset {asset_id!r}")

    @property
    def asset_ids(self) -> list[str]:
        return [a.asset_id for a in self.assets]


def load_schema(path: str | Path) -> AttributeSchema:
    """Read an attribute schema from its JSON file."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    attrs = []
    for entry in raw["attributes"]:
        spec = AttributeSpec(
            name=entry["name"],
            kind=entry.get("kind", CATEGORICAL),
            allowed_values=tuple(str(v) for v in entry["values"]),
            max_count=int(entry.get("max", 7)),
        )
        attrs.append(spec)
    return AttributeSchema(tuple(attrs))


def load_inventory(path: str | Path, schema: AttributeSchema) -> Inventory:
    """Parse and validate an inventory CSV against the schema.

    Raises DataError naming the offending row/column for unknown attribute
    values, missing required columns, or duplicate asset ids.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty inventory file")
        columns = list(reader.fieldnames)
        for required in ("asset_id", "lat", "lon"):
            if required not in columns:
                raise DataError(f"{path}: missing required column {required!r}")
        attr_cols = [c for c in columns if c in schema]
        truth_cols = [c for c in columns if c.startswith("gt_") and c[3:] in schema]
        qty_cols = [c for c in columns if c.startswith("n_") and c not in schema]
        reserved = {"asset_id", "lat", "lon", "rpc", *attr_cols, *truth_cols, *qty_cols}
        side_cols = [c for c in columns if c not in reserved]

        assets = []
        for lineno, row in enumerate(reader, start=2):
            where = f"{path.name} line {lineno}"
            asset_id = (row.get("asset_id") or "").strip()
            if not asset_id:
                raise DataError(f"{where}: empty asset_id")
            try:
                lat = float(row["lat"])
                lon = float(row["lon"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{where}: bad lat/lon") from exc
            known = {}
            for col in attr_cols:
                value = (row.get(col) or "").strip()
                if value:
                    schema.validate_value(col, value, where=where)
                    known[col] = value
            truth = {}
            for col in truth_cols:
                value = (row.get(col) or "").strip()
                if value:
                    schema.validate_value(col[3:], value, where=where)
                    truth[col[3:]] = value
            quantities = {}
            for col in qty_cols:
                value = (row.get(col) or "").strip()
                if value:
                    try:
                        quantities[col[2:]] = int(value)
                    except ValueError as exc:
                        raise DataError(f"{where}: column {col!r} must be an integer") from exc
            rpc_raw = (row.get("rpc") or "").strip()
            rpc = float(rpc_raw) if rpc_raw else None
            side = {}
            for col in side_cols:
                value = (row.get(col) or "").strip()
                if value:
                    try:
                        side[col] = float(value)
                    except ValueError as exc:
                        raise DataError(f"{where}: side column {col!r} must be numeric") from exc
            assets.append(
                AssetRecord(
                    asset_id=asset_id,
                    latitude=lat,
                    longitude=lon,
                    known_attributes=known,
                    component_quantities=quantities,
                    ground_truth_attributes=truth,
                    replacement_cost=rpc,
                    side_values=side,
                )
            )
    return Inventory(schema=schema, assets=tuple(assets))


def save_inventory(inventory: Inventory, path: str | Path) -> None:
    """Write an inventory back to CSV; load(save(inv)) == inv."""
    schema = inventory.schema
    qty_names = sorted({c for a in inventory.assets for c in a.component_quantities})
    truth_names = [n for n in schema.names if any(n in a.ground_truth_attributes for a in inventory.assets)]
    side_names = sorted({c for a in inventory.assets for c in a.side_values})
    columns = (
        ["asset_id", "lat", "lon"]
        + schema.names
        + [f"gt_{n}" for n in truth_names]
        + [f"n_{c}" for c in qty_names]
        + ["rpc"]
        + side_names
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for a in inventory.assets:
            row = [a.asset_id, repr(a.latitude), repr(a.longitude)]
            row += [a.known_attributes.get(n, "") for n in schema.names]
            row += [a.ground_truth_attributes.get(n, "") for n in truth_names]
            row += [str(a.component_quantities[c]) if c in a.component_quantities else "" for c in qty_names]
            row += ["" if a.replacement_cost is None else repr(a.replacement_cost)]
            row += ["" if c not in a.side_values else repr(a.side_values[c]) for c in side_names]
            writer.writerow(row)


def missing_fields(asset: AssetRecord, required: list[str], schema: AttributeSchema) -> list[str]:
    """Names from `required` the asset does not know yet, in schema order."""
    for name in required:
        if name not in schema:
            raise DataError(f"required attribute {name!r} not in schema")
    wanted = set(required)
    return [n for n in schema.names if n in wanted and n not in asset.known_attributes]


EARTH_RADIUS_KM = 6371.0


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance on a spherical Earth (R = 6371 km)."""
    r = EARTH_RADIUS_KM
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2.0) ** 2
    return 2.0 * r * math.asin(min(1.0, math.sqrt(a)))
