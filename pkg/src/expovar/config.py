"""Run configuration: input paths, simulation sizes, analysis toggles.

Configs are TOML (or an equivalent JSON document) with four sections:
[paths], [simulation], [run], [analysis]. Relative paths resolve against the
config file's own directory, so a bundled scenario folder stays relocatable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

MODES = ("imputed", "truth", "both")
METHODS = ("auto", "direct", "pairwise")
SOURCES = ("gmrf", "damage", "exposure", "loss")


@dataclass(frozen=True)
class RunConfig:
    """Validated pipeline configuration with absolute paths."""

    inventory: Path
    schema: Path
    fragility: Path
    loss_model: Path
    hazard: Path
    output_dir: Path
    n_realizations_per_map: int
    scores: Path | None = None
    constraints: Path | None = None
    n_maps: int = 100
    master_seed: int = 0
    mode: str = "imputed"
    write_ledger: bool = True
    decompose: bool = True
    method: str = "auto"
    top_fraction: float = 0.10
    sensitivity_sources: tuple[str, ...] = ()
    what_if_selection: Path | None = None

    def __post_init__(self) -> None:
        if self.n_maps < 1:
            raise ConfigError(f"n_maps must be >= 1, got {self.n_maps}")
        if self.n_realizations_per_map < 2:
            raise ConfigError(
                f"n_realizations_per_map must be >= 2, got {self.n_realizations_per_map}"
            )
        if not 0.0 < self.top_fraction <= 1.0:
            raise ConfigError(f"top_fraction must be in (0, 1], got {self.top_fraction!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        bad = [s for s in self.sensitivity_sources if s not in SOURCES]
        if bad:
            raise ConfigError(f"unknown sensitivity sources {bad}; choose from {SOURCES}")

    @property
    def n_realizations_total(self) -> int:
        return self.n_maps * self.n_realizations_per_map

    def input_paths(self) -> dict[str, Path]:
        """Required and supplied optional input files, by section key."""
        out = {
            "inventory": self.inventory,
            "schema": self.schema,
            "fragility": self.fragility,
            "loss_model": self.loss_model,
            "hazard": self.hazard,
        }
        if self.scores is not None:
            out["scores"] = self.scores
        if self.constraints is not None:
            out["constraints"] = self.constraints
        if self.what_if_selection is not None:
            out["what_if_selection"] = self.what_if_selection
        return out

    def with_overrides(
        self, seed: int | None = None, output_dir: str | Path | None = None
    ) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, master_seed=int(seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir).resolve())
        return cfg


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section [{name}] must be a table, got {type(sec).__name__}")
    unknown = sorted(set(sec) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {unknown}")
    return sec


def _want(sec: dict, section: str, key: str, kind, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
        return default
    value = sec[key]
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"[{section}] {key} must be an integer, got a boolean")
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"[{section}] {key} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def load_config(path: str | Path) -> RunConfig:
    """Parse a TOML or JSON run configuration.

    Structural problems (missing keys, wrong types, unknown keys, invariant
    violations) raise ConfigError; nothing touches the referenced data files.
    """
    path = Path(path).resolve()
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(path.read_text(encoding="utf-8"))
        else:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a table")
    unknown = sorted(set(raw) - {"paths", "simulation", "run", "analysis"})
    if unknown:
        raise ConfigError(f"{path}: unknown top-level sections: {unknown}")

    base = path.parent

    def resolve(value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else (base / p).resolve()

    paths = _section(
        raw, "paths",
        {"inventory", "schema", "scores", "constraints", "fragility", "loss_model", "hazard"},
    )
    sim = _section(raw, "simulation", {"n_maps", "n_realizations_per_map", "master_seed"})
    run = _section(raw, "run", {"mode", "output_dir", "write_ledger"})
    analysis = _section(
        raw, "analysis",
        {"decompose", "method", "top_fraction", "sensitivity_sources", "what_if_selection"},
    )

    sources = analysis.get("sensitivity_sources", [])
    if not isinstance(sources, list) or not all(isinstance(s, str) for s in sources):
        raise ConfigError("[analysis] sensitivity_sources must be a list of strings")

    return RunConfig(
        inventory=resolve(_want(paths, "paths", "inventory", str, required=True)),
        schema=resolve(_want(paths, "paths", "schema", str, required=True)),
        fragility=resolve(_want(paths, "paths", "fragility", str, required=True)),
        loss_model=resolve(_want(paths, "paths", "loss_model", str, required=True)),
        hazard=resolve(_want(paths, "paths", "hazard", str, required=True)),
        scores=resolve(_want(paths, "paths", "scores", str)),
        constraints=resolve(_want(paths, "paths", "constraints", str)),
        n_maps=_want(sim, "simulation", "n_maps", int, default=100),
        n_realizations_per_map=_want(
            sim, "simulation", "n_realizations_per_map", int, required=True
        ),
        master_seed=_want(sim, "simulation", "master_seed", int, default=0),
        mode=_want(run, "run", "mode", str, default="imputed"),
        output_dir=resolve(_want(run, "run", "output_dir", str, default="out")),
        write_ledger=_want(run, "run", "write_ledger", bool, default=True),
        decompose=_want(analysis, "analysis", "decompose", bool, default=True),
        method=_want(analysis, "analysis", "method", str, default="auto"),
        top_fraction=_want(analysis, "analysis", "top_fraction", float, default=0.10),
        sensitivity_sources=tuple(sources),
        what_if_selection=resolve(_want(analysis, "analysis", "what_if_selection", str)),
    )


def load_selection(path: str | Path) -> set[str]:
    """Read a what-if selection file: JSON list or {"selection": [...]}."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read selection file: {exc}") from exc
    if isinstance(raw, dict):
        raw = raw.get("selection")
    if not isinstance(raw, list) or not all(isinstance(s, str) for s in raw):
        raise ConfigError(f"{path}: selection must be a list of asset ids")
    return set(raw)
