"""Joint lognormal intensity-measure model and correlated map sampling.

For one rupture scenario, ln(IM) across sites is multivariate normal with a
between-event term (one residual shared by every site) plus a spatially
correlated within-event term. Maps are drawn as exp(mu + L z) from a Cholesky
factor L, one counter-based substream per map so worker count never changes
the result.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import DataError, NumericError
from .inventory import EARTH_RADIUS_KM, haversine_km

# Escalation ceiling for the PSD repair, relative to max(diag).
MAX_JITTER_FACTOR = 1e-8


@dataclass(frozen=True)
class Site:
    asset_id: str
    latitude: float
    longitude: float


@dataclass(frozen=True)
class ScenarioHazardInput:
    """Scenario hazard: per-site ln-IM medians and the dispersion structure."""

    sites: tuple[Site, ...]
    median_ln_im: np.ndarray
    tau: float
    phi: np.ndarray
    correlation_range_km: float
    between_event_identity: bool = False
    name: str = "scenario"

    def __post_init__(self) -> None:
        object.__setattr__(self, "median_ln_im", np.asarray(self.median_ln_im, dtype=float))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        n = len(self.sites)
        if n == 0:
            raise DataError("hazard input needs at least one site")
        if self.median_ln_im.shape != (n,) or self.phi.shape != (n,):
            raise DataError(
                f"hazard vectors must have length {n}; got median_ln_im "
                f"{self.median_ln_im.shape}, phi {self.phi.shape}"
            )
        if not np.all(np.isfinite(self.median_ln_im)):
            raise DataError("median_ln_im has non-finite entries")
        if self.tau < 0.0 or not math.isfinite(self.tau):
            raise DataError(f"tau must be >= 0, got {self.tau!r}")
        if np.any(self.phi < 0.0) or not np.all(np.isfinite(self.phi)):
            raise DataError("phi entries must be finite and >= 0")
        if self.correlation_range_km <= 0.0 or not math.isfinite(self.correlation_range_km):
            raise DataError(f"correlation_range_km must be > 0, got {self.correlation_range_km!r}")


@dataclass(frozen=True, eq=False)
class GroundMotionFieldSet:
    """Sampled IM maps, one row per map, one column per site (g units)."""

    maps: np.ndarray
    seed: int
    scenario: str
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.maps.ndim != 2 or self.maps.shape[0] < 1:
            raise DataError("field set needs at least one map")
        if not np.all(self.maps > 0.0):
            raise DataError("IM values must be positive")

    @property
    def n_maps(self) -> int:
        return int(self.maps.shape[0])

    @property
    def n_sites(self) -> int:
        return int(self.maps.shape[1])


def build_covariance(hazard: ScenarioHazardInput) -> np.ndarray:
    """Assemble Sigma = tau^2 * J + diag(phi) R diag(phi).

    J is all-ones (shared between-event residual) unless the input asks for
    the identity variant; R decays as exp(-3 h / b) in great-circle distance.
    """
    n = len(hazard.sites)
    lat = np.radians([s.latitude for s in hazard.sites])
    lon = np.radians([s.longitude for s in hazard.sites])
    half_dlat = (lat[:, None] - lat[None, :]) / 2.0
    half_dlon = (lon[:, None] - lon[None, :]) / 2.0
    a = np.sin(half_dlat) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(half_dlon) ** 2
    h = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(h, 0.0)
    if not np.all(np.isfinite(h)):
        raise DataError("non-finite inter-site distance")
    r = np.exp(-3.0 * h / hazard.correlation_range_km)
    within = np.outer(hazard.phi, hazard.phi) * r
    between = hazard.tau**2 * (np.eye(n) if hazard.between_event_identity else np.ones((n, n)))
    sigma = between + within
    return (sigma + sigma.T) / 2.0


def _cholesky_with_jitter(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    if not np.any(sigma):
        # fully degenerate scenario: zero dispersion, exact zero factor
        return np.zeros_like(sigma), 0.0
    try:
        return np.linalg.cholesky(sigma), 0.0
    except np.linalg.LinAlgError:
        pass
    ceiling = MAX_JITTER_FACTOR * float(sigma.diagonal().max())
    jitter = 1e-12
    eye = np.eye(sigma.shape[0])
    while jitter <= ceiling:
        try:
            return np.linalg.cholesky(sigma + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError(
        f"covariance factorization failed at maximum jitter {ceiling:.3e}"
    )


def sample_fields(hazard: ScenarioHazardInput, n_maps: int, seed: int) -> GroundMotionFieldSet:
    """Draw n_maps correlated IM maps; map m uses substream (seed, GMRF, m).

    The per-map substream layout makes the first k maps of a larger run
    identical to a run asking for k maps.
    """
    if n_maps < 1:
        raise DataError(f"n_maps must be >= 1, got {n_maps}")
    sigma = build_covariance(hazard)
    chol, jitter = _cholesky_with_jitter(sigma)
    n_sites = len(hazard.sites)
    z = np.empty((n_maps, n_sites))
    for m in range(n_maps):
        z[m] = rng.substream(seed, rng.GMRF, m).standard_normal(n_sites)
    ln_im = hazard.median_ln_im[None, :] + z @ chol.T
    return GroundMotionFieldSet(
        maps=np.exp(ln_im), seed=int(seed), scenario=hazard.name, jitter=jitter
    )


def attenuation_median_ln_im(
    sites: tuple[Site, ...],
    a0: float,
    a1: float,
    a2: float,
    c: float,
    magnitude: float,
    epicenter: tuple[float, float],
) -> np.ndarray:
    """Synthetic-study helper: ln IM = a0 + a1 * M + a2 * ln(r + c)."""
    if c <= 0.0:
        raise DataError(f"attenuation offset c must be > 0, got {c!r}")
    out = np.empty(len(sites))
    for i, s in enumerate(sites):
        r = haversine_km(epicenter[0], epicenter[1], s.latitude, s.longitude)
        out[i] = a0 + a1 * magnitude + a2 * math.log(r + c)
    return out


def load_hazard(path: str | Path) -> ScenarioHazardInput:
    """Read the scenario hazard JSON.

    Layout: {"sites": [{"asset_id", "lat", "lon"}...], "tau": t,
    "phi": x or [x...], "correlation_range_km": b, and either
    "median_ln_im": [...] or "attenuation": {"a0", "a1", "a2", "c",
    "magnitude", "epicenter": [lat, lon]}}.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        sites = tuple(
            Site(str(s["asset_id"]), float(s["lat"]), float(s["lon"])) for s in raw["sites"]
        )
        tau = float(raw["tau"])
        b = float(raw["correlation_range_km"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed hazard input: {exc}") from exc
    phi_raw = raw.get("phi", 0.0)
    phi = np.full(len(sites), float(phi_raw)) if np.isscalar(phi_raw) else np.asarray(
        [float(p) for p in phi_raw]
    )
    if "median_ln_im" in raw:
        median = np.asarray([float(v) for v in raw["median_ln_im"]])
    elif "attenuation" in raw:
        att = raw["attenuation"]
        try:
            median = attenuation_median_ln_im(
                sites,
                a0=float(att["a0"]),
                a1=float(att["a1"]),
                a2=float(att["a2"]),
                c=float(att["c"]),
                magnitude=float(att["magnitude"]),
                epicenter=(float(att["epicenter"][0]), float(att["epicenter"][1])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed attenuation block: {exc}") from exc
    else:
        raise DataError(f"{path}: hazard input needs 'median_ln_im' or 'attenuation'")
    return ScenarioHazardInput(
        sites=sites,
        median_ln_im=median,
        tau=tau,
        phi=phi,
        correlation_range_km=b,
        between_event_identity=bool(raw.get("between_event_identity", False)),
        name=str(raw.get("name", path.stem)),
    )


def write_fields_csv(fields: GroundMotionFieldSet, sites: tuple[Site, ...], path: str | Path) -> None:
    """Write maps as long-form CSV: map_id, asset_id, im."""
    if len(sites) != fields.n_sites:
        raise DataError("site list does not match field-set width")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["map_id", "asset_id", "im"])
        for m in range(fields.n_maps):
            for j, site in enumerate(sites):
                writer.writerow([m, site.asset_id, repr(float(fields.maps[m, j]))])
