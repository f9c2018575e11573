"""Fragility evaluation: exceedance, in-state, mixtures, bias, and sampling.

Curves are lognormal in the intensity measure. A database maps partial class
labels to component curves (most specific match wins) and carries the
collapse rule: the set of component terminal states whose occurrence, on a
bridge that possesses the component and matches the optional class condition,
counts as irreparable damage. Triggers combine under independence.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import ndtr

from .errors import DataError
from .imputation import ExposureClassDistribution


@dataclass(frozen=True)
class FragilityCurve:
    """Lognormal fragility thresholds for one component under one class."""

    component: str
    class_ref: tuple[tuple[str, str], ...]
    thetas: tuple[float, ...]
    betas: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.thetas or len(self.thetas) != len(self.betas):
            raise DataError(
                f"curve for {self.component!r}: thetas and betas must be equal-length "
                "and non-empty"
            )
        if any(t <= 0 or not math.isfinite(t) for t in self.thetas):
            raise DataError(f"curve for {self.component!r}: medians must be positive")
        if any(b <= 0 or not math.isfinite(b) for b in self.betas):
            raise DataError(f"curve for {self.component!r}: dispersions must be positive")

    @property
    def n_states(self) -> int:
        return len(self.thetas)


@dataclass(frozen=True)
class CollapseTrigger:
    """One collapse mechanism: a component state, gated by an optional class condition."""

    component: str
    state: int | None = None  # 1-based; None means the component's terminal state
    when: tuple[tuple[str, str], ...] = ()

    def applies(self, class_label: Mapping[str, str], quantities: Mapping[str, int]) -> bool:
        if quantities.get(self.component, 0) <= 0:
            return False
        return all(class_label.get(a) == v for a, v in self.when)


@dataclass(frozen=True)
class DamageStateProbabilities:
    """In-state probability vector p_0..p_N for one component at one im."""

    component: str
    im: float
    in_state: tuple[float, ...]
    clamped: bool = False

    def __post_init__(self) -> None:
        if any(p < 0.0 or p > 1.0 for p in self.in_state):
            raise DataError(f"component {self.component!r}: in-state value outside [0, 1]")
        if abs(sum(self.in_state) - 1.0) > 1e-12:
            raise DataError(
                f"component {self.component!r}: in-state sums to {sum(self.in_state)!r}"
            )

    @property
    def n_states(self) -> int:
        return len(self.in_state) - 1


class FragilityDatabase:
    """Component curves keyed by partial class labels, plus the collapse rule."""

    def __init__(self, curves: list[FragilityCurve], triggers: tuple[CollapseTrigger, ...]):
        seen = set()
        for c in curves:
            key = (c.component, c.class_ref)
            if key in seen:
                raise DataError(
                    f"duplicate curve for component {c.component!r}, class {dict(c.class_ref)!r}"
                )
            seen.add(key)
        self._by_component: dict[str, list[FragilityCurve]] = {}
        for c in curves:
            self._by_component.setdefault(c.component, []).append(c)
        self.triggers = triggers
        self._cache: dict[tuple, FragilityCurve] = {}

    @property
    def components(self) -> list[str]:
        return sorted(self._by_component)

    def curves_for(self, component: str) -> list[FragilityCurve]:
        return list(self._by_component.get(component, ()))

    def resolve(self, class_label: Mapping[str, str], component: str) -> FragilityCurve:
        """Most-specific curve whose class_ref is consistent with the label."""
        key = (component, tuple(sorted(class_label.items())))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        pool = self._by_component.get(component)
        if not pool:
            raise DataError(f"no fragility curves for component {component!r}")
        candidates = [
            c
            for c in pool
            if all(class_label.get(a) == v for a, v in c.class_ref)
        ]
        if not candidates:
            raise DataError(
                f"no fragility curve matches component {component!r}, "
                f"class {dict(class_label)!r}"
            )
        top = max(len(c.class_ref) for c in candidates)
        best = [c for c in candidates if len(c.class_ref) == top]
        if len(best) > 1:
            refs = [dict(c.class_ref) for c in best]
            raise DataError(
                f"ambiguous fragility match for component {component!r}, "
                f"class {dict(class_label)!r}: {refs}"
            )
        self._cache[key] = best[0]
        return best[0]


def exceedance(curve: FragilityCurve, k: int, im):
    """P(DS >= ds_k | IM = im) for 1-based state k; im may be an array."""
    if not 1 <= k <= curve.n_states:
        raise DataError(f"state index {k} out of range 1..{curve.n_states}")
    im_arr = np.asarray(im, dtype=float)
    if np.any(im_arr <= 0.0):
        raise DataError("intensity measure must be positive")
    z = (np.log(im_arr) - math.log(curve.thetas[k - 1])) / curve.betas[k - 1]
    out = ndtr(z)
    return float(out) if np.isscalar(im) or im_arr.ndim == 0 else out


def _in_state_from_exceedance(exc: np.ndarray) -> tuple[np.ndarray, bool]:
    n = exc.shape[-1]
    p = np.empty(exc.shape[:-1] + (n + 1,))
    p[..., 0] = 1.0 - exc[..., 0]
    if n > 1:
        p[..., 1:-1] = exc[..., :-1] - exc[..., 1:]
    p[..., -1] = exc[..., -1]
    clamped = bool(np.any(p < 0.0))
    if clamped:
        np.clip(p, 0.0, None, out=p)
        p /= p.sum(axis=-1, keepdims=True)
    return p, clamped


def in_state_matrix(curve: FragilityCurve, im: np.ndarray) -> tuple[np.ndarray, bool]:
    """Vectorized in-state probabilities, shape im.shape + (N_DS + 1,)."""
    im_arr = np.asarray(im, dtype=float)
    if np.any(im_arr <= 0.0):
        raise DataError("intensity measure must be positive")
    ln_im = np.log(im_arr)[..., None]
    z = (ln_im - np.log(curve.thetas)) / np.asarray(curve.betas)
    return _in_state_from_exceedance(ndtr(z))


def in_state(curve: FragilityCurve, im: float) -> DamageStateProbabilities:
    """In-state damage probabilities at one im, clamping crossing curves."""
    p, clamped = in_state_matrix(curve, np.asarray(float(im)))
    if clamped:
        warnings.warn(
            f"fragility curves for component {curve.component!r} cross near "
            f"im={im:.4g}; negative in-state mass clamped and renormalized",
            RuntimeWarning,
        )
    return DamageStateProbabilities(
        component=curve.component,
        im=float(im),
        in_state=tuple(float(x) for x in p),
        clamped=clamped,
    )


def _check_alignment(per_class, pi: ExposureClassDistribution) -> None:
    if len(per_class) != pi.n_classes:
        raise DataError(
            f"asset {pi.asset_id!r}: {len(per_class)} state vectors for "
            f"{pi.n_classes} classes"
        )
    n = {d.n_states for d in per_class}
    if len(n) != 1:
        raise DataError(f"asset {pi.asset_id!r}: state counts differ across classes: {n}")


def mixture_in_state(
    per_class: list[DamageStateProbabilities], pi: ExposureClassDistribution
) -> DamageStateProbabilities:
    """Class-probability-weighted in-state vector."""
    _check_alignment(per_class, pi)
    mat = np.array([d.in_state for d in per_class])
    w = np.asarray(pi.probs)
    mixed = w @ mat
    mixed /= mixed.sum()
    return DamageStateProbabilities(
        component=per_class[0].component,
        im=per_class[0].im,
        in_state=tuple(float(x) for x in mixed),
        clamped=any(d.clamped for d in per_class),
    )


def damage_bias(
    mixture: DamageStateProbabilities, truth: DamageStateProbabilities
) -> np.ndarray:
    """Signed per-state difference between the mixture and the true-class vector."""
    if mixture.n_states != truth.n_states:
        raise DataError(
            f"state-count mismatch: {mixture.n_states} vs {truth.n_states}"
        )
    return np.asarray(mixture.in_state) - np.asarray(truth.in_state)


def exposure_sd(
    per_class: list[DamageStateProbabilities], pi: ExposureClassDistribution
) -> np.ndarray:
    """Per-state spread of in-state probability across plausible classes."""
    _check_alignment(per_class, pi)
    mat = np.array([d.in_state for d in per_class])
    w = np.asarray(pi.probs)
    mean = w @ mat
    return np.sqrt(w @ (mat - mean) ** 2)


def sample_damage(curve: FragilityCurve, im: float, stream: np.random.Generator) -> int:
    """One categorical draw from the in-state vector; 0 means undamaged."""
    p = np.asarray(in_state(curve, im).in_state)
    u = stream.random()
    return min(int(np.searchsorted(np.cumsum(p), u, side="right")), curve.n_states)


def collapse_probability(
    db: FragilityDatabase,
    class_label: Mapping[str, str],
    quantities: Mapping[str, int],
    im,
):
    """Probability of irreparable damage at im, mechanisms independent.

    p_c = 1 - prod_t (1 - p_t) over applicable triggers; a trigger applies
    when the bridge possesses the component and matches the class condition.
    """
    im_arr = np.asarray(im, dtype=float)
    survival = np.ones_like(im_arr, dtype=float)
    for trig in db.triggers:
        if not trig.applies(class_label, quantities):
            continue
        curve = db.resolve(class_label, trig.component)
        k = trig.state if trig.state is not None else curve.n_states
        survival = survival * (1.0 - exceedance(curve, k, im_arr))
    p_c = 1.0 - survival
    return float(p_c) if np.isscalar(im) or im_arr.ndim == 0 else p_c


def load_fragility(path: str | Path) -> FragilityDatabase:
    """Read the fragility JSON: curve records plus the collapse-trigger block."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    curves = []
    for i, rec in enumerate(raw.get("curves", [])):
        try:
            curves.append(
                FragilityCurve(
                    component=str(rec["component"]),
                    class_ref=tuple(sorted((str(a), str(v)) for a, v in rec.get("class", {}).items())),
                    thetas=tuple(float(t) for t in rec["theta"]),
                    betas=tuple(float(b) for b in rec["beta"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed curve record {i}: {exc}") from exc
    if not curves:
        raise DataError(f"{path}: fragility database has no curves")
    triggers = []
    for i, rec in enumerate(raw.get("collapse", {}).get("triggers", [])):
        try:
            state = rec.get("state")
            triggers.append(
                CollapseTrigger(
                    component=str(rec["component"]),
                    state=None if state is None else int(state),
                    when=tuple(sorted((str(a), str(v)) for a, v in rec.get("when", {}).items())),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed collapse trigger {i}: {exc}") from exc
    return FragilityDatabase(curves, tuple(triggers))
