"""Loss-weighting strategies over log-SNR.

A strategy assigns each noise intensity a positive multiplier ``w(lam)``
applied to the per-sample epsilon-space squared error.  All weights are
stated in the epsilon-prediction convention; predictions in other target
conventions are reparameterized to epsilon before weighting, so one
table serves every target.

``effective_coefficient`` reports the ratio ``w(lam) / p(lam)`` against a
sampling schedule.  Its Monte-Carlo average is invariant to which
schedule supplied the samples, which is the identity that makes a
schedule change interchangeable with a weight change in expectation.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np

from .schedules import Schedule, _as_array, _ret, schedule_from_dict

_PDF_FLOOR = 1e-300


class DegenerateWeightError(ValueError):
    """A weight ratio's denominator density underflowed."""


@dataclass(frozen=True)
class WeightStrategy(ABC):
    KIND: ClassVar[str]

    @abstractmethod
    def _weight(self, lam: np.ndarray) -> np.ndarray: ...

    def weight(self, lam):
        """Loss multiplier at log-SNR ``lam`` (strictly positive)."""
        lam, scalar = _as_array(lam)
        if not np.all(np.isfinite(lam)):
            raise ValueError("log-SNR must be finite")
        return _ret(self._weight(lam), scalar)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.KIND}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.to_dict() if isinstance(v, Schedule) else v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Constant(WeightStrategy):
    """w = 1: plain epsilon-space MSE, the neutral baseline."""

    KIND: ClassVar[str] = "constant"

    def _weight(self, lam):
        return np.ones_like(lam)


@dataclass(frozen=True)
class CosineEps(WeightStrategy):
    """w = e^{-lam/2}, the weight a cosine-schedule v-space MSE induces."""

    KIND: ClassVar[str] = "cosine_eps"

    def _weight(self, lam):
        return np.exp(-lam / 2.0)


@dataclass(frozen=True)
class MinSnr(WeightStrategy):
    """w = e^{-lam/2} min(1, gamma e^{-lam}): hard SNR cap at gamma."""

    KIND: ClassVar[str] = "min_snr"

    gamma: float = 5.0

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    def _weight(self, lam):
        return np.exp(-lam / 2.0) * np.minimum(1.0, self.gamma * np.exp(-lam))


@dataclass(frozen=True)
class SoftMinSnr(WeightStrategy):
    """w = e^{-lam/2} gamma / (e^lam + gamma): smooth SNR cap at gamma."""

    KIND: ClassVar[str] = "soft_min_snr"

    gamma: float = 5.0

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    def _weight(self, lam):
        return np.exp(-lam / 2.0) * self.gamma / (np.exp(lam) + self.gamma)


@dataclass(frozen=True)
class FmOt(WeightStrategy):
    """w = (1 + e^{-lam}) sech^2(lam/4), the flow-matching-OT weight."""

    KIND: ClassVar[str] = "fm_ot"

    def _weight(self, lam):
        c = np.cosh(lam / 4.0)
        return (1.0 + np.exp(-lam)) / (c * c)


@dataclass(frozen=True)
class Edm(WeightStrategy):
    """w = (1 + e^{-lam})(0.5^2 + e^{-lam}) N(lam; 2.4, 2.4^2).

    Constants follow the sigma-space formulation this weight was derived
    in; they are fixed rather than parameters.
    """

    KIND: ClassVar[str] = "edm"

    _MEAN: ClassVar[float] = 2.4
    _STD: ClassVar[float] = 2.4

    def _weight(self, lam):
        z = (lam - self._MEAN) / self._STD
        dens = np.exp(-0.5 * z * z) / (self._STD * math.sqrt(2.0 * math.pi))
        e = np.exp(-lam)
        return (1.0 + e) * (0.25 + e) * dens


@dataclass(frozen=True)
class ScheduleAsWeight(WeightStrategy):
    """w = pdf_numerator / pdf_denominator.

    Reformulates training under the numerator schedule as a loss weight
    applied while sampling from the denominator schedule: in expectation
    the two setups optimize the same objective.
    """

    KIND: ClassVar[str] = "schedule_as_weight"

    numerator: Schedule = field(default_factory=lambda: schedule_from_dict({"family": "laplace"}))
    denominator: Schedule = field(default_factory=lambda: schedule_from_dict({"family": "cosine"}))

    def __post_init__(self):
        if not isinstance(self.numerator, Schedule) or not isinstance(
            self.denominator, Schedule
        ):
            raise ValueError("numerator and denominator must be schedules")

    def _weight(self, lam):
        den = self.denominator.pdf(lam)
        den = np.asarray(den, dtype=np.float64)
        if np.any(den < _PDF_FLOOR):
            raise DegenerateWeightError(
                "denominator density underflowed below 1e-300"
            )
        return np.asarray(self.numerator.pdf(lam), dtype=np.float64) / den


WEIGHT_KINDS: dict[str, type[WeightStrategy]] = {
    cls.KIND: cls
    for cls in (Constant, CosineEps, MinSnr, SoftMinSnr, FmOt, Edm, ScheduleAsWeight)
}


def strategy_from_dict(d: dict) -> WeightStrategy:
    """Build a strategy from its JSON object form; unknown fields rejected."""
    if not isinstance(d, dict):
        raise ValueError(f"weighting spec must be an object, got {type(d).__name__}")
    d = dict(d)
    kind = d.pop("kind", None)
    if kind is None:
        raise ValueError("weighting spec is missing 'kind'")
    cls = WEIGHT_KINDS.get(kind)
    if cls is None:
        raise ValueError(
            f"unknown weighting kind {kind!r}; known: {sorted(WEIGHT_KINDS)}"
        )
    allowed = {f.name for f in fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown fields for {kind!r}: {sorted(unknown)}")
    if cls is ScheduleAsWeight:
        for key in ("numerator", "denominator"):
            if key in d:
                d[key] = schedule_from_dict(d[key])
    return cls(**d)


def strategy_from_json(s: str) -> WeightStrategy:
    return strategy_from_dict(json.loads(s))


def effective_coefficient(strategy: WeightStrategy, sampling: Schedule, lam):
    """Per-sample coefficient w(lam) / pdf_sampling(lam).

    Averaged over draws from ``sampling``, this estimates the integral of
    ``w`` times the integrand regardless of which schedule samples, so
    two schedules with full support give matching estimates up to noise.
    """
    lam_arr, scalar = _as_array(lam)
    w = np.asarray(strategy.weight(lam_arr), dtype=np.float64)
    p = np.asarray(sampling.pdf(lam_arr), dtype=np.float64)
    if np.any(p < _PDF_FLOOR):
        raise DegenerateWeightError("sampling density underflowed below 1e-300")
    return _ret(w / p, scalar)
