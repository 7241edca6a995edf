"""Noise schedules as probability distributions over log-SNR.

A continuous-time noise schedule can be described three equivalent ways:

* a density ``p(lambda)`` over noise intensities, where ``lambda`` is the
  log signal-to-noise ratio ``log(alpha^2 / sigma^2)`` of the forward
  process ``x_t = alpha * x + sigma * eps``;
* a survival function ``t = P(lambda) = 1 - CDF(lambda)`` mapping an
  intensity to the fraction of training time spent below it;
* the inverse map ``lambda(t)``, which turns uniform draws of ``t`` into
  intensity draws with density ``p``.

Every family here implements all three as closed forms, so densities and
inverses can be cross-checked against each other numerically (see
:func:`validate_schedule`).

Intensities are clamped to a finite window ``lambda_clamp`` (default
``[-15, 15]``): several families have unbounded ``lambda(t)`` near the
endpoints, and the variance-preserving coefficients underflow in float64
past ``|lambda| ~ 30``.  With the default window ``sigma^2 >= ~3e-7``.
``lambda_of_t`` clamps its output; ``t`` values whose unclamped image
falls outside the window map to the boundary, and ``lambda_of_t(0)``,
``lambda_of_t(1)`` are defined as the window edges.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np
from scipy import integrate, special

DEFAULT_LAMBDA_CLAMP = (-15.0, 15.0)

# Survival values this close to 1 cannot carry the inverse map's
# sensitivity in float64 (the complement saturates at ~1.1e-16 absolute),
# so round-trip validation skips them.
_SURVIVAL_COMPLEMENT_FLOOR = 1e-9


def _as_array(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


def alpha_sigma(lam):
    """Variance-preserving coefficients (alpha, sigma) at log-SNR ``lam``.

    alpha^2 = e^lam / (e^lam + 1) and sigma^2 = 1 / (e^lam + 1), so
    alpha^2 + sigma^2 = 1 and log(alpha^2 / sigma^2) = lam.
    """
    lam, scalar = _as_array(lam)
    if not np.all(np.isfinite(lam)):
        raise ValueError("log-SNR must be finite")
    alpha = np.sqrt(special.expit(lam))
    sigma = np.sqrt(special.expit(-lam))
    return _ret(alpha, scalar), _ret(sigma, scalar)


def poly_time_warp(t, n: int):
    """Map uniform time onto the density ``C * min(t', 1-t')^n``.

    Piecewise power transform with fixed points at 0, 1/2 and 1; ``n=0``
    is the identity.  Used to concentrate training time around t=1/2.
    """
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ValueError(f"warp exponent must be an integer, got {n!r}")
    if n < 0:
        raise ValueError(f"warp exponent must be >= 0, got {n}")
    t, scalar = _as_array(t)
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("time fraction must lie in [0, 1]")
    if n == 0:
        return _ret(t.copy(), scalar)
    k = 0.5 ** (n / (n + 1))
    e = 1.0 / (n + 1)
    out = np.where(t < 0.5, k * t**e, 1.0 - k * (1.0 - t) ** e)
    return _ret(out, scalar)


def poly_time_warp_inverse(tp, n: int):
    """Inverse of :func:`poly_time_warp` (the warped density's CDF)."""
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ValueError(f"warp exponent must be an integer, got {n!r}")
    if n < 0:
        raise ValueError(f"warp exponent must be >= 0, got {n}")
    tp, scalar = _as_array(tp)
    if np.any((tp < 0.0) | (tp > 1.0)):
        raise ValueError("time fraction must lie in [0, 1]")
    if n == 0:
        return _ret(tp.copy(), scalar)
    c = 2.0**n
    out = np.where(tp < 0.5, c * tp ** (n + 1), 1.0 - c * (1.0 - tp) ** (n + 1))
    return _ret(out, scalar)


# Acklam's rational approximation to the standard normal quantile.
# Peak relative error ~1.15e-9 over (0, 1); cross-checked in the test
# suite against bisection on the erfc-based CDF.
_ACK_A = (
    -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
    1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
)
_ACK_B = (
    -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
    6.680131188771972e+01, -1.328068155288572e+01,
)
_ACK_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
    -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
)
_ACK_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
    3.754408661907416e+00,
)


def _horner(coeffs, x):
    out = np.full_like(x, coeffs[0])
    for c in coeffs[1:]:
        out = out * x + c
    return out


def normal_quantile(p):
    """Standard normal quantile by Acklam's rational approximation."""
    p, scalar = _as_array(p)
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("probability must lie in [0, 1]")
    out = np.empty_like(p)
    out[p == 0.0] = -np.inf
    out[p == 1.0] = np.inf
    lo = (p > 0.0) & (p < 0.02425)
    hi = (p < 1.0) & (p > 1.0 - 0.02425)
    mid = (p >= 0.02425) & (p <= 1.0 - 0.02425)
    if np.any(lo):
        q = np.sqrt(-2.0 * np.log(p[lo]))
        out[lo] = _horner(_ACK_C, q) / (_horner(_ACK_D, q) * q + 1.0)
    if np.any(hi):
        q = np.sqrt(-2.0 * np.log1p(-p[hi]))
        out[hi] = -(_horner(_ACK_C, q) / (_horner(_ACK_D, q) * q + 1.0))
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        out[mid] = _horner(_ACK_A, r) * q / (_horner(_ACK_B, r) * r + 1.0)
    return _ret(out, scalar)


def _normal_survival(z):
    # 0.5*erfc(z/sqrt(2)) stays accurate in the far upper tail where
    # 1 - Phi(z) would cancel.
    return 0.5 * special.erfc(z / math.sqrt(2.0))


# Shared cosine-schedule primitives; the shifted/scaled/warped variants
# reuse them with transformed arguments.

def _cos_pdf(lam):
    return 1.0 / (2.0 * np.pi * np.cosh(lam / 2.0))


def _cos_survival(lam):
    # branch on sign so the small side is computed directly
    pos = (2.0 / np.pi) * np.arctan(np.exp(-np.abs(lam) / 2.0))
    return np.where(lam >= 0.0, pos, 1.0 - pos)


def _cos_lambda(t):
    # lambda = 2 log cot(pi t / 2); evaluate tan near 0 on both branches
    t = np.minimum(np.maximum(t, 1e-300), 1.0 - 1e-16)
    lo = -2.0 * np.log(np.tan(np.pi / 2.0 * np.minimum(t, 0.5)))
    hi = 2.0 * np.log(np.tan(np.pi / 2.0 * np.minimum(1.0 - t, 0.5)))
    return np.where(t <= 0.5, lo, hi)


@dataclass(frozen=True)
class Schedule(ABC):
    """Base class: a noise-intensity distribution and its time maps."""

    FAMILY: ClassVar[str]

    lambda_clamp: tuple[float, float] = field(
        default=DEFAULT_LAMBDA_CLAMP, kw_only=True
    )

    def __post_init__(self):
        lo, hi = self.lambda_clamp
        object.__setattr__(self, "lambda_clamp", (float(lo), float(hi)))
        lo, hi = self.lambda_clamp
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < 0.0 < hi):
            raise ValueError(
                f"lambda_clamp must satisfy min < 0 < max, got {self.lambda_clamp}"
            )
        self._validate_params()

    def _validate_params(self) -> None:
        pass

    @property
    def lambda_min(self) -> float:
        return self.lambda_clamp[0]

    @property
    def lambda_max(self) -> float:
        return self.lambda_clamp[1]

    # family-specific math on raw float64 arrays
    @abstractmethod
    def _pdf(self, lam: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _survival(self, lam: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _lambda_of_t(self, t: np.ndarray) -> np.ndarray: ...

    def pdf(self, lam):
        """Sampling density of noise intensity ``lam`` (integrates to 1 on R)."""
        lam, scalar = _as_array(lam)
        if not np.all(np.isfinite(lam)):
            raise ValueError("log-SNR must be finite")
        return _ret(self._pdf(lam), scalar)

    def survival(self, lam):
        """Time fraction t = 1 - CDF(lam); decreasing from 1 to 0 in lam."""
        lam, scalar = _as_array(lam)
        if not np.all(np.isfinite(lam)):
            raise ValueError("log-SNR must be finite")
        return _ret(self._survival(lam), scalar)

    def lambda_of_t(self, t):
        """Noise intensity visited at time fraction ``t`` (inverse of survival).

        Output is clamped to ``lambda_clamp``; t=0 and t=1 map to the
        window edges by definition, avoiding the tan/cot singularities.
        """
        t, scalar = _as_array(t)
        if np.any((t < 0.0) | (t > 1.0)):
            raise ValueError("time fraction must lie in [0, 1]")
        with np.errstate(divide="ignore", over="ignore"):
            lam = self._lambda_of_t(t)
        lam = np.clip(lam, self.lambda_min, self.lambda_max)
        lam = np.where(t == 0.0, self.lambda_max, lam)
        lam = np.where(t == 1.0, self.lambda_min, lam)
        return _ret(lam, scalar)

    def to_dict(self) -> dict:
        d: dict = {"family": self.FAMILY}
        for f in fields(self):
            if f.name == "lambda_clamp":
                continue
            d[f.name] = getattr(self, f.name)
        d["lambda_clamp"] = list(self.lambda_clamp)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class Cosine(Schedule):
    """Cosine schedule: p(lambda) = sech(lambda/2) / 2pi."""

    FAMILY: ClassVar[str] = "cosine"

    def _pdf(self, lam):
        return _cos_pdf(lam)

    def _survival(self, lam):
        return _cos_survival(lam)

    def _lambda_of_t(self, t):
        return _cos_lambda(t)


@dataclass(frozen=True)
class CosineShifted(Schedule):
    """Cosine schedule translated to peak at ``mu`` instead of 0."""

    FAMILY: ClassVar[str] = "cosine_shifted"

    mu: float = 1.0

    def _pdf(self, lam):
        return _cos_pdf(lam - self.mu)

    def _survival(self, lam):
        return _cos_survival(lam - self.mu)

    def _lambda_of_t(self, t):
        return self.mu + _cos_lambda(t)


@dataclass(frozen=True)
class CosineScaled(Schedule):
    """Cosine schedule sharpened by ``s``: p(lambda) = s/(2pi) sech(s lambda/2).

    ``s > 1`` concentrates sampling around lambda = 0; ``s = 1`` is the
    plain cosine schedule.
    """

    FAMILY: ClassVar[str] = "cosine_scaled"

    s: float = 2.0

    def _validate_params(self):
        if not self.s > 0.0:
            raise ValueError(f"scale s must be > 0, got {self.s}")

    def _pdf(self, lam):
        return self.s * _cos_pdf(self.s * lam)

    def _survival(self, lam):
        return _cos_survival(self.s * lam)

    def _lambda_of_t(self, t):
        return _cos_lambda(t) / self.s


@dataclass(frozen=True)
class Laplace(Schedule):
    """Laplace noise-intensity distribution; p = exp(-|lambda-mu|/b) / 2b.

    Inverse map: lambda(t) = mu - b sign(1/2 - t) log(1 - 2|t - 1/2|),
    evaluated branchwise as mu - b log(2t) / mu + b log(2(1-t)) so that
    neither end loses precision.
    """

    FAMILY: ClassVar[str] = "laplace"

    mu: float = 0.0
    b: float = 0.5

    def _validate_params(self):
        if not self.b > 0.0:
            raise ValueError(f"scale b must be > 0, got {self.b}")

    def _pdf(self, lam):
        return np.exp(-np.abs(lam - self.mu) / self.b) / (2.0 * self.b)

    def _survival(self, lam):
        half = 0.5 * np.exp(-np.abs(lam - self.mu) / self.b)
        return np.where(lam >= self.mu, half, 1.0 - half)

    def _lambda_of_t(self, t):
        t = np.minimum(np.maximum(t, 1e-300), 1.0 - 1e-16)
        with np.errstate(divide="ignore"):
            lo = self.mu - self.b * np.log(2.0 * t)
            hi = self.mu + self.b * np.log(2.0 * (1.0 - t))
        return np.where(t <= 0.5, lo, hi)


@dataclass(frozen=True)
class Cauchy(Schedule):
    """Cauchy noise-intensity distribution; heavy tails, peak at ``mu``."""

    FAMILY: ClassVar[str] = "cauchy"

    mu: float = 0.0
    gamma: float = 0.5

    def _validate_params(self):
        if not self.gamma > 0.0:
            raise ValueError(f"scale gamma must be > 0, got {self.gamma}")

    def _pdf(self, lam):
        d = lam - self.mu
        return self.gamma / (np.pi * (d * d + self.gamma * self.gamma))

    def _survival(self, lam):
        # t = 1/2 - arctan((lam-mu)/gamma)/pi, rearranged so each tail is
        # computed from arctan of a small argument
        d = lam - self.mu
        with np.errstate(divide="ignore"):
            tail = np.arctan(self.gamma / np.abs(d)) / np.pi
        return np.where(d > 0.0, tail, np.where(d < 0.0, 1.0 - tail, 0.5))

    def _lambda_of_t(self, t):
        t = np.minimum(np.maximum(t, 1e-300), 1.0 - 1e-16)
        with np.errstate(divide="ignore"):
            lo = self.mu + self.gamma / np.tan(np.pi * np.minimum(t, 0.5))
            hi = self.mu - self.gamma / np.tan(np.pi * np.minimum(1.0 - t, 0.5))
        return np.where(t < 0.5, lo, np.where(t > 0.5, hi, self.mu))


@dataclass(frozen=True)
class CosinePoly(Schedule):
    """Cosine schedule with polynomial time warping of exponent ``n``.

    Uniform time is warped through :func:`poly_time_warp` before the
    cosine map, concentrating samples around t = 1/2.  The resulting
    intensity density has the closed form

        p(lambda) = (n+1) 4^n / pi^(n+1) * arctan(e^{-|lambda|/2})^n
                    * e^{-|lambda|/2} / (1 + e^{-|lambda|})

    which reduces to the cosine density at n = 0.  The survival function
    composes the inverse warp with the cosine survival, which is exact.
    """

    FAMILY: ClassVar[str] = "cosine_poly"

    n: int = 2

    def _validate_params(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise ValueError(f"exponent n must be an integer, got {self.n!r}")
        if self.n < 0:
            raise ValueError(f"exponent n must be >= 0, got {self.n}")

    def _pdf(self, lam):
        a = np.abs(lam)
        e = np.exp(-a / 2.0)
        pre = (self.n + 1) * 4.0**self.n / np.pi ** (self.n + 1)
        return pre * np.arctan(e) ** self.n * e / (1.0 + e * e)

    def _survival(self, lam):
        return poly_time_warp_inverse(_cos_survival(lam), self.n)

    def _lambda_of_t(self, t):
        return _cos_lambda(poly_time_warp(t, self.n))


@dataclass(frozen=True)
class EdmLogNormal(Schedule):
    """Gaussian noise-intensity distribution, lambda ~ N(mean, std^2).

    This is the intensity law implied by drawing log(sigma) from a normal
    distribution; the default (2.4, 2.4) matches the classic choice
    P_mean = -1.2, P_std = 1.2 under lambda = -2 log sigma.  Only the
    normalized Gaussian is used for sampling; framework-specific loss
    factors live in the weighting module.
    """

    FAMILY: ClassVar[str] = "edm_log_normal"

    mean: float = 2.4
    std: float = 2.4

    def _validate_params(self):
        if not self.std > 0.0:
            raise ValueError(f"std must be > 0, got {self.std}")

    def _pdf(self, lam):
        z = (lam - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2.0 * math.pi))

    def _survival(self, lam):
        return _normal_survival((lam - self.mean) / self.std)

    def _lambda_of_t(self, t):
        # Phi^{-1}(1 - t) = -Phi^{-1}(t); the right-hand form keeps full
        # precision for small t
        t = np.minimum(np.maximum(t, 1e-300), 1.0 - 1e-16)
        return self.mean - self.std * normal_quantile(t)


@dataclass(frozen=True)
class FlowMatchOT(Schedule):
    """Intensity law of linear-interpolation flow matching.

    lambda(t) = 2 log((1-t)/t), giving p(lambda) = sech^2(lambda/4) / 8.
    """

    FAMILY: ClassVar[str] = "flow_match_ot"

    def _pdf(self, lam):
        c = np.cosh(lam / 4.0)
        return 1.0 / (8.0 * c * c)

    def _survival(self, lam):
        return special.expit(-lam / 2.0)

    def _lambda_of_t(self, t):
        t = np.minimum(np.maximum(t, 1e-300), 1.0 - 1e-16)
        return 2.0 * (np.log1p(-t) - np.log(t))


@dataclass(frozen=True)
class FmLogitNormal(Schedule):
    """Flow matching with logit-normal time sampling.

    If logit(t) ~ N(mu, sigma^2) under the flow-matching map
    lambda = 2 log((1-t)/t), the intensity is exactly Gaussian:
    lambda ~ N(-2 mu, 4 sigma^2).
    """

    FAMILY: ClassVar[str] = "fm_logit_normal"

    mu: float = 0.0
    sigma: float = 1.0

    def _validate_params(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")

    @property
    def _lam_mean(self) -> float:
        return -2.0 * self.mu

    @property
    def _lam_std(self) -> float:
        return 2.0 * self.sigma

    def _pdf(self, lam):
        z = (lam - self._lam_mean) / self._lam_std
        return np.exp(-0.5 * z * z) / (self._lam_std * math.sqrt(2.0 * math.pi))

    def _survival(self, lam):
        return _normal_survival((lam - self._lam_mean) / self._lam_std)

    def _lambda_of_t(self, t):
        t = np.minimum(np.maximum(t, 1e-300), 1.0 - 1e-16)
        return self._lam_mean - self._lam_std * normal_quantile(t)


SCHEDULE_FAMILIES: dict[str, type[Schedule]] = {
    cls.FAMILY: cls
    for cls in (
        Cosine, Laplace, Cauchy, CosineShifted, CosineScaled,
        CosinePoly, EdmLogNormal, FlowMatchOT, FmLogitNormal,
    )
}


def schedule_from_dict(d: dict) -> Schedule:
    """Build a schedule from its JSON object form; unknown fields are rejected."""
    if not isinstance(d, dict):
        raise ValueError(f"schedule spec must be an object, got {type(d).__name__}")
    d = dict(d)
    family = d.pop("family", None)
    if family is None:
        raise ValueError("schedule spec is missing 'family'")
    cls = SCHEDULE_FAMILIES.get(family)
    if cls is None:
        raise ValueError(
            f"unknown schedule family {family!r}; known: {sorted(SCHEDULE_FAMILIES)}"
        )
    clamp = d.pop("lambda_clamp", None)
    allowed = {f.name for f in fields(cls)} - {"lambda_clamp"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown fields for {family!r}: {sorted(unknown)}")
    if cls is CosinePoly and "n" in d:
        n = d["n"]
        if isinstance(n, float):
            if not n.is_integer():
                raise ValueError(f"exponent n must be an integer, got {n!r}")
            d["n"] = int(n)
    kwargs = dict(d)
    if clamp is not None:
        if not (isinstance(clamp, (list, tuple)) and len(clamp) == 2):
            raise ValueError(f"lambda_clamp must be a [min, max] pair, got {clamp!r}")
        kwargs["lambda_clamp"] = (float(clamp[0]), float(clamp[1]))
    return cls(**kwargs)


def schedule_from_json(s: str) -> Schedule:
    return schedule_from_dict(json.loads(s))


@dataclass(frozen=True)
class ScheduleReport:
    """Numerical self-consistency report produced by :func:`validate_schedule`."""

    normalization_error: float
    max_roundtrip_error: float
    max_density_vs_derivative_error: float
    grid_size: int

    def to_dict(self) -> dict:
        return {
            "normalization_error": self.normalization_error,
            "max_roundtrip_error": self.max_roundtrip_error,
            "max_density_vs_derivative_error": self.max_density_vs_derivative_error,
            "grid_size": self.grid_size,
        }


def clamp_range_mass(schedule: Schedule) -> float:
    """Analytic probability mass the schedule puts inside its clamp window."""
    return float(
        schedule.survival(schedule.lambda_min) - schedule.survival(schedule.lambda_max)
    )


def validate_schedule(schedule: Schedule, grid_points: int = 10_000) -> ScheduleReport:
    """Cross-check a schedule's density, survival and inverse against each other.

    Three checks over the clamp window:

    * normalization: composite-Simpson quadrature of ``pdf`` against the
      analytic in-window mass from the survival function (the two are
      independent closed forms, so this ties density to CDF);
    * round trip: ``|lambda_of_t(survival(lam)) - lam|`` on an interior
      grid, skipping points where ``1 - survival`` is below float64
      resolution (~1e-9) since no inverse can recover them;
    * derivative consistency: ``pdf`` against central differences of the
      survival function with step 1e-4.
    """
    if grid_points < 100:
        raise ValueError(f"grid_points must be >= 100, got {grid_points}")
    lo, hi = schedule.lambda_clamp

    n_quad = grid_points if grid_points % 2 == 1 else grid_points + 1
    quad_grid = np.linspace(lo, hi, n_quad)
    mass_quad = float(integrate.simpson(schedule.pdf(quad_grid), x=quad_grid))
    normalization_error = abs(mass_quad - clamp_range_mass(schedule))

    lam = np.linspace(lo, hi, grid_points + 2)[1:-1]
    t = schedule.survival(lam)
    ok = t <= 1.0 - _SURVIVAL_COMPLEMENT_FLOOR
    roundtrip = np.abs(schedule.lambda_of_t(t[ok]) - lam[ok])
    max_roundtrip_error = float(roundtrip.max()) if roundtrip.size else 0.0

    h = 1e-4
    fd = (schedule.survival(lam - h) - schedule.survival(lam + h)) / (2.0 * h)
    max_density_error = float(np.abs(schedule.pdf(lam) - fd).max())

    return ScheduleReport(
        normalization_error=normalization_error,
        max_roundtrip_error=max_roundtrip_error,
        max_density_vs_derivative_error=max_density_error,
        grid_size=grid_points,
    )
