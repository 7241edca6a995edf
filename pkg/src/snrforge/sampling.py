"""Deterministic DDIM sampling with SNR-aligned conditioning times.

Every schedule is sampled along the same log-SNR ladder: a uniform time
grid is pushed through the cosine schedule to fix the intensity sequence,
then each schedule's survival function supplies the conditioning time t'
at which its model is evaluated.  Two schedules compared at equal
(steps, t_max) therefore denoise through identical (alpha, sigma) pairs
and differ only in the time the network sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import model_forward
from .schedules import Cosine, Schedule, alpha_sigma
from .training import TrainState, prediction_to_x0_eps


class SamplingDivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite sample state at step {step}")
        self.step = step


@dataclass(frozen=True)
class SamplePlan:
    """Intensity ladder and per-schedule conditioning times for one run.

    ``lambdas`` increase as sampling proceeds toward data (index 0 is the
    noisiest state); both lists have ``steps + 1`` entries.
    """

    steps: int
    t_max: float
    lambdas: np.ndarray
    t_primes: np.ndarray

    def time_grid(self) -> np.ndarray:
        return self.t_max * (1.0 - np.arange(self.steps + 1) / self.steps)


def build_plan(schedule: Schedule, steps: int, t_max: float = 0.99) -> SamplePlan:
    """Lay out the aligned intensity ladder for ``schedule``.

    t_i = t_max (1 - i/steps); lambda_i comes from the cosine schedule at
    t_i; t'_i = survival(schedule, lambda_i).  The grid endpoints t = 0
    and t = 1 map to t' = 0 and t' = 1 exactly, so the clamp window never
    shifts the terminal conditioning times.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not 0.0 < t_max <= 1.0:
        raise ValueError(f"t_max must lie in (0, 1], got {t_max}")
    t = t_max * (1.0 - np.arange(steps + 1) / steps)
    reference = Cosine(lambda_clamp=schedule.lambda_clamp)
    lambdas = np.asarray(reference.lambda_of_t(t))
    if np.any(np.diff(lambdas) <= 0.0):
        raise ValueError(
            "intensity ladder is not strictly increasing; the time grid is "
            "fine enough to collide with the clamp window"
        )
    t_primes = np.asarray(schedule.survival(lambdas))
    t_primes = np.where(t == 0.0, 0.0, t_primes)
    t_primes = np.where(t == 1.0, 1.0, t_primes)
    return SamplePlan(steps=steps, t_max=float(t_max), lambdas=lambdas, t_primes=t_primes)


def plan_rows(plan: SamplePlan):
    """Audit rows (i, t, lambda, t_prime, alpha, sigma) for one plan."""
    t = plan.time_grid()
    alpha, sigma = alpha_sigma(plan.lambdas)
    return [
        (i, t[i], plan.lambdas[i], plan.t_primes[i], alpha[i], sigma[i])
        for i in range(plan.steps + 1)
    ]


def ddim_step(x_t, x0_hat, eps_hat, lam_next):
    """Deterministic update x_next = alpha(lam_next) x0_hat + sigma(lam_next) eps_hat."""
    alpha, sigma = alpha_sigma(lam_next)
    return alpha * np.asarray(x0_hat) + sigma * np.asarray(eps_hat)


def sample_with_model(
    model_fn,
    target: str,
    schedule: Schedule,
    plan: SamplePlan,
    n: int,
    seed: int,
) -> np.ndarray:
    """Run the DDIM loop for ``n`` points using ``model_fn(x_t, t) -> prediction``.

    Starts from standard normal noise; at each rung the prediction is
    converted to (x0_hat, eps_hat) at the current intensity and stepped
    to the next one.  The final rung targets the clamp-window top and
    returns x0_hat directly.  Deterministic given the seed.
    """
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    _check_plan_matches(schedule, plan)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x = rng.standard_normal((n, 2))
    if n == 0:
        return x
    for i in range(plan.steps):
        t_cond = np.full(n, plan.t_primes[i])
        pred = model_fn(x, t_cond)
        x0_hat, eps_hat = prediction_to_x0_eps(target, pred, x, plan.lambdas[i])
        if i == plan.steps - 1:
            x = x0_hat
        else:
            x = ddim_step(x, x0_hat, eps_hat, plan.lambdas[i + 1])
        if not np.all(np.isfinite(x)):
            raise SamplingDivergenceError(i)
    return x


def sample(state: TrainState, schedule: Schedule, plan: SamplePlan, n: int, seed: int) -> np.ndarray:
    """Sample from a trained state along ``plan`` (built for ``schedule``)."""

    def model_fn(x_t, t):
        return model_forward(state.params, x_t, t, freqs=state.freqs)

    return sample_with_model(model_fn, state.config.target, schedule, plan, n, seed)


def _check_plan_matches(schedule: Schedule, plan: SamplePlan) -> None:
    # spot-check a few interior rungs; endpoint rows are overridden by design
    idx = [i for i in (plan.steps // 2, plan.steps // 4) if 0 < i < plan.steps]
    for i in idx:
        expected = float(schedule.survival(plan.lambdas[i]))
        if abs(expected - float(plan.t_primes[i])) > 1e-6:
            raise ValueError(
                "plan was not built for this schedule (conditioning times disagree)"
            )
