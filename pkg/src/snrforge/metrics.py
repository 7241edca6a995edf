"""Distribution distances and statistical conformance checks.

Sliced Wasserstein (mean 1-D optimal transport over random projections)
is the primary two-sample distance for generated vs. reference point
clouds, with energy distance as a secondary check.  ``ks_conformance``
verifies that pushing uniform time through a schedule's inverse map
really produces the schedule's intensity distribution.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .config import RunConfig
from .datasets import Dataset2D
from .sampling import build_plan, sample
from .schedules import Schedule
from .training import TrainingDivergenceError, init_train_state, train_steps
from .sampling import SamplingDivergenceError


def _as_points(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must be an (n, 2) array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def sliced_wasserstein(a, b, n_projections: int = 128, seed: int = 0) -> float:
    """Mean 1-D Wasserstein-1 distance over random unit directions.

    Each projected pair is solved exactly by sorting; the estimate is
    symmetric in (a, b) and deterministic given the seed.
    """
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    if n_projections < 1:
        raise ValueError(f"n_projections must be >= 1, got {n_projections}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    dirs = rng.standard_normal((n_projections, 2))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    proj_a = a @ dirs.T
    proj_b = b @ dirs.T
    total = 0.0
    for j in range(n_projections):
        total += stats.wasserstein_distance(proj_a[:, j], proj_b[:, j])
    return total / n_projections


def _mean_pairwise_distance(a: np.ndarray, b: np.ndarray, chunk: int = 1024) -> float:
    # all-pairs mean (diagonal included), chunked to bound memory
    total = 0.0
    for start in range(0, a.shape[0], chunk):
        block = a[start : start + chunk]
        diff = block[:, None, :] - b[None, :, :]
        total += float(np.sqrt(np.sum(diff * diff, axis=2)).sum())
    return total / (a.shape[0] * b.shape[0])


def energy_distance(a, b) -> float:
    """Energy distance sqrt(2 E|X-Y| - E|X-X'| - E|Y-Y'|) with Euclidean norms.

    V-statistic form (self-pairs included), so identical multisets give
    exactly zero and the radicand is non-negative up to float error.
    """
    a = _as_points(a, "a")
    b = _as_points(b, "b")
    d_ab = _mean_pairwise_distance(a, b)
    d_aa = _mean_pairwise_distance(a, a)
    d_bb = _mean_pairwise_distance(b, b)
    return float(np.sqrt(max(2.0 * d_ab - d_aa - d_bb, 0.0)))


def ks_conformance(schedule: Schedule, n_samples: int, seed: int = 0) -> float:
    """KS statistic between lambda_of_t(U) draws and the schedule's own CDF.

    The clamp window turns tail mass into atoms at the window edges, so
    the reference distribution function is evaluated with its jump
    interval there: D+ uses the right-continuous value (1 at the top
    edge) and D- the left limit (0 at the bottom edge).
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    u = rng.random(n_samples)
    lam = np.sort(np.asarray(schedule.lambda_of_t(u)))
    cdf = 1.0 - np.asarray(schedule.survival(lam))
    f_hi = np.where(lam >= schedule.lambda_max, 1.0, cdf)
    f_lo = np.where(lam <= schedule.lambda_min, 0.0, cdf)
    i = np.arange(1, n_samples + 1)
    d_plus = float(np.max(i / n_samples - f_hi))
    d_minus = float(np.max(f_lo - (i - 1) / n_samples))
    return max(d_plus, d_minus)


@dataclass(frozen=True)
class EvalReport:
    sliced_wasserstein: float
    energy_distance: float
    n_generated: int
    n_reference: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "sliced_wasserstein": self.sliced_wasserstein,
            "energy_distance": self.energy_distance,
            "n_generated": self.n_generated,
            "n_reference": self.n_reference,
            "seed": self.seed,
        }


def evaluate_samples(generated, reference, n_projections: int = 128, seed: int = 0) -> EvalReport:
    generated = _as_points(generated, "generated")
    reference = _as_points(reference, "reference")
    return EvalReport(
        sliced_wasserstein=sliced_wasserstein(generated, reference, n_projections, seed),
        energy_distance=energy_distance(generated, reference),
        n_generated=generated.shape[0],
        n_reference=reference.shape[0],
        seed=seed,
    )


@dataclass(frozen=True)
class CompareRow:
    config_id: int
    schedule_json: str
    step: int
    sliced_wasserstein: float
    energy_distance: float


_EVAL_SEED_OFFSET = 7_777_777


def _checkpoint_steps(iterations: int, eval_every: int) -> list[int]:
    steps = list(range(eval_every, iterations + 1, eval_every))
    if not steps or steps[-1] != iterations:
        steps.append(iterations)
    return steps


def _run_one_config(idx, cfg, dataset, iterations, eval_every, n_eval):
    state = init_train_state(cfg)
    plan = build_plan(cfg.schedule, cfg.sampler_steps, cfg.t_max)
    rows = []
    done = 0
    for step in _checkpoint_steps(iterations, eval_every):
        train_steps(state, dataset, step - done)
        done = step
        pts = sample(state, cfg.schedule, plan, n_eval, cfg.seed + _EVAL_SEED_OFFSET)
        rows.append(
            CompareRow(
                config_id=idx,
                schedule_json=cfg.schedule.to_json(),
                step=step,
                sliced_wasserstein=sliced_wasserstein(pts, dataset.points, seed=cfg.seed),
                energy_distance=energy_distance(pts, dataset.points),
            )
        )
    return rows


def max_workers() -> int:
    """Parallelism cap from SNRFORGE_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("SNRFORGE_THREADS", "1")))
    except ValueError:
        return 1


def compare_schedules(
    configs: Sequence[RunConfig],
    dataset: Dataset2D,
    iterations: int | None = None,
    eval_every: int | None = None,
    n_eval: int | None = None,
):
    """Train every config on the same dataset and score it at checkpoints.

    Configs sharing a seed consume identical batch/t/eps streams (common
    random numbers), so metric differences reflect the schedule/weighting
    choice rather than sampling luck.  A config that diverges is reported
    in the error map without aborting the others.  Returns
    (rows, errors) with rows ordered by config index then step.
    """
    if len(configs) < 2:
        raise ValueError(f"need at least 2 configs to compare, got {len(configs)}")
    first = configs[0]
    iterations = first.iterations if iterations is None else iterations
    if eval_every is None:
        eval_every = first.eval_every or max(1, iterations // 5)
    n_eval = first.n_eval if n_eval is None else n_eval

    results: dict[int, list[CompareRow]] = {}
    errors: dict[int, str] = {}

    def runner(item):
        idx, cfg = item
        return idx, _run_one_config(idx, cfg, dataset, iterations, eval_every, n_eval)

    workers = min(max_workers(), len(configs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(runner, item) for item in enumerate(configs)]
            for fut, (idx, _) in zip(futures, enumerate(configs)):
                try:
                    _, rows = fut.result()
                    results[idx] = rows
                except (TrainingDivergenceError, SamplingDivergenceError) as e:
                    errors[idx] = str(e)
    else:
        for item in enumerate(configs):
            idx = item[0]
            try:
                _, rows = runner(item)
                results[idx] = rows
            except (TrainingDivergenceError, SamplingDivergenceError) as e:
                errors[idx] = str(e)

    rows: list[CompareRow] = []
    for idx in range(len(configs)):
        rows.extend(results.get(idx, []))
    return rows, errors
