"""Forward noising, prediction targets, training loss and the Adam loop.

The forward process is variance preserving: x_t = alpha x + sigma eps
with (alpha, sigma) determined by the log-SNR.  The regressor may be
trained against epsilon, x0 or v = alpha eps - sigma x; predictions are
converted back to an implied epsilon-hat so a single weighting table
applies to every target.  The per-sample loss is

    w(lambda_i) * ||eps_hat_i - eps_i||^2 / 2

averaged over the batch, with lambda_i = lambda_of_t(schedule, t_i) and
t_i uniform.  Gradients are exact reverse-mode derivatives of this
scalar.  Three independent Philox streams (batch indices, t, eps) make
runs bit-reproducible and let ablations vary one factor at a time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PREDICT_TARGETS, RunConfig, run_config_from_dict
from .datasets import Dataset2D
from .model import (
    MlpConfig,
    PARAM_NAMES,
    backward,
    forward_cached,
    init_params,
    time_frequencies,
    zero_like_params,
)
from .schedules import Schedule, alpha_sigma
from .weighting import WeightStrategy

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_SIGMA_FLOOR = 1e-10
_ALPHA_FLOOR = 1e-10


class TrainingDivergenceError(RuntimeError):
    def __init__(self, step: int, message: str | None = None):
        super().__init__(message or f"non-finite training loss at step {step}")
        self.step = step


class DegenerateConversionError(ValueError):
    """Target conversion hit an alpha/sigma underflow at extreme log-SNR."""


def forward_noise(x, lam, eps):
    """x_t = alpha(lam) * x + sigma(lam) * eps."""
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    alpha, sigma = alpha_sigma(lam)
    alpha = np.asarray(alpha)[..., None] if np.ndim(alpha) else alpha
    sigma = np.asarray(sigma)[..., None] if np.ndim(sigma) else sigma
    return alpha * x + sigma * eps


def make_target(target: str, x, eps, lam):
    """Regression target: eps itself, x itself, or v = alpha eps - sigma x."""
    if target not in PREDICT_TARGETS:
        raise ValueError(f"unknown target {target!r}")
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if target == "epsilon":
        return eps.copy()
    if target == "x0":
        return x.copy()
    alpha, sigma = alpha_sigma(lam)
    alpha = np.asarray(alpha)[..., None] if np.ndim(alpha) else alpha
    sigma = np.asarray(sigma)[..., None] if np.ndim(sigma) else sigma
    return alpha * eps - sigma * x


def to_eps_residual(target: str, prediction, x_t, lam):
    """Convert a prediction in any target convention to its implied eps-hat.

    v:  eps = sigma x_t + alpha v
    x0: eps = (x_t - alpha x0) / sigma
    """
    if target not in PREDICT_TARGETS:
        raise ValueError(f"unknown target {target!r}")
    prediction = np.asarray(prediction, dtype=np.float64)
    if target == "epsilon":
        return prediction.copy()
    x_t = np.asarray(x_t, dtype=np.float64)
    alpha, sigma = alpha_sigma(lam)
    alpha = np.atleast_1d(np.asarray(alpha))[..., None]
    sigma = np.atleast_1d(np.asarray(sigma))[..., None]
    if target == "v":
        out = sigma * x_t + alpha * prediction
    else:  # x0
        if np.any(sigma < _SIGMA_FLOOR):
            raise DegenerateConversionError(
                "sigma underflow converting x0 prediction to eps"
            )
        out = (x_t - alpha * prediction) / sigma
    return out.reshape(np.shape(prediction))


def prediction_to_x0_eps(target: str, prediction, x_t, lam):
    """Both the x0 and eps estimates implied by a model prediction."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = to_eps_residual(target, prediction, x_t, lam)
    alpha, sigma = alpha_sigma(lam)
    alpha = np.atleast_1d(np.asarray(alpha))[..., None]
    sigma = np.atleast_1d(np.asarray(sigma))[..., None]
    if target == "x0":
        x0_hat = np.asarray(prediction, dtype=np.float64).copy()
    else:
        if np.any(alpha < _ALPHA_FLOOR):
            raise DegenerateConversionError(
                "alpha underflow converting eps prediction to x0"
            )
        x0_hat = (x_t - sigma * np.asarray(eps_hat)) / alpha
        x0_hat = x0_hat.reshape(x_t.shape)
    return x0_hat, eps_hat


def batch_loss_and_grads(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    schedule: Schedule,
    weighting: WeightStrategy,
    target: str,
    freqs: np.ndarray | None = None,
):
    """Weighted eps-space half-MSE and its exact parameter gradients.

    Pure function of its inputs; the training loop supplies (t, eps)
    draws, and gradient checks can drive it with frozen ones.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    if freqs is None:
        freqs = time_frequencies((params["w1"].shape[0] - 2) // 2)

    lam = np.asarray(schedule.lambda_of_t(t))
    alpha, sigma = alpha_sigma(lam)
    a = alpha[:, None]
    s = sigma[:, None]
    x_t = a * x + s * eps

    pred, cache = forward_cached(params, x_t, t, freqs)
    if target == "epsilon":
        eps_hat = pred
    elif target == "v":
        eps_hat = s * x_t + a * pred
    elif target == "x0":
        if np.any(sigma < _SIGMA_FLOOR):
            raise DegenerateConversionError(
                "sigma underflow converting x0 prediction to eps"
            )
        eps_hat = (x_t - a * pred) / s
    else:
        raise ValueError(f"unknown target {target!r}")

    w = np.asarray(weighting.weight(lam))
    resid = eps_hat - eps
    loss = float(np.sum(w * np.sum(resid * resid, axis=1)) / (2.0 * n))

    dl_deps_hat = (w[:, None] * resid) / n
    if target == "epsilon":
        dout = dl_deps_hat
    elif target == "v":
        dout = a * dl_deps_hat
    else:  # x0
        dout = -(a / s) * dl_deps_hat
    grads = backward(params, cache, dout)
    return loss, grads, lam


@dataclass
class TrainState:
    """Parameters, Adam moments, step counter and the RNG streams."""

    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    config: RunConfig
    rng_data: np.random.Generator
    rng_t: np.random.Generator
    rng_eps: np.random.Generator
    freqs: np.ndarray = field(repr=False, default=None)

    def params_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())


def init_train_state(config: RunConfig) -> TrainState:
    root = np.random.SeedSequence(config.seed)
    ss_init, ss_data, ss_t, ss_eps = root.spawn(4)
    mlp = MlpConfig(hidden=config.hidden, freq_pairs=config.freq_pairs)
    params = init_params(mlp, np.random.Generator(np.random.Philox(ss_init)))
    return TrainState(
        params=params,
        adam_m=zero_like_params(params),
        adam_v=zero_like_params(params),
        step=0,
        config=config,
        rng_data=np.random.Generator(np.random.Philox(ss_data)),
        rng_t=np.random.Generator(np.random.Philox(ss_t)),
        rng_eps=np.random.Generator(np.random.Philox(ss_eps)),
        freqs=time_frequencies(config.freq_pairs),
    )


def loss_and_grad(state: TrainState, batch: np.ndarray, schedule=None, weighting=None, target=None):
    """Draw (t, eps) from the state's streams and evaluate the loss core.

    The (schedule, weighting, target) triple defaults to the state's
    config; passing any of them overrides just that factor.
    """
    batch = np.asarray(batch, dtype=np.float64)
    n = batch.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    t = state.rng_t.random(n)
    eps = state.rng_eps.standard_normal((n, 2))
    cfg = state.config
    loss, grads, lam = batch_loss_and_grads(
        state.params, batch, t, eps,
        schedule if schedule is not None else cfg.schedule,
        weighting if weighting is not None else cfg.weighting,
        target if target is not None else cfg.target,
        freqs=state.freqs,
    )
    if not np.isfinite(loss):
        raise TrainingDivergenceError(state.step + 1)
    return loss, grads, lam


def adam_step(state: TrainState, grads: dict[str, np.ndarray]) -> None:
    state.step += 1
    lr = state.config.lr
    bc1 = 1.0 - ADAM_BETA1**state.step
    bc2 = 1.0 - ADAM_BETA2**state.step
    for k in PARAM_NAMES:
        g = grads[k]
        m = state.adam_m[k]
        v = state.adam_v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        state.params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def train_steps(state: TrainState, dataset: Dataset2D, n_steps: int):
    """Advance training by ``n_steps``; returns (step, loss, lambda_mean) rows."""
    pts = dataset.points
    cfg = state.config
    trace = []
    for _ in range(n_steps):
        idx = state.rng_data.integers(0, pts.shape[0], size=cfg.batch)
        loss, grads, lam = loss_and_grad(state, pts[idx])
        adam_step(state, grads)
        if state.step % cfg.log_every == 0 or state.step == cfg.iterations:
            trace.append((state.step, loss, float(lam.mean())))
    return trace


def train(config: RunConfig, dataset: Dataset2D, iterations: int | None = None):
    """Train from scratch; returns the final state and the loss trace."""
    n_iters = config.iterations if iterations is None else iterations
    if n_iters < 1:
        raise ValueError(f"iterations must be >= 1, got {n_iters}")
    state = init_train_state(config)
    trace = train_steps(state, dataset, n_iters)
    if not state.params_finite():
        raise TrainingDivergenceError(state.step, "non-finite parameters after training")
    return state, trace


def trace_to_csv(trace) -> str:
    lines = ["step,loss,lambda_mean"]
    for step, loss, lam_mean in trace:
        lines.append(f"{step},{loss!r},{lam_mean!r}")
    return "\n".join(lines) + "\n"


# Checkpoints: a flat little-endian float64 blob holding parameters and
# Adam moments, plus a JSON sidecar with shapes, offsets, the run config
# and the step counter.

def _checkpoint_entries(state: TrainState):
    for group, tensors in (
        ("params", state.params),
        ("adam_m", state.adam_m),
        ("adam_v", state.adam_v),
    ):
        for name in PARAM_NAMES:
            yield f"{group}/{name}", tensors[name]


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    path = Path(path)
    arrays = []
    blob = bytearray()
    offset = 0
    for name, arr in _checkpoint_entries(state):
        flat = np.ascontiguousarray(arr, dtype="<f8")
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.extend(flat.tobytes())
        offset += flat.size
    sidecar = {
        "format": "snrforge-checkpoint-v1",
        "step": state.step,
        "config": state.config.to_dict(),
        "arrays": arrays,
        "total_doubles": offset,
    }
    path.write_bytes(bytes(blob))
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def load_checkpoint(path: str | Path) -> TrainState:
    """Restore parameters, moments, step and config.

    RNG streams are re-seeded from the config; they are not part of the
    checkpoint, so resumed training is valid but not bit-identical to an
    uninterrupted run.
    """
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    if sidecar.get("format") != "snrforge-checkpoint-v1":
        raise ValueError(f"unrecognized checkpoint format in {path}.json")
    config = run_config_from_dict(sidecar["config"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    if raw.size != sidecar["total_doubles"]:
        raise ValueError(
            f"checkpoint blob has {raw.size} doubles, sidecar says "
            f"{sidecar['total_doubles']}"
        )
    state = init_train_state(config)
    groups = {"params": state.params, "adam_m": state.adam_m, "adam_v": state.adam_v}
    for entry in sidecar["arrays"]:
        group, name = entry["name"].split("/")
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = raw[entry["offset"] : entry["offset"] + size].reshape(shape)
        groups[group][name] = np.array(arr, dtype=np.float64)
    state.step = int(sidecar["step"])
    return state
