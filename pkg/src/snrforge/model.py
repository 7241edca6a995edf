"""Small MLP regressor with hand-written reverse-mode gradients.

Architecture: the noisy 2D point is concatenated with a sinusoidal
embedding of the conditioning time (freq_pairs sine/cosine pairs whose
periods are log-spaced from 1 down to 1e-3), followed by two tanh hidden
layers of the same width and a linear 2D output head.  tanh keeps the
network continuously differentiable, so finite-difference checks of the
analytic gradients are clean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 128
    freq_pairs: int = 16

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {self.hidden}")
        if self.freq_pairs < 1:
            raise ValueError(f"freq_pairs must be >= 1, got {self.freq_pairs}")

    @property
    def input_dim(self) -> int:
        return 2 + 2 * self.freq_pairs


def time_frequencies(freq_pairs: int) -> np.ndarray:
    """Angular frequencies with periods log-spaced from 1 to 1e-3."""
    if freq_pairs == 1:
        periods = np.array([1.0])
    else:
        periods = np.logspace(0.0, -3.0, freq_pairs)
    return 2.0 * np.pi / periods


def time_embedding(t: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    phase = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


def init_params(cfg: MlpConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """1/sqrt(fan_in) Gaussian weights, zero biases."""
    din, h = cfg.input_dim, cfg.hidden
    return {
        "w1": rng.standard_normal((din, h)) / np.sqrt(din),
        "b1": np.zeros(h),
        "w2": rng.standard_normal((h, h)) / np.sqrt(h),
        "b2": np.zeros(h),
        "w3": rng.standard_normal((h, 2)) / np.sqrt(h),
        "b3": np.zeros(2),
    }


def zero_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def forward_cached(params, x_t, t, freqs):
    """Forward pass returning the output and the backward-pass cache."""
    emb = time_embedding(t, freqs)
    z0 = np.concatenate([x_t, emb], axis=1)
    h1 = np.tanh(z0 @ params["w1"] + params["b1"])
    h2 = np.tanh(h1 @ params["w2"] + params["b2"])
    out = h2 @ params["w3"] + params["b3"]
    return out, (z0, h1, h2)


def backward(params, cache, dout) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given d(loss)/d(out)."""
    z0, h1, h2 = cache
    grads = {}
    grads["w3"] = h2.T @ dout
    grads["b3"] = dout.sum(axis=0)
    dh2 = dout @ params["w3"].T
    da2 = dh2 * (1.0 - h2 * h2)
    grads["w2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ params["w2"].T
    da1 = dh1 * (1.0 - h1 * h1)
    grads["w1"] = z0.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return grads


def model_forward(params, x_t, t, freqs=None, condition=None):
    """Evaluate the regressor at noisy points ``x_t`` and times ``t``.

    ``condition`` is a reserved slot for conditioning information; this
    lab is unconditional, so only None is accepted.
    """
    if condition is not None:
        raise ValueError("conditional prediction is not supported; pass condition=None")
    x_t = np.asarray(x_t, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if freqs is None:
        freqs = time_frequencies((params["w1"].shape[0] - 2) // 2)
    out, _ = forward_cached(params, x_t, t, freqs)
    return out
