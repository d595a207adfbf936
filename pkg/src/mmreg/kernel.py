"""Dense numeric kernel: linear layers, GeLU, dropout, MSE, AdamW, seeded RNG.

Every piece of raw math in the engine bottoms out here. Arrays are float64
numpy throughout (files store float32; promotion happens at load). Gradients
are analytic and *accumulate* into the parameter structs, so batch-level
contributions can be reduced in a fixed order and determinism holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ShapeError

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Matrices and RNG


def matrix(data, checked: bool = True) -> np.ndarray:
    """Build a 2-D float64 matrix; in checked mode reject NaN/Inf entries."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim} shape={a.shape}")
    if checked and not np.isfinite(a).all():
        bad = int(np.flatnonzero(~np.isfinite(a))[0])
        raise ShapeError(f"non-finite entry at flat index {bad}")
    return a


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; identical seed and call sequence give identical
    streams on every platform."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split n independent child streams off a parent generator."""
    return rng.spawn(n)


def xavier_uniform(in_dim: int, out_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Fan-based uniform init; keeps activations bounded at depth."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(in_dim, out_dim))


# ---------------------------------------------------------------------------
# Linear layer


@dataclass
class LinearParams:
    """Weight (in_dim x out_dim), optional bias (out_dim), and grad buffers.

    The shared basis layer of the fusion block carries no bias; everything
    else does.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    grad_weight: np.ndarray = field(init=False)
    grad_bias: np.ndarray | None = field(init=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
             bias: bool = True) -> "LinearParams":
        w = xavier_uniform(in_dim, out_dim, rng)
        b = np.zeros(out_dim) if bias else None
        return cls(weight=w, bias=b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def zero_grad(self) -> None:
        self.grad_weight[...] = 0.0
        if self.grad_bias is not None:
            self.grad_bias[...] = 0.0


def linear_forward(x: np.ndarray, p: LinearParams) -> np.ndarray:
    """out = x @ W + b, bias broadcast per row (omitted when absent)."""
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ShapeError(
            f"linear_forward: input shape {x.shape} does not match weight shape "
            f"{p.weight.shape} (expected {p.in_dim} columns)")
    out = x @ p.weight
    if p.bias is not None:
        out += p.bias
    return out


def linear_backward(x: np.ndarray, p: LinearParams, grad_out: np.ndarray) -> np.ndarray:
    """Accumulate grad_weight / grad_bias, return grad_x = grad_out @ W.T."""
    if grad_out.shape != (x.shape[0], p.out_dim):
        raise ShapeError(
            f"linear_backward: grad shape {grad_out.shape} does not match "
            f"(batch={x.shape[0]}, out={p.out_dim})")
    p.grad_weight += x.T @ grad_out
    if p.grad_bias is not None:
        p.grad_bias += grad_out.sum(axis=0)
    return grad_out @ p.weight.T


# ---------------------------------------------------------------------------
# Activations


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact-erf GeLU: x * Phi(x)."""
    return x * 0.5 * (1.0 + erf(x / _SQRT2))


def gelu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return grad_out * (cdf + x * phi)


# ---------------------------------------------------------------------------
# Dropout (inverted; mask is the multiplicative tensor, so backward is a
# single elementwise product and frozen-mask replay is exact)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None,
            training: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Training: zero each element with probability
    ``rate`` and scale survivors by 1/(1-rate). Inference: identity, no RNG
    consumed. Returns (y, mask); mask is None at inference."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training:
        return x, None
    if rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ConfigError("training-mode dropout with rate > 0 needs an RNG")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(np.float64) / (1.0 - rate)
    return x * mask, mask


def apply_dropout_mask(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Replay a frozen mask (used by finite-difference gradient checks)."""
    return x if mask is None else x * mask


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


# ---------------------------------------------------------------------------
# Loss


def mse_loss(pred: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all entries of (pred - label)^2 and its gradient w.r.t. pred."""
    if pred.shape != label.shape:
        raise ShapeError(f"mse_loss: prediction shape {pred.shape} != label shape {label.shape}")
    diff = pred - label
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad


# ---------------------------------------------------------------------------
# AdamW (decoupled weight decay)


@dataclass
class AdamWConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    """First/second moment per parameter tensor, in the caller's fixed order.

    A scratch buffer per tensor keeps the update allocation-free; large
    models otherwise spend more time in temporaries than in math.
    """

    step_count: int
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    scratch: list[np.ndarray]

    @classmethod
    def init(cls, params: list[np.ndarray]) -> "AdamWState":
        return cls(
            step_count=0,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            scratch=[np.zeros_like(p) for p in params],
        )


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray],
               state: AdamWState, cfg: AdamWConfig) -> None:
    """One decoupled-weight-decay Adam update, in place:

        m <- b1*m + (1-b1)*g         v <- b2*v + (1-b2)*g^2
        theta <- theta - lr * ( m_hat/(sqrt(v_hat)+eps) + wd*theta )

    computed as theta <- theta*(1 - lr*wd) - lr * m/(bc1*(sqrt(v/bc2)+eps)),
    which is the same formula with the decay applied first.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError(
            f"adamw_step: {len(params)} params vs {len(grads)} grads vs "
            f"{len(state.first_moment)} moment tensors")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - cfg.beta1 ** t
    inv_sqrt_bc2 = 1.0 / np.sqrt(1.0 - cfg.beta2 ** t)
    for p, g, m, v, tmp in zip(params, grads, state.first_moment,
                               state.second_moment, state.scratch):
        if p.shape != g.shape:
            raise ShapeError(f"adamw_step: param shape {p.shape} != grad shape {g.shape}")
        m *= cfg.beta1
        np.multiply(g, 1.0 - cfg.beta1, out=tmp)
        m += tmp
        v *= cfg.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - cfg.beta2
        v += tmp
        # denom = bc1 * (sqrt(v_hat) + eps), with sqrt(v_hat) = sqrt(v)/sqrt(bc2)
        np.sqrt(v, out=tmp)
        tmp *= inv_sqrt_bc2
        tmp += cfg.eps
        tmp *= bc1
        np.divide(m, tmp, out=tmp)
        tmp *= cfg.learning_rate
        if cfg.weight_decay != 0.0:
            p *= 1.0 - cfg.learning_rate * cfg.weight_decay
        p -= tmp
