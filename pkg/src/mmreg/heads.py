"""Regression head ensemble and two-level mean aggregation.

H structurally identical FFN heads (linear -> GeLU -> dropout -> linear) map
the fused feature to the five target scores. Predictions are averaged over
heads first, then over a subject's responses; with the fixed canonical
response order from the loader both reductions are bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .kernel import (dropout, dropout_backward, gelu, gelu_backward,
                     xavier_uniform)

N_SCORE_DIMS = 5


@dataclass
class EnsembleParams:
    """Stacked parameters of H independent heads.

    w1 is laid out (in_dim, H, hidden) so the flat (in_dim, H*hidden) view
    used by the batched forward is copy-free.
    """

    w1: np.ndarray  # (in_dim, H, hidden)
    b1: np.ndarray  # (H, hidden)
    w2: np.ndarray  # (H, hidden, out_dim)
    b2: np.ndarray  # (H, out_dim)

    def __post_init__(self):
        self.grad_w1 = np.zeros_like(self.w1)
        self.grad_b1 = np.zeros_like(self.b1)
        self.grad_w2 = np.zeros_like(self.w2)
        self.grad_b2 = np.zeros_like(self.b2)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def head_count(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[2]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[2]

    def head(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Views of one head's (w1, b1, w2, b2); writes hit the stacked arrays."""
        return self.w1[:, i, :], self.b1[i], self.w2[i], self.b2[i]


def init_ensemble_params(in_dim: int, hidden_dim: int, head_count: int,
                         rng: np.random.Generator,
                         out_dim: int = N_SCORE_DIMS) -> EnsembleParams:
    """Heads are structurally identical but independently initialized."""
    if head_count < 1:
        raise DataError(f"head_count must be >= 1, got {head_count}")
    w1 = np.empty((in_dim, head_count, hidden_dim))
    w2 = np.empty((head_count, hidden_dim, out_dim))
    for h in range(head_count):
        w1[:, h, :] = xavier_uniform(in_dim, hidden_dim, rng)
        w2[h] = xavier_uniform(hidden_dim, out_dim, rng)
    return EnsembleParams(w1=w1, b1=np.zeros((head_count, hidden_dim)),
                          w2=w2, b2=np.zeros((head_count, out_dim)))


@dataclass
class EnsembleCache:
    x: np.ndarray          # (N, in_dim)
    pre_act: np.ndarray    # (N, H*hidden)
    hidden: np.ndarray     # (N, H*hidden) post-GeLU, post-dropout
    drop_mask: np.ndarray | None


def ensemble_forward(x: np.ndarray, params: EnsembleParams, drop_rate: float = 0.0,
                     head_rngs: list[np.random.Generator] | None = None,
                     training: bool = False) -> tuple[np.ndarray, EnsembleCache]:
    """All heads on a batch of fused rows: (N, in_dim) -> (N, H, out_dim).

    Each head's dropout mask comes from its own stream (consumed in head
    order) so head noise is independent yet reproducible.
    """
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(
            f"ensemble_forward: input shape {x.shape} does not match in_dim {params.in_dim}")
    n = x.shape[0]
    hc, hid = params.head_count, params.hidden_dim
    w1_flat = params.w1.reshape(params.in_dim, hc * hid)
    z = x @ w1_flat + params.b1.reshape(hc * hid)
    a = gelu(z)
    if training and drop_rate > 0.0:
        if head_rngs is None or len(head_rngs) != hc:
            raise ShapeError(f"need {hc} head RNG streams, got "
                             f"{0 if head_rngs is None else len(head_rngs)}")
        masks = [dropout(a[:, h * hid:(h + 1) * hid], drop_rate, head_rngs[h], True)[1]
                 for h in range(hc)]
        mask = np.concatenate(masks, axis=1)
        hidden = a * mask
    else:
        mask = None
        hidden = a
    # (H, N, hid) @ (H, hid, out) -> (H, N, out)
    h_view = hidden.reshape(n, hc, hid).transpose(1, 0, 2)
    preds = np.matmul(h_view, params.w2) + params.b2[:, None, :]
    return preds.transpose(1, 0, 2), EnsembleCache(x=x, pre_act=z, hidden=hidden,
                                                   drop_mask=mask)


def ensemble_backward(grad_preds: np.ndarray, cache: EnsembleCache,
                      params: EnsembleParams) -> np.ndarray:
    """Accumulate head gradients, return gradient w.r.t. the fused input."""
    n = cache.x.shape[0]
    hc, hid = params.head_count, params.hidden_dim
    if grad_preds.shape != (n, hc, params.out_dim):
        raise ShapeError(
            f"ensemble_backward: grad shape {grad_preds.shape} does not match "
            f"({n}, {hc}, {params.out_dim})")
    g = grad_preds.transpose(1, 0, 2)                      # (H, N, out)
    params.grad_b2 += g.sum(axis=1)
    h_view = cache.hidden.reshape(n, hc, hid).transpose(1, 0, 2)
    params.grad_w2 += np.matmul(h_view.transpose(0, 2, 1), g)
    grad_hidden = np.matmul(g, params.w2.transpose(0, 2, 1))  # (H, N, hid)
    grad_hidden = grad_hidden.transpose(1, 0, 2).reshape(n, hc * hid)
    grad_a = dropout_backward(grad_hidden, cache.drop_mask)
    grad_z = gelu_backward(cache.pre_act, grad_a)
    params.grad_b1 += grad_z.reshape(n, hc, hid).sum(axis=0)
    params.grad_w1 += (cache.x.T @ grad_z).reshape(params.in_dim, hc, hid)
    return grad_z @ params.w1.reshape(params.in_dim, hc * hid).T


def head_forward(x: np.ndarray, params: EnsembleParams, index: int,
                 drop_rate: float = 0.0, rng: np.random.Generator | None = None,
                 training: bool = False) -> np.ndarray:
    """One head on one fused vector: linear -> GeLU -> dropout -> linear."""
    if x.shape != (params.in_dim,):
        raise ShapeError(f"head_forward: input shape {x.shape} != ({params.in_dim},)")
    z = x @ params.w1[:, index, :] + params.b1[index]
    a = gelu(z)
    a, _ = dropout(a, drop_rate, rng, training)
    return a @ params.w2[index] + params.b2[index]


def _centered_mean(a: np.ndarray, axis: int) -> np.ndarray:
    """Mean along one axis, computed relative to the first slice.

    Algebraically identical to the plain mean (so gradients are unchanged),
    but constant inputs come back bit-exactly for any axis length, which the
    duplication / identical-heads invariants require.
    """
    first = np.take(a, 0, axis=axis)
    return first + (a - np.expand_dims(first, axis)).mean(axis=axis)


def aggregate(predictions: np.ndarray) -> np.ndarray:
    """Two-level mean: heads first, then responses.

    Accepts (R, H, out) for one subject or (B, R, H, out) for a batch; the
    summation order (heads inner, responses outer) is fixed.
    """
    if predictions.ndim not in (3, 4):
        raise DataError(f"aggregate expects (R, H, out) or (B, R, H, out), got "
                        f"shape {predictions.shape}")
    if predictions.shape[-2] < 1 or predictions.shape[-3] < 1:
        raise DataError(f"aggregate needs at least one response and one head, got "
                        f"shape {predictions.shape}")
    per_response = _centered_mean(predictions, axis=-2)
    return _centered_mean(per_response, axis=-2)
