"""Shared-basis fusion block.

Each modality owns a "keys" linear layer whose GeLU output is a vector of
activation scores; a single bias-free "values" layer holds basis vectors
shared by all modalities. A modality's compressed embedding is the
score-weighted sum of those shared basis vectors, and the fused feature is
the concatenation of the three compressed embeddings (audio, video, text).
Because every modality is reconstructed from the same basis, the three
streams land in one common space while the concatenated width stays well
below the sum of the raw input widths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ShapeError
from .kernel import (LinearParams, dropout, dropout_backward, gelu,
                     gelu_backward, linear_backward, linear_forward)

# Concatenation order of the fused feature.
FUSION_ORDER = ("audio", "video", "text")


@dataclass
class FusionParams:
    """Per-modality keys layers (with bias) plus one shared bias-free values
    layer whose rows are the basis vectors."""

    keys: dict[str, LinearParams]
    basis: LinearParams

    def __post_init__(self):
        if set(self.keys) != set(FUSION_ORDER):
            raise ShapeError(f"keys layers must cover {FUSION_ORDER}, got {sorted(self.keys)}")
        if self.basis.bias is not None:
            raise ShapeError("the shared basis layer must not carry a bias")
        for mod, layer in self.keys.items():
            if layer.out_dim != self.basis.in_dim:
                raise ShapeError(
                    f"{mod} keys out_dim {layer.out_dim} != basis count {self.basis.in_dim}")

    @property
    def basis_count(self) -> int:
        return self.basis.in_dim

    @property
    def shared_dim(self) -> int:
        return self.basis.out_dim

    @property
    def fused_dim(self) -> int:
        return len(FUSION_ORDER) * self.shared_dim

    @property
    def input_dims(self) -> dict[str, int]:
        return {m: self.keys[m].in_dim for m in FUSION_ORDER}


def init_fusion_params(input_dims: Mapping[str, int], basis_count: int,
                       shared_dim: int, rng: np.random.Generator) -> FusionParams:
    keys = {m: LinearParams.init(input_dims[m], basis_count, rng, bias=True)
            for m in FUSION_ORDER}
    basis = LinearParams.init(basis_count, shared_dim, rng, bias=False)
    return FusionParams(keys=keys, basis=basis)


@dataclass
class FusionCache:
    """Intermediates retained by the forward pass for the analytic backward."""

    dropped: dict[str, np.ndarray]       # inputs after input-side dropout
    drop_masks: dict[str, np.ndarray | None]
    pre_act: dict[str, np.ndarray]       # keys output, before GeLU
    scores: dict[str, np.ndarray]        # activation scores, after GeLU


def fusion_forward(features: Mapping[str, np.ndarray], params: FusionParams,
                   drop_rates: Mapping[str, float] | None = None,
                   rng: np.random.Generator | None = None,
                   training: bool = False) -> tuple[np.ndarray, FusionCache]:
    """Fuse per-modality feature rows into (batch, 3*shared_dim).

    Input-side dropout (one rate per modality) is applied before the keys
    layers; rates default to 0. Masks are drawn in FUSION_ORDER so the RNG
    stream is consumed in a fixed order.
    """
    dropped: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray | None] = {}
    pre_act: dict[str, np.ndarray] = {}
    scores: dict[str, np.ndarray] = {}
    slices = []
    for mod in FUSION_ORDER:
        x = features[mod]
        if x.ndim != 2:
            raise ShapeError(f"{mod} features must be (batch, dim), got {x.shape}")
        rate = 0.0 if drop_rates is None else drop_rates.get(mod, 0.0)
        xd, mask = dropout(x, rate, rng, training)
        z = linear_forward(xd, params.keys[mod])
        a = gelu(z)
        dropped[mod] = xd
        masks[mod] = mask
        pre_act[mod] = z
        scores[mod] = a
        # Weighted sum of shared basis vectors, batched: a @ basis.
        slices.append(linear_forward(a, params.basis))
    fused = np.concatenate(slices, axis=1)
    return fused, FusionCache(dropped=dropped, drop_masks=masks,
                              pre_act=pre_act, scores=scores)


def fusion_backward(grad_fused: np.ndarray, cache: FusionCache,
                    params: FusionParams,
                    want_input_grads: bool = False) -> dict[str, np.ndarray] | None:
    """Accumulate gradients for all keys layers and the shared basis.

    The basis gradient collects contributions from all three modalities (the
    layer is shared); slices are processed in FUSION_ORDER so reduction order
    is fixed.
    """
    s = params.shared_dim
    if grad_fused.ndim != 2 or grad_fused.shape[1] != len(FUSION_ORDER) * s:
        raise ShapeError(
            f"fused gradient shape {grad_fused.shape} does not match "
            f"(batch, {len(FUSION_ORDER) * s})")
    input_grads: dict[str, np.ndarray] = {}
    for i, mod in enumerate(FUSION_ORDER):
        grad_slice = grad_fused[:, i * s:(i + 1) * s]
        grad_scores = linear_backward(cache.scores[mod], params.basis, grad_slice)
        grad_z = gelu_backward(cache.pre_act[mod], grad_scores)
        grad_xd = linear_backward(cache.dropped[mod], params.keys[mod], grad_z)
        if want_input_grads:
            input_grads[mod] = dropout_backward(grad_xd, cache.drop_masks[mod])
    return input_grads if want_input_grads else None
