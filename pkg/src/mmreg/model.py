"""Full pipeline: pooled features -> fusion -> head ensemble -> subject score.

Parameters for the fusion block and the head ensemble live together here so
the trainer, checkpointing, and prediction all share one fixed tensor order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SCORE_MAX, SCORE_MIN, TrainConfig
from .dataio import RESPONSES_PER_SUBJECT, SubjectRecord
from .errors import DataError
from .fusion import (FusionCache, FusionParams, fusion_backward, fusion_forward,
                     init_fusion_params)
from .heads import (EnsembleCache, EnsembleParams, aggregate, ensemble_backward,
                    ensemble_forward, init_ensemble_params)
from .kernel import dropout, dropout_backward, make_rng
from .pooling import PoolingConfig, pool_response


@dataclass
class ModelParams:
    fusion: FusionParams
    ensemble: EnsembleParams

    def named_tensors(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(name, param, grad) triples in the canonical order used by the
        optimizer and the checkpoint format."""
        out = []
        for mod in ("audio", "video", "text"):
            layer = self.fusion.keys[mod]
            out.append((f"fusion.keys.{mod}.weight", layer.weight, layer.grad_weight))
            out.append((f"fusion.keys.{mod}.bias", layer.bias, layer.grad_bias))
        out.append(("fusion.basis.weight", self.fusion.basis.weight,
                    self.fusion.basis.grad_weight))
        ens = self.ensemble
        out.append(("ensemble.w1", ens.w1, ens.grad_w1))
        out.append(("ensemble.b1", ens.b1, ens.grad_b1))
        out.append(("ensemble.w2", ens.w2, ens.grad_w2))
        out.append(("ensemble.b2", ens.b2, ens.grad_b2))
        return out

    def zero_grads(self) -> None:
        for _, _, grad in self.named_tensors():
            grad[...] = 0.0

    def copy_values(self) -> list[np.ndarray]:
        return [p.copy() for _, p, _ in self.named_tensors()]

    def load_values(self, values: list[np.ndarray]) -> None:
        tensors = self.named_tensors()
        if len(values) != len(tensors):
            raise DataError(f"expected {len(tensors)} tensors, got {len(values)}")
        for (_, p, _), v in zip(tensors, values):
            if p.shape != v.shape:
                raise DataError(f"tensor shape mismatch: {p.shape} vs {v.shape}")
            p[...] = v


@dataclass
class TrainRngs:
    """Independent streams split from the run seed, consumed in a fixed order:
    shuffle, then per batch the fusion input masks, the adapter mask, and one
    mask per head."""

    shuffle: np.random.Generator
    fusion: np.random.Generator
    adapter: np.random.Generator
    heads: list[np.random.Generator]


def build_model(cfg: TrainConfig, dims: dict[str, int]) -> tuple[ModelParams, TrainRngs]:
    """Initialize parameters and training RNG streams from cfg.seed."""
    parent = make_rng(cfg.seed)
    init_rng, shuffle, fusion_rng, adapter, heads_parent = parent.spawn(5)
    fusion = init_fusion_params(dims, cfg.basis_count, cfg.shared_dim, init_rng)
    ensemble = init_ensemble_params(fusion.fused_dim, cfg.hidden_dim,
                                    cfg.head_count, init_rng)
    rngs = TrainRngs(shuffle=shuffle, fusion=fusion_rng, adapter=adapter,
                     heads=heads_parent.spawn(cfg.head_count))
    return ModelParams(fusion=fusion, ensemble=ensemble), rngs


# ---------------------------------------------------------------------------
# Pooled batches


def pool_records(records: list[SubjectRecord], pooling: PoolingConfig,
                 dims: dict[str, int]) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Pool every record once up front: {modality: (n, R, dim)} plus the
    (n, 5) label block (None when any record is unlabeled)."""
    if not records:
        raise DataError("cannot pool an empty record list")
    pooled = {m: np.empty((len(records), RESPONSES_PER_SUBJECT, dims[m]))
              for m in ("video", "audio", "text")}
    labels = np.empty((len(records), 5))
    have_labels = True
    for i, rec in enumerate(records):
        if len(rec.responses) != RESPONSES_PER_SUBJECT:
            raise DataError(
                f"subject {rec.subject_id} has {len(rec.responses)} responses, "
                f"expected {RESPONSES_PER_SUBJECT}")
        for r, resp in enumerate(rec.responses):
            pr = pool_response(resp.video, resp.audio, resp.text, pooling,
                               expected_dims=dims,
                               response_id=f"{rec.subject_id}/q{resp.question_index}")
            pooled["video"][i, r] = pr.video
            pooled["audio"][i, r] = pr.audio
            pooled["text"][i, r] = pr.text
        if rec.label is None:
            have_labels = False
        else:
            labels[i] = rec.label
    return pooled, (labels if have_labels else None)


@dataclass
class BatchContext:
    fusion_cache: FusionCache
    adapter_mask: np.ndarray | None
    ensemble_cache: EnsembleCache
    n_subjects: int
    n_responses: int


def forward_batch(pooled: dict[str, np.ndarray], params: ModelParams,
                  cfg: TrainConfig, rngs: TrainRngs | None,
                  training: bool) -> tuple[np.ndarray, BatchContext]:
    """Pooled batch -> per-subject 5-score predictions (raw, unclamped)."""
    b, r = pooled["video"].shape[:2]
    flat = {m: pooled[m].reshape(b * r, pooled[m].shape[2]) for m in pooled}
    rates = cfg.dropout.fusion_rates() if training else None
    fused, fcache = fusion_forward(flat, params.fusion, drop_rates=rates,
                                   rng=rngs.fusion if rngs else None,
                                   training=training)
    x, adapter_mask = dropout(fused, cfg.dropout.adapter if training else 0.0,
                              rngs.adapter if rngs else None, training)
    preds, ecache = ensemble_forward(x, params.ensemble,
                                     drop_rate=cfg.dropout.head if training else 0.0,
                                     head_rngs=rngs.heads if rngs else None,
                                     training=training)
    hc = params.ensemble.head_count
    subject_pred = aggregate(preds.reshape(b, r, hc, params.ensemble.out_dim))
    return subject_pred, BatchContext(fusion_cache=fcache, adapter_mask=adapter_mask,
                                      ensemble_cache=ecache, n_subjects=b,
                                      n_responses=r)


def backward_batch(grad_pred: np.ndarray, ctx: BatchContext,
                   params: ModelParams) -> None:
    """Push the subject-level gradient back through heads and fusion."""
    b, r = ctx.n_subjects, ctx.n_responses
    hc, out = params.ensemble.head_count, params.ensemble.out_dim
    # The two-level mean spreads each subject gradient evenly over R*H cells.
    per_cell = grad_pred[:, None, None, :] / (r * hc)
    grad_preds = np.broadcast_to(per_cell, (b, r, hc, out)).reshape(b * r, hc, out)
    grad_x = ensemble_backward(grad_preds, ctx.ensemble_cache, params.ensemble)
    grad_fused = dropout_backward(grad_x, ctx.adapter_mask)
    fusion_backward(grad_fused, ctx.fusion_cache, params.fusion)


# ---------------------------------------------------------------------------
# Inference


def clamp_scores(pred: np.ndarray) -> np.ndarray:
    return np.clip(pred, SCORE_MIN, SCORE_MAX)


def predict_pooled(pooled: dict[str, np.ndarray], params: ModelParams,
                   cfg: TrainConfig) -> np.ndarray:
    """Deterministic inference on a pooled batch (dropout off, no RNG)."""
    pred, _ = forward_batch(pooled, params, cfg, rngs=None, training=False)
    return clamp_scores(pred) if cfg.clamp_at_inference else pred


def predict_records(records: list[SubjectRecord], params: ModelParams,
                    cfg: TrainConfig, dims: dict[str, int]) -> np.ndarray:
    pooled, _ = pool_records(records, cfg.pooling, dims)
    return predict_pooled(pooled, params, cfg)


def predict_subject(record: SubjectRecord, params: ModelParams,
                    cfg: TrainConfig, dims: dict[str, int]) -> np.ndarray:
    """Five scores for one subject (inference mode)."""
    missing = [f"q{r.question_index}" for r in record.responses
               if r.video is None or r.audio is None or r.text is None]
    if missing:
        raise DataError(f"subject {record.subject_id}: missing features for {missing}")
    return predict_records([record], params, cfg, dims)[0]
