"""Training loop, K-fold cross-validation, and checkpoint persistence.

The batch unit is the subject (all six responses move together, the label is
per subject); the loss is the MSE between the subject-level aggregated
prediction and the label. Gradients reduce in subject-index order and the
optimizer step is serial, so a fixed seed reproduces parameter trajectories
bit-for-bit.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .dataio import Dataset, SubjectRecord
from .errors import ConfigError, DataError, NumericError, ParseError
from .evaluator import RunReport, evaluate
from .kernel import AdamWConfig, AdamWState, adamw_step, mse_loss
from .model import (ModelParams, TrainRngs, backward_batch, build_model,
                    forward_batch, pool_records, predict_pooled,
                    predict_records)

CKPT_MAGIC = b"MMCK"
CKPT_VERSION = 1


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_mse: float
    val_mse: float | None


@dataclass
class Checkpoint:
    config: TrainConfig
    dims: dict[str, int]
    epoch: int
    best_val_mse: float
    rng_state: dict
    params: ModelParams


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    report: RunReport
    history: list[EpochStats]


def _rng_states(rngs: TrainRngs) -> dict:
    return {
        "shuffle": rngs.shuffle.bit_generator.state,
        "fusion": rngs.fusion.bit_generator.state,
        "adapter": rngs.adapter.bit_generator.state,
        "heads": [r.bit_generator.state for r in rngs.heads],
    }


def train(train_records: list[SubjectRecord], val_records: list[SubjectRecord],
          dims: dict[str, int], cfg: TrainConfig,
          verbose: bool = False) -> TrainResult:
    """Train one model; return the best-validation checkpoint and its report."""
    cfg.validate()
    if not train_records:
        raise DataError("training split is empty")
    if cfg.early_stop_patience is not None and not val_records:
        raise ConfigError("early stopping needs a non-empty validation split; "
                          "set early_stop_patience to null to train without one")
    t0 = time.perf_counter()
    pooled_train, train_labels = pool_records(train_records, cfg.pooling, dims)
    if train_labels is None:
        raise DataError("every training subject must have labels")
    pooled_val, val_labels = (None, None)
    if val_records:
        pooled_val, val_labels = pool_records(val_records, cfg.pooling, dims)
        if val_labels is None:
            raise DataError("every validation subject must have labels")

    params, rngs = build_model(cfg, dims)
    tensors = params.named_tensors()
    opt_cfg = AdamWConfig(learning_rate=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                          eps=cfg.eps, weight_decay=cfg.weight_decay)
    opt_state = AdamWState.init([p for _, p, _ in tensors])

    n = len(train_records)
    history: list[EpochStats] = []
    best_metric = np.inf
    best_values = params.copy_values()
    best_epoch = 0
    steps = 0
    last_finite = None
    epochs_run = 0

    def split_mse(pooled, labels):
        pred = predict_pooled(pooled, params, cfg)
        return float(np.mean((pred - labels) ** 2))

    for epoch in range(1, cfg.max_epochs + 1):
        epochs_run = epoch
        order = rngs.shuffle.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = {m: pooled_train[m][idx] for m in pooled_train}
            pred, ctx = forward_batch(batch, params, cfg, rngs, training=True)
            loss, grad = mse_loss(pred, train_labels[idx])
            if not np.isfinite(loss):
                raise NumericError(
                    f"training diverged at epoch {epoch}: loss is non-finite "
                    f"(last finite loss {last_finite})")
            last_finite = loss
            batch_losses.append(loss)
            params.zero_grads()
            backward_batch(grad, ctx, params)
            adamw_step([p for _, p, _ in tensors], [g for _, _, g in tensors],
                       opt_state, opt_cfg)
            steps += 1
        train_mse = split_mse(pooled_train, train_labels)
        val_mse = split_mse(pooled_val, val_labels) if val_records else None
        history.append(EpochStats(epoch=epoch, train_loss=float(np.mean(batch_losses)),
                                  train_mse=train_mse, val_mse=val_mse))
        if verbose:
            vtxt = "-" if val_mse is None else f"{val_mse:.6f}"
            print(f"epoch {epoch:4d}  train {train_mse:.6f}  val {vtxt}")
        metric = val_mse if val_mse is not None else train_mse
        if metric < best_metric:
            best_metric = metric
            best_values = params.copy_values()
            best_epoch = epoch
        if cfg.train_mse_target is not None and train_mse < cfg.train_mse_target:
            break
        if (cfg.early_stop_patience is not None
                and epoch - best_epoch >= cfg.early_stop_patience):
            break

    params.load_values(best_values)
    wall = time.perf_counter() - t0
    timing = {"epochs_run": epochs_run, "best_epoch": best_epoch,
              "optimizer_steps": steps, "wall_seconds": wall}
    if val_records:
        preds = predict_pooled(pooled_val, params, cfg)
        report = evaluate(preds, val_labels, split="val", config=cfg.to_dict(),
                          seed=cfg.seed, timing=timing)
    else:
        preds = predict_pooled(pooled_train, params, cfg)
        report = evaluate(preds, train_labels, split="train", config=cfg.to_dict(),
                          seed=cfg.seed, timing=timing)
    best_mse = float(best_metric) if np.isfinite(best_metric) else report.mean_mse
    ckpt = Checkpoint(config=cfg, dims=dict(dims), epoch=best_epoch,
                      best_val_mse=best_mse, rng_state=_rng_states(rngs),
                      params=params)
    return TrainResult(checkpoint=ckpt, report=report, history=history)


def train_on_dataset(dataset: Dataset, cfg: TrainConfig,
                     verbose: bool = False) -> TrainResult:
    return train(dataset.train, dataset.val, dataset.dims, cfg, verbose=verbose)


# ---------------------------------------------------------------------------
# K-fold cross-validation


@dataclass
class FoldOutcome:
    index: int
    subject_ids: list[str]
    val_mse: float
    checkpoint: Checkpoint


@dataclass
class KFoldResult:
    folds: list[FoldOutcome]
    assignments: dict[str, int]
    oof_report: RunReport
    ensemble_val_report: RunReport | None
    config: TrainConfig

    def predict(self, records: list[SubjectRecord], dims: dict[str, int]) -> np.ndarray:
        """Fold-level late ensemble: mean of the K models' predictions."""
        stacks = [predict_records(records, f.checkpoint.params, self.config, dims)
                  for f in self.folds]
        return np.mean(np.stack(stacks, axis=0), axis=0)


def kfold_partition(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Disjoint, exhaustive folds from a seeded shuffle; sizes differ by <= 1."""
    if k > n:
        raise DataError(f"cannot split {n} subjects into {k} folds")
    return list(np.array_split(rng.permutation(n), k))


def train_kfold(pool: list[SubjectRecord], dims: dict[str, int], cfg: TrainConfig,
                val_records: list[SubjectRecord] | None = None,
                verbose: bool = False) -> KFoldResult:
    """Train K models, each holding out one fold for validation/early stop.

    The caller chooses the pool; the standard protocol pools train+val so
    every model trains on most of the labeled data. Two numbers come back:
    the out-of-fold MSE over the pool (leak-free: every subject scored by
    the one model that never saw it) and, when ``val_records`` is given, the
    K-model ensemble's MSE on those subjects (near-train quality when they
    sit inside the pool; that is the point of the protocol).
    """
    cfg.validate()
    if any(rec.label is None for rec in pool):
        raise DataError("every pooled subject needs labels for K-fold training")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x4B]))
    folds_idx = kfold_partition(len(pool), cfg.kfold, rng)
    oof_preds = np.empty((len(pool), 5))
    labels = np.stack([rec.label for rec in pool])
    folds: list[FoldOutcome] = []
    assignments: dict[str, int] = {}
    for k, held_out in enumerate(folds_idx):
        held_set = set(int(i) for i in held_out)
        fold_train = [rec for i, rec in enumerate(pool) if i not in held_set]
        fold_val = [pool[int(i)] for i in held_out]
        result = train(fold_train, fold_val, dims, cfg, verbose=verbose)
        preds = predict_records(fold_val, result.checkpoint.params, cfg, dims)
        for row, i in zip(preds, held_out):
            oof_preds[int(i)] = row
        for rec in fold_val:
            assignments[rec.subject_id] = k
        folds.append(FoldOutcome(index=k, subject_ids=[r.subject_id for r in fold_val],
                                 val_mse=result.checkpoint.best_val_mse,
                                 checkpoint=result.checkpoint))
    oof_report = evaluate(oof_preds, labels, split="val-pool", config=cfg.to_dict(),
                          seed=cfg.seed, fold_assignments=assignments)
    kres = KFoldResult(folds=folds, assignments=assignments, oof_report=oof_report,
                       ensemble_val_report=None, config=cfg)
    if val_records:
        val_labels = np.stack([rec.label for rec in val_records])
        ens_preds = kres.predict(val_records, dims)
        kres.ensemble_val_report = evaluate(ens_preds, val_labels, split="val",
                                            config=cfg.to_dict(), seed=cfg.seed,
                                            fold_assignments=assignments)
    return kres


# ---------------------------------------------------------------------------
# Checkpoint persistence (versioned, shape-tagged tensors)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "config": ckpt.config.to_dict(),
        "dims": ckpt.dims,
        "epoch": ckpt.epoch,
        "best_val_mse": ckpt.best_val_mse,
        "rng_state": ckpt.rng_state,
    }
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    out = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION),
           struct.pack("<I", len(meta_blob)), meta_blob]
    tensors = ckpt.params.named_tensors()
    out.append(struct.pack("<H", len(tensors)))
    for name, value, _ in tensors:
        encoded = name.encode()
        out.append(struct.pack("<H", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(out)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    from pathlib import Path
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def _empty_params(cfg: TrainConfig, dims: dict[str, int]) -> ModelParams:
    from .fusion import FusionParams
    from .heads import EnsembleParams
    from .kernel import LinearParams
    keys = {m: LinearParams(weight=np.zeros((dims[m], cfg.basis_count)),
                            bias=np.zeros(cfg.basis_count))
            for m in ("audio", "video", "text")}
    basis = LinearParams(weight=np.zeros((cfg.basis_count, cfg.shared_dim)), bias=None)
    fused = 3 * cfg.shared_dim
    ens = EnsembleParams(w1=np.zeros((fused, cfg.head_count, cfg.hidden_dim)),
                         b1=np.zeros((cfg.head_count, cfg.hidden_dim)),
                         w2=np.zeros((cfg.head_count, cfg.hidden_dim, 5)),
                         b2=np.zeros((cfg.head_count, 5)))
    return ModelParams(fusion=FusionParams(keys=keys, basis=basis), ensemble=ens)


def load_checkpoint(path, expect_config: TrainConfig | None = None) -> Checkpoint:
    """Load and validate a checkpoint; every tensor shape is checked against
    the embedded config so truncation or tampering fails loudly."""
    from pathlib import Path
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise ParseError(f"{path}: truncated checkpoint reading {what} "
                             f"(need {n} bytes at offset {off}, have {len(raw) - off})")
        chunk = raw[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != CKPT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}, "
                         f"expected {CKPT_VERSION}")
    (meta_len,) = struct.unpack("<I", take(4, "meta length"))
    meta = json.loads(take(meta_len, "meta"))
    cfg = TrainConfig.from_dict(meta["config"])
    dims = {m: int(v) for m, v in meta["dims"].items()}
    if expect_config is not None:
        for name in ("basis_count", "shared_dim", "head_count", "hidden_dim"):
            have, want = getattr(cfg, name), getattr(expect_config, name)
            if have != want:
                raise DataError(f"{path}: checkpoint {name} is {have}, "
                                f"requested config has {want}")
    params = _empty_params(cfg, dims)
    tensors = params.named_tensors()
    (count,) = struct.unpack("<H", take(2, "tensor count"))
    if count != len(tensors):
        raise DataError(f"{path}: checkpoint holds {count} tensors, "
                        f"expected {len(tensors)}")
    for name, value, _ in tensors:
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        got_name = take(name_len, "tensor name").decode()
        if got_name != name:
            raise DataError(f"{path}: tensor {got_name!r} where {name!r} was expected")
        (ndim,) = struct.unpack("<B", take(1, "tensor ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "tensor shape"))
        if shape != value.shape:
            raise DataError(f"{path}: tensor {name} has shape {shape}, config "
                            f"implies {value.shape}")
        n_bytes = 8 * int(np.prod(shape))
        value[...] = np.frombuffer(take(n_bytes, f"tensor {name} payload"),
                                   dtype="<f8").reshape(shape)
    if off != len(raw):
        raise ParseError(f"{path}: {len(raw) - off} trailing bytes after tensors")
    return Checkpoint(config=cfg, dims=dims, epoch=int(meta["epoch"]),
                      best_val_mse=float(meta["best_val_mse"]),
                      rng_state=meta["rng_state"], params=params)
