"""Trainer tests: loss oracle, determinism, K-fold partitioning, checkpoints."""

import numpy as np
import pytest

from mmreg.config import DropoutRates, TrainConfig
from mmreg.dataio import SyntheticSpec, gen_synthetic, load_dataset
from mmreg.errors import ConfigError, DataError, NumericError, ParseError
from mmreg.kernel import make_rng, mse_loss
from mmreg.model import build_model, forward_batch, pool_records, predict_records
from mmreg.trainer import (checkpoint_bytes, kfold_partition, load_checkpoint,
                           save_checkpoint, train, train_kfold, train_on_dataset)

from conftest import TINY_DIMS, tiny_train_config


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("tinyds")
    spec = SyntheticSpec(n_subjects=24, seed=5, noise_sigma=0.1,
                         dims=dict(TINY_DIMS), frame_range=(2, 4), patch_range=(2, 5))
    return load_dataset(gen_synthetic(spec, tmp))


@pytest.fixture(scope="module")
def noiseless_dataset(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cleands")
    spec = SyntheticSpec(n_subjects=12, seed=9, noise_sigma=0.0,
                         dims=dict(TINY_DIMS), frame_range=(2, 4), patch_range=(2, 5))
    return load_dataset(gen_synthetic(spec, tmp))


def no_dropout():
    return DropoutRates(temporal=0.0, text=0.0, adapter=0.0, head=0.0)


class TestTrainBasics:
    def test_batch_loss_equals_double_loop(self, tiny_dataset):
        cfg = tiny_train_config(dropout=no_dropout())
        pooled, labels = pool_records(tiny_dataset.train, cfg.pooling,
                                      tiny_dataset.dims)
        params, rngs = build_model(cfg, tiny_dataset.dims)
        pred, _ = forward_batch(pooled, params, cfg, rngs, training=False)
        loss, _ = mse_loss(pred, labels)
        acc = 0.0
        for i in range(pred.shape[0]):
            for d in range(5):
                acc += (pred[i, d] - labels[i, d]) ** 2
        assert abs(loss - acc / pred.size) < 1e-12

    def test_lr_zero_freezes_params(self, tiny_dataset):
        cfg = tiny_train_config(lr=0.0, max_epochs=3)
        init_params, _ = build_model(cfg, tiny_dataset.dims)
        result = train_on_dataset(tiny_dataset, cfg)
        for (_, a, _), (_, b, _) in zip(init_params.named_tensors(),
                                        result.checkpoint.params.named_tensors()):
            np.testing.assert_array_equal(a, b)

    def test_single_small_step_decreases_loss(self, tiny_dataset):
        cfg = tiny_train_config(lr=1e-6, max_epochs=1, dropout=no_dropout(),
                                batch_size=64)
        pooled, labels = pool_records(tiny_dataset.train, cfg.pooling,
                                      tiny_dataset.dims)
        params, rngs = build_model(cfg, tiny_dataset.dims)
        pred, _ = forward_batch(pooled, params, cfg, rngs=None, training=False)
        before, _ = mse_loss(pred, labels)
        result = train_on_dataset(tiny_dataset, cfg)
        pred2, _ = forward_batch(pooled, result.checkpoint.params, cfg, rngs=None,
                                 training=False)
        after, _ = mse_loss(pred2, labels)
        assert after < before

    def test_same_seed_bit_identical_outputs(self, tiny_dataset):
        cfg = tiny_train_config(max_epochs=5)
        a = train_on_dataset(tiny_dataset, cfg)
        b = train_on_dataset(tiny_dataset, cfg)
        assert a.report.canonical_dict() == b.report.canonical_dict()
        assert checkpoint_bytes(a.checkpoint) == checkpoint_bytes(b.checkpoint)
        assert [s.train_mse for s in a.history] == [s.train_mse for s in b.history]

    def test_overfits_noiseless_data(self, noiseless_dataset):
        cfg = tiny_train_config(lr=1e-2, max_epochs=500, dropout=no_dropout(),
                                train_mse_target=1e-3, seed=2)
        result = train_on_dataset(noiseless_dataset, cfg)
        assert min(s.train_mse for s in result.history) < 1e-3
        assert result.history[-1].epoch <= 500

    def test_divergence_aborts_with_epoch(self, tiny_dataset):
        cfg = tiny_train_config(lr=1e18, max_epochs=50)
        with pytest.raises(NumericError, match="epoch"):
            with np.errstate(all="ignore"):
                train_on_dataset(tiny_dataset, cfg)

    def test_early_stopping_halts(self, tiny_dataset):
        cfg = tiny_train_config(lr=1e-5, max_epochs=200, early_stop_patience=3)
        result = train_on_dataset(tiny_dataset, cfg)
        assert result.history[-1].epoch < 200

    def test_empty_train_split_rejected(self, tiny_dataset):
        cfg = tiny_train_config()
        with pytest.raises(DataError):
            train([], tiny_dataset.val, tiny_dataset.dims, cfg)

    def test_patience_without_val_rejected(self, tiny_dataset):
        cfg = tiny_train_config(early_stop_patience=5)
        with pytest.raises(ConfigError):
            train(tiny_dataset.train, [], tiny_dataset.dims, cfg)

    def test_duplicated_response_subject_equals_single_response(self, tiny_dataset):
        import copy
        from mmreg.heads import aggregate, ensemble_forward
        from mmreg.fusion import fusion_forward
        from mmreg.model import clamp_scores
        cfg = tiny_train_config()
        params, _ = build_model(cfg, tiny_dataset.dims)
        rec = copy.copy(tiny_dataset.train[0])
        first = rec.responses[0]
        rec.responses = [copy.copy(first) for _ in range(6)]
        for q, resp in enumerate(rec.responses, start=1):
            resp.question_index = q
        from mmreg.model import predict_subject
        dup_pred = predict_subject(rec, params, cfg, tiny_dataset.dims)
        # single-response prediction: same pipeline on one response block
        pooled, _ = pool_records([rec], cfg.pooling, tiny_dataset.dims)
        flat = {m: pooled[m][:, :1, :].reshape(1, -1) for m in pooled}
        fused, _ = fusion_forward(flat, params.fusion)
        preds, _ = ensemble_forward(fused, params.ensemble)
        single = aggregate(preds.reshape(1, 1, cfg.head_count, 5))[0]
        np.testing.assert_array_equal(dup_pred, clamp_scores(single))

    def test_report_mean_matches_predict_path(self, tiny_dataset):
        cfg = tiny_train_config(max_epochs=4)
        result = train_on_dataset(tiny_dataset, cfg)
        preds = predict_records(tiny_dataset.val, result.checkpoint.params, cfg,
                                tiny_dataset.dims)
        labels = np.stack([r.label for r in tiny_dataset.val])
        np.testing.assert_allclose(float(np.mean((preds - labels) ** 2)),
                                   result.report.mean_mse, rtol=1e-12)


class TestKFold:
    def test_partition_is_disjoint_and_exhaustive(self):
        rng = make_rng(4)
        folds = kfold_partition(23, 5, rng)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
        combined = np.sort(np.concatenate(folds))
        np.testing.assert_array_equal(combined, np.arange(23))

    def test_partition_deterministic(self):
        a = kfold_partition(17, 4, make_rng(8))
        b = kfold_partition(17, 4, make_rng(8))
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa, fb)

    def test_k_larger_than_pool_rejected(self):
        with pytest.raises(DataError):
            kfold_partition(3, 5, make_rng(0))

    def test_every_subject_in_exactly_one_fold(self, tiny_dataset):
        cfg = tiny_train_config(max_epochs=2, kfold=3)
        result = train_kfold(tiny_dataset.train, tiny_dataset.dims, cfg,
                             val_records=tiny_dataset.val)
        ids = [rec.subject_id for rec in tiny_dataset.train]
        assert sorted(result.assignments) == sorted(ids)
        counted = [sid for fold in result.folds for sid in fold.subject_ids]
        assert sorted(counted) == sorted(ids)

    def test_zero_epoch_folds_equal_single_model(self, tiny_dataset):
        cfg = tiny_train_config(max_epochs=0, kfold=2)
        kres = train_kfold(tiny_dataset.train, tiny_dataset.dims, cfg)
        single = train(tiny_dataset.train, tiny_dataset.val, tiny_dataset.dims, cfg)
        ens = kres.predict(tiny_dataset.val, tiny_dataset.dims)
        one = predict_records(tiny_dataset.val, single.checkpoint.params, cfg,
                              tiny_dataset.dims)
        np.testing.assert_array_equal(ens, one)

    def test_unlabeled_pool_rejected(self, tiny_dataset):
        cfg = tiny_train_config()
        import copy
        pool = copy.copy(tiny_dataset.train)
        stripped = copy.copy(pool[0])
        stripped.label = None
        pool[0] = stripped
        with pytest.raises(DataError):
            train_kfold(pool, tiny_dataset.dims, cfg)


class TestCheckpoint:
    def test_round_trip_preserves_predictions(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config(max_epochs=3)
        result = train_on_dataset(tiny_dataset, cfg)
        path = tmp_path / "model.mmck"
        save_checkpoint(result.checkpoint, path)
        loaded = load_checkpoint(path)
        before = predict_records(tiny_dataset.val, result.checkpoint.params, cfg,
                                 tiny_dataset.dims)
        after = predict_records(tiny_dataset.val, loaded.params, loaded.config,
                                tiny_dataset.dims)
        np.testing.assert_array_equal(before, after)
        assert loaded.config == cfg
        assert loaded.dims == tiny_dataset.dims
        assert loaded.rng_state == result.checkpoint.rng_state

    def test_save_load_save_byte_identical(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config(max_epochs=2)
        result = train_on_dataset(tiny_dataset, cfg)
        path = tmp_path / "a.mmck"
        save_checkpoint(result.checkpoint, path)
        loaded = load_checkpoint(path)
        assert checkpoint_bytes(loaded) == path.read_bytes()

    def test_truncated_checkpoint_rejected(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config(max_epochs=1)
        result = train_on_dataset(tiny_dataset, cfg)
        path = tmp_path / "t.mmck"
        save_checkpoint(result.checkpoint, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(ParseError, match="truncated"):
            load_checkpoint(path)

    def test_basis_count_mismatch_names_both_values(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config(max_epochs=1)
        result = train_on_dataset(tiny_dataset, cfg)
        path = tmp_path / "c.mmck"
        save_checkpoint(result.checkpoint, path)
        expect = tiny_train_config(basis_count=99)
        with pytest.raises(DataError, match="6.*99"):
            load_checkpoint(path, expect_config=expect)

    def test_tampered_meta_fails_shape_validation(self, tiny_dataset, tmp_path):
        import json
        import struct
        cfg = tiny_train_config(max_epochs=1)
        result = train_on_dataset(tiny_dataset, cfg)
        path = tmp_path / "m.mmck"
        save_checkpoint(result.checkpoint, path)
        raw = path.read_bytes()
        (meta_len,) = struct.unpack("<I", raw[6:10])
        meta = json.loads(raw[10:10 + meta_len])
        meta["config"]["basis_count"] = 17
        blob = json.dumps(meta, sort_keys=True).encode()
        path.write_bytes(raw[:6] + struct.pack("<I", len(blob)) + blob
                         + raw[10 + meta_len:])
        with pytest.raises(DataError, match="shape"):
            load_checkpoint(path)
