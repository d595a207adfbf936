"""Pooling tests: brute-force oracles plus permutation/dominance properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmreg.errors import ConfigError, DataError
from mmreg.pooling import (FeatureSequence, PoolingConfig, pool_max, pool_mean,
                           pool_response)


def seq(modality, data):
    return FeatureSequence(modality=modality, data=np.asarray(data, dtype=np.float64))


def brute_force_max(data):
    out = data[0].copy()
    for row in data[1:]:
        for i, v in enumerate(row):
            if v > out[i]:
                out[i] = v
    return out


class TestPoolMax:
    def test_single_frame_identity(self):
        s = seq("video", [[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(pool_max(s), [1.0, -2.0, 3.0])

    def test_hand_example(self):
        s = seq("video", [[1.0, 5.0], [3.0, 2.0]])
        np.testing.assert_array_equal(pool_max(s), [3.0, 5.0])

    def test_matches_brute_force(self, rng):
        data = rng.normal(size=(50, 16))
        np.testing.assert_array_equal(pool_max(seq("video", data)),
                                      brute_force_max(data))


class TestPoolMean:
    def test_single_frame_identity(self):
        s = seq("audio", [[4.0, 7.0]])
        np.testing.assert_array_equal(pool_mean(s), [4.0, 7.0])

    def test_hand_example(self):
        s = seq("audio", [[1.0, 5.0], [3.0, 1.0]])
        np.testing.assert_array_equal(pool_mean(s), [2.0, 3.0])

    def test_constant_sequence_exact(self):
        # dyadic constants: sum and division are exact in binary fp
        row = np.array([0.5, -1.75, 2.25])
        s = seq("audio", np.tile(row, (37, 1)))
        np.testing.assert_array_equal(pool_mean(s), row)
        arbitrary = np.array([0.3, -1.7, 2.2])
        s2 = seq("audio", np.tile(arbitrary, (37, 1)))
        np.testing.assert_allclose(pool_mean(s2), arbitrary, rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_permutation_invariance(length, dim, seed):
    r = np.random.default_rng(seed)
    data = r.normal(size=(length, dim))
    shuffled = data[r.permutation(length)]
    np.testing.assert_array_equal(pool_max(seq("video", data)),
                                  pool_max(seq("video", shuffled)))
    np.testing.assert_allclose(pool_mean(seq("video", data)),
                               pool_mean(seq("video", shuffled)), rtol=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_max_dominates_mean(length, dim, seed):
    r = np.random.default_rng(seed)
    s = seq("audio", r.normal(size=(length, dim)))
    assert (pool_max(s) >= pool_mean(s) - 1e-12).all()


class TestFeatureSequence:
    def test_empty_rejected(self):
        with pytest.raises(DataError):
            seq("video", np.empty((0, 4)))

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            seq("video", [[1.0, np.inf]])

    def test_unknown_modality(self):
        with pytest.raises(DataError):
            seq("smell", [[1.0]])


class TestPoolResponse:
    def default_seqs(self):
        return (seq("video", [[1.0, 2.0]]), seq("audio", [[3.0]]),
                seq("text", [[4.0, 5.0, 6.0]]))

    def test_length_one_passthrough(self):
        video, audio, text = self.default_seqs()
        out = pool_response(video, audio, text, PoolingConfig(video="max", audio="max"))
        np.testing.assert_array_equal(out.video, [1.0, 2.0])
        np.testing.assert_array_equal(out.audio, [3.0])
        np.testing.assert_array_equal(out.text, [4.0, 5.0, 6.0])

    def test_default_config_is_max_max(self):
        cfg = PoolingConfig()
        assert (cfg.video, cfg.audio) == ("max", "max")

    def test_frame_permutation_leaves_output_unchanged(self, rng):
        data = rng.normal(size=(9, 4))
        video_a = seq("video", data)
        video_b = seq("video", data[rng.permutation(9)])
        audio = seq("audio", rng.normal(size=(3, 2)))
        text = seq("text", rng.normal(size=(1, 5)))
        for cfg in (PoolingConfig("max", "max"), PoolingConfig("mean", "mean")):
            a = pool_response(video_a, audio, text, cfg)
            b = pool_response(video_b, audio, text, cfg)
            np.testing.assert_allclose(a.video, b.video, rtol=1e-13)

    def test_dim_mismatch_names_response_and_modality(self):
        video, audio, text = self.default_seqs()
        with pytest.raises(DataError, match="subj_3/q2.*audio"):
            pool_response(video, audio, text, PoolingConfig(),
                          expected_dims={"video": 2, "audio": 4, "text": 3},
                          response_id="subj_3/q2")

    def test_text_must_be_single_vector(self):
        video, audio, _ = self.default_seqs()
        text = seq("text", [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        with pytest.raises(DataError, match="length 2"):
            pool_response(video, audio, text, PoolingConfig())

    def test_bad_pool_kind_rejected(self):
        with pytest.raises(ConfigError):
            PoolingConfig(video="softmax", audio="max")
