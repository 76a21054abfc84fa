"""Evaluation metrics: SSIM, pixel error, FID closed forms, accuracy pair."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emoshift.dataset import EMOTIONS, POLARITY
from emoshift.metrics import (EvalReport, accuracy2, accuracy8, fid, predict_labels,
                              recon_error, ssim, to_grayscale)


class ScriptClf:
    """Emits a scripted sequence of argmax classes, one per call."""

    def __init__(self, labels):
        self.indices = [lab.index for lab in labels]
        self.i = 0

    def logits(self, image):
        out = np.zeros(8)
        out[self.indices[self.i % len(self.indices)]] = 1.0
        self.i += 1
        return out


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        x = rng.random((16, 16, 3))
        assert abs(ssim(x, x) - 1.0) < 1e-9

    def test_constant_images_reduce_to_luminance_term(self):
        a = np.full((16, 16, 3), 0.3)
        b = np.full((16, 16, 3), 0.7)
        c1 = 0.01 ** 2
        lum = (2 * 0.3 * 0.7 + c1) / (0.3 ** 2 + 0.7 ** 2 + c1)
        assert abs(ssim(a, b) - lum) < 1e-9

    def test_symmetric_and_bounded(self, rng):
        x = rng.random((16, 16, 3))
        y = rng.random((16, 16, 3))
        assert abs(ssim(x, y) - ssim(y, x)) < 1e-12
        assert -1.0 <= ssim(x, y) <= 1.0

    def test_shape_mismatch_and_small_images_rejected(self, rng):
        with pytest.raises(ValueError):
            ssim(rng.random((16, 16, 3)), rng.random((16, 17, 3)))
        with pytest.raises(ValueError):
            ssim(rng.random((8, 8, 3)), rng.random((8, 8, 3)))

    def test_grayscale_inputs_accepted(self, rng):
        x = rng.random((16, 16))
        assert abs(ssim(x, x) - 1.0) < 1e-9


class TestGrayscale:
    def test_luma_weights(self):
        img = np.zeros((2, 2, 3))
        img[..., 1] = 1.0
        np.testing.assert_allclose(to_grayscale(img), 0.587)

    def test_rejects_other_channel_counts(self):
        with pytest.raises(ValueError):
            to_grayscale(np.zeros((4, 4, 4)))


class TestReconError:
    def test_zero_at_identity(self, rng):
        x = rng.random((8, 8, 3))
        assert recon_error(x, x) == 0.0

    def test_reports_on_255_scale(self):
        a = np.full((4, 4, 3), 100 / 255)
        b = np.full((4, 4, 3), 110 / 255)
        assert abs(recon_error(a, b) - 10.0) < 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            recon_error(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestFid:
    def test_identical_sets_are_zero(self, rng):
        fa = rng.normal(size=(40, 5))
        assert abs(fid(fa, fa)) < 1e-3

    def test_equal_covariance_reduces_to_mean_gap(self, rng):
        fa = rng.normal(size=(40, 5))
        e = np.array([0.5, -0.2, 0.1, 0.3, -0.4])
        assert abs(fid(fa, fa + e) - e @ e) < 1e-3

    def test_symmetric_and_nonnegative(self, rng):
        fa = rng.normal(size=(40, 5))
        fc = rng.normal(size=(40, 5)) * 1.4 + 0.2
        assert abs(fid(fa, fc) - fid(fc, fa)) < 1e-3
        assert fid(fa, fc) >= -1e-3

    def test_same_gaussian_large_sample_is_small(self):
        g1 = np.random.default_rng(11).normal(size=(5000, 16))
        g2 = np.random.default_rng(12).normal(size=(5000, 16))
        assert fid(g1, g2) <= 0.05

    def test_underpopulated_set_rejected(self, rng):
        # covariance fit needs at least dim+1 samples per set
        with pytest.raises(ValueError, match="dim"):
            fid(rng.normal(size=(5, 5)), rng.normal(size=(40, 5)))

    def test_dimension_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            fid(rng.normal(size=(10, 4)), rng.normal(size=(10, 5)))


class TestAccuracy:
    def test_scripted_eight_way(self):
        preds = [EMOTIONS[i] for i in (0, 1, 2, 0, 4, 5, 6, 7)]
        targs = [EMOTIONS[i] for i in (0, 1, 2, 3, 0, 1, 2, 3)]
        assert abs(accuracy8(ScriptClf(preds), list(range(8)), targs) - 0.375) < 1e-12

    def test_scripted_polarity(self):
        preds = [EMOTIONS[i] for i in (0, 1, 2, 0, 4, 5, 6, 7)]
        targs = [EMOTIONS[i] for i in (0, 1, 2, 3, 0, 1, 2, 3)]
        # predictions are 4 positive then 4 negative, targets all positive
        assert abs(accuracy2(ScriptClf(preds), list(range(8)), targs) - 0.5) < 1e-12

    def test_predict_labels_argmax(self):
        preds = [EMOTIONS[5], EMOTIONS[0]]
        assert predict_labels(ScriptClf(preds), [0, 1]) == preds

    def test_empty_or_mismatched_sets_rejected(self):
        clf = ScriptClf([EMOTIONS[0]])
        with pytest.raises(ValueError):
            accuracy8(clf, [], [])
        with pytest.raises(ValueError):
            accuracy2(clf, [0, 1], [EMOTIONS[0]])

    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)),
                    min_size=1, max_size=64))
    def test_polarity_accuracy_dominates_eight_way(self, pairs):
        preds = [EMOTIONS[p] for p, _ in pairs]
        targs = [EMOTIONS[t] for _, t in pairs]
        images = list(range(len(pairs)))
        a8 = accuracy8(ScriptClf(preds), images, targs)
        a2 = accuracy2(ScriptClf(preds), images, targs)
        # an exact class match always matches in polarity too
        assert a2 >= a8

    def test_polarity_map_covers_all_emotions(self):
        assert set(POLARITY) == set(EMOTIONS)
        assert set(POLARITY.values()) == {"positive", "negative"}


class TestEvalReport:
    def test_as_dict_round_trip(self):
        rep = EvalReport(acc8=0.5, acc2=0.75, ssim=0.9, recon_error=3.0, fid=1.2,
                         n_images=16)
        assert rep.as_dict() == {"acc8": 0.5, "acc2": 0.75, "ssim": 0.9,
                                 "recon_error": 3.0, "fid": 1.2, "n_images": 16}
