"""Transfer losses: closed forms, gradient checks, combination rules."""

import math

import numpy as np
import pytest

from gradcheck import fd_grad

from emoshift.autodiff import Tensor
from emoshift.classifier import EmotionClassifier
from emoshift.dataset import EMOTIONS, EmotionLabel
from emoshift.encoders import EncoderConfig, build_joint_encoder
from emoshift.losses import (LossWeights, TransferDiscriminator, clip_patch_loss,
                             content_loss, emotion_loss, gan_loss, identity_loss,
                             make_report, style_loss, total_loss)


class ConstD:
    """Discriminator stand-in emitting a fixed probability."""

    def __init__(self, p):
        self.p = p

    def prob(self, f, f_tex=None):
        return Tensor(self.p)


class ConstClf:
    """Classifier stand-in emitting fixed logits for every image."""

    def __init__(self, logits):
        self.logits_row = np.asarray(logits, dtype=np.float64)

    def __call__(self, x):
        return Tensor(np.tile(self.logits_row, (x.shape[0], 1)))


class FakeJoint:
    """Joint tower stand-in: image embeddings on axis 0 or 1, text on axis 0."""

    def __init__(self, mode):
        self.mode = mode

    def embed_image(self, batch):
        out = np.zeros((batch.shape[0], 4))
        out[:, 0 if self.mode == "same" else 1] = 1.0
        return Tensor(out)

    def embed_text(self, text):
        v = np.zeros(4)
        v[0] = 1.0
        return v


def fd_scalar_loss(f_tensor, x0, tol=1e-5, h=1e-6):
    xt = Tensor(x0.copy(), requires_grad=True)
    f_tensor(xt).backward()
    num = fd_grad(lambda a: f_tensor(Tensor(a)).item(), x0, h=h)
    rel = np.max(np.abs(xt.grad - num) / (np.abs(num) + 1e-8))
    assert rel < tol, f"max relative gradient error {rel:.2e}"


class TestContentLoss:
    def test_frobenius_of_difference(self):
        assert abs(content_loss(np.zeros(2), np.array([3.0, 4.0])).item() - 5.0) < 1e-12

    def test_zero_at_identity(self, rng):
        x = rng.normal(size=(2, 3, 3))
        assert content_loss(x, x).item() == 0.0

    def test_absolutely_homogeneous(self, rng):
        x = rng.normal(size=(2, 3, 3))
        c = 2.7
        base = content_loss(x, np.zeros_like(x)).item()
        assert abs(content_loss(c * x, np.zeros_like(x)).item() - c * base) < 1e-9

    def test_gradient(self, rng):
        fd_scalar_loss(lambda t: content_loss(t, np.ones((2, 3)) * 0.3),
                       rng.normal(size=(2, 3)))


class TestStyleLoss:
    def test_unit_mean_gap_closed_form(self):
        f_g = np.array([[[-1.0, 1.0]]])  # mean 0, sd 1
        f_s = np.array([[[0.0, 2.0]]])   # mean 1, sd 1
        assert abs(style_loss(f_g, f_s).item() - 1.0) < 1e-12

    def test_invariant_to_spatial_shuffle(self, rng):
        fmap = rng.normal(size=(3, 4, 4))
        perm = rng.permutation(16)
        shuffled = fmap.reshape(3, -1)[:, perm].reshape(3, 4, 4)
        assert style_loss(fmap, shuffled).item() < 1e-12

    def test_gradient(self, rng):
        ref = rng.normal(size=(2, 3, 3))
        fd_scalar_loss(lambda t: style_loss(t, ref), rng.normal(size=(2, 2, 2)))


class TestIdentityLoss:
    def test_image_plus_scaled_feature_term(self):
        v = identity_loss(np.zeros(4), np.ones(4), np.zeros(4), np.full(4, 5.0),
                          gamma=0.01).item()
        assert abs(v - 2.1) < 1e-12  # ||1||=2 plus 0.01 * ||5||=10

    def test_gamma_zero_drops_feature_term(self):
        v = identity_loss(np.zeros(4), np.ones(4), np.zeros(4), np.full(4, 5.0),
                          gamma=0.0).item()
        assert abs(v - 2.0) < 1e-12

    def test_gradient(self, rng):
        fd_scalar_loss(
            lambda t: identity_loss(t, np.full((2, 2), 0.4), np.zeros(3), np.ones(3)),
            rng.normal(size=(2, 2)))


class TestGanLoss:
    def test_half_probability_discriminator_objective(self):
        d_obj, _ = gan_loss(ConstD(0.5), np.zeros(3), np.zeros(3), np.zeros(2))
        assert abs(d_obj.item() - 4 * math.log(0.5)) < 1e-9

    def test_generator_objective_vanishes_when_fooling(self):
        _, g_obj = gan_loss(ConstD(1.0 - 1e-7), np.zeros(3), np.zeros(3), np.zeros(2))
        assert abs(g_obj.item()) < 1e-5

    def test_finite_at_probability_extremes(self):
        for p in (0.0, 1.0):
            d_obj, g_obj = gan_loss(ConstD(p), np.zeros(3), np.zeros(3), np.zeros(2))
            assert np.isfinite(d_obj.item()) and np.isfinite(g_obj.item())

    def test_real_discriminator_gradient_flows_to_feature(self, rng):
        disc = TransferDiscriminator(d=4, d_t=3, seed=0)
        f_tex = rng.normal(size=3)
        f_style = rng.normal(size=4)

        def g_obj(t):
            return gan_loss(disc, t, f_style, f_tex)[1]

        fd_scalar_loss(g_obj, rng.normal(size=4), tol=1e-4)


class TestEmotionLoss:
    def test_confident_correct_prediction_is_zero(self):
        logits = np.full(8, -1e9)
        logits[3] = 0.0
        v = emotion_loss(ConstClf(logits), np.zeros((3, 8, 8)), EMOTIONS[3]).item()
        assert v < 1e-12

    def test_uniform_prediction_is_ln8(self):
        v = emotion_loss(ConstClf(np.zeros(8)), np.zeros((3, 8, 8)), EMOTIONS[0]).item()
        assert abs(v - math.log(8)) < 1e-12

    def test_gradient_through_conv_classifier(self, rng):
        cfg = EncoderConfig(backend="toy_stub", d_t=16, visual_channels=8, d=12, seed=0)
        clf = EmotionClassifier(cfg, seed=0)
        fd_scalar_loss(lambda t: emotion_loss(clf, t, EmotionLabel.FEAR),
                       rng.random((3, 12, 12)), tol=1e-4)


class TestClipPatchLoss:
    def test_identical_embeddings_give_zero(self, rng):
        img = rng.random((3, 20, 20))
        v = clip_patch_loss(FakeJoint("same"), img, "awe", 4, 8, seed=0).item()
        assert abs(v) < 1e-12

    def test_orthogonal_embeddings_give_one(self, rng):
        img = rng.random((3, 20, 20))
        v = clip_patch_loss(FakeJoint("orth"), img, "awe", 4, 8, seed=0).item()
        assert abs(v - 1.0) < 1e-12

    def test_bounded_by_cosine_range(self):
        cfg = EncoderConfig(backend="toy_stub", d_t=16, visual_channels=8, d=12, seed=0)
        joint = build_joint_encoder(cfg)
        for i in range(20):
            im = np.random.default_rng(i).random((3, 18, 18))
            v = clip_patch_loss(joint, im, f"w{i}", 4, 8, seed=i).item()
            assert 0.0 <= v <= 2.0

    def test_oversized_patch_rejected(self, rng):
        cfg = EncoderConfig(backend="toy_stub", d_t=16, visual_channels=8, d=12, seed=0)
        joint = build_joint_encoder(cfg)
        with pytest.raises(ValueError):
            clip_patch_loss(joint, rng.random((3, 12, 12)), "awe", 2, 16, seed=0)

    def test_gradient_through_joint_tower(self, rng):
        cfg = EncoderConfig(backend="toy_stub", d_t=16, visual_channels=8, d=12, seed=0)
        joint = build_joint_encoder(cfg)
        fd_scalar_loss(lambda t: clip_patch_loss(joint, t, "awe", 2, 8, seed=3),
                       rng.random((3, 12, 12)), tol=1e-4)


class TestTotalLoss:
    def test_unit_weights_sum_terms(self):
        w1 = LossWeights(content=1, style=1, identity=1, gan=1, emotion=1, patch=1)
        tot, vis = total_loss(1, 2, 3, 4, 5, 6, w1)
        assert tot == 21 and vis == 10

    def test_default_weights(self):
        w = LossWeights()
        tot, vis = total_loss(1, 2, 3, 4, 5, 6, w)
        expected_vis = 1 * 1 + 3 * 2 + 1 * 3 + 0.1 * 4
        assert abs(vis - expected_vis) < 1e-12
        assert abs(tot - (expected_vis + 0.5 * 5 + 0.5 * 6)) < 1e-12

    def test_weights_must_be_nonnegative_and_finite(self):
        with pytest.raises(ValueError):
            LossWeights(style=-0.1)
        with pytest.raises(ValueError):
            LossWeights(gan=float("nan"))

    def test_report_mirrors_total_and_accepts_tensors(self):
        w = LossWeights()
        rep = make_report(Tensor(1.0), 2.0, Tensor(3.0), 4.0, Tensor(5.0), 6.0, w)
        d = rep.as_dict()
        assert set(d) == {"content", "style", "id", "gan", "vis", "emo", "clip",
                          "total"}
        tot, vis = total_loss(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, w)
        assert abs(d["total"] - tot) < 1e-12 and abs(d["vis"] - vis) < 1e-12
