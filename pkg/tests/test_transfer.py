"""Transfer network: word resolution, token plumbing, inference, training step."""

import numpy as np
import pytest

from emoshift.autodiff import Tensor
from emoshift.classifier import train_classifier
from emoshift.dataset import EMOTIONS
from emoshift.losses import LossWeights
from emoshift.space import EmoLatSpace
from emoshift.transfer import (TransferConfig, TransferModel, TransferTrainer,
                               map_features, resolve_emotion_word, transfer)


@pytest.fixture(scope="module")
def tcfg():
    return TransferConfig(d_tok=64, n_blocks=2, n_heads=4, batch_size=4,
                          learning_rate=1e-3, iterations=10, seed=0,
                          decoder_channels=32, n_patches=8, patch_size=16,
                          log_every=0)


@pytest.fixture(scope="module")
def model(toy_encoder_config, tcfg):
    return TransferModel(toy_encoder_config, tcfg, 32)


@pytest.fixture(scope="module")
def space():
    return EmoLatSpace.initialize(32, 16, seed=0)


class TestResolveEmotionWord:
    def test_canonical_names(self):
        for e in EMOTIONS:
            assert resolve_emotion_word(e.value) is e

    def test_synonym_and_whitespace(self):
        assert resolve_emotion_word("Scary ") is EMOTIONS[6]

    def test_unknown_word_lists_vocabulary(self):
        with pytest.raises(ValueError) as exc:
            resolve_emotion_word("purple")
        assert "amusement" in str(exc.value) and "sadness" in str(exc.value)


class TestTokenPlumbing:
    def test_map_features_shape(self, model, tcfg, rng):
        f_m = map_features(rng.normal(size=32), rng.normal(size=32), model)
        assert f_m.shape == (tcfg.n_semantic_tokens, tcfg.d_tok)

    def test_map_features_dimension_error(self, model, rng):
        with pytest.raises(ValueError):
            map_features(rng.normal(size=16), rng.normal(size=32), model)

    def test_image_tokens_grid(self, model, rng):
        tokens, grid = model.image_tokens(Tensor(rng.random((2, 3, 32, 32))))
        assert tokens.shape == (2, 64, 64) and grid == (8, 8)

    def test_fuse_prepends_semantic_tokens(self, model, tcfg, rng):
        tokens, _ = model.image_tokens(Tensor(rng.random((2, 3, 32, 32))))
        f_m = model.map_features(rng.normal(size=(2, 32)), rng.normal(size=(2, 32)))
        fused = model.fuse(f_m, tokens)
        assert fused.shape == (2, tcfg.n_semantic_tokens + 64, 64)

    def test_split_and_decode_partition(self, model, tcfg, rng):
        tokens, grid = model.image_tokens(Tensor(rng.random((2, 3, 32, 32))))
        f_m = model.map_features(rng.normal(size=(2, 32)), rng.normal(size=(2, 32)))
        fused = model.fuse(f_m, tokens)
        img_out, fm_hat = model.split_and_decode(fused, grid, (32, 32))
        k = tcfg.n_semantic_tokens
        assert img_out.shape == (2, 3, 32, 32)
        np.testing.assert_allclose(fm_hat.data, fused.data[:, :k, :])
        np.testing.assert_allclose(
            model.decoder(fused[:, k:, :], 8, 8, 32, 32).data, img_out.data)
        assert img_out.data.min() >= 0.0 and img_out.data.max() <= 1.0

    def test_fuse_gradient_matches_finite_differences(self, model, rng):
        f_m = model.map_features(rng.normal(size=(1, 32)), rng.normal(size=(1, 32)))
        tok_in = rng.normal(size=(1, 12, 64))
        probe = rng.normal(size=(1, 12 + model.cfg.n_semantic_tokens, 64))

        def fval(t):
            return float((model.fuse(f_m, Tensor(t)) * probe).sum().data)

        tt = Tensor(tok_in.copy(), requires_grad=True)
        (model.fuse(f_m, tt) * probe).sum().backward()
        idx = (0, 3, 17)
        eps = 1e-6
        tp, tm = tok_in.copy(), tok_in.copy()
        tp[idx] += eps
        tm[idx] -= eps
        fd = (fval(tp) - fval(tm)) / (2 * eps)
        rel = abs(fd - tt.grad[idx]) / max(abs(fd), 1e-12)
        assert rel < 1e-4


class TestInference:
    def test_deterministic_and_seed_sensitive(self, toy_dataset, model, space):
        records, images, _ = toy_dataset
        img = images[records[0].image_id]
        out1 = transfer(img, "awe", model, space, seed=7)
        out2 = transfer(img, "awe", model, space, seed=7)
        out3 = transfer(img, "awe", model, space, seed=8)
        assert np.array_equal(out1, out2)
        assert not np.array_equal(out1, out3)
        assert out1.shape == (32, 32, 3)

    def test_checkpoint_round_trip(self, toy_dataset, model, space, tmp_path):
        records, images, _ = toy_dataset
        img = images[records[0].image_id]
        loaded = TransferModel.load(model.save(tmp_path / "model.npz"))
        assert np.array_equal(transfer(img, "awe", model, space, seed=7),
                              transfer(img, "awe", loaded, space, seed=7))
        assert all(not p.requires_grad
                   for p in loaded.encoder.named_parameters().values())


class TestTrainerStep:
    def test_reports_complete_and_frozen_parts_untouched(
            self, toy_dataset, toy_encoder_config, tcfg, space):
        records, images, _ = toy_dataset
        clf, _ = train_classifier(records, images, toy_encoder_config,
                                  seed=0, steps=30, log_every=0)
        model = TransferModel(toy_encoder_config, tcfg, 32)
        trainer = TransferTrainer(records, images, model, space, classifier=clf,
                                  weights=LossWeights(), cfg=tcfg)
        enc_sum = trainer.encoder_checksum()
        space_sum = trainer.space_checksum()
        reports = [trainer.train_transfer_step(records[:4]) for _ in range(3)]
        for i, r in enumerate(reports, start=1):
            d = r.as_dict()
            assert set(d) == {"step", "d_objective", "content", "style", "id",
                              "gan", "vis", "emo", "clip", "total"}
            assert all(np.isfinite(v) for v in d.values())
            assert r.step == i
        assert trainer.encoder_checksum() == enc_sum
        assert trainer.space_checksum() == space_sum

    def test_emotion_weight_requires_classifier(
            self, toy_dataset, toy_encoder_config, tcfg, space):
        records, images, _ = toy_dataset
        model = TransferModel(toy_encoder_config, tcfg, 32)
        with pytest.raises(ValueError):
            TransferTrainer(records, images, model, space, classifier=None,
                            weights=LossWeights(), cfg=tcfg)

    def test_content_only_training_reduces_loss(
            self, toy_dataset, toy_encoder_config, tcfg, space):
        records, images, _ = toy_dataset
        model = TransferModel(toy_encoder_config, tcfg, 32)
        w = LossWeights(content=1, style=0, identity=0, gan=0, emotion=0, patch=0)
        trainer = TransferTrainer(records, images, model, space, classifier=None,
                                  weights=w, cfg=tcfg)
        reports = [trainer.train_transfer_step(records[:4]) for _ in range(40)]
        assert np.mean([r.losses.total for r in reports[-5:]]) \
            < reports[0].losses.total
