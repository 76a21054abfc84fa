"""Cross-modal transfer network: mapper, token fusion transformer, decoder.

The content image is tokenized from the frozen encoder's feature map; the
emotion word embedding and a sampled latent entry are mapped to a handful
of semantic tokens. Both token groups run jointly through pre-norm
transformer blocks, are split back apart in concatenation order, and the
image tokens are decoded to pixels.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from emoshift import nn
from emoshift.autodiff import Tensor, concat, gelu
from emoshift.dataset import EMOTIONS, EmotionLabel, ImageRecord
from emoshift.encoders import (EncoderConfig, batch_images_tensor, build_image_encoder,
                               build_joint_encoder, build_text_encoder)
from emoshift.losses import (LossReport, LossWeights, TransferDiscriminator,
                             clip_patch_loss, content_loss, emotion_loss, gan_loss,
                             identity_loss, make_report, style_loss, total_loss)
from emoshift.serialization import load_archive, save_archive
from emoshift.space import EmoLatSpace, TrainingError, sample_emotion_feature

logger = logging.getLogger(__name__)

# word -> canonical emotion, beyond exact label names
SYNONYMS = {
    "amusing": EmotionLabel.AMUSEMENT,
    "amused": EmotionLabel.AMUSEMENT,
    "funny": EmotionLabel.AMUSEMENT,
    "awesome": EmotionLabel.AWE,
    "majestic": EmotionLabel.AWE,
    "content": EmotionLabel.CONTENTMENT,
    "calm": EmotionLabel.CONTENTMENT,
    "peaceful": EmotionLabel.CONTENTMENT,
    "excited": EmotionLabel.EXCITEMENT,
    "exciting": EmotionLabel.EXCITEMENT,
    "thrilling": EmotionLabel.EXCITEMENT,
    "angry": EmotionLabel.ANGER,
    "furious": EmotionLabel.ANGER,
    "disgusting": EmotionLabel.DISGUST,
    "gross": EmotionLabel.DISGUST,
    "scary": EmotionLabel.FEAR,
    "afraid": EmotionLabel.FEAR,
    "frightening": EmotionLabel.FEAR,
    "sad": EmotionLabel.SADNESS,
    "gloomy": EmotionLabel.SADNESS,
    "mournful": EmotionLabel.SADNESS,
}


def resolve_emotion_word(word: str) -> EmotionLabel:
    """Map a word to one of the eight emotions or fail listing them."""
    key = word.strip().lower()
    for e in EMOTIONS:
        if key == e.value:
            return e
    if key in SYNONYMS:
        return SYNONYMS[key]
    names = ", ".join(e.value for e in EMOTIONS)
    raise ValueError(f"cannot map {word!r} to an emotion; supported emotions: {names}")


@dataclass(frozen=True)
class TransferConfig:
    d_tok: int = 256
    n_blocks: int = 4
    n_heads: int = 4
    n_semantic_tokens: int = 4
    batch_size: int = 4
    learning_rate: float = 5e-4
    iterations: int = 80000
    seed: int = 0
    decoder_channels: int = 32
    n_patches: int = 16
    patch_size: int = 64
    log_every: int = 10

    def __post_init__(self):
        if min(self.d_tok, self.n_blocks, self.n_heads, self.n_semantic_tokens,
               self.batch_size, self.iterations) <= 0:
            raise ValueError("transfer config dimensions must be positive")
        if self.d_tok % self.n_heads != 0:
            raise ValueError(f"d_tok {self.d_tok} must divide by n_heads {self.n_heads}")


def _depth_to_space(x: Tensor, r: int) -> Tensor:
    """(B, C*r*r, H, W) -> (B, C, H*r, W*r); each r x r output block draws from
    its own channel group, so upsampled detail is learned per sub-position."""
    b, c, h, w = x.shape
    c_out = c // (r * r)
    x = x.reshape(b, c_out, r, r, h, w)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return x.reshape(b, c_out, h * r, w * r)


class Decoder(nn.Module):
    """Two sub-pixel x2 upsampling conv stages, bounded output."""

    def __init__(self, d_tok: int, channels: int, rng: np.random.Generator):
        c2 = max(4, channels // 2)
        self.conv1 = nn.Conv2d(d_tok, channels, 3, rng, padding=1)
        self.conv2 = nn.Conv2d(channels, 4 * channels, 3, rng, padding=1)
        self.conv3 = nn.Conv2d(channels, 4 * c2, 3, rng, padding=1)
        self.conv4 = nn.Conv2d(c2, 3, 3, rng, padding=1)

    def __call__(self, tokens: Tensor, grid_h: int, grid_w: int,
                 out_h: int, out_w: int) -> Tensor:
        b, t, d = tokens.shape
        if t != grid_h * grid_w:
            raise ValueError(f"token count {t} does not match grid {grid_h}x{grid_w}")
        x = tokens.transpose(0, 2, 1).reshape(b, d, grid_h, grid_w)
        x = gelu(self.conv1(x))
        x = gelu(_depth_to_space(self.conv2(x), 2))
        x = gelu(_depth_to_space(self.conv3(x), 2))
        x = self.conv4(x).sigmoid()
        return x[:, :, :out_h, :out_w]


class TransferModel(nn.Module):
    """Mapper + fusion transformer + decoder over a frozen image encoder."""

    def __init__(self, enc_cfg: EncoderConfig, cfg: TransferConfig, space_d: int):
        self.enc_cfg = enc_cfg
        self.cfg = cfg
        self.space_d = space_d
        self.encoder = build_image_encoder(enc_cfg)  # frozen weights
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 601]))
        m, d_tok = cfg.n_semantic_tokens, cfg.d_tok
        self.mapper = nn.MLP([enc_cfg.d_t + space_d, 2 * d_tok, m * d_tok], rng)
        self.token_proj = nn.Linear(enc_cfg.visual_channels, d_tok, rng)
        self.blocks = [nn.TransformerBlock(d_tok, cfg.n_heads, rng)
                       for _ in range(cfg.n_blocks)]
        self.decoder = Decoder(d_tok, cfg.decoder_channels, rng)

    # -- pipeline stages ----------------------------------------------------------

    def image_tokens(self, x: Tensor) -> tuple[Tensor, tuple[int, int]]:
        """(B, 3, H, W) -> ((B, T, d_tok), feature grid shape)."""
        fmap = self.encoder.features(x)
        b, c, h, w = fmap.shape
        tokens = self.token_proj(fmap.reshape(b, c, h * w).transpose(0, 2, 1))
        return tokens, (h, w)

    def map_features(self, f_e: np.ndarray, f_c: np.ndarray) -> Tensor:
        """Concatenate [f_e; f_c] and map to M semantic tokens per sample."""
        f_e, f_c = np.atleast_2d(f_e), np.atleast_2d(f_c)
        if f_e.shape[1] != self.enc_cfg.d_t:
            raise ValueError(f"f_e has dim {f_e.shape[1]}, expected {self.enc_cfg.d_t}")
        if f_c.shape[1] != self.space_d:
            raise ValueError(f"f_c has dim {f_c.shape[1]}, expected {self.space_d}")
        f_ec = Tensor(np.concatenate([f_e, f_c], axis=1))
        out = self.mapper(f_ec)
        return out.reshape(out.shape[0], self.cfg.n_semantic_tokens, self.cfg.d_tok)

    def fuse(self, f_m: Tensor, image_tokens: Tensor) -> Tensor:
        """Concatenate [semantic; image] tokens and run the block stack."""
        x = concat([f_m, image_tokens], axis=1)
        for block in self.blocks:
            x = block(x)
        return x

    def split_and_decode(self, fused: Tensor, grid: tuple[int, int],
                         out_hw: tuple[int, int]) -> tuple[Tensor, Tensor]:
        """Undo the concatenation order, decode image tokens to pixels."""
        m = self.cfg.n_semantic_tokens
        grid_h, grid_w = grid
        if fused.shape[1] != m + grid_h * grid_w:
            raise RuntimeError(f"fused token count {fused.shape[1]} does not match "
                               f"{m} semantic + {grid_h * grid_w} image tokens")
        f_m_hat = fused[:, :m, :]
        img_tokens = fused[:, m:, :]
        image = self.decoder(img_tokens, grid_h, grid_w, out_hw[0], out_hw[1])
        return image, f_m_hat

    def generate(self, images: Tensor, f_e: np.ndarray, f_c: np.ndarray) -> Tensor:
        """Full differentiable pipeline: (B,3,H,W) content to (B,3,H,W) output."""
        tokens, grid = self.image_tokens(images)
        f_m = self.map_features(f_e, f_c)
        fused = self.fuse(f_m, tokens)
        out, _ = self.split_and_decode(fused, grid, (images.shape[2], images.shape[3]))
        return out

    # -- persistence --------------------------------------------------------------

    def save(self, path):
        meta = {"encoder": asdict(self.enc_cfg), "transfer": asdict(self.cfg),
                "space_d": self.space_d}
        return save_archive(path, self.state_arrays(), meta, kind="transfer_model")

    @classmethod
    def load(cls, path) -> "TransferModel":
        arrays, meta = load_archive(path, kind="transfer_model")
        model = cls(EncoderConfig(**meta["encoder"]), TransferConfig(**meta["transfer"]),
                    meta["space_d"])
        model.load_state_arrays(arrays)
        model.encoder.freeze()
        return model


# -- functional wrappers over a model instance -----------------------------------


def map_features(f_e: np.ndarray, f_c: np.ndarray, model: TransferModel) -> Tensor:
    """(M, d_tok) semantic tokens for one (f_e, f_c) pair."""
    return model.map_features(f_e, f_c)[0]


def fuse(f_m: Tensor, image_tokens: Tensor, model: TransferModel) -> Tensor:
    """Joint block stack over one sample's (M, d_tok) + (T, d_tok) tokens."""
    f_m = f_m if f_m.ndim == 3 else f_m.reshape(1, *f_m.shape)
    image_tokens = (image_tokens if image_tokens.ndim == 3
                    else image_tokens.reshape(1, *image_tokens.shape))
    return model.fuse(f_m, image_tokens)[0]


def transfer(content_image: np.ndarray, emotion_word: str, model: TransferModel,
             space: EmoLatSpace, seed: int = 0) -> np.ndarray:
    """Render the content image toward an emotion; deterministic under seed."""
    label = resolve_emotion_word(emotion_word)
    f_e = build_text_encoder(model.enc_cfg).embed(emotion_word)
    f_c = sample_emotion_feature(space, label, seed)
    x = batch_images_tensor([content_image])
    out = model.generate(x, f_e, f_c)
    return np.transpose(out.data[0], (1, 2, 0)).copy()


@dataclass
class TransferStepReport:
    step: int
    losses: LossReport
    d_objective: float

    def as_dict(self) -> dict:
        d = {"step": self.step, "d_objective": self.d_objective}
        d.update(self.losses.as_dict())
        return d


class TransferTrainer:
    """Adversarial trainer: each call steps the discriminator on its
    objective, then the generator stack on the total loss. The latent
    space, encoders, and classifier never change."""

    def __init__(self, records: list[ImageRecord], images: dict[str, np.ndarray],
                 model: TransferModel, space: EmoLatSpace, classifier,
                 weights: LossWeights, cfg: TransferConfig):
        if not records:
            raise ValueError("no training records")
        if weights.emotion > 0 and classifier is None:
            raise ValueError("weights.emotion > 0 requires a classifier")
        self.records = list(records)
        self.images = images
        self.model = model
        self.space = space
        space.freeze()
        self.classifier = classifier
        self.weights = weights
        self.cfg = cfg
        self.enc_cfg = model.enc_cfg
        self.text_encoder = build_text_encoder(self.enc_cfg)
        self.joint_encoder = build_joint_encoder(self.enc_cfg)
        self.disc = TransferDiscriminator(self.enc_cfg.d, self.enc_cfg.d_t, cfg.seed)
        self.opt_g = nn.Adam(self.model.trainable_parameters(), cfg.learning_rate)
        self.opt_d = nn.Adam(self.disc.named_parameters(), cfg.learning_rate)
        self.by_emotion: dict[int, list[ImageRecord]] = {}
        for r in records:
            self.by_emotion.setdefault(r.emotion.index, []).append(r)
        self.step_count = 0
        self._rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 602]))

    def space_checksum(self) -> str:
        return self.space.checksum()

    def encoder_checksum(self) -> str:
        return self.model.encoder.checksum()

    def _pick_batch(self) -> list[ImageRecord]:
        idx = self._rng.choice(len(self.records),
                               size=min(self.cfg.batch_size, len(self.records)),
                               replace=False)
        return [self.records[i] for i in idx]

    def _reference_for(self, label: EmotionLabel, rng: np.random.Generator) -> ImageRecord:
        pool = self.by_emotion.get(label.index) or self.records
        return pool[int(rng.integers(len(pool)))]

    def train_transfer_step(self, batch: list[ImageRecord] | None = None) -> TransferStepReport:
        w = self.weights
        batch = batch if batch is not None else self._pick_batch()
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 603,
                                                            self.step_count]))
        # per-sample conditioning: target emotion, latent entry, reference image
        labels = [EMOTIONS[int(rng.integers(8))] for _ in batch]
        f_e = np.stack([self.text_encoder.embed(lab.value) for lab in labels])
        f_c = np.stack([sample_emotion_feature(self.space, lab, int(rng.integers(2**31)))
                        for lab in labels])
        refs = [self._reference_for(lab, rng) for lab in labels]

        content = batch_images_tensor([self.images[r.image_id] for r in batch])
        ref_imgs = batch_images_tensor([self.images[r.image_id] for r in refs])
        gen = self.model.generate(content, f_e, f_c)
        gen_fmap = self.model.encoder.features(gen)  # shared by all terms
        gen_pooled = self.model.encoder.pool_project(gen_fmap)

        ori_fmap = self.model.encoder.features(content).data
        ref_fmap = self.model.encoder.features(ref_imgs).data
        ref_pooled = self.model.encoder.pool_project(Tensor(ref_fmap)).data

        zero = Tensor(0.0)
        n = len(batch)

        def mean_of(terms):
            return sum(terms[1:], terms[0]) * (1.0 / n)

        # discriminator ascent on detached features
        d_obj_val = 0.0
        if w.gan > 0:
            d_terms = []
            for i in range(n):
                d_i, _ = gan_loss(self.disc, Tensor(gen_pooled.data[i].copy()),
                                  Tensor(ref_pooled[i]), Tensor(f_e[i]))
                d_terms.append(d_i)
            d_obj = mean_of(d_terms)
            self.opt_d.zero_grad()
            (-d_obj).backward()  # maximize by descending the negation
            self.opt_d.step()
            d_obj_val = d_obj.item()

        # generator descent on the total loss, against the updated critic
        l_content = zero
        if w.content > 0:
            l_content = mean_of([content_loss(gen_fmap[i], Tensor(ori_fmap[i]))
                                 for i in range(n)])

        l_style = zero
        if w.style > 0:
            l_style = mean_of([style_loss(gen_fmap[i], Tensor(ref_fmap[i]))
                               for i in range(n)])

        l_identity = zero
        if w.identity > 0:
            f_e_own = np.stack([self.text_encoder.embed(r.emotion.value) for r in refs])
            f_c_own = np.stack([sample_emotion_feature(self.space, r.emotion,
                                                       int(rng.integers(2**31)))
                                for r in refs])
            i_ss = self.model.generate(ref_imgs, f_e_own, f_c_own)
            f_ss = self.model.encoder.pool_project(self.model.encoder.features(i_ss))
            l_identity = identity_loss(i_ss, Tensor(ref_imgs.data.copy()),
                                       f_ss, Tensor(ref_pooled),
                                       gamma=w.gamma) * (1.0 / n)

        l_gan_g = zero
        if w.gan > 0:
            g_terms = [gan_loss(self.disc, gen_pooled[i], Tensor(ref_pooled[i]),
                                Tensor(f_e[i]))[1] for i in range(n)]
            l_gan_g = mean_of(g_terms)

        l_emotion = zero
        if w.emotion > 0:
            l_emotion = mean_of([emotion_loss(self.classifier, gen[i], labels[i])
                                 for i in range(n)])

        l_patch = zero
        if w.patch > 0:
            l_patch = mean_of([clip_patch_loss(self.joint_encoder, gen[i],
                                               labels[i].value,
                                               n_patches=self.cfg.n_patches,
                                               patch_size=self.cfg.patch_size,
                                               seed=int(rng.integers(2**31)))
                               for i in range(n)])

        l_total, _ = total_loss(l_content, l_style, l_identity, l_gan_g,
                                l_emotion, l_patch, w)
        report = make_report(l_content, l_style, l_identity, l_gan_g,
                             l_emotion, l_patch, w)
        for name, value in report.as_dict().items():
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss term {name} "
                                    f"at step {self.step_count}")

        self.opt_g.zero_grad()
        self.opt_d.zero_grad()
        l_total.backward()
        self.opt_d.zero_grad()
        self.opt_g.step()

        self.step_count += 1
        out = TransferStepReport(self.step_count, report, d_obj_val)
        if self.cfg.log_every and self.step_count % self.cfg.log_every == 0:
            logger.info("transfer step %d: total=%.4f content=%.4f style=%.4f id=%.4f "
                        "gan=%.4f emo=%.4f clip=%.4f d_obj=%.4f", out.step,
                        report.total, report.content, report.style, report.id,
                        report.gan, report.emo, report.clip, d_obj_val)
        return out

    def train(self, n_steps: int | None = None) -> list[TransferStepReport]:
        return [self.train_transfer_step() for _ in range(n_steps or self.cfg.iterations)]
