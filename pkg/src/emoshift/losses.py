"""Training objectives for the transfer stage and their weighted combination.

All losses are pure functions built on autodiff Tensors, so every gradient
the trainer uses is the same one the finite-difference tests check. Plain
numpy arrays are accepted anywhere a Tensor is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emoshift import nn
from emoshift.autodiff import Tensor, as_tensor, concat, leaky_relu
from emoshift.dataset import EmotionLabel

GAN_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative term weights; gamma scales the identity feature term."""

    content: float = 1.0
    style: float = 3.0
    identity: float = 1.0
    gan: float = 0.1
    emotion: float = 0.5
    patch: float = 0.5
    gamma: float = 0.01

    def __post_init__(self):
        for name in ("content", "style", "identity", "gan", "emotion", "patch"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    """Scalar values of every term plus their combinations."""

    content: float
    style: float
    id: float
    gan: float
    vis: float
    emo: float
    clip: float
    total: float

    def as_dict(self) -> dict:
        return {"content": self.content, "style": self.style, "id": self.id,
                "gan": self.gan, "vis": self.vis, "emo": self.emo,
                "clip": self.clip, "total": self.total}


def _frob(diff: Tensor) -> Tensor:
    return (diff * diff).sum().sqrt()


def content_loss(f_gen, f_ori) -> Tensor:
    """L2 norm of the elementwise feature difference."""
    f_gen, f_ori = as_tensor(f_gen), as_tensor(f_ori)
    if f_gen.shape != f_ori.shape:
        raise ValueError(f"feature shapes differ: {f_gen.shape} vs {f_ori.shape}")
    return _frob(f_gen - f_ori)


def _channel_stats(f: Tensor) -> tuple[Tensor, Tensor]:
    """Per-channel spatial mean and biased std of a (C, H, W) map."""
    c = f.shape[0]
    flat = f.reshape(c, -1)
    mu = flat.mean(axis=1)
    centered = flat - mu.reshape(c, 1)
    var = (centered * centered).mean(axis=1)
    return mu, var.sqrt()


def style_loss(f_gen, f_style) -> Tensor:
    """Distance between per-channel spatial statistics (mean and std)."""
    f_gen, f_style = as_tensor(f_gen), as_tensor(f_style)
    if f_gen.ndim != 3 or f_style.ndim != 3:
        raise ValueError("style_loss expects (C, H, W) feature maps")
    if f_gen.shape[0] != f_style.shape[0]:
        raise ValueError(f"channel counts differ: {f_gen.shape[0]} vs {f_style.shape[0]}")
    mu_g, sd_g = _channel_stats(f_gen)
    mu_s, sd_s = _channel_stats(f_style)
    return _frob(mu_g - mu_s) + _frob(sd_g - sd_s)


def identity_loss(i_ss, i_style, f_ss, f_style, gamma: float = 0.01) -> Tensor:
    """Image distance plus gamma-weighted feature distance for self-transfer."""
    i_ss, i_style = as_tensor(i_ss), as_tensor(i_style)
    f_ss, f_style = as_tensor(f_ss), as_tensor(f_style)
    if i_ss.shape != i_style.shape:
        raise ValueError(f"image shapes differ: {i_ss.shape} vs {i_style.shape}")
    if f_ss.shape != f_style.shape:
        raise ValueError(f"feature shapes differ: {f_ss.shape} vs {f_style.shape}")
    return _frob(i_ss - i_style) + gamma * _frob(f_ss - f_style)


class TransferDiscriminator(nn.Module):
    """Conditional discriminator over pooled features: an unconditional head
    and a head conditioned on the target text embedding. Outputs are
    probabilities."""

    def __init__(self, d: int, d_t: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 401]))
        act = lambda t: leaky_relu(t, 0.2)
        self.uncond = nn.MLP([d, 2 * d, 1], rng, activation=act)
        self.cond = nn.MLP([d + d_t, 2 * d, 1], rng, activation=act)
        self.d = d
        self.d_t = d_t

    def prob(self, f, f_tex=None) -> Tensor:
        f = as_tensor(f)
        if f_tex is None:
            return self.uncond(f).reshape(()).sigmoid()
        joint = concat([f, as_tensor(f_tex)], axis=0)
        return self.cond(joint).reshape(()).sigmoid()


def _clamped_log(p: Tensor) -> Tensor:
    return p.clip(GAN_EPS, 1.0 - GAN_EPS).log()


def gan_loss(d_t, f_gen_img, f_style, f_tex) -> tuple[Tensor, Tensor]:
    """(d_objective, g_objective) of the four-term conditional GAN.

    d_objective sums log-probabilities of real/fake under both heads and is
    maximized by the discriminator. g_objective is the non-saturating
    generator form, minimized. Probabilities are clamped away from 0 and 1
    so both stay finite.
    """
    p_real = _clamped_log(d_t.prob(f_style))
    p_fake_raw = d_t.prob(f_gen_img)
    p_real_c = _clamped_log(d_t.prob(f_style, f_tex))
    p_fake_c_raw = d_t.prob(f_gen_img, f_tex)
    one = Tensor(1.0)
    d_obj = (p_real + _clamped_log(one - p_fake_raw)
             + p_real_c + _clamped_log(one - p_fake_c_raw))
    g_obj = -(_clamped_log(p_fake_raw) + _clamped_log(p_fake_c_raw))
    return d_obj, g_obj


def emotion_loss(classifier, generated_image, target: EmotionLabel) -> Tensor:
    """Cross-entropy of the frozen classifier's prediction at the target."""
    from emoshift.autodiff import log_softmax

    x = as_tensor(generated_image)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    logits = classifier(x)
    onehot = np.zeros(logits.shape[-1])
    onehot[target.index] = 1.0
    ce = -(log_softmax(logits, axis=-1) * Tensor(onehot)).sum(axis=-1)
    return ce.mean()


def clip_patch_loss(joint_encoder, generated_image, text: str,
                    n_patches: int = 16, patch_size: int = 64, seed: int = 0) -> Tensor:
    """One minus the mean cosine similarity between random crops and the
    text, both embedded by the frozen joint encoder. Crops are seeded."""
    x = as_tensor(generated_image)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image tensor, got shape {x.shape}")
    _, h, w = x.shape
    if patch_size > h or patch_size > w:
        raise ValueError(f"patch size {patch_size} exceeds image size {h}x{w}")
    rng = np.random.default_rng(seed)
    crops = []
    for _ in range(n_patches):
        i = int(rng.integers(0, h - patch_size + 1))
        j = int(rng.integers(0, w - patch_size + 1))
        crop = x[:, i:i + patch_size, j:j + patch_size]
        crops.append(crop.reshape(1, 3, patch_size, patch_size))
    batch = concat(crops, axis=0)
    emb = joint_encoder.embed_image(batch)
    f_tex = Tensor(joint_encoder.embed_text(text))
    cos = emb @ f_tex
    return Tensor(1.0) - cos.mean()


def total_loss(content, style, identity, gan_g, emotion, patch, w: LossWeights):
    """vis = weighted visual terms; total = vis + emotion and patch terms.

    Works on floats and Tensors alike; returns (total, vis).
    """
    vis = w.content * content + w.style * style + w.identity * identity + w.gan * gan_g
    total = vis + w.emotion * emotion + w.patch * patch
    return total, vis


def make_report(content, style, identity, gan_g, emotion, patch, w: LossWeights) -> LossReport:
    def val(x):
        return float(x.item()) if isinstance(x, Tensor) else float(x)

    total, vis = total_loss(*(val(t) for t in (content, style, identity, gan_g,
                                               emotion, patch)), w)
    return LossReport(content=val(content), style=val(style), id=val(identity),
                      gan=val(gan_g), vis=vis, emo=val(emotion), clip=val(patch),
                      total=total)
