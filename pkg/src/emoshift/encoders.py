"""Frozen feature extractors: joint text-image embedder and conv image encoder.

Two backends share one interface. ``toy_stub`` is fully seeded and self-
contained: text embeddings come from a hash-projection, image features
from a small fixed conv stack. ``pretrained`` loads adapter weights from a
user-supplied archive (never bundled). All weights are frozen; gradient
flows through encoder forward passes only into their inputs.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass

import numpy as np

from emoshift import nn
from emoshift.autodiff import Tensor
from emoshift.serialization import load_archive

_BACKENDS = ("toy_stub", "pretrained")


@dataclass(frozen=True)
class EncoderConfig:
    backend: str = "toy_stub"
    d_t: int = 512
    visual_channels: int = 64
    d: int = 512
    seed: int = 0
    weights_path: str | None = None  # pretrained backend only
    feature_layer: int = -1  # which conv output is the feature map (pretrained)

    def __post_init__(self):
        if self.backend not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}, got {self.backend!r}")
        if self.d_t <= 0 or self.d <= 0 or self.visual_channels <= 0:
            raise ValueError("d_t, d, and visual_channels must be positive")
        if self.backend == "pretrained" and not self.weights_path:
            raise ValueError("pretrained backend requires weights_path")


def image_to_chw(image: np.ndarray) -> np.ndarray:
    """Validate an H x W x 3 image in [0,1] and return it as (3, H, W)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
    return np.transpose(image, (2, 0, 1))


class StubTextEncoder:
    """Seeded projection of a byte-level hash; deterministic, frozen, unit-norm."""

    def __init__(self, d_t: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        self.proj = rng.normal(scale=1.0 / 8.0, size=(64, d_t))
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be nonempty")
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=64).digest()
        h = (np.frombuffer(digest, dtype=np.uint8).astype(np.float64) - 127.5) / 127.5
        v = h @ self.proj
        v = v / np.linalg.norm(v)
        self._cache[text] = v
        return v

    def checksum(self) -> str:
        return hashlib.blake2b(self.proj.tobytes(), digest_size=16).hexdigest()


class TableTextEncoder:
    """Lookup table of precomputed word embeddings from a weights archive."""

    def __init__(self, vectors: np.ndarray, words: list[str]):
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        self.vectors = vectors / norms
        self.index = {w: i for i, w in enumerate(words)}

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be nonempty")
        i = self.index.get(text)
        if i is None:
            raise ValueError(f"word {text!r} not in the adapter vocabulary")
        return self.vectors[i]

    def checksum(self) -> str:
        return hashlib.blake2b(self.vectors.tobytes(), digest_size=16).hexdigest()


class ConvImageEncoder(nn.Module):
    """Frozen conv stack; exposes the feature map and a pooled dim-d vector.

    Pooling is a global spatial average followed by a fixed linear map, so
    the pooled vector is invariant to any spatial permutation of the map.
    """

    def __init__(self, convs: list[nn.Conv2d], proj: nn.Linear, feature_layer: int = -1):
        self.convs = convs
        self.proj = proj
        self.feature_layer = feature_layer % len(convs)
        self.freeze()

    def features(self, x: Tensor) -> Tensor:
        """(B, 3, H, W) -> feature map (B, C, h, w) at the configured layer."""
        for i, conv in enumerate(self.convs):
            x = conv(x).tanh()
            if i == self.feature_layer:
                return x
        return x

    def pool_project(self, fmap: Tensor) -> Tensor:
        """(B, C, h, w) -> (B, d): global average over space, then linear."""
        pooled = fmap.mean(axis=(2, 3))
        return self.proj(pooled)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        fmap = self.features(x)
        return fmap, self.pool_project(fmap)

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = Tensor(image_to_chw(image)[None])
        fmap, pooled = self.forward(x)
        return fmap.data[0], pooled.data[0]


class JointImageTower(nn.Module):
    """Frozen conv tower mapping image patches to unit-norm dim-d_t embeddings."""

    def __init__(self, d_t: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 103]))
        self.conv1 = nn.Conv2d(3, 8, 3, rng, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, 3, rng, stride=2, padding=1)
        self.proj = nn.Linear(16, d_t, rng)
        self.conv1.bias.data = rng.normal(scale=0.1, size=8)
        self.conv2.bias.data = rng.normal(scale=0.1, size=16)
        self.freeze()

    def embed(self, x: Tensor) -> Tensor:
        """(B, 3, H, W) -> (B, d_t), unit L2 norm per row."""
        h = self.conv1(x).tanh()
        h = self.conv2(h).tanh()
        v = self.proj(h.mean(axis=(2, 3)))
        norm = (v * v).sum(axis=-1, keepdims=True).sqrt()
        return v / (norm + 1e-12)


class JointEncoder:
    """Joint text-image embedding model: text side plus patch tower, shared d_t."""

    def __init__(self, text, image_tower: JointImageTower):
        self.text = text
        self.image_tower = image_tower

    def embed_text(self, text: str) -> np.ndarray:
        return self.text.embed(text)

    def embed_image(self, x: Tensor) -> Tensor:
        return self.image_tower.embed(x)

    def checksum(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(self.text.checksum().encode())
        h.update(self.image_tower.checksum().encode())
        return h.hexdigest()


def _build_stub_image_encoder(cfg: EncoderConfig) -> ConvImageEncoder:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 102]))
    c_mid = max(4, cfg.visual_channels // 4)
    conv1 = nn.Conv2d(3, c_mid, 3, rng, stride=2, padding=1)
    conv2 = nn.Conv2d(c_mid, cfg.visual_channels, 3, rng, stride=2, padding=1)
    conv1.bias.data = rng.normal(scale=0.1, size=c_mid)
    conv2.bias.data = rng.normal(scale=0.1, size=cfg.visual_channels)
    proj = nn.Linear(cfg.visual_channels, cfg.d, rng)
    return ConvImageEncoder([conv1, conv2], proj)


def _build_pretrained(cfg: EncoderConfig):
    arrays, meta = load_archive(cfg.weights_path, kind="encoder_weights")
    words = meta.get("words", [])
    text = TableTextEncoder(arrays["text.vectors"].astype(np.float64), words)

    convs = []
    i = 0
    strides = meta.get("strides", [])
    paddings = meta.get("paddings", [])
    while f"image.conv{i}.weight" in arrays:
        w = arrays[f"image.conv{i}.weight"].astype(np.float64)
        conv = nn.Conv2d(w.shape[1], w.shape[0], w.shape[2], np.random.default_rng(0),
                         stride=strides[i] if i < len(strides) else 1,
                         padding=paddings[i] if i < len(paddings) else 0)
        conv.weight.data = w
        conv.bias.data = arrays[f"image.conv{i}.bias"].astype(np.float64)
        convs.append(conv)
        i += 1
    if not convs:
        raise ValueError(f"{cfg.weights_path}: no image conv layers in archive")
    proj = nn.Linear(convs[-1].weight.data.shape[0], cfg.d, np.random.default_rng(0))
    proj.weight.data = arrays["image.proj.weight"].astype(np.float64)
    proj.bias.data = arrays["image.proj.bias"].astype(np.float64)
    image = ConvImageEncoder(convs, proj, feature_layer=cfg.feature_layer)

    tower = JointImageTower(cfg.d_t, seed=0)
    prefix = "joint."
    joint_arrays = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    if joint_arrays:
        tower.load_state_arrays(joint_arrays)
        tower.freeze()
    return text, image, JointEncoder(text, tower)


@functools.lru_cache(maxsize=8)
def _build_backend(cfg: EncoderConfig):
    if cfg.backend == "toy_stub":
        text = StubTextEncoder(cfg.d_t, cfg.seed)
        image = _build_stub_image_encoder(cfg)
        joint = JointEncoder(text, JointImageTower(cfg.d_t, cfg.seed))
        return text, image, joint
    return _build_pretrained(cfg)


def build_text_encoder(cfg: EncoderConfig):
    return _build_backend(cfg)[0]


def build_image_encoder(cfg: EncoderConfig) -> ConvImageEncoder:
    return _build_backend(cfg)[1]


def build_joint_encoder(cfg: EncoderConfig) -> JointEncoder:
    return _build_backend(cfg)[2]


def embed_text(text: str, cfg: EncoderConfig) -> np.ndarray:
    """Unit-norm dim-d_t embedding of a word or short prompt; deterministic."""
    return build_text_encoder(cfg).embed(text)


def encode_image(image: np.ndarray, cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """(feature map (C, h, w), pooled dim-d vector) from the frozen encoder."""
    return build_image_encoder(cfg).encode(image)


def encoder_checksums(cfg: EncoderConfig) -> dict[str, str]:
    """Digests of every frozen weight group, for freeze-contract tests."""
    text, image, joint = _build_backend(cfg)
    return {"text": text.checksum(), "image": image.checksum(), "joint": joint.checksum()}


def batch_images_tensor(images: list[np.ndarray]) -> Tensor:
    """Stack H x W x 3 images into a (B, 3, H, W) input tensor."""
    return Tensor(np.stack([image_to_chw(im) for im in images]))
