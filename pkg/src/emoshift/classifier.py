"""Eight-way emotion classifier: frozen conv features, trainable linear head.

Used twice: as the frozen scorer inside the emotion loss, and as the
prediction model behind the accuracy metrics. Training touches only the
head, so the feature extractor stays bit-identical to the shared encoder.
"""

from __future__ import annotations

import logging
from dataclasses import asdict

import numpy as np

from emoshift import nn
from emoshift.autodiff import Tensor, log_softmax
from emoshift.dataset import EMOTIONS, EmotionLabel, ImageRecord
from emoshift.encoders import EncoderConfig, batch_images_tensor, build_image_encoder
from emoshift.serialization import FormatError, load_archive, save_archive

logger = logging.getLogger(__name__)

_KIND = "emotion_classifier"


class EmotionClassifier(nn.Module):
    def __init__(self, enc_cfg: EncoderConfig, seed: int = 0):
        self.enc_cfg = enc_cfg
        self.encoder = build_image_encoder(enc_cfg)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 501]))
        self.head = nn.Linear(enc_cfg.d, len(EMOTIONS), rng)

    def __call__(self, x: Tensor) -> Tensor:
        """(B, 3, H, W) image tensor to (B, 8) logits; differentiable."""
        fmap = self.encoder.features(x)
        return self.head(self.encoder.pool_project(fmap))

    def logits(self, image: np.ndarray) -> np.ndarray:
        return self(batch_images_tensor([image])).data[0].copy()

    def classify(self, image: np.ndarray) -> EmotionLabel:
        return EMOTIONS[int(np.argmax(self.logits(image)))]

    def save(self, path):
        arrays = {f"head.{k}": v for k, v in self.head.state_arrays().items()}
        meta = {"encoder": asdict(self.enc_cfg)}
        return save_archive(path, arrays, meta, kind=_KIND)

    @classmethod
    def load(cls, path) -> "EmotionClassifier":
        arrays, meta = load_archive(path, kind=_KIND)
        enc_meta = meta.get("encoder")
        if not isinstance(enc_meta, dict):
            raise FormatError(f"{path}: missing encoder config metadata")
        clf = cls(EncoderConfig(**enc_meta))
        prefix = "head."
        clf.head.load_state_arrays({k[len(prefix):]: v for k, v in arrays.items()
                                    if k.startswith(prefix)})
        return clf


def train_classifier(records: list[ImageRecord], images: dict[str, np.ndarray],
                     enc_cfg: EncoderConfig, seed: int = 0, steps: int = 300,
                     batch_size: int = 32, learning_rate: float = 5e-2,
                     log_every: int = 50) -> tuple[EmotionClassifier, list[float]]:
    """Fit the linear head by cross-entropy; the conv features never move.

    Returns the classifier and the per-step loss history. Pooled features
    are precomputed once, so steps are cheap.
    """
    if not records:
        raise ValueError("no training records")
    clf = EmotionClassifier(enc_cfg, seed=seed)
    feats = np.stack([clf.encoder.encode(images[r.image_id])[1] for r in records])
    labels = np.array([r.emotion.index for r in records])
    onehots = np.eye(len(EMOTIONS))[labels]

    opt = nn.Adam(clf.head.named_parameters(), lr=learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 502]))
    history: list[float] = []
    for step in range(steps):
        idx = rng.choice(len(records), size=min(batch_size, len(records)), replace=False)
        logits = clf.head(Tensor(feats[idx]))
        ce = -(log_softmax(logits, axis=-1) * Tensor(onehots[idx])).sum(axis=-1).mean()
        opt.zero_grad()
        ce.backward()
        opt.step()
        history.append(ce.item())
        if log_every and (step + 1) % log_every == 0:
            logger.info("classifier step %d: ce=%.4f", step + 1, history[-1])
    return clf, history


def classifier_accuracy(clf: EmotionClassifier, records: list[ImageRecord],
                        images: dict[str, np.ndarray]) -> float:
    correct = sum(clf.classify(images[r.image_id]) is r.emotion for r in records)
    return correct / len(records)
