"""Evaluation battery: 8-way and polarity accuracy, SSIM, pixel error, FID."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from emoshift.dataset import EMOTIONS, POLARITY, EmotionLabel


@dataclass
class EvalReport:
    acc8: float
    acc2: float
    ssim: float
    recon_error: float
    fid: float
    n_images: int

    def as_dict(self) -> dict:
        return {"acc8": self.acc8, "acc2": self.acc2, "ssim": self.ssim,
                "recon_error": self.recon_error, "fid": self.fid,
                "n_images": self.n_images}


def predict_labels(classifier, images) -> list[EmotionLabel]:
    """Argmax class of the frozen classifier for each image."""
    return [EMOTIONS[int(np.argmax(classifier.logits(im)))] for im in images]


def _check_sets(images, targets) -> None:
    if len(images) == 0:
        raise ValueError("need at least one image")
    if len(images) != len(targets):
        raise ValueError(f"got {len(images)} images but {len(targets)} targets")


def accuracy8(classifier, images, targets) -> float:
    """Fraction of argmax predictions equal to the target label."""
    _check_sets(images, targets)
    preds = predict_labels(classifier, images)
    return sum(p is t for p, t in zip(preds, targets)) / len(targets)


def accuracy2(classifier, images, targets) -> float:
    """Fraction of predictions whose polarity matches the target's."""
    _check_sets(images, targets)
    preds = predict_labels(classifier, images)
    return sum(POLARITY[p] == POLARITY[t] for p, t in zip(preds, targets)) / len(targets)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luma projection of an H x W x 3 image; H x W passes through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ np.array([0.299, 0.587, 0.114])
    raise ValueError(f"expected H x W or H x W x 3, got shape {image.shape}")


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(img_a: np.ndarray, img_b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean structural similarity of the grayscale images.

    11 x 11 Gaussian window (sigma 1.5), valid-region statistics, the usual
    stabilizers C1 = (k1 L)^2, C2 = (k2 L)^2 at dynamic range L.
    """
    a, b = np.asarray(img_a), np.asarray(img_b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    x = to_grayscale(a)
    y = to_grayscale(b)
    win = _gaussian_window()
    if x.shape[0] < win.shape[0] or x.shape[1] < win.shape[1]:
        raise ValueError(f"images must be at least {win.shape[0]} pixels per side")

    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    sxx = convolve2d(x * x, win, mode="valid") - mu_x**2
    syy = convolve2d(y * y, win, mode="valid") - mu_y**2
    sxy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def recon_error(generated: np.ndarray, content: np.ndarray) -> float:
    """Mean absolute pixel difference on the 0-255 scale."""
    g, c = np.asarray(generated), np.asarray(content)
    if g.shape != c.shape:
        raise ValueError(f"image shapes differ: {g.shape} vs {c.shape}")
    return float(np.mean(np.abs(g - c)) * 255.0)


def fid(features_a: np.ndarray, features_b: np.ndarray, ridge: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    Covariances use divisor n-1 plus a small ridge; the matrix square root
    comes from an eigendecomposition of the symmetrized product, with
    numerically negative eigenvalues clamped to zero.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with a shared dimension")
    dim = a.shape[1]
    for name, f in (("a", a), ("b", b)):
        if f.shape[0] < dim + 1:
            raise ValueError(f"set {name} has {f.shape[0]} samples; "
                             f"needs at least dim+1 = {dim + 1}")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False, ddof=1) + ridge * np.eye(dim)
    cov_b = np.cov(b, rowvar=False, ddof=1) + ridge * np.eye(dim)

    # sqrt(cov_a) via eigh, then eigenvalues of sqrt(cov_a) cov_b sqrt(cov_a)
    w, v = np.linalg.eigh(cov_a)
    sqrt_a = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    m = sqrt_a @ cov_b @ sqrt_a
    eig = np.linalg.eigvalsh((m + m.T) / 2.0)
    tr_sqrt = float(np.sqrt(np.clip(eig, 0.0, None)).sum())

    delta = mu_a - mu_b
    return float(delta @ delta + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
