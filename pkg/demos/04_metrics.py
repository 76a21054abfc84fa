"""Metric battery walkthrough: SSIM, pixel error, FID, and the accuracy pair.

The two accuracies share one frozen classifier: accuracy8 scores exact
emotion matches, accuracy2 collapses predictions to positive/negative
polarity first, so it can never be the smaller number.
"""

from pathlib import Path

import numpy as np

from emoshift.classifier import train_classifier
from emoshift.dataset import generate_toy_dataset, load_image, make_splits
from emoshift.encoders import EncoderConfig
from emoshift.metrics import accuracy2, accuracy8, fid, recon_error, ssim

rng = np.random.default_rng(0)

# SSIM: 1 at identity, falls with noise, uses an 11 x 11 Gaussian window
img = rng.random((32, 32, 3))
noisy = np.clip(img + rng.normal(scale=0.1, size=img.shape), 0, 1)
print(f"ssim(x, x)      = {ssim(img, img):.6f}")
print(f"ssim(x, noisy)  = {ssim(img, noisy):.4f}")
print(f"recon error     = {recon_error(noisy, img):.2f} (mean |diff| on 0-255)")

# FID: zero between identical sets, the squared mean gap when covariances match
feats = rng.normal(size=(200, 8))
shift = np.full(8, 0.25)
print(f"\nfid(a, a)       = {fid(feats, feats):.6f}")
print(f"fid(a, a+0.25)  = {fid(feats, feats + shift):.4f} "
      f"(||shift||^2 = {shift @ shift:.4f})")

# accuracies from a classifier trained on the toy set
out = Path("demo_out/04_metrics")
out.mkdir(parents=True, exist_ok=True)
records, _ = generate_toy_dataset(out, n_per_class=25, image_size=32, seed=0)
images = {r.image_id: load_image(out / r.image_path) for r in records}
split = make_splits(records, seed=0)
by_id = {r.image_id: r for r in records}
train_recs = [by_id[i] for i in split.train]
test_recs = [by_id[i] for i in split.test]

enc_cfg = EncoderConfig(backend="toy_stub", d_t=32, visual_channels=16, d=32, seed=0)
clf, history = train_classifier(train_recs, images, enc_cfg, seed=0, steps=300,
                                log_every=0)
print(f"\nclassifier head: ce {history[0]:.3f} -> {history[-1]:.3f} over 300 steps")

test_images = [images[r.image_id] for r in test_recs]
targets = [r.emotion for r in test_recs]
a8 = accuracy8(clf, test_images, targets)
a2 = accuracy2(clf, test_images, targets)
print(f"test accuracy8  = {a8:.3f} (chance 0.125)")
print(f"test accuracy2  = {a2:.3f} (chance 0.5)")
print(f"accuracy2 >= accuracy8 always holds: {a2 >= a8}")
