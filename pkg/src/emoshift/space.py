"""Emotion latent space: eight per-emotion codebooks trained adversarially.

Graph features are routed to the codebook of their ground-truth emotion
and replaced by the nearest entry (vector quantization). A discriminator
over pooled image features and quantized graph features provides the
adversarial signal; a mean dispersion term pushes the per-emotion feature
means apart. Gradients pass straight through the quantizer to the query
and into the selected entry, which is what makes the books trainable.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from emoshift import nn
from emoshift.autodiff import Tensor, leaky_relu, log_softmax
from emoshift.dataset import EMOTIONS, EmotionLabel, ImageRecord
from emoshift.encoders import EncoderConfig, build_image_encoder, build_text_encoder
from emoshift.graph import (AttentionParams, GCNEncoder, build_stage1_graph,
                            build_stage2_graph, inject_emotion_semantics)
from emoshift.serialization import FormatError, load_archive, save_archive

logger = logging.getLogger(__name__)

N_CLASSES = 8


class TrainingError(RuntimeError):
    """A training step produced a non-finite loss term."""


class Codebook(nn.Module):
    """One emotion's table of learnable latent entries (N x d)."""

    def __init__(self, emotion: EmotionLabel, entries: np.ndarray, trainable: bool = True):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 2:
            raise ValueError(f"codebook needs an (N >= 2) x d entry matrix, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("codebook entries must be finite")
        self.emotion = emotion
        self.entries = Tensor(entries, requires_grad=trainable)

    @property
    def n_entries(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]


class EmoLatSpace(nn.Module):
    """Exactly eight codebooks, one per emotion, sharing N and d."""

    def __init__(self, codebooks: list[Codebook]):
        if len(codebooks) != N_CLASSES:
            raise ValueError(f"expected {N_CLASSES} codebooks, got {len(codebooks)}")
        emotions = [cb.emotion for cb in codebooks]
        if emotions != list(EMOTIONS):
            raise ValueError("codebooks must appear in canonical emotion order")
        dims = {(cb.n_entries, cb.d) for cb in codebooks}
        if len(dims) != 1:
            raise ValueError(f"codebooks disagree on (N, d): {sorted(dims)}")
        self.codebooks = codebooks

    @classmethod
    def initialize(cls, d: int, n_entries: int, seed: int) -> "EmoLatSpace":
        books = []
        for i, emotion in enumerate(EMOTIONS):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 301, i]))
            books.append(Codebook(emotion, rng.normal(scale=1.0 / np.sqrt(d),
                                                      size=(n_entries, d))))
        return cls(books)

    @property
    def d(self) -> int:
        return self.codebooks[0].d

    @property
    def n_entries(self) -> int:
        return self.codebooks[0].n_entries

    def book(self, emotion: EmotionLabel) -> Codebook:
        return self.codebooks[emotion.index]

    def entries_array(self) -> np.ndarray:
        """All entries as one (8, N, d) array (copies)."""
        return np.stack([cb.entries.data for cb in self.codebooks])

    def codebook_means(self) -> np.ndarray:
        return np.stack([cb.entries.data.mean(axis=0) for cb in self.codebooks])

    def min_pairwise_mean_dist(self) -> float:
        mu = self.codebook_means()
        dists = np.linalg.norm(mu[:, None] - mu[None, :], axis=-1)
        return float(dists[~np.eye(N_CLASSES, dtype=bool)].min())


def quantize(z: np.ndarray, book: Codebook) -> tuple[np.ndarray, int]:
    """Nearest entry by Euclidean distance; ties go to the lowest index."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (book.d,):
        raise ValueError(f"query has shape {z.shape}, codebook dimension is {book.d}")
    d2 = ((book.entries.data - z) ** 2).sum(axis=1)
    index = int(np.argmin(d2))
    return book.entries.data[index].copy(), index


def quantize_st(z: Tensor, book: Codebook) -> tuple[Tensor, int]:
    """Training-time quantization. Forward returns the selected entry;
    backward copies the gradient straight through to the query and also
    accumulates it into the selected entry."""
    _, index = quantize(z.data, book)
    entry = book.entries

    def backward(g):
        if z.requires_grad:
            z._accum(g)
        if entry.requires_grad:
            ge = np.zeros_like(entry.data)
            ge[index] = g
            entry._accum(ge)

    out = z._make(book.entries.data[index].copy(), (z, entry), backward)
    return out, index


def mdi_loss(space: EmoLatSpace, assignments: dict[int, list[Tensor]]) -> Tensor:
    """Mean dispersion incentive: (1/C^2) * sum over ordered pairs of
    squared distances between per-book feature means.

    Books with no assigned features this batch are skipped and C becomes
    the populated count (logged). A single populated book gives 0.
    """
    populated = [i for i in range(N_CLASSES) if assignments.get(i)]
    if not populated:
        raise ValueError("mdi_loss needs at least one populated codebook")
    if len(populated) < N_CLASSES:
        skipped = sorted(set(range(N_CLASSES)) - set(populated))
        logger.info("mdi_loss: skipping unpopulated codebooks %s; C=%d", skipped, len(populated))
    c = len(populated)
    means = []
    for i in populated:
        feats = assignments[i]
        means.append(nn.stack_rows(list(feats)).mean(axis=0))
    total = Tensor(0.0)
    for a in range(c):
        for b in range(a + 1, c):
            diff = means[a] - means[b]
            total = total + (diff * diff).sum()
    # ordered double sum counts each unordered pair twice
    return total * (2.0 / (c * c))


class Discriminator(nn.Module):
    """Three-layer feed-forward classifier, width 2d, dim-d input, 8 logits."""

    def __init__(self, d: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 302]))
        self.net = nn.MLP([d, 2 * d, 2 * d, N_CLASSES], rng,
                          activation=lambda t: leaky_relu(t, 0.2))
        self.d = d

    def __call__(self, f: Tensor) -> Tensor:
        return self.net(f)


def discriminate(disc: Discriminator, f: np.ndarray) -> np.ndarray:
    """Evaluation-mode logits for one dim-d feature vector."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (disc.d,):
        raise ValueError(f"feature has shape {f.shape}, discriminator expects ({disc.d},)")
    return disc(Tensor(f)).data.copy()


def cross_entropy(logits: Tensor, target_probs: np.ndarray) -> Tensor:
    """CE of softmax(logits) against a target distribution (last axis)."""
    logp = log_softmax(logits, axis=-1)
    return -(logp * Tensor(np.asarray(target_probs, dtype=np.float64))).sum(axis=-1)


def one_hot(index: int, n: int = N_CLASSES) -> np.ndarray:
    v = np.zeros(n)
    v[index] = 1.0
    return v


@dataclass(frozen=True)
class SpaceTrainConfig:
    d: int = 512
    n_entries: int = 64
    batch_size: int = 64
    learning_rate: float = 5e-4
    epochs: int = 3
    seed: int = 0
    weight_decay: float = 0.01
    beta: float = 0.0  # commitment weight on the quantizer query
    generator_loss: str = "masked"  # "masked" (target-class CE) or "literal" (all-class sum)
    post_quant_means: bool = False  # mdi over quantized entries instead of graph features
    gcn_layers: int = 2
    log_every: int = 10

    def __post_init__(self):
        if min(self.d, self.n_entries, self.batch_size, self.epochs) <= 0:
            raise ValueError("d, n_entries, batch_size, and epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.generator_loss not in ("masked", "literal"):
            raise ValueError(f"generator_loss must be 'masked' or 'literal', "
                             f"got {self.generator_loss!r}")


@dataclass
class StepReport:
    step: int
    player: str  # "D" or "G"
    l_d: float
    l_g: float
    l_mdi: float
    min_pairwise_mean_dist: float

    def as_dict(self) -> dict:
        return {"step": self.step, "player": self.player, "l_d": self.l_d,
                "l_g": self.l_g, "l_mdi": self.l_mdi,
                "min_pairwise_mean_dist": self.min_pairwise_mean_dist}


@dataclass
class _Sample:
    record: ImageRecord
    f_img: np.ndarray  # pooled frozen image feature, dim d
    graph1: object  # prebuilt stage-one graph


class SpaceTrainer:
    """Alternating adversarial trainer over (space, discriminator).

    Odd-numbered calls to space_train_step update the discriminator, even
    ones the generator side (attention, graph encoder, codebooks). Both
    losses are evaluated every call for reporting; only the stepped
    player's parameters change.
    """

    def __init__(self, records: list[ImageRecord], images: dict[str, np.ndarray],
                 cfg: SpaceTrainConfig, enc_cfg: EncoderConfig,
                 space: EmoLatSpace | None = None):
        if enc_cfg.d != cfg.d:
            raise ValueError(f"encoder pooled dim {enc_cfg.d} != space dim {cfg.d}")
        self.cfg = cfg
        self.enc_cfg = enc_cfg
        self.space = space or EmoLatSpace.initialize(cfg.d, cfg.n_entries, cfg.seed)
        self.disc = Discriminator(cfg.d, cfg.seed)
        self.attention = AttentionParams.seeded(enc_cfg.d_t, cfg.seed)
        self.gcn = GCNEncoder(enc_cfg.d_t, cfg.d, cfg.seed, layers=cfg.gcn_layers)
        text_encoder = build_text_encoder(enc_cfg)
        image_encoder = build_image_encoder(enc_cfg)

        self.samples = []
        for rec in records:
            img = images[rec.image_id]
            _, pooled = image_encoder.encode(img)
            self.samples.append(_Sample(rec, pooled, build_stage1_graph(rec, text_encoder)))
        if not self.samples:
            raise ValueError("no training samples")

        self._gen_params = {}
        self._gen_params.update({f"attn.{k}": t for k, t in
                                 self.attention.named_parameters().items()})
        self._gen_params.update({f"gcn.{k}": t for k, t in self.gcn.named_parameters().items()})
        self._gen_params.update({f"space.{k}": t for k, t in
                                 self.space.named_parameters().items()})
        self._disc_params = self.disc.named_parameters()
        self.opt_d = nn.AdamW(self._disc_params, cfg.learning_rate,
                              weight_decay=cfg.weight_decay)
        self.opt_g = nn.AdamW(self._gen_params, cfg.learning_rate,
                              weight_decay=cfg.weight_decay)
        self.step_count = 0
        self._rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 303]))

    def generator_checksum(self) -> str:
        return nn.params_checksum(self._gen_params)

    def discriminator_checksum(self) -> str:
        return nn.params_checksum(self._disc_params)

    def _encode_graph_feature(self, sample: _Sample) -> Tensor:
        f_sem = inject_emotion_semantics(sample.graph1, sample.record.emotion.value,
                                         self.attention, build_text_encoder(self.enc_cfg))
        g2 = build_stage2_graph(sample.graph1, f_sem)
        return self.gcn(g2)

    def _losses(self, batch: list[_Sample]) -> tuple[Tensor, Tensor, Tensor]:
        uniform = np.full(N_CLASSES, 1.0 / N_CLASSES)
        d_terms = []
        g_terms = []
        assignments: dict[int, list[Tensor]] = {}
        commit = Tensor(0.0)
        for s in batch:
            f_graph = self._encode_graph_feature(s)
            book_idx = s.record.emotion.index
            f_qg, entry_idx = quantize_st(f_graph, self.space.codebooks[book_idx])
            if self.cfg.post_quant_means:
                assignments.setdefault(book_idx, []).append(f_qg)
            else:
                assignments.setdefault(book_idx, []).append(f_graph)
            if self.cfg.beta > 0:
                target = Tensor(f_qg.data.copy())
                delta = f_graph - target
                commit = commit + (delta * delta).sum() * self.cfg.beta

            logits_real = self.disc(Tensor(s.f_img))
            logits_fake = self.disc(f_qg)
            d_terms.append(cross_entropy(logits_real, one_hot(book_idx))
                           + cross_entropy(logits_fake, uniform))
            if self.cfg.generator_loss == "masked":
                g_terms.append(cross_entropy(logits_fake, one_hot(book_idx)))
            else:
                g_terms.append(cross_entropy(logits_fake, np.ones(N_CLASSES)))

        l_mdi = mdi_loss(self.space, assignments)
        n = float(len(batch))
        l_d = sum(d_terms[1:], d_terms[0]) * (1.0 / n)
        l_g = sum(g_terms[1:], g_terms[0]) * (1.0 / n) - l_mdi
        if self.cfg.beta > 0:
            l_g = l_g + commit * (1.0 / n)
        return l_d, l_g, l_mdi

    def space_train_step(self, batch: list[ImageRecord] | None = None) -> StepReport:
        """One alternating update; see class docstring for the schedule."""
        if batch is None:
            idx = self._rng.choice(len(self.samples),
                                   size=min(self.cfg.batch_size, len(self.samples)),
                                   replace=False)
            samples = [self.samples[i] for i in idx]
        else:
            by_id = {s.record.image_id: s for s in self.samples}
            samples = [by_id[r.image_id] for r in batch]

        player = "D" if self.step_count % 2 == 0 else "G"
        l_d, l_g, l_mdi = self._losses(samples)
        for name, value in (("L_D", l_d.item()), ("L_G", l_g.item()), ("L_mdi", l_mdi.item())):
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss term {name} at step {self.step_count}")

        self.opt_d.zero_grad()
        self.opt_g.zero_grad()
        if player == "D":
            l_d.backward()
            self.opt_g.zero_grad()  # discard generator grads from the shared graph
            self.opt_d.step()
        else:
            l_g.backward()
            self.opt_d.zero_grad()
            self.opt_g.step()

        self.step_count += 1
        report = StepReport(self.step_count, player, l_d.item(), l_g.item(), l_mdi.item(),
                            self.space.min_pairwise_mean_dist())
        if self.cfg.log_every and self.step_count % self.cfg.log_every == 0:
            logger.info("space step %d (%s): L_D=%.4f L_G=%.4f L_mdi=%.4f min_dist=%.4f",
                        report.step, player, report.l_d, report.l_g, report.l_mdi,
                        report.min_pairwise_mean_dist)
        return report

    def train(self, n_steps: int | None = None) -> list[StepReport]:
        """Run n_steps alternating steps (default: epochs * ceil(n/batch) * 2)."""
        if n_steps is None:
            per_epoch = int(np.ceil(len(self.samples) / self.cfg.batch_size))
            n_steps = 2 * per_epoch * self.cfg.epochs
        return [self.space_train_step() for _ in range(n_steps)]


def sample_emotion_feature(space: EmoLatSpace, emotion: EmotionLabel, seed: int) -> np.ndarray:
    """One uniformly chosen codebook entry of the requested emotion (f_c)."""
    if not isinstance(emotion, EmotionLabel):
        raise ValueError(f"expected an EmotionLabel, got {emotion!r}")
    rng = np.random.default_rng(seed)
    book = space.book(emotion)
    return book.entries.data[int(rng.integers(book.n_entries))].copy()


_SPACE_KIND = "emolat_space"


def export_space(space: EmoLatSpace, path) -> Path:
    """Write the space as named float32 arrays codebook_0..7 plus metadata."""
    arrays = {f"codebook_{i}": cb.entries.data.astype(np.float32)
              for i, cb in enumerate(space.codebooks)}
    meta = {"d": space.d, "n_entries": space.n_entries,
            "emotions": [e.value for e in EMOTIONS]}
    return save_archive(path, arrays, meta, kind=_SPACE_KIND)


def import_space(path) -> EmoLatSpace:
    arrays, meta = load_archive(path, kind=_SPACE_KIND)
    if meta.get("emotions") != [e.value for e in EMOTIONS]:
        raise FormatError(f"{path}: unexpected emotion order {meta.get('emotions')!r}")
    books = []
    for i, emotion in enumerate(EMOTIONS):
        key = f"codebook_{i}"
        if key not in arrays:
            raise FormatError(f"{path}: missing array {key}")
        books.append(Codebook(emotion, arrays[key].astype(np.float64)))
    space = EmoLatSpace(books)
    if space.d != meta.get("d") or space.n_entries != meta.get("n_entries"):
        raise FormatError(f"{path}: metadata dims {meta.get('n_entries')}x{meta.get('d')} "
                          f"disagree with arrays {space.n_entries}x{space.d}")
    return space


def export_embedding_plot(space: EmoLatSpace, path, seed: int = 0,
                          render_png: bool = False) -> Path:
    """Seeded 2-D stochastic neighbor embedding of all entries, as CSV.

    Rows follow codebook order; header is x,y,emotion. With render_png a
    scatter image is written next to the CSV.
    """
    from sklearn.manifold import TSNE

    entries = space.entries_array().reshape(-1, space.d)
    n = entries.shape[0]
    perplexity = min(30.0, max(1.0, (n - 1) / 3.0))
    coords = TSNE(n_components=2, random_state=seed, perplexity=perplexity,
                  method="exact", init="pca").fit_transform(entries)
    labels = [e.value for e in EMOTIONS for _ in range(space.n_entries)]

    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "emotion"])
        for (x, y), lab in zip(coords, labels):
            writer.writerow([f"{x:.8g}", f"{y:.8g}", lab])

    if render_png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 6))
        for i, e in enumerate(EMOTIONS):
            block = coords[i * space.n_entries:(i + 1) * space.n_entries]
            ax.scatter(block[:, 0], block[:, 1], s=12, label=e.value)
        ax.legend(fontsize=7)
        ax.set_title("emotion latent space, 2-D embedding")
        fig.savefig(path.with_suffix(".png"), dpi=120)
        plt.close(fig)
    return path


def space_silhouette(space: EmoLatSpace) -> float:
    """Silhouette score of the raw entries under their emotion labels."""
    from sklearn.metrics import silhouette_score

    entries = space.entries_array().reshape(-1, space.d)
    labels = np.repeat(np.arange(N_CLASSES), space.n_entries)
    return float(silhouette_score(entries, labels))
