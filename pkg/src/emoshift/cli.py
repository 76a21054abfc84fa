"""Command line: one config, seven subcommands, deterministic artifacts.

Every artifact (manifests, logs, checkpoints, CSVs, images, reports) is a
pure function of config + seed: logs are timestamp-free JSONL, reports echo
the full config, and reruns are byte-identical.

Exit codes: 0 success, 1 invalid config or runtime failure (diagnostic on
stderr), 2 unknown subcommand or malformed usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from emoshift.classifier import EmotionClassifier, train_classifier, classifier_accuracy
from emoshift.config import ConfigError, PROFILES, RunConfig, load_run_config
from emoshift.dataset import (EMOTIONS, ImageRecord, SchemaError, generate_toy_dataset,
                              load_image, load_manifest, make_splits, save_image)
from emoshift.metrics import EvalReport, accuracy2, accuracy8, fid, recon_error, ssim
from emoshift.serialization import FormatError
from emoshift.space import (SpaceTrainer, TrainingError, export_embedding_plot,
                            export_space, import_space)
from emoshift.transfer import TransferModel, TransferTrainer, transfer

logger = logging.getLogger(__name__)


# -- shared plumbing --------------------------------------------------------------


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_records(cfg: RunConfig) -> tuple[list[ImageRecord], dict[str, np.ndarray]]:
    manifest = Path(cfg.paths.manifest)
    if not manifest.is_file():
        raise ConfigError(f"[paths] manifest not found: {manifest}")
    records = load_manifest(manifest)
    root = Path(cfg.paths.images) if cfg.paths.images else manifest.parent
    images = {}
    for r in records:
        p = Path(r.image_path)
        images[r.image_id] = load_image(p if p.is_absolute() else root / p)
    return records, images


def _split_records(records: list[ImageRecord],
                   seed: int) -> tuple[list[ImageRecord], list[ImageRecord]]:
    split = make_splits(records, seed)
    by_id = {r.image_id: r for r in records}
    return [by_id[i] for i in split.train], [by_id[i] for i in split.test]


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# -- subcommands ------------------------------------------------------------------


def cmd_gen_toy(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    records, manifest_path = generate_toy_dataset(
        out, cfg.dataset.n_per_class, image_size=cfg.dataset.image_size,
        seed=cfg.seed)
    print(f"wrote {len(records)} images and {manifest_path}")
    return 0


def cmd_train_space(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    records, images = _load_records(cfg)
    train_recs, _ = _split_records(records, cfg.seed)
    trainer = SpaceTrainer(train_recs, images, cfg.space, cfg.encoder)
    reports = trainer.train(cfg.space_steps)
    _write_jsonl(out / "space_train_log.jsonl", (r.as_dict() for r in reports))
    archive = export_space(trainer.space, out / "space.npz")
    last = reports[-1]
    print(f"trained space for {len(reports)} steps: "
          f"l_d={last.l_d:.4f} l_g={last.l_g:.4f} l_mdi={last.l_mdi:.4f} "
          f"min_pairwise_mean_dist={last.min_pairwise_mean_dist:.4f}")
    print(f"wrote {archive} and {out / 'space_train_log.jsonl'}")
    return 0


def cmd_visualize_space(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    space = import_space(args.space or out / "space.npz")
    csv = export_embedding_plot(space, out / "embedding.csv", seed=cfg.seed,
                                render_png=args.render_png)
    print(f"wrote {csv}" + (" and embedding.png" if args.render_png else ""))
    return 0


def cmd_train_classifier(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    records, images = _load_records(cfg)
    train_recs, test_recs = _split_records(records, cfg.seed)
    clf, history = train_classifier(
        train_recs, images, cfg.encoder, seed=cfg.seed,
        steps=cfg.classifier.steps, batch_size=cfg.classifier.batch_size,
        learning_rate=cfg.classifier.learning_rate, log_every=0)
    _write_jsonl(out / "classifier_train_log.jsonl",
                 ({"step": i + 1, "loss": v} for i, v in enumerate(history)))
    clf.save(out / "classifier.npz")
    acc_train = classifier_accuracy(clf, train_recs, images)
    acc_test = classifier_accuracy(clf, test_recs, images) if test_recs else float("nan")
    print(f"trained classifier for {len(history)} steps: "
          f"final_ce={history[-1]:.4f} acc_train={acc_train:.3f} acc_test={acc_test:.3f}")
    print(f"wrote {out / 'classifier.npz'} and {out / 'classifier_train_log.jsonl'}")
    return 0


def cmd_train_transfer(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    records, images = _load_records(cfg)
    train_recs, _ = _split_records(records, cfg.seed)
    space = import_space(args.space or out / "space.npz")
    classifier = None
    if cfg.weights.emotion > 0:
        clf_path = Path(args.classifier or out / "classifier.npz")
        if not clf_path.is_file():
            raise ConfigError(f"[weights] emotion={cfg.weights.emotion} needs a "
                              f"classifier checkpoint; not found: {clf_path}")
        classifier = EmotionClassifier.load(clf_path)
    model = TransferModel(cfg.encoder, cfg.transfer, space.d)
    trainer = TransferTrainer(train_recs, images, model, space, classifier,
                              cfg.weights, cfg.transfer)
    log_path = out / "transfer_train_log.jsonl"
    with open(log_path, "w") as f:
        for _ in range(cfg.transfer.iterations):
            rep = trainer.train_transfer_step()
            f.write(json.dumps(rep.as_dict(), sort_keys=True) + "\n")
    archive = model.save(out / "transfer_model.npz")
    print(f"trained transfer model for {trainer.step_count} steps: "
          f"total={rep.losses.total:.4f} content={rep.losses.content:.4f} "
          f"style={rep.losses.style:.4f} id={rep.losses.id:.4f} "
          f"gan={rep.losses.gan:.4f} emo={rep.losses.emo:.4f} "
          f"clip={rep.losses.clip:.4f}")
    print(f"wrote {archive} and {log_path}")
    return 0


def cmd_transfer(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    model = TransferModel.load(args.model or out / "transfer_model.npz")
    space = import_space(args.space or out / "space.npz")
    image = load_image(args.image)
    result = transfer(image, args.emotion, model, space, seed=cfg.seed)
    out_path = Path(args.out or out / f"transfer_{args.emotion}_seed{cfg.seed}.png")
    save_image(result, out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    records, images = _load_records(cfg)
    _, test_recs = _split_records(records, cfg.seed)
    if not test_recs:
        raise ConfigError("[paths] manifest yields an empty test split")
    clf = EmotionClassifier.load(args.classifier or out / "classifier.npz")

    identity = args.model == "identity"
    if not identity:
        model = TransferModel.load(args.model or out / "transfer_model.npz")
        space = import_space(args.space or out / "space.npz")

    generated, targets, ssim_vals, recon_vals = [], [], [], []
    for i, rec in enumerate(test_recs):
        content = images[rec.image_id]
        for j, emotion in enumerate(EMOTIONS):
            if identity:
                gen = content.copy()
            else:
                draw = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, 701, i, j]))
                gen = transfer(content, emotion.value, model, space,
                               seed=int(draw.integers(2**31)))
            generated.append(gen)
            targets.append(emotion)
            ssim_vals.append(ssim(gen, content))
            recon_vals.append(recon_error(gen, content))

    real_feats = np.stack([clf.encoder.encode(images[r.image_id])[1]
                           for r in records])
    gen_feats = np.stack([clf.encoder.encode(g)[1] for g in generated])
    report = EvalReport(
        acc8=accuracy8(clf, generated, targets),
        acc2=accuracy2(clf, generated, targets),
        ssim=float(np.mean(ssim_vals)),
        recon_error=float(np.mean(recon_vals)),
        fid=fid(real_feats, gen_feats),
        n_images=len(test_recs))
    payload = {"report": report.as_dict(), "config": cfg.as_dict(),
               "model": "identity" if identity else str(args.model or out / "transfer_model.npz")}
    with open(out / "report.json", "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"evaluated {len(test_recs)} test images x {len(EMOTIONS)} emotions: "
          f"acc8={report.acc8:.4f} acc2={report.acc2:.4f} ssim={report.ssim:.4f} "
          f"recon_error={report.recon_error:.4f} fid={report.fid:.4f}")
    print(f"wrote {out / 'report.json'}")
    return 0


# -- argument parsing -------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--profile", choices=sorted(PROFILES), default="full",
                        help="hyperparameter profile (default: full)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="override the top-level seed")
    common.add_argument("--manifest", help="override [paths] manifest")
    common.add_argument("--images", help="override [paths] images root")
    common.add_argument("--out-dir", help="override [paths] out_dir")

    parser = argparse.ArgumentParser(
        prog="emoshift",
        description="Text-driven image sentiment transfer through an emotion "
                    "latent space.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen-toy", parents=[common],
                       help="write a synthetic labeled dataset under the output dir")
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train-space", parents=[common],
                       help="adversarially train the emotion latent space")
    p.set_defaults(func=cmd_train_space)

    p = sub.add_parser("visualize-space", parents=[common],
                       help="export a seeded 2-D embedding of all latent entries")
    p.add_argument("--space", help="space archive (default: <out>/space.npz)")
    p.add_argument("--render-png", action="store_true",
                   help="also render embedding.png next to the CSV")
    p.set_defaults(func=cmd_visualize_space)

    p = sub.add_parser("train-classifier", parents=[common],
                       help="fit the emotion classifier head on frozen features")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-transfer", parents=[common],
                       help="train the transfer network against the frozen space")
    p.add_argument("--space", help="space archive (default: <out>/space.npz)")
    p.add_argument("--classifier", help="classifier checkpoint "
                                        "(default: <out>/classifier.npz)")
    p.set_defaults(func=cmd_train_transfer)

    p = sub.add_parser("transfer", parents=[common],
                       help="render one image toward an emotion word")
    p.add_argument("--image", required=True, help="content image file")
    p.add_argument("--emotion", required=True, help="target emotion word")
    p.add_argument("--model", help="transfer checkpoint "
                                   "(default: <out>/transfer_model.npz)")
    p.add_argument("--space", help="space archive (default: <out>/space.npz)")
    p.add_argument("--out", help="output image path "
                                 "(default: <out>/transfer_<emotion>_seed<seed>.png)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run the metric battery over the test split")
    p.add_argument("--model", help="transfer checkpoint, or the literal word "
                                   "'identity' for the copy-through baseline "
                                   "(default: <out>/transfer_model.npz)")
    p.add_argument("--space", help="space archive (default: <out>/space.npz)")
    p.add_argument("--classifier", help="classifier checkpoint "
                                        "(default: <out>/classifier.npz)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_run_config(args.config, profile=args.profile,
                          overrides=args.set, seed=args.seed)
    paths = cfg.paths
    if args.manifest:
        paths = replace(paths, manifest=args.manifest)
    if args.images:
        paths = replace(paths, images=args.images)
    if args.out_dir:
        paths = replace(paths, out_dir=args.out_dir)
    return replace(cfg, paths=paths)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(message)s")
    try:
        cfg = _config_from_args(args)
        return args.func(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (SchemaError, FormatError, TrainingError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
