"""Command-line entry points.

Verbs: ``synth-data``, ``split``, ``pretrain``, ``finetune``, ``evaluate``,
``gradcam``.  Training verbs resolve their configuration from (in override
order) defaults, ``--profile``, ``--config FILE``, ``JIGSAWSSL_*``
environment variables and dotted ``--section.key`` flags, then write a
self-describing run directory: resolved config, metadata, JSONL metrics,
checkpoints and the report figures.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .augment import eval_transform
from .config import SCHEMA, ExperimentConfig, available_profiles, load_profile
from .data import (
    load_images,
    load_manifest,
    save_manifest,
    stratified_split,
    SplitSpec,
    synth_dataset,
)
from .engine import (
    evaluate_model,
    load_checkpoint,
    model_from_checkpoint,
    predict_class,
    run_training,
)
from .errors import ConfigError, ToolkitError
from .gradcam import grad_cam
from .metrics import build_report
from .plots import (
    save_confusion_matrix,
    save_heatmap_overlay,
    save_layer_comparison,
    save_training_curves,
)


def code_version_hash() -> str:
    """Hash of the installed package sources (run provenance)."""
    root = Path(__file__).parent
    digest = hashlib.sha256()
    for source in sorted(root.rglob("*.py")):
        digest.update(str(source.relative_to(root)).encode())
        digest.update(source.read_bytes())
    return digest.hexdigest()[:12]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--profile", choices=available_profiles(), help="packaged base profile")
    parser.add_argument("--config", help="experiment config file (INI)")
    for section, keys in SCHEMA.items():
        for key in keys:
            parser.add_argument(f"--{section}.{key}", dest=f"cfg::{section}.{key}",
                                metavar="V", help=argparse.SUPPRESS)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.defaults()
    if args.profile:
        config.update_from_text(load_profile(args.profile), source=f"profile:{args.profile}")
    if args.config:
        config.update_from_text(Path(args.config).read_text(), source=args.config)
    config.apply_env(dict(os.environ))
    overrides = [
        (name.split("::", 1)[1], value)
        for name, value in vars(args).items()
        if name.startswith("cfg::") and value is not None
    ]
    config.apply_overrides(overrides)
    return config


class _RunLock:
    """Exclusive lock file; concurrent runs must use distinct directories."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / "run.lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"lock file {self.path} exists; another run owns this directory"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _write_run_meta(run_dir: Path, config: ExperimentConfig, verb: str) -> None:
    meta = {
        "verb": verb,
        "config_hash": config.hash(),
        "code_version": code_version_hash(),
        "package_version": __version__,
        "seed": config.get("train", "seed"),
        "argv": sys.argv[1:],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _dataset_for_training(config: ExperimentConfig):
    manifest_path = config.get("data", "manifest")
    if not manifest_path:
        raise ConfigError("data.manifest is required (set it via --data.manifest)")
    manifest = load_manifest(manifest_path)
    dataset = load_images(manifest)
    mean = config.get("data", "mean")
    std = config.get("data", "std")
    if mean is not None:
        dataset.mean = np.asarray(mean, dtype=np.float32)
    if std is not None:
        dataset.std = np.asarray(std, dtype=np.float32)
    return dataset


def _run_train_verb(args: argparse.Namespace, mode: str) -> int:
    config = resolve_config(args)
    dataset = _dataset_for_training(config)
    run_dir = Path(config.get("run", "out_dir"))
    run_dir.mkdir(parents=True, exist_ok=True)
    with _RunLock(run_dir):
        config.save(run_dir / "config.ini")
        _write_run_meta(run_dir, config, mode)
        train_config = config.train_config(
            mode, num_classes=dataset.num_classes if mode == "finetune" else None
        )
        final = run_training(
            train_config,
            dataset,
            run_dir,
            policy=config.augment_policy(),
            init_checkpoint=getattr(args, "init", None),
            resume_checkpoint=getattr(args, "resume", None),
        )
        rows = [
            json.loads(line)
            for line in (run_dir / "metrics.jsonl").read_text().splitlines()
        ]
        save_training_curves(rows, run_dir / "curves.png")
    print(f"run directory: {run_dir}")
    print(f"final checkpoint: {final}")
    if rows:
        print(f"final loss_total: {rows[-1]['loss_total']:.6f}")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    return _run_train_verb(args, "pretrain")


def cmd_finetune(args: argparse.Namespace) -> int:
    return _run_train_verb(args, "finetune")


def _eval_geometry(config: ExperimentConfig):
    return config.get("data", "resize_to"), config.get("data", "crop_size")


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    payload = load_checkpoint(args.checkpoint)
    model, train_config = model_from_checkpoint(payload)
    if train_config.mode != "finetune":
        raise ConfigError("evaluate needs a fine-tuned checkpoint")
    manifest = load_manifest(args.manifest)
    dataset = load_images(manifest)
    resize_to, crop_size = _eval_geometry(config)
    if dataset.images.shape[1:3] != (crop_size, crop_size):
        dataset.images = np.stack(
            [eval_transform(img, resize_to, crop_size) for img in dataset.images]
        )
    if payload.get("norm"):
        dataset.mean = payload["norm"]["mean"]
        dataset.std = payload["norm"]["std"]
    preds, labels, scores = evaluate_model(model, dataset)
    report = build_report(
        preds, labels, scores, dataset.num_classes,
        dataset_id=dataset.dataset_id, config_hash=payload["config_hash"],
    )

    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    with open(out_dir / "report.csv", "w") as fh:
        fh.write("class,precision,recall\n")
        for name, p, r in zip(
            dataset.class_names, report.per_class_precision, report.per_class_recall
        ):
            fh.write(f"{name},{p!r},{r!r}\n")
    save_confusion_matrix(
        np.asarray(report.confusion), dataset.class_names, out_dir / "confusion.png"
    )
    print(f"accuracy:  {report.accuracy:.4f}")
    print(f"macro_f1:  {report.macro_f1:.4f}")
    print(f"auc:       {report.auc:.4f}")
    print(f"report written to {out_dir}")
    return 0


def cmd_gradcam(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    payload = load_checkpoint(args.checkpoint)
    model, _ = model_from_checkpoint(payload)
    compare_model = None
    if args.compare:
        compare_model, _ = model_from_checkpoint(load_checkpoint(args.compare))
    layer_names = [name for name, _ in model.gradcam_layers()]
    layers = (
        [int(v) for v in args.layers.split(",")]
        if args.layers
        else list(range(1, len(layer_names) + 1))
    )
    resize_to, crop_size = _eval_geometry(config)
    norm = payload.get("norm")
    mean = norm["mean"] if norm else np.zeros(3, dtype=np.float32)
    std = norm["std"] if norm else np.ones(3, dtype=np.float32)
    out_dir = Path(args.out or "gradcam")
    out_dir.mkdir(parents=True, exist_ok=True)

    failures = 0
    written = 0
    for image_path in args.images:
        try:
            with Image.open(image_path) as im:
                raw = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except Exception as exc:
            print(f"warning: cannot read {image_path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        img = raw
        if img.shape[:2] != (crop_size, crop_size):
            img = eval_transform(img, resize_to, crop_size)
        stem = Path(image_path).stem
        target = args.target_class
        if target is None:
            target = predict_class(model, img, mean, std)
        if compare_model is not None:
            cams_by_model = {
                "baseline": [
                    grad_cam(compare_model, img, target, s, mean, std) for s in layers
                ],
                "pretrained": [grad_cam(model, img, target, s, mean, std) for s in layers],
            }
            save_layer_comparison(
                img, cams_by_model, [layer_names[s - 1] for s in layers],
                out_dir / f"{stem}_compare.png",
            )
            written += 1
        else:
            for s in layers:
                cam = grad_cam(model, img, target, s, mean, std)
                save_heatmap_overlay(
                    img, cam, out_dir / f"{stem}_layer{s}.png",
                    title=f"{stem} {layer_names[s - 1]} class {target}",
                )
                written += 1
    print(f"wrote {written} figure(s) to {out_dir}")
    return 1 if failures and written == 0 else 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    manifest = synth_dataset(
        num_classes=args.classes,
        per_class=args.per_class,
        image_size=args.image_size,
        seed=args.seed,
        out_dir=args.out,
        motif_size=args.motif_size,
    )
    print(f"manifest: {manifest}")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    spec = SplitSpec(
        train_fraction=args.train_fraction, seed=args.seed, stratified=not args.no_stratify
    )
    train, test = stratified_split(manifest, spec)
    base = Path(args.manifest)
    train_path = save_manifest(train.entries, base.with_name(f"{base.stem}_train.csv"))
    test_path = save_manifest(test.entries, base.with_name(f"{base.stem}_test.csv"))
    print(f"train manifest: {train_path} ({len(train.entries)} samples)")
    print(f"test manifest:  {test_path} ({len(test.entries)} samples)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jigsawssl",
        description="Jigsaw-puzzle self-supervised pretraining with progressive fine-tuning",
    )
    parser.add_argument("--version", action="version", version=f"jigsawssl {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pretrain", help="self-supervised pretraining run")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised progressive fine-tuning run")
    _add_config_flags(p)
    p.add_argument("--init", help="pretraining checkpoint to warm-start from")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="metrics report for a checkpoint on a manifest")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="report directory (default: eval)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcam", help="attribution overlays for images")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare", help="second checkpoint for side-by-side layer sweeps")
    p.add_argument("--layers", help="comma-separated layer indices (default: all)")
    p.add_argument("--target-class", type=int, help="class to explain (default: prediction)")
    p.add_argument("--out", help="output directory (default: gradcam)")
    p.add_argument("images", nargs="+", help="image files")
    p.set_defaults(func=cmd_gradcam)

    p = sub.add_parser("synth-data", help="generate the synthetic texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=16)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motif-size", type=int, default=28)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("split", help="stratified train/test split of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-stratify", action="store_true")
    p.set_defaults(func=cmd_split)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
