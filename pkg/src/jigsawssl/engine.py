"""Training engine: progressive pretraining, fine-tuning, checkpoints.

One batch triggers S sequential optimizer updates, one per progressive step.
During pretraining, step ``l`` builds a distorted view and a jigsaw view of
the batch at the step's granularity, forwards both through the shared
network up to the step's stage, and minimizes the correlation-alignment
loss plus the jigsaw-order cross-entropy.  Fine-tuning runs the same step
loop on jigsaw-shuffled inputs with plain cross-entropy against the class
labels.

Every stochastic choice is drawn from generators derived from
``(seed, epoch, purpose)``, so runs are reproducible and a resumed run
replays the exact remaining trajectory.
"""

from __future__ import annotations

import hashlib
import json
import math
import pickle
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationPolicy, distort, normalize
from .data import LoadedDataset
from .errors import (
    CheckpointError,
    ConfigError,
    ConfigMismatchError,
    DivisibilityError,
    NumericsError,
)
from .jigsaw import PermutationPool, build_permutation_pool, max_pool_size, sample_puzzle
from .network import NetworkConfig, ProgressiveNet, granularity_for_step
from .objectives import barlow_loss, cross_correlation, jigsaw_order_loss, pretrain_loss

_TAG_ORDER, _TAG_AUGMENT, _TAG_PUZZLE = 1, 2, 3
CHECKPOINT_FORMAT = 1


@dataclass
class TrainConfig:
    """Hyperparameters for one training run (either mode)."""

    batch_size: int = 16
    epochs: int = 200
    lr_init: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.001
    granularity_schedule: tuple[int, ...] = (8, 4, 2, 1)
    barlow_lambda: float = 0.005
    beta: float = 1.0
    projector_dim: int = 512
    pool_size: int = 64
    seed: int = 0
    mode: str = "pretrain"  # pretrain | finetune
    # ablation toggles (all on = full method)
    use_jigsaw: bool = True
    progressive: bool = True
    use_barlow: bool = True
    # architecture
    backbone: str = "small"
    widths: tuple[int, ...] = (8, 16, 32, 64)
    head_width: int | None = None
    projector_hidden: int | None = None
    num_classes: int | None = None  # required for finetune
    checkpoint_every: int = 0  # epochs between periodic checkpoints; 0 = final only

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr_init", "momentum", "weight_decay",
                     "barlow_lambda", "projector_dim", "pool_size"):
            if getattr(self, name) <= 0 and name not in ("momentum",):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.mode not in ("pretrain", "finetune"):
            raise ConfigError(f"mode must be pretrain or finetune, got {self.mode!r}")
        self.granularity_schedule = tuple(int(g) for g in self.granularity_schedule)
        if not self.granularity_schedule:
            raise ConfigError("granularity_schedule cannot be empty")
        if self.mode == "pretrain" and not (self.use_jigsaw or self.use_barlow):
            raise ConfigError("pretraining needs at least one of jigsaw / barlow enabled")

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            backbone=self.backbone,
            widths=tuple(self.widths),
            head_width=self.head_width,
            projector_dim=self.projector_dim,
            projector_hidden=self.projector_hidden,
            num_steps=len(step_plan(self)),
        )

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def cosine_lr(epoch: int, epochs: int, lr_init: float) -> float:
    """Half-cosine decay from ``lr_init`` at epoch 0 to 0 at ``epochs``."""
    if not 0 <= epoch <= epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {epochs}]")
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def step_plan(config: TrainConfig) -> list[tuple[int, int]]:
    """Ordered (step, granularity) pairs executed per batch.

    Progressive mode walks the whole schedule.  Non-progressive mode runs a
    single full-network step: at the finest schedule granularity for jigsaw
    pretraining, unshuffled otherwise.
    """
    if config.progressive:
        return [(l, granularity_for_step(config.granularity_schedule, l))
                for l in range(1, len(config.granularity_schedule) + 1)]
    if config.mode == "pretrain" and config.use_jigsaw:
        return [(1, int(config.granularity_schedule[0]))]
    return [(1, 1)]


def label_sizes_for(config: TrainConfig) -> list[int]:
    """Per-step classifier widths: clamped pool sizes or the class count."""
    plan = step_plan(config)
    if config.mode == "pretrain":
        return [min(config.pool_size, max_pool_size(g)) for _, g in plan]
    if config.num_classes is None:
        raise ConfigError("finetune mode requires num_classes")
    return [config.num_classes] * len(plan)


def build_pools(config: TrainConfig) -> dict[int, PermutationPool]:
    """One pool per distinct granularity in the plan, seeded from the config."""
    pools: dict[int, PermutationPool] = {}
    for _, g in step_plan(config):
        if g in pools:
            continue
        pool_seed = int(np.random.SeedSequence([config.seed, g]).generate_state(1)[0])
        pools[g] = build_permutation_pool(g, min(config.pool_size, max_pool_size(g)), pool_seed)
    return pools


def build_model(config: TrainConfig) -> ProgressiveNet:
    """Seeded model construction so identical configs get identical weights."""
    torch.manual_seed(config.seed)
    return ProgressiveNet(config.network_config(), label_sizes_for(config))


def build_optimizer(model: ProgressiveNet, config: TrainConfig) -> torch.optim.SGD:
    """SGD with momentum; weight decay skips biases and normalization params."""
    decay, no_decay = [], []
    for _, param in sorted(model.named_parameters()):
        (no_decay if param.ndim <= 1 else decay).append(param)
    return torch.optim.SGD(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.lr_init,
        momentum=config.momentum,
    )


@dataclass
class TrainState:
    """Everything needed to continue or replay a run."""

    model: ProgressiveNet
    optimizer: torch.optim.SGD
    config: TrainConfig
    pools: dict[int, PermutationPool]
    epoch: int = 0
    global_step: int = 0
    best_metric: float | None = None
    norm_mean: np.ndarray | None = None  # channel stats the model was trained with
    norm_std: np.ndarray | None = None


def make_state(config: TrainConfig) -> TrainState:
    model = build_model(config)
    return TrainState(
        model=model,
        optimizer=build_optimizer(model, config),
        config=config,
        pools=build_pools(config),
    )


def _epoch_rng(seed: int, epoch: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, tag]))


def _to_batch(images: np.ndarray, mean, std) -> torch.Tensor:
    arr = normalize(np.ascontiguousarray(images), mean, std)
    return torch.from_numpy(arr).permute(0, 3, 1, 2)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def check_divisibility(images: np.ndarray, config: TrainConfig) -> None:
    h, w = images.shape[1:3]
    n_max = max(g for _, g in step_plan(config))
    for d in (32, n_max):
        if h % d or w % d:
            raise DivisibilityError(f"images {h}x{w} must be divisible by {d}")


def pretrain_batch(
    state: TrainState,
    images: np.ndarray,
    policy: AugmentationPolicy,
    aug_rng: np.random.Generator,
    puzzle_rng: np.random.Generator,
    mean,
    std,
) -> list[dict]:
    """Run the progressive pretraining updates for one raw image batch.

    Returns one diagnostics dict per step with the enabled loss terms.
    """
    config = state.config
    model = state.model
    model.train()
    results = []
    for step, gran in step_plan(config):
        pool = state.pools[gran]
        branch_b = np.empty_like(images)
        labels = np.empty(len(images), dtype=np.int64)
        for i, img in enumerate(images):
            branch_b[i], labels[i] = sample_puzzle(img, pool, puzzle_rng)
        xb = _to_batch(branch_b, mean, std)
        feats_b = model.extract_stage_features(xb, step)

        diag: dict = {"step": step, "granularity": gran}
        if config.use_barlow:
            branch_a = np.stack([distort(img, policy, aug_rng) for img in images])
            xa = _to_batch(branch_a, mean, std)
            feats_a = model.extract_stage_features(xa, step)
            za = model.project(feats_a, step)
            zb = model.project(feats_b, step)
            if config.use_jigsaw:
                logits = model.classify_step(feats_b, step)
                loss, terms = pretrain_loss(
                    za, zb, [logits], [torch.from_numpy(labels)],
                    lam=config.barlow_lambda, beta=config.beta,
                )
                diag.update(
                    loss_total=terms["loss_total"],
                    loss_barlow=terms["loss_barlow"],
                    loss_order=terms["loss_order"],
                )
            else:
                loss = barlow_loss(cross_correlation(za, zb), config.barlow_lambda)
                diag.update(loss_total=float(loss.detach()), loss_barlow=float(loss.detach()))
        else:
            logits = model.classify_step(feats_b, step)
            loss = config.beta * jigsaw_order_loss([logits], [torch.from_numpy(labels)])
            diag.update(loss_total=float(loss.detach()), loss_order=float(loss.detach()))

        if not torch.isfinite(loss):
            raise NumericsError(f"non-finite pretrain loss at step {step}", step=step)
        state.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        state.optimizer.step()
        state.global_step += 1
        results.append(diag)
    return results


def finetune_batch(
    state: TrainState,
    images: np.ndarray,
    labels: np.ndarray,
    puzzle_rng: np.random.Generator,
    mean,
    std,
) -> list[dict]:
    """Progressive supervised updates: shuffled inputs, class cross-entropy."""
    config = state.config
    model = state.model
    model.train()
    targets = torch.from_numpy(np.asarray(labels, dtype=np.int64))
    results = []
    for step, gran in step_plan(config):
        pool = state.pools[gran]
        shuffled = np.empty_like(images)
        for i, img in enumerate(images):
            shuffled[i], _ = sample_puzzle(img, pool, puzzle_rng)
        x = _to_batch(shuffled, mean, std)
        feats = model.extract_stage_features(x, step)
        logits = model.classify_step(feats, step)
        loss = F.cross_entropy(logits, targets)
        if not torch.isfinite(loss):
            raise NumericsError(f"non-finite finetune loss at step {step}", step=step)
        state.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        state.optimizer.step()
        state.global_step += 1
        results.append({"step": step, "granularity": gran, "loss_total": float(loss.detach())})
    return results


def predict(model: ProgressiveNet, image: np.ndarray, mean, std) -> np.ndarray:
    """Class probabilities: softmax over the sum of all step logits.

    Argmax of the returned vector breaks ties toward the lowest class index.
    """
    model.eval()
    x = _to_batch(image[None], mean, std)
    with torch.no_grad():
        logits = model.combined_logits(x)
    return torch.softmax(logits[0], dim=0).numpy()


def predict_class(model: ProgressiveNet, image: np.ndarray, mean, std) -> int:
    return int(np.argmax(predict(model, image, mean, std)))


def evaluate_model(
    model: ProgressiveNet, dataset: LoadedDataset, batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched inference over a dataset -> (preds, labels, probability scores)."""
    model.eval()
    scores = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            x = _to_batch(dataset.images[start : start + batch_size], dataset.mean, dataset.std)
            scores.append(torch.softmax(model.combined_logits(x), dim=1).numpy())
    scores = np.concatenate(scores)
    return scores.argmax(axis=1), dataset.labels.copy(), scores


# ---------------------------------------------------------------------------
# Checkpoints: canonical encoding so save -> load -> save is byte-identical
# ---------------------------------------------------------------------------


def _encode(obj):
    if isinstance(obj, torch.Tensor):
        obj = obj.detach().cpu().numpy()
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        return ("__nd__", arr.dtype.str, arr.shape, arr.tobytes())
    if isinstance(obj, np.generic):
        return ("__np__", obj.dtype.str, obj.item())
    if isinstance(obj, dict):
        return {_encode(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        kind = "__list__" if isinstance(obj, list) else "__tuple__"
        return (kind, [_encode(v) for v in obj])
    if isinstance(obj, str):
        # interning keeps pickle's string memoization identical across
        # save -> load -> save round trips (byte-exact archives)
        return sys.intern(obj)
    return obj


def _decode(obj):
    if isinstance(obj, tuple) and obj:
        if obj[0] == "__nd__":
            _, dtype, shape, raw = obj
            return np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(shape).copy()
        if obj[0] == "__np__":
            return np.dtype(obj[1]).type(obj[2])
        if obj[0] in ("__list__", "__tuple__"):
            seq = [_decode(v) for v in obj[1]]
            return seq if obj[0] == "__list__" else tuple(seq)
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    return obj


def _arch_fields(config: TrainConfig) -> dict:
    return {
        "backbone": config.backbone,
        "widths": list(config.widths),
        "head_width": config.network_config().resolved_head_width(),
        "projector_dim": config.projector_dim,
        "projector_hidden": config.network_config().resolved_projector_hidden(),
        "num_steps": len(step_plan(config)),
    }


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    """Write the full training state as one self-describing archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": state.config.hash(),
        "mode": state.config.mode,
        "arch": _arch_fields(state.config),
        "label_sizes": list(state.model.label_sizes),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "best_metric": state.best_metric,
        "train_config": asdict(state.config),
        "model": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "rng": {"torch": torch.get_rng_state(), "seed": state.config.seed},
        "norm": None
        if state.norm_mean is None
        else {"mean": state.norm_mean, "std": state.norm_std},
    }
    path.write_bytes(pickle.dumps(_encode(payload), protocol=4))
    return path


def load_checkpoint(
    path: str | Path, expected_hash: str | None = None, force: bool = False
) -> dict:
    """Read a checkpoint archive back into plain arrays and metadata."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = _decode(pickle.loads(path.read_bytes()))
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unrecognized checkpoint format in {path}")
    if expected_hash is not None and payload["config_hash"] != expected_hash and not force:
        raise ConfigMismatchError(
            f"checkpoint config hash {payload['config_hash']} != expected {expected_hash} "
            f"(pass force=True to override)"
        )
    return payload


def _to_torch(obj):
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(obj)
    if isinstance(obj, dict):
        return {k: _to_torch(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_to_torch(v) for v in obj]
    return obj


def restore_state(payload: dict, config: TrainConfig) -> TrainState:
    """Rebuild a TrainState for resuming; the config must match the archive."""
    if payload["config_hash"] != config.hash():
        raise ConfigMismatchError("resume config differs from checkpoint config")
    state = make_state(config)
    state.model.load_state_dict(_to_torch(payload["model"]))
    state.optimizer.load_state_dict(_to_torch(payload["optimizer"]))
    state.epoch = int(payload["epoch"])
    state.global_step = int(payload["global_step"])
    state.best_metric = payload["best_metric"]
    if payload.get("norm"):
        state.norm_mean = payload["norm"]["mean"]
        state.norm_std = payload["norm"]["std"]
    torch.set_rng_state(torch.from_numpy(payload["rng"]["torch"]).to(torch.uint8))
    return state


def config_from_checkpoint(payload: dict) -> TrainConfig:
    raw = dict(payload["train_config"])
    raw["granularity_schedule"] = tuple(raw["granularity_schedule"])
    raw["widths"] = tuple(raw["widths"])
    return TrainConfig(**raw)


def model_from_checkpoint(payload: dict) -> tuple[ProgressiveNet, TrainConfig]:
    """Rebuild the trained network exactly as archived."""
    config = config_from_checkpoint(payload)
    model = build_model(config)
    model.load_state_dict(_to_torch(payload["model"]))
    model.eval()
    return model, config


def check_arch_compat(payload: dict, config: TrainConfig, force: bool = False) -> None:
    got = payload.get("arch", {})
    expect = _arch_fields(config)
    if got != expect and not force:
        diffs = {k: (got.get(k), expect[k]) for k in expect if got.get(k) != expect[k]}
        raise ConfigMismatchError(f"architecture mismatch {diffs} (pass force=True to override)")


def init_from_pretrained(model: ProgressiveNet, payload: dict, config: TrainConfig,
                         force: bool = False) -> list[str]:
    """Transfer backbone, conv-head and projector weights from a pretrain archive.

    Classifier heads keep their fresh initialization (their label space
    changes between modes).  Returns the names of transferred tensors.
    """
    check_arch_compat(payload, config, force=force)
    source = payload["model"]
    own = model.state_dict()
    transferred = []
    for name, value in source.items():
        if name.startswith("classifiers."):
            continue
        if name in own and tuple(own[name].shape) == tuple(value.shape):
            own[name] = torch.from_numpy(np.ascontiguousarray(value))
            transferred.append(name)
    model.load_state_dict(own)
    return transferred


# ---------------------------------------------------------------------------
# Full training loop
# ---------------------------------------------------------------------------


def run_training(
    config: TrainConfig,
    dataset: LoadedDataset,
    run_dir: str | Path,
    policy: AugmentationPolicy | None = None,
    init_checkpoint: str | Path | None = None,
    resume_checkpoint: str | Path | None = None,
    force_init: bool = False,
    epoch_callback: Callable[[dict], None] | None = None,
) -> Path:
    """Train to completion, appending one metrics row per epoch.

    Returns the final checkpoint path.  ``init_checkpoint`` warm-starts
    fine-tuning from a pretraining archive; ``resume_checkpoint`` continues
    an interrupted run of the same config.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    check_divisibility(dataset.images, config)
    if config.mode == "finetune" and config.num_classes is None:
        config.num_classes = dataset.num_classes
    policy = policy or AugmentationPolicy()

    if resume_checkpoint is not None:
        state = restore_state(load_checkpoint(resume_checkpoint), config)
    else:
        state = make_state(config)
        if init_checkpoint is not None:
            payload = load_checkpoint(init_checkpoint)
            init_from_pretrained(state.model, payload, config, force=force_init)

    metrics_path = run_dir / "metrics.jsonl"
    if resume_checkpoint is None and metrics_path.exists():
        metrics_path.unlink()
    ckpt_dir = run_dir / "checkpoints"
    n = len(dataset)
    mean, std = dataset.mean, dataset.std
    state.norm_mean, state.norm_std = mean, std
    start = time.time()

    with open(metrics_path, "a") as log:
        for epoch in range(state.epoch, config.epochs):
            lr = cosine_lr(epoch, config.epochs, config.lr_init)
            set_lr(state.optimizer, lr)
            order = _epoch_rng(config.seed, epoch, _TAG_ORDER).permutation(n)
            aug_rng = _epoch_rng(config.seed, epoch, _TAG_AUGMENT)
            puzzle_rng = _epoch_rng(config.seed, epoch, _TAG_PUZZLE)

            sums: dict[str, float] = {}
            counts: dict[str, int] = {}
            for bstart in range(0, n, config.batch_size):
                idx = order[bstart : bstart + config.batch_size]
                if len(idx) < 2:
                    continue  # batch statistics need at least two samples
                images = dataset.images[idx]
                if config.mode == "pretrain":
                    step_rows = pretrain_batch(
                        state, images, policy, aug_rng, puzzle_rng, mean, std
                    )
                else:
                    step_rows = finetune_batch(
                        state, images, dataset.labels[idx], puzzle_rng, mean, std
                    )
                for row in step_rows:
                    for key in ("loss_total", "loss_barlow", "loss_order"):
                        if key in row:
                            sums[key] = sums.get(key, 0.0) + row[key]
                            counts[key] = counts.get(key, 0) + 1

            state.epoch = epoch + 1
            record = {"epoch": epoch, "step": state.global_step}
            for key, total in sums.items():
                record[key] = total / counts[key]
            record["lr"] = lr
            record["wall_time"] = time.time() - start
            log.write(json.dumps(record) + "\n")
            log.flush()
            if epoch_callback is not None:
                epoch_callback(record)
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(state, ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt")

    return save_checkpoint(state, ckpt_dir / "final.ckpt")
