"""Dataset manifests, stratified splits, and the synthetic texture dataset.

A dataset is a directory containing images plus a CSV manifest with the
exact header ``path,label`` (paths relative to the manifest's directory).
Optional sidecars in the same directory:

* ``classes.json`` -- ordered class names (fixes the label range),
* ``stats.json``   -- cached per-channel mean/std,
* ``motifs.json``  -- per-image bounding boxes of the class-defining motif
  (written by the synthetic generator, consumed by localization checks).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DivisibilityError, ManifestError, ParseError, StratifyError

MANIFEST_HEADER = "path,label"


@dataclass
class DatasetManifest:
    """Parsed manifest: (relative path, label) records plus sidecar metadata."""

    entries: list[tuple[str, int]]
    class_names: list[str]
    dataset_id: str
    root: Path
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    motif_boxes: dict[str, tuple[int, int, int, int]] | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.entries], dtype=np.int64)

    def resolve(self, rel_path: str) -> Path:
        return self.root / rel_path


@dataclass
class SplitSpec:
    """Train/test split parameters."""

    train_fraction: float = 0.7
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


def _read_sidecar(root: Path, name: str):
    path = root / name
    if path.exists():
        with open(path) as fh:
            return json.load(fh)
    return None


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    """Parse a CSV manifest and its sidecars.

    Raises ParseError (with the offending line number) on malformed rows or
    out-of-range labels, and ManifestError listing every missing image file.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ParseError(f"manifest must start with header '{MANIFEST_HEADER}'", line=1)

    class_names = _read_sidecar(root, "classes.json")
    declared_m = len(class_names) if class_names else None

    entries: list[tuple[str, int]] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        row = raw.strip()
        if not row:
            continue
        parts = row.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 'path,label', got {row!r}", line=lineno)
        rel, label_s = parts[0].strip(), parts[1].strip()
        try:
            label = int(label_s)
        except ValueError:
            raise ParseError(f"label {label_s!r} is not an integer", line=lineno) from None
        if label < 0 or (declared_m is not None and label >= declared_m):
            hi = declared_m if declared_m is not None else "inf"
            raise ParseError(f"label {label} outside [0, {hi})", line=lineno)
        if rel in seen:
            raise ParseError(f"duplicate path {rel!r}", line=lineno)
        seen.add(rel)
        entries.append((rel, label))

    if declared_m is None:
        m = (max(label for _, label in entries) + 1) if entries else 0
        class_names = [f"class{i}" for i in range(m)]

    if check_files:
        missing = [rel for rel, _ in entries if not (root / rel).exists()]
        if missing:
            raise ManifestError(
                f"{len(missing)} image file(s) missing under {root}", missing=missing
            )

    stats = _read_sidecar(root, "stats.json")
    mean = np.asarray(stats["mean"], dtype=np.float32) if stats else None
    std = np.asarray(stats["std"], dtype=np.float32) if stats else None
    motifs = _read_sidecar(root, "motifs.json")
    if motifs is not None:
        motifs = {k: tuple(v) for k, v in motifs.items()}
    return DatasetManifest(
        entries=entries,
        class_names=list(class_names),
        dataset_id=f"{root.name}/{path.stem}",
        root=root,
        mean=mean,
        std=std,
        motif_boxes=motifs,
    )


def save_manifest(entries: list[tuple[str, int]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [MANIFEST_HEADER] + [f"{rel},{label}" for rel, label in entries]
    path.write_text("\n".join(lines) + "\n")
    return path


def _derive(manifest: DatasetManifest, entries, suffix) -> DatasetManifest:
    return DatasetManifest(
        entries=entries,
        class_names=manifest.class_names,
        dataset_id=f"{manifest.dataset_id}:{suffix}",
        root=manifest.root,
        mean=manifest.mean,
        std=manifest.std,
        motif_boxes=manifest.motif_boxes,
    )


def stratified_split(
    manifest: DatasetManifest, spec: SplitSpec
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic disjoint+exhaustive split honoring per-class fractions.

    Per-class train counts are ``round(fraction * n_c)`` clamped so both
    sides keep at least one sample, which stays within one sample of the
    global fraction for any class of size >= 2.
    """
    rng = np.random.default_rng(spec.seed)
    n = len(manifest.entries)
    if n < 2:
        raise StratifyError(f"cannot split {n} samples")
    if not spec.stratified:
        order = rng.permutation(n)
        n_train = min(max(int(round(spec.train_fraction * n)), 1), n - 1)
        train_idx, test_idx = order[:n_train], order[n_train:]
    else:
        labels = manifest.labels()
        train_parts, test_parts = [], []
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            if len(idx) < 2:
                raise StratifyError(f"class {c} has {len(idx)} sample(s); need at least 2")
            idx = idx[rng.permutation(len(idx))]
            n_train = min(max(int(round(spec.train_fraction * len(idx))), 1), len(idx) - 1)
            train_parts.append(idx[:n_train])
            test_parts.append(idx[n_train:])
        train_idx = np.sort(np.concatenate(train_parts))
        test_idx = np.sort(np.concatenate(test_parts))
    train = _derive(manifest, [manifest.entries[i] for i in train_idx], "train")
    test = _derive(manifest, [manifest.entries[i] for i in test_idx], "test")
    return train, test


# ---------------------------------------------------------------------------
# Synthetic fine-grained texture dataset
# ---------------------------------------------------------------------------

# Class identity is a small oriented grating stamped somewhere on a shared
# low-frequency color background.  Orientation is the only class-dependent
# property, so pixel histograms carry (almost) no class signal while local
# texture carries all of it -- and the signal survives patch shuffling.
# Orientations of the classes span ORIENTATION_SPAN*pi in total, with
# per-image jitter, so neighboring classes genuinely overlap at the tails.
# Per-image contrast spans AMPLITUDE_RANGE, making accuracy a graded
# function of a model's detection threshold instead of an all-or-nothing
# feature-discovery race.  Wavelengths stay resolvable after one stride-2
# layer.
DEFAULT_MOTIF_SIZE = 28
DEFAULT_AMPLITUDE_RANGE = (0.25, 0.70)
DEFAULT_BACKGROUND_AMPLITUDE = 0.30
DEFAULT_NOISE_SIGMA = 0.12
DEFAULT_WAVELENGTHS = (7.0, 11.0)
DEFAULT_ORIENTATION_JITTER = 0.10
DEFAULT_ORIENTATION_SPAN = 0.5


def _bilinear_up(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    t = torch.from_numpy(grid.astype(np.float32)).permute(2, 0, 1)[None]
    t = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=True)
    return t[0].permute(1, 2, 0).numpy()


def generate_synthetic_images(
    num_classes: int,
    per_class: int,
    image_size: int,
    seed: int,
    motif_size: int = DEFAULT_MOTIF_SIZE,
    amplitude_range: tuple[float, float] = DEFAULT_AMPLITUDE_RANGE,
    background_amplitude: float = DEFAULT_BACKGROUND_AMPLITUDE,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    wavelength_range: tuple[float, float] = DEFAULT_WAVELENGTHS,
    orientation_jitter: float = DEFAULT_ORIENTATION_JITTER,
    orientation_span: float = DEFAULT_ORIENTATION_SPAN,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generate the dataset in memory.

    Returns (images, labels, boxes): images (N, H, W, 3) float32 in [0, 1],
    labels (N,), boxes (N, 4) motif bounds as (top, left, bottom, right).
    Pure in its arguments: image i depends only on (seed, i).
    """
    if image_size % 32 != 0:
        raise DivisibilityError(f"image_size {image_size} must be a multiple of 32")
    if motif_size >= image_size:
        raise ValueError(f"motif_size {motif_size} must be smaller than image_size")
    n_total = num_classes * per_class
    images = np.empty((n_total, image_size, image_size, 3), dtype=np.float32)
    labels = np.empty(n_total, dtype=np.int64)
    boxes = np.empty((n_total, 4), dtype=np.int64)

    yy, xx = np.mgrid[0:motif_size, 0:motif_size].astype(np.float64)
    hann = np.outer(
        0.5 - 0.5 * np.cos(2 * np.pi * np.arange(motif_size) / (motif_size - 1)),
        0.5 - 0.5 * np.cos(2 * np.pi * np.arange(motif_size) / (motif_size - 1)),
    )

    for idx in range(n_total):
        label = idx // per_class
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))

        nodes = max(4, image_size // 8)
        coarse = rng.uniform(-1.0, 1.0, size=(nodes, nodes, 3))
        img = 0.5 + background_amplitude * _bilinear_up(coarse, image_size, image_size)

        theta = math.pi * orientation_span * label / num_classes + rng.uniform(
            -orientation_jitter, orientation_jitter
        )
        wavelength = rng.uniform(*wavelength_range)
        phase = rng.uniform(0.0, 2 * math.pi)
        amplitude = rng.uniform(*amplitude_range)
        grating = np.sin(
            2 * math.pi * (xx * math.cos(theta) + yy * math.sin(theta)) / wavelength + phase
        )
        top = int(rng.integers(2, image_size - motif_size - 1))
        left = int(rng.integers(2, image_size - motif_size - 1))
        img[top : top + motif_size, left : left + motif_size] += (
            amplitude * (hann * grating)[..., None]
        )

        img += rng.normal(0.0, noise_sigma, size=img.shape)
        images[idx] = np.clip(img, 0.0, 1.0)
        labels[idx] = label
        boxes[idx] = (top, left, top + motif_size, left + motif_size)

    return images, labels, boxes


def synth_dataset(
    num_classes: int,
    per_class: int,
    image_size: int,
    seed: int,
    out_dir: str | Path,
    **generator_kwargs,
) -> Path:
    """Write the synthetic dataset (PNGs + manifest + sidecars); returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    images, labels, boxes = generate_synthetic_images(
        num_classes, per_class, image_size, seed, **generator_kwargs
    )
    entries = []
    motifs = {}
    quantized = np.empty_like(images)
    for i in range(len(images)):
        rel = f"images/img_{i:04d}.png"
        arr = (images[i] * 255.0).round().astype(np.uint8)
        Image.fromarray(arr).save(out_dir / rel)
        quantized[i] = arr.astype(np.float32) / 255.0
        entries.append((rel, int(labels[i])))
        motifs[rel] = [int(v) for v in boxes[i]]

    manifest_path = save_manifest(entries, out_dir / "manifest.csv")
    with open(out_dir / "classes.json", "w") as fh:
        json.dump([f"class{i}" for i in range(num_classes)], fh)
    with open(out_dir / "stats.json", "w") as fh:
        json.dump(
            {
                "mean": quantized.mean(axis=(0, 1, 2)).tolist(),
                "std": quantized.std(axis=(0, 1, 2)).tolist(),
            },
            fh,
        )
    with open(out_dir / "motifs.json", "w") as fh:
        json.dump(motifs, fh)
    return manifest_path


@dataclass
class LoadedDataset:
    """All images of a manifest resident in memory."""

    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: list[str]
    paths: list[str]
    dataset_id: str
    mean: np.ndarray
    std: np.ndarray
    motif_boxes: dict[str, tuple[int, int, int, int]] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def load_images(manifest: DatasetManifest) -> LoadedDataset:
    """Load every manifest image as float32 in [0, 1]; compute stats if uncached."""
    arrays = []
    for rel, _ in manifest.entries:
        with Image.open(manifest.resolve(rel)) as im:
            arrays.append(np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)
    images = np.stack(arrays)
    mean = manifest.mean if manifest.mean is not None else images.mean(axis=(0, 1, 2))
    std = manifest.std if manifest.std is not None else images.std(axis=(0, 1, 2))
    return LoadedDataset(
        images=images,
        labels=manifest.labels(),
        class_names=manifest.class_names,
        paths=[rel for rel, _ in manifest.entries],
        dataset_id=manifest.dataset_id,
        mean=np.asarray(mean, dtype=np.float32),
        std=np.maximum(np.asarray(std, dtype=np.float32), 1e-6),
        motif_boxes=manifest.motif_boxes,
    )
