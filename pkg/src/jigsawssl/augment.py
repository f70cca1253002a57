"""Stochastic distortion pipeline for the regularized view, plus eval preprocessing.

The distorted branch applies, in order: random resized crop, horizontal
flip, color jitter, grayscale, Gaussian blur and solarization, each gated by
a probability from the policy.  Everything is driven by an explicit
``numpy.random.Generator`` so two calls with the same state are identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import gaussian_filter

from .errors import InputError, ShapeError

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class AugmentationPolicy:
    """Probabilities and parameter ranges for the distortion pipeline."""

    crop_scale: tuple[float, float] = (0.6, 1.0)
    crop_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    solarize_prob: float = 0.1
    solarize_threshold: float = 0.5

    def __post_init__(self):
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def _resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if img.shape[0] == out_h and img.shape[1] == out_w:
        return img
    # antialiasing only affects (and only costs) downscaling
    anti = out_h < img.shape[0] or out_w < img.shape[1]
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]
    t = F.interpolate(t, size=(out_h, out_w), mode="bilinear", align_corners=False, antialias=anti)
    return t[0].permute(1, 2, 0).numpy()


def _sample_crop(h, w, scale, ratio, rng):
    """Random-resized-crop box; falls back to the full center crop."""
    area = h * w
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target = area * float(rng.uniform(scale[0], scale[1]))
        ar = math.exp(float(rng.uniform(*log_ratio)))
        cw = int(math.sqrt(target * ar) + 0.5)
        ch = int(math.sqrt(target / ar) + 0.5)
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # center-crop fallback, aspect clamped into the allowed ratio range
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw, ch = w, min(h, round(w / ratio[0]))
    elif in_ratio > ratio[1]:
        ch, cw = h, min(w, round(h * ratio[1]))
    else:
        cw, ch = w, h
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _rgb_to_hsv(img):
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    diff = mx - mn
    safe = np.where(diff == 0, 1.0, diff)
    h = np.where(
        mx == r,
        ((g - b) / safe) % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(diff == 0, 0.0, h) / 6.0
    s = np.where(mx == 0, 0.0, diff / np.where(mx == 0, 1.0, mx))
    return h, s, mx


def _hsv_to_rgb(h, s, v):
    # closed form: channel(n) = V - V*S*clip(min(k, 4-k), 0, 1), k = (n+6H) mod 6
    def channel(n):
        k = (n + h * 6.0) % 6.0
        return v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)

    return np.stack([channel(5.0), channel(3.0), channel(1.0)], axis=-1)


def _luminance(img):
    if img.shape[2] == 3:
        return img @ _LUMA.astype(img.dtype)
    return img.mean(axis=2)


def distort(
    img: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Apply the distortion pipeline; output has the input's shape, in [0, 1]."""
    if img.ndim != 3:
        raise ShapeError(f"expected H x W x C image, got shape {img.shape}")
    h, w, _ = img.shape
    out = np.asarray(img, dtype=np.float32)

    top, left, ch, cw = _sample_crop(h, w, policy.crop_scale, policy.crop_ratio, rng)
    out = _resize_bilinear(out[top : top + ch, left : left + cw], h, w)

    if rng.random() < policy.flip_prob:
        out = out[:, ::-1].copy()

    if rng.random() < policy.jitter_prob:
        f = rng.uniform(max(0.0, 1 - policy.brightness), 1 + policy.brightness)
        out = out * f
        f = rng.uniform(max(0.0, 1 - policy.contrast), 1 + policy.contrast)
        gray_mean = _luminance(np.clip(out, 0, 1)).mean()
        out = (out - gray_mean) * f + gray_mean
        f = rng.uniform(max(0.0, 1 - policy.saturation), 1 + policy.saturation)
        gray = _luminance(np.clip(out, 0, 1))[..., None]
        out = gray + (out - gray) * f
        shift = rng.uniform(-policy.hue, policy.hue)
        if shift != 0.0 and out.shape[2] == 3:
            hh, ss, vv = _rgb_to_hsv(np.clip(out, 0, 1).astype(np.float64))
            out = _hsv_to_rgb((hh + shift) % 1.0, ss, vv).astype(np.float32)

    if rng.random() < policy.grayscale_prob:
        out = np.repeat(_luminance(np.clip(out, 0, 1))[..., None], out.shape[2], axis=2)
        out = out.astype(np.float32)

    if rng.random() < policy.blur_prob:
        sigma = rng.uniform(*policy.blur_sigma)
        out = gaussian_filter(out, sigma=(sigma, sigma, 0))

    if rng.random() < policy.solarize_prob:
        thr = policy.solarize_threshold
        out = np.where(out >= thr, 1.0 - out, out)

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def normalize(img: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Per-channel standardization; accepts a single image or a batch."""
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return (img.astype(np.float32) - mean) / std


def eval_transform(
    img: np.ndarray,
    resize_to: int = 256,
    crop_size: int = 224,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
) -> np.ndarray:
    """Deterministic eval preprocessing: resize shorter side, center crop, normalize.

    Accepts uint8 or float arrays; floats are assumed already in [0, 1].
    """
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise InputError(f"expected an H x W or H x W x C image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < 32 or w < 32:
        raise InputError(f"image {h}x{w} is smaller than the 32x32 minimum")
    out = img.astype(np.float32)
    if np.issubdtype(img.dtype, np.integer):
        out = out / 255.0
    short = min(h, w)
    if short != resize_to:
        scale = resize_to / short
        out = _resize_bilinear(out, int(round(h * scale)), int(round(w * scale)))
    h2, w2 = out.shape[:2]
    if h2 < crop_size or w2 < crop_size:
        raise InputError(f"resized image {h2}x{w2} cannot fit a {crop_size} center crop")
    top = (h2 - crop_size) // 2
    left = (w2 - crop_size) // 2
    out = out[top : top + crop_size, left : left + crop_size]
    out = np.clip(out, 0.0, 1.0)
    if mean is not None and std is not None:
        out = normalize(out, mean, std)
    return np.ascontiguousarray(out, dtype=np.float32)


def no_op_policy() -> AugmentationPolicy:
    """Policy with every stochastic op disabled; distort becomes the identity."""
    return AugmentationPolicy(
        crop_scale=(1.0, 1.0),
        crop_ratio=(1.0, 1.0),
        flip_prob=0.0,
        jitter_prob=0.0,
        grayscale_prob=0.0,
        blur_prob=0.0,
        solarize_prob=0.0,
    )
