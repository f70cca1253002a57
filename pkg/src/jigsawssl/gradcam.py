"""Gradient-weighted class activation maps over the backbone stages.

The class score is the target entry of the summed step logits (the same
combination inference uses).  Channel weights are the spatially averaged
gradients at the chosen backbone layer; the weighted activation sum is
rectified, bilinearly upsampled to the input size and min-max normalized.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import StepError
from .network import ProgressiveNet


def grad_cam(
    model: ProgressiveNet,
    image: np.ndarray,
    target_class: int,
    stage: int | None = None,
    mean=None,
    std=None,
) -> np.ndarray:
    """Heatmap (H x W, values in [0, 1]) for ``target_class`` at one backbone layer.

    ``stage`` indexes :meth:`ProgressiveNet.gradcam_layers` 1-based; the
    default is the last layer.  A map with no positive contribution comes
    back all zero; otherwise the maximum is exactly 1.
    """
    layers = model.gradcam_layers()
    if stage is None:
        stage = len(layers)
    if not 1 <= stage <= len(layers):
        raise StepError(f"stage {stage} outside [1, {len(layers)}]")
    _, layer = layers[stage - 1]

    arr = image.astype(np.float32)
    if mean is not None and std is not None:
        arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    x = torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)[None]

    # combined_logits forwards the backbone once per step, so the hooked
    # layer can fire several times on identical inputs; the score's total
    # gradient w.r.t. that layer's output is the sum over all fires.
    activations: list[torch.Tensor] = []
    gradients: list[torch.Tensor] = []

    def forward_hook(_module, _inputs, out):
        activations.append(out)
        out.register_hook(gradients.append)

    handle = layer.register_forward_hook(forward_hook)
    try:
        model.eval()
        model.zero_grad(set_to_none=True)
        logits = model.combined_logits(x)
        logits[0, target_class].backward()
    finally:
        handle.remove()

    act = activations[0].detach()
    grad = sum(gradients).detach()
    weights = grad.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * act).sum(dim=1, keepdim=True))
    cam = F.interpolate(
        cam, size=image.shape[:2], mode="bilinear", align_corners=False
    )[0, 0].numpy()
    peak = cam.max()
    if peak <= 0:
        return np.zeros_like(cam)
    cam = cam - cam.min()
    return cam / cam.max()


def heatmap_mass_split(
    cam: np.ndarray, box: tuple[int, int, int, int]
) -> tuple[float, float]:
    """Total heatmap mass inside vs outside a (top, left, bottom, right) box."""
    top, left, bottom, right = box
    inside = float(cam[top:bottom, left:right].sum())
    return inside, float(cam.sum()) - inside
