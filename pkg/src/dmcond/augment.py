"""Differentiable paired augmentation.

One transform is sampled per class per iteration and applied with the
exact same parameters to the real and the synthetic batch, so the two
embedding means stay comparable. Every op is a pure, differentiable
function of the input pixels given its parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from ._rng import torch_gen
from .errors import ConfigError

OP_KINDS = ("crop", "cutout", "flip", "scale", "rotate", "color_brightness",
            "color_saturation", "color_contrast", "noise", "identity")

SCALE_RANGE = (0.8, 1.2)
ROTATE_RANGE = (-15.0, 15.0)
BRIGHTNESS_AMP = 1.0
SATURATION_AMP = 2.0
CONTRAST_AMP = 0.5
NOISE_AMP = 0.001

COLOR_OPS = ("color_brightness", "color_saturation", "color_contrast")

DEFAULT_COLOR_STRATEGIES = ["color_brightness", "color_saturation",
                            "color_contrast", "crop", "cutout", "flip",
                            "scale", "rotate"]
DEFAULT_GRAY_STRATEGIES = ["crop", "scale", "rotate", "noise"]


@dataclass(frozen=True)
class AugmentationParams:
    """A fully sampled transform; applying it twice gives identical maps."""

    kind: str
    values: dict = field(default_factory=dict)
    seed: int = 0


def default_strategies(channels: int) -> list[str]:
    """DSA-style op family; color ops are undefined on grayscale input."""
    if channels == 1:
        return list(DEFAULT_GRAY_STRATEGIES)
    return list(DEFAULT_COLOR_STRATEGIES)


def _uniform(rng: torch.Generator, lo: float, hi: float) -> float:
    return lo + (hi - lo) * torch.rand((), generator=rng).item()


def sample_aug_params(strategy_list: list[str], rng: torch.Generator,
                      image_shape: tuple[int, int, int]) -> AugmentationParams:
    """Uniformly pick an op kind and draw its parameters."""
    if not strategy_list:
        raise ConfigError("strategy list must be nonempty")
    for kind in strategy_list:
        if kind not in OP_KINDS:
            raise ConfigError(f"unknown augmentation op {kind!r}")
    c, h, w = image_shape
    kind = strategy_list[int(torch.randint(0, len(strategy_list), (),
                                           generator=rng).item())]
    values: dict = {}
    seed = 0
    if kind == "crop":
        m = math.ceil(h / 8)
        values["dy"] = int(torch.randint(-m, m + 1, (), generator=rng).item())
        values["dx"] = int(torch.randint(-m, m + 1, (), generator=rng).item())
    elif kind == "cutout":
        values["cy"] = int(torch.randint(0, h, (), generator=rng).item())
        values["cx"] = int(torch.randint(0, w, (), generator=rng).item())
    elif kind == "flip":
        values["flip"] = bool(torch.rand((), generator=rng).item() < 0.5)
    elif kind == "scale":
        values["factor"] = _uniform(rng, *SCALE_RANGE)
    elif kind == "rotate":
        values["degrees"] = _uniform(rng, *ROTATE_RANGE)
    elif kind == "color_brightness":
        values["delta"] = (_uniform(rng, 0.0, 1.0) - 0.5) * BRIGHTNESS_AMP
    elif kind == "color_saturation":
        values["factor"] = _uniform(rng, 0.0, 1.0) * SATURATION_AMP
    elif kind == "color_contrast":
        values["factor"] = _uniform(rng, 0.0, 1.0) + CONTRAST_AMP
    elif kind == "noise":
        seed = int(torch.randint(0, 2**62, (), generator=rng).item())
    return AugmentationParams(kind=kind, values=values, seed=seed)


def _affine(batch: torch.Tensor, theta_2x3: list[list[float]]) -> torch.Tensor:
    theta = torch.tensor(theta_2x3, dtype=batch.dtype,
                         device=batch.device).expand(batch.shape[0], 2, 3)
    grid = F.affine_grid(theta, list(batch.shape), align_corners=False)
    return F.grid_sample(batch, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def apply_aug(params: AugmentationParams, batch: torch.Tensor) -> torch.Tensor:
    """Apply the transform to a [B, C, H, W] batch; shape-preserving."""
    if batch.ndim != 4:
        raise ConfigError(f"expected [B, C, H, W] batch, got {tuple(batch.shape)}")
    _, c, h, w = batch.shape
    kind, v = params.kind, params.values
    if kind == "identity":
        return batch
    if kind == "crop":
        m = math.ceil(h / 8)
        dy, dx = int(v["dy"]), int(v["dx"])
        _check(abs(dy) <= m and abs(dx) <= m,
               f"crop shift ({dy},{dx}) exceeds +-{m}")
        padded = F.pad(batch, (m, m, m, m))
        return padded[:, :, m + dy:m + dy + h, m + dx:m + dx + w]
    if kind == "cutout":
        cy, cx = int(v["cy"]), int(v["cx"])
        _check(0 <= cy < h and 0 <= cx < w, "cutout center outside image")
        half = h // 4  # box side h // 2
        mask = torch.ones(h, w, dtype=batch.dtype, device=batch.device)
        y0, y1 = max(cy - half, 0), min(cy + half, h)
        x0, x1 = max(cx - half, 0), min(cx + half, w)
        mask[y0:y1, x0:x1] = 0.0
        return batch * mask
    if kind == "flip":
        return torch.flip(batch, dims=[3]) if v["flip"] else batch
    if kind == "scale":
        s = float(v["factor"])
        _check(SCALE_RANGE[0] <= s <= SCALE_RANGE[1],
               f"scale factor {s} outside {SCALE_RANGE}")
        return _affine(batch, [[1.0 / s, 0.0, 0.0], [0.0, 1.0 / s, 0.0]])
    if kind == "rotate":
        deg = float(v["degrees"])
        _check(ROTATE_RANGE[0] <= deg <= ROTATE_RANGE[1],
               f"rotation {deg} outside {ROTATE_RANGE}")
        rad = math.radians(deg)
        cos_a, sin_a = math.cos(rad), math.sin(rad)
        return _affine(batch, [[cos_a, -sin_a, 0.0], [sin_a, cos_a, 0.0]])
    if kind == "color_brightness":
        delta = float(v["delta"])
        _check(abs(delta) <= BRIGHTNESS_AMP / 2,
               f"brightness delta {delta} outside range")
        return batch + delta
    if kind == "color_saturation":
        s = float(v["factor"])
        _check(0.0 <= s <= SATURATION_AMP, f"saturation {s} outside range")
        gray = batch.mean(dim=1, keepdim=True)
        return (batch - gray) * s + gray
    if kind == "color_contrast":
        s = float(v["factor"])
        _check(CONTRAST_AMP <= s <= 1.0 + CONTRAST_AMP,
               f"contrast {s} outside range")
        mean = batch.mean(dim=(1, 2, 3), keepdim=True)
        return (batch - mean) * s + mean
    if kind == "noise":
        g = torch_gen(params.seed, "aug_noise")
        noise = torch.randn(batch.shape, generator=g).to(batch.dtype)
        return batch + NOISE_AMP * noise
    raise ConfigError(f"unknown augmentation op {kind!r}")
