"""Image-grid export of a condensed set (one row per class)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .condenser import SyntheticSet
from .data import denormalize


def export_grid(synth: SyntheticSet, path: str | Path, pad: int = 2) -> None:
    """Write a PNG grid: classes as rows, the ipc images as columns.

    Pixels are denormalized and clamped to [0, 1] for display.
    """
    raw = denormalize(synth.images.detach(), synth.channel_mean,
                      synth.channel_std).clamp(0.0, 1.0)
    classes = synth.classes
    _, c, h, w = raw.shape
    rows, cols = len(classes), synth.ipc
    canvas = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad, 3),
                     dtype=np.float32)
    for r, cls in enumerate(classes):
        block = raw[synth.labels == cls]
        for col in range(min(cols, block.shape[0])):
            img = block[col].numpy()
            if c == 1:
                img = np.repeat(img, 3, axis=0)
            y0 = pad + r * (h + pad)
            x0 = pad + col * (w + pad)
            canvas[y0:y0 + h, x0:x0 + w] = img.transpose(1, 2, 0)
    Image.fromarray((canvas * 255).round().astype(np.uint8)).save(path)
