"""Coreset baselines: per-class random selection and greedy herding."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ._rng import numpy_gen
from .data import LabeledImageSet, build_class_index
from .errors import SelectionError


def select_random_indices(real: LabeledImageSet, ipc: int,
                          seed: int) -> dict[int, list[int]]:
    index = build_class_index(real)
    selection = {}
    for c in range(real.num_classes):
        pool = index[c]
        if not pool:
            continue
        if len(pool) < ipc:
            raise SelectionError(
                f"class {c} has {len(pool)} samples, cannot select {ipc}")
        rng = numpy_gen(seed, "random_coreset", c)
        pick = rng.choice(len(pool), size=ipc, replace=False)
        selection[c] = [pool[i] for i in pick]
    return selection


def random_coreset(real: LabeledImageSet, ipc: int,
                   seed: int) -> LabeledImageSet:
    """ipc uniform without-replacement samples per class."""
    selection = select_random_indices(real, ipc, seed)
    flat = [i for c in sorted(selection) for i in selection[c]]
    return real.subset(flat)


@torch.no_grad()
def _embed_all(net: nn.Module, images: torch.Tensor,
               batch: int = 512) -> torch.Tensor:
    net.eval()
    return torch.cat([net.embed(images[lo:lo + batch])
                      for lo in range(0, images.shape[0], batch)])


def select_herding_indices(real: LabeledImageSet, ipc: int,
                           embed_net: nn.Module) -> dict[int, list[int]]:
    """Greedy: keep the selected-set embedding mean close to the class mean.

    At step t pick the unselected x minimizing
    ||mu_class - mean(selected + {x})||; ties break to the lowest index.
    """
    index = build_class_index(real)
    selection: dict[int, list[int]] = {}
    for c in range(real.num_classes):
        pool = index[c]
        if not pool:
            continue
        if len(pool) < ipc:
            raise SelectionError(
                f"class {c} has {len(pool)} samples, cannot select {ipc}")
        emb = _embed_all(embed_net, real.images[pool]).double()
        mu = emb.mean(dim=0)
        chosen: list[int] = []
        running_sum = torch.zeros_like(mu)
        taken = torch.zeros(len(pool), dtype=torch.bool)
        for t in range(ipc):
            cand_mean = (running_sum.unsqueeze(0) + emb) / (t + 1)
            dist = torch.linalg.norm(cand_mean - mu.unsqueeze(0), dim=1)
            dist[taken] = float("inf")
            # numpy argmin guarantees the first (lowest-index) minimum
            best = int(np.argmin(dist.numpy()))
            taken[best] = True
            running_sum += emb[best]
            chosen.append(pool[best])
        selection[c] = chosen
    return selection


def herding_coreset(real: LabeledImageSet, ipc: int,
                    embed_net: nn.Module) -> LabeledImageSet:
    selection = select_herding_indices(real, ipc, embed_net)
    flat = [i for c in sorted(selection) for i in selection[c]]
    return real.subset(flat)
