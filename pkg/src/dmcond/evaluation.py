"""Train networks from scratch on a (condensed or coreset) set and
measure real-test accuracy under the repeated protocol.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._rng import derive_seed, numpy_gen, torch_gen
from .augment import apply_aug, default_strategies, sample_aug_params
from .data import LabeledImageSet
from .errors import ConfigError, ContractError, TrainingError
from .networks import build_arch

# Pinned training recipe for evaluation networks.
LR = 0.01
MOMENTUM = 0.9
WEIGHT_DECAY = 5e-4
DEFAULT_EPOCHS = 300


@dataclass(frozen=True)
class EvalProtocol:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = 256
    lr: float = LR
    momentum: float = MOMENTUM
    weight_decay: float = WEIGHT_DECAY
    augment: bool = True
    repeats: int = 5     # independent synthetic sets (R)
    nets_per_set: int = 20  # fresh networks per set (M)
    arch: str = "convnet"
    norm: str = "instance"
    seed: int = 0

    def validate(self) -> None:
        if self.repeats < 1 or self.nets_per_set < 1:
            raise ConfigError("repeats and nets_per_set must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class EvalResult:
    accuracies: list[float]
    arch: str
    wall_time_s: float = 0.0
    flags: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"arch": self.arch, "accuracies": self.accuracies,
                "mean": self.mean, "std": self.std,
                "wall_time_s": self.wall_time_s, **self.flags}


def train_on_set(train: LabeledImageSet, arch: str, protocol: EvalProtocol,
                 seed: int, norm: str | None = None) -> nn.Module:
    """SGD + cosine schedule from scratch; deterministic given seed."""
    net = build_arch(arch, train.image_shape, train.num_classes,
                     norm=norm or protocol.norm,
                     seed=derive_seed(seed, "eval_net_init"))
    return fit_network(net, train, protocol, seed)


def fit_network(net: nn.Module, train: LabeledImageSet,
                protocol: EvalProtocol, seed: int) -> nn.Module:
    """Fit an already-built network with the pinned recipe."""
    if len(train) == 0:
        raise ContractError("cannot train on an empty set")
    if protocol.epochs == 0:
        return net
    opt = torch.optim.SGD(net.parameters(), lr=protocol.lr,
                          momentum=protocol.momentum,
                          weight_decay=protocol.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, protocol.epochs)
    strategies = default_strategies(train.image_shape[0])
    n = len(train)
    batch = min(protocol.batch_size, n)
    net.train()
    for epoch in range(protocol.epochs):
        order = torch.randperm(n, generator=torch_gen(seed, "order", epoch))
        for b, lo in enumerate(range(0, n, batch)):
            idx = order[lo:lo + batch]
            x, y = train.images[idx], train.labels[idx]
            if protocol.augment:
                params = sample_aug_params(
                    strategies, torch_gen(seed, "eval_aug", epoch, b),
                    train.image_shape)
                x = apply_aug(params, x)
            opt.zero_grad()
            loss = F.cross_entropy(net(x), y)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch}, batch {b} "
                    f"(n={n})")
            loss.backward()
            opt.step()
        sched.step()
    net.eval()
    return net


@torch.no_grad()
def accuracy(net: nn.Module, test: LabeledImageSet, batch: int = 512) -> float:
    net.eval()
    correct = 0
    for lo in range(0, len(test), batch):
        x = test.images[lo:lo + batch]
        y = test.labels[lo:lo + batch]
        correct += int((net(x).argmax(dim=1) == y).sum())
    return correct / len(test)


def evaluate_synthetic(train_sets: list[LabeledImageSet],
                       test: LabeledImageSet,
                       protocol: EvalProtocol,
                       norm: str | None = None) -> EvalResult:
    """Train nets_per_set fresh networks on each set; aggregate all runs."""
    protocol.validate()
    if not train_sets:
        raise ContractError("need at least one training set")
    sizes = {len(s) for s in train_sets}
    if len(sizes) != 1:
        raise ContractError(f"mixed set sizes across repeats: {sorted(sizes)}")
    t0 = time.time()
    accs = []
    for r, train in enumerate(train_sets):
        for m in range(protocol.nets_per_set):
            seed = derive_seed(protocol.seed, "eval_run", r, m)
            net = train_on_set(train, protocol.arch, protocol, seed, norm=norm)
            accs.append(accuracy(net, test))
    return EvalResult(accuracies=accs, arch=protocol.arch,
                      wall_time_s=time.time() - t0)


def cross_architecture_eval(train_set: LabeledImageSet,
                            test: LabeledImageSet,
                            train_arch_label: str,
                            test_archs: list[str],
                            protocol: EvalProtocol) -> dict[str, EvalResult]:
    """Evaluate one learned set on several architectures (batch norm)."""
    from dataclasses import replace

    results = {}
    for arch in test_archs:
        arch_protocol = replace(protocol, arch=arch, norm="batch")
        results[arch] = evaluate_synthetic([train_set], test, arch_protocol)
        results[arch].flags["train_arch"] = train_arch_label
    return results
