"""Learning the synthetic set by matching class embedding means.

Each iteration samples one network from the parameter distribution,
then per class: a real mini-batch, the full synthetic batch of that
class, and one augmentation. The loss is the sum over classes of the
squared distance between the two augmented embedding means; the
synthetic pixels follow its gradient.

Per-class randomness is keyed by (master seed, class, iteration), so
condensing a single class reproduces exactly what a joint run computes
for that class.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from . import container
from ._rng import derive_seed, numpy_gen, torch_gen
from .augment import AugmentationParams, apply_aug, default_strategies, sample_aug_params
from .data import LabeledImageSet, build_class_index
from .errors import ConfigError, ContractError, FormatError, TrainingError
from .networks import (ConvNet, EmbedderConfig, FlatEmbedder, SamplerStrategy,
                       config_for_dataset, sample_network)
from .report import RunReport, config_hash

MOMENTUM = 0.5


@dataclass
class SyntheticSet:
    """Learnable per-class images with fixed labels."""

    images: torch.Tensor
    labels: torch.Tensor
    ipc: int
    num_classes: int
    channel_mean: np.ndarray
    channel_std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = torch.bincount(self.labels, minlength=self.num_classes)
        present = counts[counts > 0]
        if present.numel() and not torch.all(present == self.ipc):
            raise ConfigError("every present class must hold exactly ipc images")

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.labels.tolist()))

    def class_slice(self, c: int) -> torch.Tensor:
        return self.images[self.labels == c]

    def as_labeled_set(self) -> LabeledImageSet:
        return LabeledImageSet(
            images=self.images.detach().clone(),
            labels=self.labels.clone(),
            num_classes=self.num_classes,
            channel_mean=self.channel_mean,
            channel_std=self.channel_std,
        )


def save_condensed(synth: SyntheticSet, path) -> None:
    meta = dict(synth.meta)
    meta.update({
        "kind": "condensed",
        "ipc": synth.ipc,
        "num_classes": synth.num_classes,
        "channel_mean": [float(v) for v in synth.channel_mean],
        "channel_std": [float(v) for v in synth.channel_std],
    })
    container.write_container(
        path,
        synth.images.detach().numpy(),
        synth.labels.numpy().astype(np.uint32),
        meta,
    )


def load_condensed(path) -> SyntheticSet:
    data, labels, meta = container.read_container(path)
    if data.ndim != 4:
        raise FormatError(f"{path}: condensed set must be rank 4, got {data.ndim}")
    try:
        ipc = int(meta["ipc"])
        num_classes = int(meta["num_classes"])
        mean = np.asarray(meta["channel_mean"], dtype=np.float64)
        std = np.asarray(meta["channel_std"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: missing/invalid metadata field: {e}") from e
    labels_t = torch.from_numpy(labels.astype(np.int64))
    if labels_t.numel() and int(labels_t.max()) >= num_classes:
        raise FormatError(f"{path}: label >= num_classes")
    counts = torch.bincount(labels_t, minlength=num_classes)
    if counts[counts > 0].numel() and not torch.all(counts[counts > 0] == ipc):
        raise FormatError(f"{path}: class counts do not match ipc={ipc}")
    extra = {k: v for k, v in meta.items()
             if k not in ("kind", "ipc", "num_classes",
                          "channel_mean", "channel_std")}
    return SyntheticSet(
        images=torch.from_numpy(data),
        labels=labels_t,
        ipc=ipc,
        num_classes=num_classes,
        channel_mean=mean,
        channel_std=std,
        meta=extra,
    )


@dataclass(frozen=True)
class CondenseConfig:
    iterations: int = 20000
    ipc: int = 1
    lr: float | None = None  # None -> 1 for ipc <= 50, 10 above
    batch_real: int = 256
    momentum: float = MOMENTUM
    arch: str = "convnet"
    embedder: EmbedderConfig = EmbedderConfig()
    sampler: SamplerStrategy = SamplerStrategy()
    strategies: tuple[str, ...] | None = None  # None -> dataset default
    classes: tuple[int, ...] | None = None  # None -> all classes
    net_samples_per_iter: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.ipc < 1:
            raise ConfigError("ipc must be >= 1")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.batch_real < 1:
            raise ConfigError("real batch size must be >= 1")
        if self.net_samples_per_iter < 1:
            raise ConfigError("net_samples_per_iter must be >= 1")

    def effective_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 10.0 if self.ipc >= 100 else 1.0


def init_synthetic(real: LabeledImageSet, ipc: int, seed: int,
                   classes: list[int] | None = None,
                   meta: dict | None = None) -> SyntheticSet:
    """Initialize synthetic images as copies of random real images."""
    if ipc < 1:
        raise ConfigError("ipc must be >= 1")
    index = build_class_index(real)
    classes = sorted(classes) if classes is not None else list(range(real.num_classes))
    chunks, labels = [], []
    for c in classes:
        pool = index[c]
        if not pool:
            raise ConfigError(f"class {c} has no real samples to initialize from")
        rng = numpy_gen(seed, "init_synthetic", c)
        pick = rng.choice(len(pool), size=ipc, replace=len(pool) < ipc)
        chunks.append(real.images[[pool[i] for i in pick]].clone())
        labels.extend([c] * ipc)
    return SyntheticSet(
        images=torch.cat(chunks),
        labels=torch.tensor(labels, dtype=torch.long),
        ipc=ipc,
        num_classes=real.num_classes,
        channel_mean=real.channel_mean,
        channel_std=real.channel_std,
        meta=meta or {},
    )


def dm_loss(net: nn.Module,
            real_batches: dict[int, torch.Tensor],
            synth_batches: dict[int, torch.Tensor],
            aug_params: dict[int, AugmentationParams]) -> torch.Tensor:
    """Sum over classes of squared distance between embedding means."""
    if set(real_batches) != set(synth_batches):
        raise ContractError(
            f"class mismatch: real {sorted(real_batches)} vs "
            f"synth {sorted(synth_batches)}")
    total = None
    for c in sorted(real_batches):
        term = _class_term(net, real_batches[c], synth_batches[c],
                           aug_params.get(c, AugmentationParams("identity")))
        total = term if total is None else total + term
    if total is None:
        raise ContractError("no classes to match")
    return total


def _class_term(net, real, synth, params):
    if real.shape[0] == 0 or synth.shape[0] == 0:
        raise ContractError("empty class batch")
    with torch.no_grad():
        mean_real = net.embed(apply_aug(params, real)).mean(dim=0)
    mean_synth = net.embed(apply_aug(params, synth)).mean(dim=0)
    return torch.sum((mean_real - mean_synth) ** 2)


def has_batch_norm(net: nn.Module) -> bool:
    return any(isinstance(m, nn.BatchNorm2d) for m in net.modules())


def set_norm_statistics(net: nn.Module, synth: SyntheticSet,
                        aug_params: dict[int, AugmentationParams] | None = None
                        ) -> nn.Module:
    """Estimate batch-norm running stats from all augmented synthetic images.

    One cumulative-average forward over the whole synthetic set in train
    mode; the statistics are then frozen (eval mode) for the per-class
    matching passes of the iteration.
    """
    if not has_batch_norm(net):
        raise ContractError("set_norm_statistics requires a batch-norm network")
    saved = []
    for m in net.modules():
        if isinstance(m, nn.BatchNorm2d):
            saved.append((m, m.momentum))
            m.reset_running_stats()
            m.momentum = None  # cumulative average over the single pass
    net.train()
    with torch.no_grad():
        batches = []
        for c in synth.classes:
            params = (aug_params or {}).get(c, AugmentationParams("identity"))
            batches.append(apply_aug(params, synth.class_slice(c).detach()))
        net.embed(torch.cat(batches))
    for m, momentum in saved:
        m.momentum = momentum
    net.eval()
    return net


def _sample_embedder(config: CondenseConfig, data_shape, num_classes: int,
                     iteration: int) -> nn.Module:
    if config.arch == "identity":
        return FlatEmbedder(data_shape, num_classes)
    emb_cfg = config_for_dataset(config.embedder, data_shape, num_classes)
    rng = torch_gen(config.seed, "net", iteration)
    nets = [sample_network(config.sampler, emb_cfg, rng)
            for _ in range(config.net_samples_per_iter)]
    return nets[0] if len(nets) == 1 else _AveragedEmbedder(nets)


class _AveragedEmbedder(nn.Module):
    """Averages the matching signal over several sampled networks."""

    def __init__(self, nets):
        super().__init__()
        self.nets = nn.ModuleList(nets)

    def embed(self, x):
        return torch.cat([n.embed(x) for n in self.nets], dim=1) / len(self.nets) ** 0.5


def condense(real: LabeledImageSet, config: CondenseConfig,
             callback=None, workers: int = 1) -> tuple[SyntheticSet, RunReport]:
    """Algorithm: iterate (sample net, sample batches + augs, step pixels).

    workers > 1 evaluates per-class loss terms in a thread pool; class
    gradients land in disjoint pixel slices, but only workers=1 is the
    bit-determinism reference.
    """
    config.validate()
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    cfg_dict = _config_dict(config)
    report = RunReport(command="condense", config=cfg_dict, seed=config.seed)
    synth = init_synthetic(real, config.ipc, config.seed,
                           classes=list(config.classes) if config.classes else None,
                           meta={"seed": config.seed,
                                 "config_hash": config_hash(cfg_dict)})
    index = build_class_index(real)
    classes = synth.classes
    strategies = (list(config.strategies) if config.strategies
                  else default_strategies(real.image_shape[0]))
    images = synth.images.clone().requires_grad_(True)
    labels = synth.labels
    slices = {c: (labels == c).nonzero(as_tuple=True)[0] for c in classes}
    opt = torch.optim.SGD([images], lr=config.effective_lr(),
                          momentum=config.momentum)
    losses: list[float] = []
    t0 = time.time()
    for k in range(config.iterations):
        net = _sample_embedder(config, real.image_shape, real.num_classes, k)
        net.train(False)

        aug_params = {
            c: sample_aug_params(strategies, torch_gen(config.seed, "aug", c, k),
                                 real.image_shape)
            for c in classes
        }
        if config.arch != "identity" and has_batch_norm(net):
            snapshot = replace(synth, images=images.detach(), labels=labels)
            set_norm_statistics(net, snapshot, aug_params)

        opt.zero_grad()

        def _one_class(c: int) -> tuple[int, float]:
            pool = index[c]
            rng = numpy_gen(config.seed, "real", c, k)
            pick = rng.choice(len(pool), size=config.batch_real,
                              replace=len(pool) < config.batch_real)
            real_batch = real.images[[pool[i] for i in pick]]
            term = _class_term(net, real_batch, images[slices[c]], aug_params[c])
            term.backward()
            return c, float(term.detach())

        if workers == 1:
            class_losses = dict(_one_class(c) for c in classes)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool_exec:
                class_losses = dict(pool_exec.map(_one_class, classes))
        total = sum(class_losses.values())
        if not np.isfinite(total):
            raise TrainingError(
                f"non-finite matching loss at iteration {k}: {class_losses}")
        opt.step()
        losses.append(total)
        if callback is not None:
            callback(k, total, class_losses)

    final = replace(synth, images=images.detach().clone())
    report.metrics = {
        "iterations": config.iterations,
        "final_loss": losses[-1] if losses else None,
        "loss_curve": {str(k): losses[k]
                       for k in range(0, len(losses), 100)} | (
            {str(len(losses) - 1): losses[-1]} if losses else {}),
        "classes": classes,
        "train_time_s": time.time() - t0,
    }
    return final, report.finish()


def _config_dict(config: CondenseConfig) -> dict:
    from dataclasses import asdict

    d = asdict(config)
    d["embedder"]["input_shape"] = list(d["embedder"]["input_shape"])
    if d.get("strategies") is not None:
        d["strategies"] = list(d["strategies"])
    if d.get("classes") is not None:
        d["classes"] = list(d["classes"])
    if d["sampler"].get("bucket") is not None:
        d["sampler"]["bucket"] = list(d["sampler"]["bucket"])
    d["lr_effective"] = config.effective_lr()
    return d
