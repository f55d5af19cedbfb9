"""Embedding/classification networks and the distribution they are drawn from.

The workhorse is a ConvNet of repeated (conv 3x3 -> norm -> activation ->
pool) blocks followed by a single linear head. `embed` returns the
flattened final block output; the head is used for evaluation only, not
for the matching loss.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import container
from ._rng import torch_gen
from .errors import ConfigError, SamplerError, ShapeError

ACTIVATIONS = ("sigmoid", "relu", "leakyrelu")
NORMS = ("none", "batch", "layer", "instance", "group")
POOLINGS = ("none", "max", "avg")

GROUP_NORM_GROUPS = 4


@dataclass(frozen=True)
class EmbedderConfig:
    depth: int = 3
    width: int = 128
    activation: str = "relu"
    norm: str = "instance"
    pooling: str = "avg"
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.width < 1:
            raise ConfigError("width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        _, h, w = self.input_shape
        sh, sw = self.spatial_output()
        if sh < 1 or sw < 1:
            raise ConfigError(
                f"depth {self.depth} reduces {h}x{w} input to zero spatial size")

    def spatial_output(self) -> tuple[int, int]:
        _, h, w = self.input_shape
        if self.pooling == "none":
            return h, w
        return h // 2**self.depth, w // 2**self.depth

    def feature_dim(self) -> int:
        sh, sw = self.spatial_output()
        return self.width * sh * sw


def _activation(kind: str) -> nn.Module:
    return {"sigmoid": nn.Sigmoid(),
            "relu": nn.ReLU(),
            "leakyrelu": nn.LeakyReLU(0.01)}[kind]


def _norm(kind: str, channels: int) -> nn.Module:
    if kind == "none":
        return nn.Identity()
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "layer":
        return nn.GroupNorm(1, channels)
    if kind == "group":
        return nn.GroupNorm(GROUP_NORM_GROUPS, channels)
    raise ConfigError(f"unknown norm {kind!r}")


def _pool(kind: str) -> nn.Module:
    if kind == "none":
        return nn.Identity()
    if kind == "max":
        return nn.MaxPool2d(2)
    return nn.AvgPool2d(2)


class ConvNet(nn.Module):
    """Repeated conv blocks plus a linear classification head."""

    def __init__(self, config: EmbedderConfig):
        super().__init__()
        config.validate()
        self.config = config
        c_in = config.input_shape[0]
        blocks = []
        for _ in range(config.depth):
            blocks += [
                nn.Conv2d(c_in, config.width, 3, padding=1),
                _norm(config.norm, config.width),
                _activation(config.activation),
                _pool(config.pooling),
            ]
            c_in = config.width
        self.features = nn.Sequential(*blocks)
        self.head = nn.Linear(config.feature_dim(), config.num_classes)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(self.config.input_shape):
            raise ShapeError(
                f"expected [B, {self.config.input_shape}] input, got {tuple(x.shape)}")

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.features(x).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x))


class FlatEmbedder(nn.Module):
    """Identity embedding (flattened pixels) with a linear head.

    Used for closed-form checks: with this embedder the matching loss
    optimum is the per-class mean image.
    """

    def __init__(self, input_shape: tuple[int, int, int], num_classes: int):
        super().__init__()
        self.input_shape = tuple(input_shape)
        c, h, w = input_shape
        self.head = nn.Linear(c * h * w, num_classes)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(
                f"expected [B, {self.input_shape}] input, got {tuple(x.shape)}")
        return x.flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x))


class AlexNetSmall(nn.Module):
    """Reduced-width AlexNet-style net for 32x32-class inputs."""

    def __init__(self, input_shape, num_classes, norm="batch"):
        super().__init__()
        self.input_shape = tuple(input_shape)
        c = input_shape[0]
        self.features = nn.Sequential(
            nn.Conv2d(c, 96, 5, padding=2), _norm(norm, 96), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(96, 192, 5, padding=2), _norm(norm, 192), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(192, 256, 3, padding=1), _norm(norm, 256), nn.ReLU(),
            nn.MaxPool2d(2),
        )
        sh, sw = input_shape[1] // 8, input_shape[2] // 8
        self.head = nn.Linear(256 * sh * sw, num_classes)

    def embed(self, x):
        return self.features(x).flatten(1)

    def forward(self, x):
        return self.head(self.embed(x))


_VGG11_PLAN = [32, "M", 64, "M", 128, 128, "M", 256, 256, "M", 256, 256, "M"]


class VGGSmall(nn.Module):
    """Half-width VGG-11."""

    def __init__(self, input_shape, num_classes, norm="batch"):
        super().__init__()
        self.input_shape = tuple(input_shape)
        c, h, w = input_shape
        layers = []
        pools = 0
        for item in _VGG11_PLAN:
            if item == "M":
                layers.append(nn.MaxPool2d(2))
                pools += 1
            else:
                layers += [nn.Conv2d(c, item, 3, padding=1),
                           _norm(norm, item), nn.ReLU()]
                c = item
        self.features = nn.Sequential(*layers)
        sh, sw = h // 2**pools, w // 2**pools
        if sh < 1 or sw < 1:
            raise ConfigError(f"input {h}x{w} too small for VGG-11")
        self.head = nn.Linear(c * sh * sw, num_classes)

    def embed(self, x):
        return self.features(x).flatten(1)

    def forward(self, x):
        return self.head(self.embed(x))


class _BasicBlock(nn.Module):
    # Stride-2 convolutions are replaced by stride-1 conv + average pool
    # so the backward pass to the input pixels stays smooth.
    def __init__(self, c_in, c_out, downsample, norm):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1, bias=False)
        self.n1 = _norm(norm, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.n2 = _norm(norm, c_out)
        self.act = nn.ReLU()
        self.pool = nn.AvgPool2d(2) if downsample else nn.Identity()
        if downsample or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, bias=False),
                _norm(norm, c_out),
                nn.AvgPool2d(2) if downsample else nn.Identity(),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.act(self.n1(self.conv1(x)))
        out = self.pool(self.n2(self.conv2(out)))
        return self.act(out + self.shortcut(x))


class ResNetSmall(nn.Module):
    """Reduced-width ResNet-18 with pooling instead of strided convs."""

    def __init__(self, input_shape, num_classes, norm="batch", base=32):
        super().__init__()
        self.input_shape = tuple(input_shape)
        c = input_shape[0]
        self.stem = nn.Sequential(
            nn.Conv2d(c, base, 3, padding=1, bias=False),
            _norm(norm, base), nn.ReLU())
        stages = []
        c_in = base
        for i, c_out in enumerate([base, base * 2, base * 4, base * 8]):
            stages.append(_BasicBlock(c_in, c_out, downsample=i > 0, norm=norm))
            stages.append(_BasicBlock(c_out, c_out, downsample=False, norm=norm))
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(base * 8, num_classes)

    def embed(self, x):
        return self.gap(self.stages(self.stem(x))).flatten(1)

    def forward(self, x):
        return self.head(self.embed(x))


def init_parameters(net: nn.Module, seed: int) -> nn.Module:
    """Kaiming-uniform fan-in init for conv/linear weights, zero biases.

    Uses a private generator so initialization depends only on `seed`.
    """
    g = torch_gen(seed, "init_parameters")
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                bound = (6.0 / fan_in) ** 0.5
                m.weight.uniform_(-bound, bound, generator=g)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm2d, nn.GroupNorm, nn.InstanceNorm2d)):
                if m.weight is not None:
                    m.weight.fill_(1.0)
                if m.bias is not None:
                    m.bias.zero_()
                if isinstance(m, nn.BatchNorm2d):
                    m.reset_running_stats()
    return net


def build_network(config: EmbedderConfig, seed: int) -> ConvNet:
    """Deterministically initialized ConvNet for the given config."""
    net = ConvNet(config)
    return init_parameters(net, seed)


_ARCH_BUILDERS = {
    "convnet3": lambda shape, classes, norm: ConvNet(EmbedderConfig(
        depth=3, input_shape=shape, num_classes=classes, norm=norm)),
    "convnet4": lambda shape, classes, norm: ConvNet(EmbedderConfig(
        depth=4, input_shape=shape, num_classes=classes, norm=norm)),
    "alexnet": AlexNetSmall,
    "vgg": VGGSmall,
    "resnet": ResNetSmall,
    "identity": lambda shape, classes, norm: FlatEmbedder(shape, classes),
}
_ARCH_BUILDERS["convnet"] = _ARCH_BUILDERS["convnet3"]


def known_architectures() -> list[str]:
    return sorted(_ARCH_BUILDERS)


def build_arch(label: str, input_shape, num_classes: int,
               norm: str = "instance", seed: int = 0) -> nn.Module:
    """Build a named architecture with deterministic initialization."""
    if label not in _ARCH_BUILDERS:
        raise ConfigError(
            f"unknown architecture {label!r}; known: {known_architectures()}")
    net = _ARCH_BUILDERS[label](tuple(input_shape), num_classes, norm)
    return init_parameters(net, seed)


@dataclass(frozen=True)
class SamplerStrategy:
    """Distribution over network parameters.

    random_init draws a fresh initialization per call; checkpoint_pool
    draws uniformly from stored parameter sets, optionally restricted to
    a validation-accuracy bucket [lo, hi) in percent.
    """

    kind: str = "random_init"
    pool_dir: str | None = None
    bucket: tuple[float, float] | None = None


def save_checkpoint(net: nn.Module, path: str | Path, val_acc: float,
                    extra_meta: dict | None = None) -> None:
    """Persist a parameter set as a rank-1 DMC1 container."""
    sd = net.state_dict()
    names = sorted(sd)
    flat = torch.cat([sd[n].detach().double().flatten() for n in names])
    meta = {
        "kind": "checkpoint",
        "val_acc": float(val_acc),
        "tensors": [[n, list(sd[n].shape)] for n in names],
    }
    if extra_meta:
        meta.update(extra_meta)
    vec = flat.numpy().astype(np.float32)
    container.write_container(path, vec, np.zeros(len(vec), dtype=np.uint32), meta)


def load_checkpoint(path: str | Path, net: nn.Module) -> tuple[nn.Module, dict]:
    """Load a checkpoint vector into a compatible network."""
    vec, _, meta = container.read_container(path)
    sd = net.state_dict()
    offset = 0
    new_sd = {}
    for name, shape in meta["tensors"]:
        if name not in sd:
            raise SamplerError(f"{path}: tensor {name} not in target network")
        count = int(np.prod(shape)) if shape else 1
        chunk = torch.from_numpy(vec[offset:offset + count].copy())
        new_sd[name] = chunk.reshape(shape).to(sd[name].dtype)
        offset += count
    if offset != len(vec):
        raise SamplerError(f"{path}: parameter count mismatch")
    net.load_state_dict(new_sd)
    return net, meta


def _pool_entries(strategy: SamplerStrategy) -> list[tuple[Path, float]]:
    if not strategy.pool_dir:
        raise SamplerError("checkpoint_pool strategy needs pool_dir")
    entries = []
    for path in sorted(Path(strategy.pool_dir).glob("*.dmc")):
        _, _, meta = container.read_container(path)
        acc = float(meta.get("val_acc", float("nan")))
        if strategy.bucket is not None:
            lo, hi = strategy.bucket
            if not (lo <= acc < hi):
                continue
        entries.append((path, acc))
    return entries


def sample_network(strategy: SamplerStrategy, config: EmbedderConfig,
                   rng: torch.Generator) -> ConvNet:
    """Draw one network from the strategy's parameter distribution."""
    if strategy.kind == "random_init":
        seed = int(torch.randint(0, 2**62, (1,), generator=rng).item())
        return build_network(config, seed)
    if strategy.kind == "checkpoint_pool":
        entries = _pool_entries(strategy)
        if not entries:
            raise SamplerError(
                f"checkpoint pool {strategy.pool_dir!r} "
                f"(bucket {strategy.bucket}) is empty")
        i = int(torch.randint(0, len(entries), (1,), generator=rng).item())
        net = ConvNet(config)
        net, _ = load_checkpoint(entries[i][0], net)
        return net
    raise SamplerError(f"unknown sampler kind {strategy.kind!r}")


def enumerate_search_space(input_shape=(3, 32, 32),
                           num_classes: int = 10) -> list[EmbedderConfig]:
    """The 720-config grid: width x depth x activation x norm x pooling."""
    configs = []
    for width, depth, act, norm, pool in itertools.product(
            (32, 64, 128, 256), (1, 2, 3, 4), ACTIVATIONS, NORMS, POOLINGS):
        configs.append(EmbedderConfig(
            depth=depth, width=width, activation=act, norm=norm, pooling=pool,
            input_shape=tuple(input_shape), num_classes=num_classes))
    return configs


def subsample_search_space(n: int, seed: int,
                           input_shape=(3, 32, 32),
                           num_classes: int = 10) -> list[EmbedderConfig]:
    """Fixed-seed stratified subsample of the grid, valid for the input shape.

    Stratified over depth so each depth bucket keeps proportional
    representation; order follows the full enumeration.
    """
    space = enumerate_search_space(input_shape, num_classes)
    valid = []
    for cfg in space:
        try:
            cfg.validate()
        except ConfigError:
            continue
        valid.append(cfg)
    if n >= len(valid):
        return valid
    by_depth: dict[int, list[EmbedderConfig]] = {}
    for cfg in valid:
        by_depth.setdefault(cfg.depth, []).append(cfg)
    g = torch_gen(seed, "subsample_search_space", n)
    chosen: list[EmbedderConfig] = []
    depths = sorted(by_depth)
    base, rem = divmod(n, len(depths))
    for i, d in enumerate(depths):
        take = base + (1 if i < rem else 0)
        pool = by_depth[d]
        perm = torch.randperm(len(pool), generator=g)[:take].tolist()
        chosen.extend(pool[j] for j in sorted(perm))
    return chosen


def config_dict(config: EmbedderConfig) -> dict:
    d = asdict(config)
    d["input_shape"] = list(d["input_shape"])
    return d


def config_for_dataset(config: EmbedderConfig, image_shape,
                       num_classes: int) -> EmbedderConfig:
    return replace(config, input_shape=tuple(image_shape),
                   num_classes=num_classes)
