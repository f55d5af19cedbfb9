"""Dataset loading, normalization, class indexing.

All loaders return a `LabeledImageSet` whose pixels are already
normalized per channel with statistics computed on the training split.
A deterministic procedural toy dataset (4 quadrant-blob classes, 8x8,
single channel) backs the fast tests.
"""

from __future__ import annotations

import gzip
import os
import pickle
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from ._rng import numpy_gen
from .errors import ConfigError, LoadError

DATA_DIR_ENV = "DMC_DATA_DIR"

TOY_SIGMA = 1.2
TOY_NOISE = 0.25


@dataclass
class LabeledImageSet:
    """Images [N, C, H, W] (normalized) with integer labels [N]."""

    images: torch.Tensor
    labels: torch.Tensor
    num_classes: int
    channel_mean: np.ndarray
    channel_std: np.ndarray

    def __post_init__(self):
        if self.labels.shape[0] != self.images.shape[0]:
            raise ConfigError("labels length must equal number of images")
        if self.labels.numel() and int(self.labels.max()) >= self.num_classes:
            raise ConfigError("label out of range")
        if not np.all(np.asarray(self.channel_std) > 0):
            raise ConfigError("channel_std must be strictly positive")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "LabeledImageSet":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return replace(self, images=self.images[idx].clone(),
                       labels=self.labels[idx].clone())


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    image_shape: tuple[int, int, int]  # (C, H, W)
    num_classes: int
    source: str | None = None
    # toy-only knobs
    toy_seed: int = 0
    toy_per_class: int = 128
    toy_noise: float = TOY_NOISE


_KNOWN = {
    "mnist": ((1, 28, 28), 10),
    "cifar10": ((3, 32, 32), 10),
    "cifar100": ((3, 32, 32), 100),
    "tinyimagenet": ((3, 64, 64), 200),
    "toy": ((1, 8, 8), 4),
}


def dataset_spec(name: str, source: str | None = None, **toy_kwargs) -> DatasetSpec:
    if name not in _KNOWN:
        raise ConfigError(f"unknown dataset {name!r}; expected one of {sorted(_KNOWN)}")
    shape, classes = _KNOWN[name]
    return DatasetSpec(name=name, image_shape=shape, num_classes=classes,
                       source=source, **toy_kwargs)


def data_root(spec: DatasetSpec) -> Path:
    if spec.source:
        return Path(spec.source)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def normalize(images: torch.Tensor, mean: np.ndarray, std: np.ndarray) -> torch.Tensor:
    m = torch.as_tensor(mean, dtype=images.dtype).view(1, -1, 1, 1)
    s = torch.as_tensor(std, dtype=images.dtype).view(1, -1, 1, 1)
    return (images - m) / s


def denormalize(images: torch.Tensor, mean: np.ndarray, std: np.ndarray) -> torch.Tensor:
    m = torch.as_tensor(mean, dtype=images.dtype).view(1, -1, 1, 1)
    s = torch.as_tensor(std, dtype=images.dtype).view(1, -1, 1, 1)
    return images * s + m


def channel_stats(raw: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over a raw [N, C, H, W] tensor."""
    mean = raw.mean(dim=(0, 2, 3)).numpy().astype(np.float64)
    std = raw.std(dim=(0, 2, 3)).numpy().astype(np.float64)
    std = np.maximum(std, 1e-6)
    return mean, std


def make_toy_dataset(seed: int, per_class: int,
                     noise: float = TOY_NOISE,
                     stats: tuple[np.ndarray, np.ndarray] | None = None,
                     stream: str = "train") -> LabeledImageSet:
    """4-class 8x8 blobs, one Gaussian bump per quadrant plus seeded noise.

    Pure function of its arguments. If `stats` is given those
    normalization constants are applied instead of the set's own
    (used for the test split).
    """
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    h = w = 8
    centers = [(2.0, 2.0), (2.0, 6.0), (6.0, 2.0), (6.0, 6.0)]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    rng = numpy_gen(seed, "toy", stream, per_class, float(noise))
    images = np.empty((4 * per_class, 1, h, w), dtype=np.float32)
    labels = np.empty(4 * per_class, dtype=np.int64)
    for c, (cy, cx) in enumerate(centers):
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * TOY_SIGMA**2))
        block = blob[None, None] + noise * rng.standard_normal(
            (per_class, 1, h, w))
        lo = c * per_class
        images[lo:lo + per_class] = block.astype(np.float32)
        labels[lo:lo + per_class] = c
    raw = torch.from_numpy(images)
    if stats is None:
        mean, std = channel_stats(raw)
    else:
        mean, std = stats
    return LabeledImageSet(
        images=normalize(raw, mean, std),
        labels=torch.from_numpy(labels),
        num_classes=4,
        channel_mean=mean,
        channel_std=std,
    )


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            header = f.read(4)
            if len(header) != 4 or header[:2] != b"\x00\x00":
                raise LoadError(f"{path}: not an IDX file")
            dtype_code, ndim = header[2], header[3]
            if dtype_code != 0x08:
                raise LoadError(f"{path}: unsupported IDX dtype {dtype_code:#x}")
            dims = [int.from_bytes(f.read(4), "big") for _ in range(ndim)]
            data = np.frombuffer(f.read(), dtype=np.uint8)
    except OSError as e:
        raise LoadError(f"cannot read {path}: {e}") from e
    if data.size != int(np.prod(dims)):
        raise LoadError(f"{path}: truncated IDX payload")
    return data.reshape(dims)


def _find_file(root: Path, candidates: list[str]) -> Path:
    for name in candidates:
        p = root / name
        if p.exists():
            return p
    raise LoadError(
        f"missing dataset file: looked for {candidates} under {root}")


def _load_mnist(root: Path, split: str) -> tuple[torch.Tensor, torch.Tensor]:
    prefix = "train" if split == "train" else "t10k"
    img_path = _find_file(root, [f"{prefix}-images-idx3-ubyte",
                                 f"{prefix}-images-idx3-ubyte.gz",
                                 f"{prefix}-images.idx3-ubyte"])
    lab_path = _find_file(root, [f"{prefix}-labels-idx1-ubyte",
                                 f"{prefix}-labels-idx1-ubyte.gz",
                                 f"{prefix}-labels.idx1-ubyte"])
    images = _read_idx(img_path).astype(np.float32) / 255.0
    labels = _read_idx(lab_path).astype(np.int64)
    return torch.from_numpy(images[:, None]), torch.from_numpy(labels)


def _load_cifar_pickle(path: Path) -> dict:
    try:
        with open(path, "rb") as f:
            return pickle.load(f, encoding="bytes")
    except (OSError, pickle.UnpicklingError) as e:
        raise LoadError(f"cannot read {path}: {e}") from e


def _load_cifar10(root: Path, split: str) -> tuple[torch.Tensor, torch.Tensor]:
    base = root / "cifar-10-batches-py"
    if not base.exists():
        base = root
    names = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" \
        else ["test_batch"]
    xs, ys = [], []
    for name in names:
        d = _load_cifar_pickle(_find_file(base, [name]))
        xs.append(np.asarray(d[b"data"], dtype=np.uint8))
        ys.append(np.asarray(d[b"labels"], dtype=np.int64))
    images = np.concatenate(xs).reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return torch.from_numpy(images), torch.from_numpy(np.concatenate(ys))


def _load_cifar100(root: Path, split: str) -> tuple[torch.Tensor, torch.Tensor]:
    base = root / "cifar-100-python"
    if not base.exists():
        base = root
    d = _load_cifar_pickle(_find_file(base, [split if split == "train" else "test"]))
    images = np.asarray(d[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32)
    labels = np.asarray(d[b"fine_labels"], dtype=np.int64)
    return (torch.from_numpy(images.astype(np.float32) / 255.0),
            torch.from_numpy(labels))


def _load_tinyimagenet(root: Path, split: str) -> tuple[torch.Tensor, torch.Tensor]:
    # Expects the standard tiny-imagenet-200 directory exported to npz by
    # an external preprocessing step; download automation is out of scope.
    path = _find_file(root, [f"tinyimagenet_{split}.npz",
                             f"tiny-imagenet-200/{split}.npz"])
    try:
        with np.load(path) as z:
            images = z["images"].astype(np.float32) / 255.0
            labels = z["labels"].astype(np.int64)
    except (OSError, KeyError, ValueError) as e:
        raise LoadError(f"cannot read {path}: {e}") from e
    if images.ndim != 4 or images.shape[1:] != (3, 64, 64):
        raise LoadError(f"{path}: expected [N, 3, 64, 64] images")
    return torch.from_numpy(images), torch.from_numpy(labels)


_LOADERS = {
    "mnist": _load_mnist,
    "cifar10": _load_cifar10,
    "cifar100": _load_cifar100,
    "tinyimagenet": _load_tinyimagenet,
}


def load_dataset(spec: DatasetSpec, split: str) -> LabeledImageSet:
    """Load a normalized split. Test splits reuse training statistics."""
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    if spec.name == "toy":
        train = make_toy_dataset(spec.toy_seed, spec.toy_per_class,
                                 noise=spec.toy_noise, stream="train")
        if split == "train":
            return train
        return make_toy_dataset(spec.toy_seed, spec.toy_per_class,
                                noise=spec.toy_noise,
                                stats=(train.channel_mean, train.channel_std),
                                stream="test")
    if spec.name not in _LOADERS:
        raise ConfigError(f"unknown dataset {spec.name!r}")
    root = data_root(spec)
    loader = _LOADERS[spec.name]
    raw_train, train_labels = loader(root, "train")
    mean, std = channel_stats(raw_train)
    if split == "train":
        raw, labels = raw_train, train_labels
    else:
        raw, labels = loader(root, "test")
    expected = spec.image_shape
    if tuple(raw.shape[1:]) != expected:
        raise LoadError(
            f"{spec.name}: image shape {tuple(raw.shape[1:])} != {expected}")
    return LabeledImageSet(
        images=normalize(raw, mean, std),
        labels=labels,
        num_classes=spec.num_classes,
        channel_mean=mean,
        channel_std=std,
    )


@dataclass
class ClassIndex:
    """Partition of sample indices by class label."""

    by_class: dict[int, list[int]] = field(default_factory=dict)

    def __getitem__(self, c: int) -> list[int]:
        return self.by_class.get(c, [])

    def classes(self) -> list[int]:
        return sorted(self.by_class)


def build_class_index(data: LabeledImageSet) -> ClassIndex:
    by_class: dict[int, list[int]] = {c: [] for c in range(data.num_classes)}
    for i, y in enumerate(data.labels.tolist()):
        by_class[int(y)].append(i)
    return ClassIndex(by_class=by_class)
