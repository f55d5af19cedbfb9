"""Proxy-set architecture ranking and rank-correlation scoring."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from ._rng import derive_seed, numpy_gen
from .data import LabeledImageSet
from .errors import ConfigError, CorrelationError, TrainingError
from .evaluation import EvalProtocol, accuracy, fit_network
from .networks import ConvNet, EmbedderConfig, init_parameters


@dataclass(frozen=True)
class NasBudget:
    epochs: int = 200
    repeats: int = 5  # seeds 0..repeats-1
    batch_size: int = 250
    lr: float = 0.01
    seed: int = 0


def split_validation(train: LabeledImageSet, fraction: float = 0.1,
                     seed: int = 0) -> tuple[LabeledImageSet, LabeledImageSet]:
    """Reserve a random fraction of the training samples for validation."""
    n = len(train)
    order = numpy_gen(seed, "val_split").permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return train.subset(order[n_val:]), train.subset(order[:n_val])


def _train_config(config: EmbedderConfig, proxy: LabeledImageSet,
                  budget: NasBudget, seed: int):
    protocol = EvalProtocol(epochs=budget.epochs, batch_size=budget.batch_size,
                            lr=budget.lr, repeats=1, nets_per_set=1)
    net = init_parameters(ConvNet(config), derive_seed(seed, "nas_init"))
    return fit_network(net, proxy, protocol, seed)


def rank_architectures(proxy: LabeledImageSet, val: LabeledImageSet,
                       space: list[EmbedderConfig],
                       budget: NasBudget) -> list[dict]:
    """Train every config on the proxy set, rank by mean validation accuracy.

    Each config is trained `repeats` times with seeds 0..repeats-1 and the
    accuracies averaged. A diverging run scores 0 and is flagged rather
    than raised. Ties break by enumeration order (stable sort).
    """
    if not space:
        raise ConfigError("empty search space")
    rows = []
    for idx, config in enumerate(space):
        accs, diverged = [], False
        for rep in range(budget.repeats):
            try:
                net = _train_config(config, proxy, budget,
                                    derive_seed(budget.seed, "nas", idx, rep))
                accs.append(accuracy(net, val))
            except TrainingError:
                diverged = True
                accs.append(0.0)
        rows.append({
            "index": idx,
            "config": config,
            "val_acc": float(np.mean(accs)),
            "diverged": diverged,
        })
    return sorted(rows, key=lambda r: (-r["val_acc"], r["index"]))


def spearman_top_slice(proxy_scores: list[float],
                       reference_scores: list[float],
                       slice_fraction: float = 0.05) -> float:
    """Spearman rho between the two score vectors on the proxy's top slice.

    Both vectors are indexed by architecture id. The slice is chosen by
    proxy ranking (descending, ties by id); average ranks handle ties.
    """
    if len(proxy_scores) != len(reference_scores):
        raise CorrelationError("score vectors must have equal length")
    if not (0.0 < slice_fraction <= 1.0):
        raise ConfigError("slice fraction must be in (0, 1]")
    n = len(proxy_scores)
    k = max(1, int(round(slice_fraction * n)))
    order = sorted(range(n), key=lambda i: (-proxy_scores[i], i))
    top = order[:k]
    if len(top) < 2:
        raise CorrelationError(
            f"top slice has {len(top)} item(s); need at least 2")
    rho = stats.spearmanr([proxy_scores[i] for i in top],
                          [reference_scores[i] for i in top]).statistic
    return float(rho)


def nas_report(method_rows: dict[str, dict], timings: dict[str, float]
               ) -> list[dict]:
    """One row per compared method: performance, correlation, cost, storage."""
    table = []
    for method, row in method_rows.items():
        table.append({
            "method": method,
            "performance": row.get("performance"),
            "correlation": row.get("correlation"),
            "time_cost_min": timings.get(method),
            "storage_images": row.get("storage_images"),
        })
    return table
