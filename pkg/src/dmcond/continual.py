"""Class-incremental harness with a fixed per-class memory budget.

At each step the memory gains `budget` entries for every newly arrived
class (built from that step's data only), the model is retrained from
scratch on the cumulative memory, and accuracy is measured on the test
data of all classes seen so far.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from ._rng import derive_seed, numpy_gen
from .baselines import herding_coreset, random_coreset
from .condenser import CondenseConfig, condense
from .data import LabeledImageSet
from .errors import ConfigError
from .evaluation import EvalProtocol, accuracy, train_on_set

MEMORY_BUILDERS = ("random", "herding", "dm")


@dataclass(frozen=True)
class IncrementalSchedule:
    steps: tuple[tuple[int, ...], ...]
    budget: int
    builder: str = "random"
    seed: int = 0

    def validate(self, num_classes: int) -> None:
        flat = [c for step in self.steps for c in step]
        if sorted(flat) != list(range(num_classes)):
            raise ConfigError("steps must partition the class set")
        if self.budget < 1:
            raise ConfigError("memory budget must be >= 1")
        if self.builder not in MEMORY_BUILDERS:
            raise ConfigError(f"unknown memory builder {self.builder!r}")


def make_schedule(num_classes: int, num_steps: int, budget: int,
                  builder: str, seed: int) -> IncrementalSchedule:
    """Randomly and evenly split the classes into steps (order by seed)."""
    if num_classes % num_steps != 0:
        raise ConfigError("num_steps must divide num_classes evenly")
    order = numpy_gen(seed, "class_order").permutation(num_classes).tolist()
    per = num_classes // num_steps
    steps = tuple(tuple(order[i * per:(i + 1) * per]) for i in range(num_steps))
    return IncrementalSchedule(steps=steps, budget=budget, builder=builder,
                               seed=seed)


def _restrict(data: LabeledImageSet, classes) -> LabeledImageSet:
    mask = torch.zeros(len(data), dtype=torch.bool)
    for c in classes:
        mask |= data.labels == c
    return data.subset(mask.nonzero(as_tuple=True)[0])


def build_memory(builder: str, step_data: LabeledImageSet, budget: int,
                 seed: int,
                 condense_config: CondenseConfig | None = None,
                 herding_protocol: EvalProtocol | None = None
                 ) -> LabeledImageSet:
    """Budget images for each class present in step_data."""
    new_classes = sorted(set(step_data.labels.tolist()))
    if builder == "random":
        return random_coreset(step_data, budget, seed)
    if builder == "herding":
        # Embedding net trained on the new classes' data only.
        protocol = herding_protocol or EvalProtocol(
            epochs=20, repeats=1, nets_per_set=1)
        net = train_on_set(step_data, protocol.arch, protocol,
                           derive_seed(seed, "herding_embed"))
        return herding_coreset(step_data, budget, net)
    if builder == "dm":
        cfg = condense_config or CondenseConfig()
        cfg = replace(cfg, ipc=budget, classes=tuple(new_classes), seed=seed)
        synth, _ = condense(step_data, cfg)
        return synth.as_labeled_set()
    raise ConfigError(f"unknown memory builder {builder!r}")


def _concat(sets: list[LabeledImageSet]) -> LabeledImageSet:
    first = sets[0]
    return LabeledImageSet(
        images=torch.cat([s.images for s in sets]),
        labels=torch.cat([s.labels for s in sets]),
        num_classes=first.num_classes,
        channel_mean=first.channel_mean,
        channel_std=first.channel_std,
    )


def run_incremental(train: LabeledImageSet, test: LabeledImageSet,
                    schedule: IncrementalSchedule,
                    eval_protocol: EvalProtocol,
                    condense_config: CondenseConfig | None = None,
                    herding_protocol: EvalProtocol | None = None
                    ) -> list[dict]:
    """Returns one record per step: classes seen, memory size, accuracy."""
    schedule.validate(train.num_classes)
    memory: list[LabeledImageSet] = []
    seen: list[int] = []
    curve = []
    for step_idx, new_classes in enumerate(schedule.steps):
        step_data = _restrict(train, new_classes)
        memory.append(build_memory(
            schedule.builder, step_data, schedule.budget,
            derive_seed(schedule.seed, "memory", step_idx),
            condense_config=condense_config,
            herding_protocol=herding_protocol))
        seen.extend(new_classes)
        cumulative = _concat(memory)
        net = train_on_set(cumulative, eval_protocol.arch, eval_protocol,
                           derive_seed(schedule.seed, "retrain", step_idx))
        step_test = _restrict(test, seen)
        curve.append({
            "step": step_idx,
            "classes_seen": sorted(seen),
            "memory_size": len(cumulative),
            "accuracy": accuracy(net, step_test),
        })
    return curve
