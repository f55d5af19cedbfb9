import numpy as np
import pytest
import torch

from dmcond.baselines import random_coreset
from dmcond.condenser import CondenseConfig
from dmcond.continual import (IncrementalSchedule, build_memory,
                              make_schedule, run_incremental)
from dmcond.errors import ConfigError
from dmcond.evaluation import EvalProtocol, accuracy, train_on_set

FAST_EVAL = EvalProtocol(epochs=15, repeats=1, nets_per_set=1, batch_size=16)
FAST_DM = CondenseConfig(iterations=40, ipc=1, batch_real=64, arch="identity")


class TestSchedule:
    def test_make_schedule_partitions_classes(self):
        s = make_schedule(4, 2, budget=1, builder="random", seed=0)
        flat = sorted(c for step in s.steps for c in step)
        assert flat == [0, 1, 2, 3]
        assert all(len(step) == 2 for step in s.steps)

    def test_schedule_deterministic_per_seed(self):
        a = make_schedule(4, 2, 1, "random", seed=3)
        b = make_schedule(4, 2, 1, "random", seed=3)
        assert a.steps == b.steps

    def test_uneven_split_rejected(self):
        with pytest.raises(ConfigError):
            make_schedule(4, 3, 1, "random", seed=0)

    def test_validate_rejects_bad_partition(self):
        s = IncrementalSchedule(steps=((0, 1), (1, 2)), budget=1)
        with pytest.raises(ConfigError, match="partition"):
            s.validate(4)
        with pytest.raises(ConfigError, match="budget"):
            IncrementalSchedule(steps=((0, 1), (2, 3)), budget=0).validate(4)
        with pytest.raises(ConfigError, match="builder"):
            IncrementalSchedule(steps=((0, 1), (2, 3)), budget=1,
                                builder="kcenter").validate(4)


class TestBuildMemory:
    def test_random_delegates_to_random_coreset(self, toy_train):
        mem = build_memory("random", toy_train, budget=2, seed=9)
        expected = random_coreset(toy_train, 2, 9)
        assert torch.equal(mem.images, expected.images)
        assert torch.equal(mem.labels, expected.labels)

    def test_dm_budget_one_gives_one_image_per_new_class(self, toy_train):
        step = toy_train.subset(
            (toy_train.labels < 2).nonzero(as_tuple=True)[0])
        mem = build_memory("dm", step, budget=1, seed=0,
                           condense_config=FAST_DM)
        assert sorted(mem.labels.tolist()) == [0, 1]

    def test_herding_builder_counts(self, toy_train):
        step = toy_train.subset(
            (toy_train.labels >= 2).nonzero(as_tuple=True)[0])
        mem = build_memory("herding", step, budget=2, seed=0,
                           herding_protocol=EvalProtocol(
                               epochs=2, repeats=1, nets_per_set=1))
        assert sorted(mem.labels.tolist()) == [2, 2, 3, 3]


class TestRunIncremental:
    def test_degenerate_single_step_reduces_to_coreset_eval(self, toy_train,
                                                            toy_test):
        from dmcond._rng import derive_seed
        schedule = IncrementalSchedule(steps=((0, 1, 2, 3),), budget=2,
                                       builder="random", seed=5)
        curve = run_incremental(toy_train, toy_test, schedule, FAST_EVAL)
        assert len(curve) == 1
        mem = random_coreset(toy_train, 2, derive_seed(5, "memory", 0))
        net = train_on_set(mem, FAST_EVAL.arch, FAST_EVAL,
                           derive_seed(5, "retrain", 0))
        assert curve[0]["accuracy"] == accuracy(net, toy_test)
        assert curve[0]["memory_size"] == 8

    def test_memory_grows_by_budget_per_class(self, toy_train, toy_test):
        schedule = make_schedule(4, 2, budget=1, builder="random", seed=0)
        curve = run_incremental(toy_train, toy_test, schedule, FAST_EVAL)
        assert [row["memory_size"] for row in curve] == [2, 4]
        assert len(curve[0]["classes_seen"]) == 2
        assert len(curve[1]["classes_seen"]) == 4

    def test_accuracy_measured_on_seen_classes_only(self, toy_train, toy_test):
        schedule = make_schedule(4, 2, budget=2, builder="random", seed=1)
        curve = run_incremental(toy_train, toy_test, schedule, FAST_EVAL)
        assert sorted(curve[0]["classes_seen"]) == sorted(schedule.steps[0])
        assert sorted(curve[1]["classes_seen"]) == [0, 1, 2, 3]

    def test_step_split_invariance_random_builder(self, toy_train):
        # Per-class random memory depends only on the per-class stream,
        # not on which step the class arrives in.
        from dmcond._rng import derive_seed
        mem_a = build_memory(
            "random",
            toy_train.subset((toy_train.labels == 2).nonzero(as_tuple=True)[0]),
            budget=2, seed=derive_seed(0, "memory", 0))
        mem_b = build_memory(
            "random",
            toy_train.subset((toy_train.labels < 3).nonzero(as_tuple=True)[0]),
            budget=2, seed=derive_seed(0, "memory", 0))
        a2 = mem_a.images[mem_a.labels == 2]
        b2 = mem_b.images[mem_b.labels == 2]
        assert torch.equal(a2, b2)

    def test_step_split_invariance_dm_builder(self, toy_train):
        mem_a = build_memory(
            "dm",
            toy_train.subset((toy_train.labels == 1).nonzero(as_tuple=True)[0]),
            budget=1, seed=0, condense_config=FAST_DM)
        mem_b = build_memory(
            "dm",
            toy_train.subset((toy_train.labels <= 1).nonzero(as_tuple=True)[0]),
            budget=1, seed=0, condense_config=FAST_DM)
        a1 = mem_a.images[mem_a.labels == 1]
        b1 = mem_b.images[mem_b.labels == 1]
        assert torch.equal(a1, b1)

    def test_memory_append_only(self, toy_train, toy_test, monkeypatch):
        # Snapshot step-1 memory, then verify the cumulative memory at
        # step 2 starts with exactly those tensors.
        import dmcond.continual as continual
        snapshots = []
        original = continual.build_memory

        def recording(*args, **kwargs):
            mem = original(*args, **kwargs)
            snapshots.append(mem.images.clone())
            return mem

        monkeypatch.setattr(continual, "build_memory", recording)
        captured = {}
        original_concat = continual._concat

        def capturing(sets):
            out = original_concat(sets)
            captured[len(sets)] = out.images.clone()
            return out

        monkeypatch.setattr(continual, "_concat", capturing)
        schedule = make_schedule(4, 2, budget=1, builder="random", seed=2)
        run_incremental(toy_train, toy_test, schedule, FAST_EVAL)
        step1 = snapshots[0]
        assert torch.equal(captured[2][:len(step1)], step1)
