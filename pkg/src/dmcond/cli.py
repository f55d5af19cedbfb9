"""Command-line entry point.

Subcommands: condense, eval, baseline, cl, nas, verify-appendix,
export-grid. Every run writes a RunReport JSON with the materialized
config, its hash, seeds and wall time.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from ._rng import derive_seed, torch_gen
from .analysis import equivalence_check, last_layer_gradient_closed_form
from .baselines import (herding_coreset, random_coreset,
                        select_herding_indices, select_random_indices)
from .condenser import (CondenseConfig, SyntheticSet, condense, load_condensed,
                        save_condensed)
from .config import parse_config
from .continual import make_schedule, run_incremental
from .data import (DatasetSpec, LabeledImageSet, dataset_spec, load_dataset)
from .errors import DmcondError
from .evaluation import EvalProtocol, accuracy, evaluate_synthetic, train_on_set
from .export import export_grid
from .nas import (NasBudget, nas_report, rank_architectures, spearman_top_slice,
                  split_validation)
from .networks import (EmbedderConfig, SamplerStrategy, build_arch,
                       subsample_search_space)
from .report import RunReport


def _spec_from_config(config: dict) -> DatasetSpec:
    d = config["data"]
    return dataset_spec(d["dataset"], source=d["source"] or None,
                        toy_seed=d["toy_seed"], toy_per_class=d["toy_per_class"],
                        toy_noise=d["toy_noise"])


def _condense_config(config: dict, spec: DatasetSpec, seed: int) -> CondenseConfig:
    c = config["condense"]
    bucket = None
    if c["bucket_lo"] >= 0 and c["bucket_hi"] >= 0:
        bucket = (c["bucket_lo"], c["bucket_hi"])
    embedder = EmbedderConfig(
        depth=c["depth"], width=c["width"], activation=c["activation"],
        norm=c["norm"], pooling=c["pooling"],
        input_shape=spec.image_shape, num_classes=spec.num_classes)
    strategies = tuple(config["augment"]["strategies"]) or None
    return CondenseConfig(
        iterations=c["iterations"], ipc=c["ipc"], lr=c["lr"],
        batch_real=c["batch_real"], momentum=c["momentum"], arch=c["arch"],
        embedder=embedder,
        sampler=SamplerStrategy(kind=c["sampler"],
                                pool_dir=c["pool_dir"] or None, bucket=bucket),
        strategies=strategies,
        net_samples_per_iter=c["net_samples_per_iter"],
        seed=seed)


def _report_path(args, default_stem: str) -> Path:
    if args.report:
        return Path(args.report)
    return Path(f"{default_stem}.report.json")


def _apply_overrides(config: dict, args) -> None:
    pairs = [
        ("dataset", "data", "dataset"),
        ("ipc", "condense", "ipc"),
        ("iters", "condense", "iterations"),
        ("lr", "condense", "lr"),
        ("batch_real", "condense", "batch_real"),
        ("arch", "condense", "arch"),
        ("norm", "condense", "norm"),
        ("depth", "condense", "depth"),
        ("width", "condense", "width"),
    ]
    for attr, section, key in pairs:
        value = getattr(args, attr, None)
        if value is not None:
            config[section][key] = value
    if getattr(args, "data_source", None):
        config["data"]["source"] = args.data_source


def cmd_condense(args) -> int:
    config = parse_config(args.config)
    _apply_overrides(config, args)
    spec = _spec_from_config(config)
    train = load_dataset(spec, "train")
    cfg = _condense_config(config, spec, args.seed)
    synth, report = condense(train, cfg, workers=args.workers)
    synth.meta.update({"dataset": spec.name, "toy_seed": spec.toy_seed,
                       "toy_per_class": spec.toy_per_class,
                       "toy_noise": spec.toy_noise})
    save_condensed(synth, args.out)
    report.config["run"] = {"seed": args.seed, "workers": args.workers}
    report.artifacts.append(str(args.out))
    report.save(_report_path(args, args.out))
    print(f"wrote {args.out} ({len(synth.labels)} images, "
          f"final loss {report.metrics['final_loss']})")
    return 0


def _spec_from_meta(meta: dict, source: str | None) -> DatasetSpec:
    return dataset_spec(meta.get("dataset", "toy"), source=source,
                        toy_seed=meta.get("toy_seed", 0),
                        toy_per_class=meta.get("toy_per_class", 128),
                        toy_noise=meta.get("toy_noise", 0.25))


def cmd_eval(args) -> int:
    sets = [load_condensed(p) for p in args.synthetic]
    if args.repeats > len(sets):
        raise DmcondError(
            f"--repeats {args.repeats} but only {len(sets)} synthetic set(s)")
    sets = sets[:args.repeats]
    ipcs = {s.ipc for s in sets}
    if len(ipcs) != 1:
        raise DmcondError(f"mixed ipc across sets: {sorted(ipcs)}")
    spec = _spec_from_meta(sets[0].meta, args.data_source)
    test = load_dataset(spec, "test")
    protocol = EvalProtocol(epochs=args.epochs, repeats=args.repeats,
                            nets_per_set=args.nets, arch=args.arch,
                            norm=args.norm, seed=args.seed)
    result = evaluate_synthetic([s.as_labeled_set() for s in sets], test,
                                protocol)
    report = RunReport(command="eval", seed=args.seed, config={
        "synthetic": [str(p) for p in args.synthetic],
        "protocol": protocol.__dict__,
    })
    report.metrics = result.to_dict()
    report.save(_report_path(args, args.synthetic[0]))
    print(f"accuracy {result.mean:.4f} +- {result.std:.4f} "
          f"({len(result.accuracies)} runs)")
    return 0


def cmd_baseline(args) -> int:
    config = parse_config(args.config)
    _apply_overrides(config, args)
    spec = _spec_from_config(config)
    ipc = config["condense"]["ipc"]
    train = load_dataset(spec, "train")
    if args.method == "random":
        indices = select_random_indices(train, ipc, args.seed)
        coreset = train.subset([i for c in sorted(indices) for i in indices[c]])
    else:
        protocol = EvalProtocol(epochs=args.embed_epochs, repeats=1,
                                nets_per_set=1)
        net = train_on_set(train, protocol.arch, protocol,
                           derive_seed(args.seed, "herding_embed"))
        indices = select_herding_indices(train, ipc, net)
        coreset = train.subset([i for c in sorted(indices) for i in indices[c]])
    synth = SyntheticSet(
        images=coreset.images, labels=coreset.labels, ipc=ipc,
        num_classes=train.num_classes, channel_mean=train.channel_mean,
        channel_std=train.channel_std,
        meta={"dataset": spec.name, "method": args.method, "seed": args.seed,
              "toy_seed": spec.toy_seed, "toy_per_class": spec.toy_per_class,
              "toy_noise": spec.toy_noise,
              "selection_indices": {str(c): v for c, v in indices.items()}})
    save_condensed(synth, args.out)
    report = RunReport(command="baseline", seed=args.seed,
                       config={"method": args.method, "ipc": ipc,
                               "dataset": spec.name})
    report.artifacts.append(str(args.out))
    report.save(_report_path(args, args.out))
    print(f"wrote {args.out} ({args.method}, ipc={ipc})")
    return 0


def cmd_cl(args) -> int:
    config = parse_config(args.config)
    _apply_overrides(config, args)
    spec = _spec_from_config(config)
    train = load_dataset(spec, "train")
    test = load_dataset(spec, "test")
    schedule = make_schedule(train.num_classes, args.steps, args.budget,
                             args.builder, args.seed)
    protocol = EvalProtocol(epochs=args.epochs, repeats=1, nets_per_set=1,
                            seed=args.seed)
    cfg = _condense_config(config, spec, args.seed)
    curve = run_incremental(train, test, schedule, protocol,
                            condense_config=cfg)
    report = RunReport(command="cl", seed=args.seed, config={
        "dataset": spec.name, "steps": args.steps, "budget": args.budget,
        "builder": args.builder,
        "class_order": [list(s) for s in schedule.steps],
    })
    report.metrics = {"curve": curve, "final_accuracy": curve[-1]["accuracy"]}
    out = Path(args.out)
    report.save(out)
    with open(out.with_suffix(".csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "classes_seen", "accuracy"])
        for row in curve:
            writer.writerow([row["step"], len(row["classes_seen"]),
                             row["accuracy"]])
    print(f"final accuracy {curve[-1]['accuracy']:.4f} "
          f"after {len(curve)} steps")
    return 0


def cmd_nas(args) -> int:
    config = parse_config(args.config)
    _apply_overrides(config, args)
    spec = _spec_from_config(config)
    full_train = load_dataset(spec, "train")
    test = load_dataset(spec, "test")
    train, val = split_validation(full_train, 0.1, args.seed)
    space = subsample_search_space(args.space_size, args.subsample_seed,
                                   spec.image_shape, spec.num_classes)
    proxy_budget = NasBudget(epochs=args.proxy_epochs, repeats=args.repeats,
                             seed=args.seed)
    ref_budget = NasBudget(epochs=args.ref_epochs, repeats=args.repeats,
                           seed=args.seed)

    proxies: dict[str, LabeledImageSet] = {}
    timings: dict[str, float] = {}
    t0 = time.time()
    ipc = config["condense"]["ipc"]
    cfg = replace(_condense_config(config, spec, args.seed), ipc=ipc)
    synth, _ = condense(train, cfg)
    proxies["dm"] = synth.as_labeled_set()
    timings["dm_condense"] = (time.time() - t0) / 60
    proxies["random"] = random_coreset(train, ipc, args.seed)

    t0 = time.time()
    reference = rank_architectures(train, val, space, ref_budget)
    timings["reference"] = (time.time() - t0) / 60
    ref_by_idx = {r["index"]: r["val_acc"] for r in reference}
    ref_scores = [ref_by_idx[i] for i in range(len(space))]

    rows: dict[str, dict] = {}
    scatter: dict[str, list] = {}
    for method, proxy in proxies.items():
        t0 = time.time()
        ranking = rank_architectures(proxy, val, space, proxy_budget)
        timings[method] = (time.time() - t0) / 60
        proxy_scores = [0.0] * len(space)
        for r in ranking:
            proxy_scores[r["index"]] = r["val_acc"]
        rho = spearman_top_slice(proxy_scores, ref_scores, args.slice)
        best_idx = ranking[0]["index"]
        best_protocol = EvalProtocol(epochs=args.ref_epochs, repeats=1,
                                     nets_per_set=1, seed=args.seed)
        from .networks import init_parameters, ConvNet
        from .evaluation import fit_network
        best_net = fit_network(
            init_parameters(ConvNet(space[best_idx]),
                            derive_seed(args.seed, "nas_best", method)),
            train, best_protocol, derive_seed(args.seed, "nas_best_fit", method))
        rows[method] = {
            "performance": accuracy(best_net, test),
            "correlation": rho,
            "storage_images": len(proxy),
            "best_index": best_idx,
        }
        scatter[method] = [[proxy_scores[i], ref_scores[i]] for i in range(len(space))]

    table = nas_report(rows, timings)
    report = RunReport(command="nas", seed=args.seed, config={
        "dataset": spec.name, "space_size": len(space), "ipc": ipc,
        "proxy_epochs": args.proxy_epochs, "ref_epochs": args.ref_epochs,
        "slice": args.slice,
    })
    report.metrics = {"table": table, "scatter": scatter, "timings": timings}
    out = Path(args.out)
    report.save(out)
    with open(out.with_suffix(".csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "performance", "correlation",
                         "time_cost_min", "storage_images"])
        for row in table:
            writer.writerow([row["method"], row["performance"],
                             row["correlation"], row["time_cost_min"],
                             row["storage_images"]])
    for row in table:
        print(f"{row['method']}: perf={row['performance']:.4f} "
              f"rho={row['correlation']:.3f} storage={row['storage_images']}")
    return 0


def cmd_verify_appendix(args) -> int:
    spec = dataset_spec("toy")
    train = load_dataset(spec, "train")
    failures = []

    # closed form vs autodiff
    g = torch_gen(args.seed, "verify")
    emb = torch.randn(16, 12, generator=g, dtype=torch.float64)
    head = torch.randn(10, 12, generator=g, dtype=torch.float64,
                       requires_grad=True)
    labels = torch.randint(0, 10, (16,), generator=g)
    closed = last_layer_gradient_closed_form(emb, head.detach(), labels)
    for i in range(16):
        loss = torch.nn.functional.cross_entropy(
            (emb[i:i + 1] @ head.T), labels[i:i + 1])
        grad, = torch.autograd.grad(loss, head)
        if float((grad - closed[i]).abs().max()) > 1e-6:
            failures.append(f"closed-form gradient mismatch at sample {i}")
            break

    # uniform-probability constants
    net = build_arch("convnet", train.image_shape, 10, seed=args.seed).double()
    batch = train.images[:8].double()
    result = equivalence_check(net, batch, batch.flip(0) * 0.9, label=3,
                               enforce_uniform=True)
    ratios = result["gradient_row_ratios"]
    for j, ratio in enumerate(ratios):
        expected = result["expected_ratio_true_row"] if j == 3 \
            else result["expected_ratio_other_rows"]
        if abs(ratio - expected) > 1e-6:
            failures.append(f"row {j} ratio {ratio} != {expected}")

    report = RunReport(command="verify-appendix", seed=args.seed,
                       config={}, metrics={"result": result,
                                           "failures": failures})
    if args.report:
        report.save(args.report)
    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return 1
    print("appendix equivalence checks passed")
    return 0


def cmd_export_grid(args) -> int:
    synth = load_condensed(args.synthetic)
    export_grid(synth, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmcond",
        description="Condense datasets by class-wise embedding-mean matching")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run config file")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--report", default=None, help="report JSON path")
        p.add_argument("--data-source", dest="data_source", default=None,
                       help="dataset root (else $DMC_DATA_DIR)")

    def dataset_flags(p):
        p.add_argument("--dataset", default=None)
        p.add_argument("--ipc", type=int, default=None)

    p = sub.add_parser("condense", help="learn a synthetic set")
    common(p)
    dataset_flags(p)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-real", dest="batch_real", type=int, default=None)
    p.add_argument("--arch", default=None)
    p.add_argument("--norm", default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_condense)

    p = sub.add_parser("eval", help="train nets on a condensed set and test")
    common(p)
    p.add_argument("--synthetic", nargs="+", required=True)
    p.add_argument("--arch", default="convnet")
    p.add_argument("--norm", default="instance")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--nets", type=int, default=1)
    p.add_argument("--epochs", type=int, default=300)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="random or herding coreset")
    common(p)
    dataset_flags(p)
    p.add_argument("--method", choices=["random", "herding"], required=True)
    p.add_argument("--embed-epochs", dest="embed_epochs", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("cl", help="class-incremental learning harness")
    common(p)
    dataset_flags(p)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--builder", choices=["random", "herding", "dm"],
                   default="dm")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cl)

    p = sub.add_parser("nas", help="proxy-set architecture ranking comparison")
    common(p)
    dataset_flags(p)
    p.add_argument("--space-size", dest="space_size", type=int, default=36)
    p.add_argument("--subsample-seed", dest="subsample_seed", type=int,
                   default=0)
    p.add_argument("--proxy-epochs", dest="proxy_epochs", type=int, default=200)
    p.add_argument("--ref-epochs", dest="ref_epochs", type=int, default=100)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--slice", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nas)

    p = sub.add_parser("verify-appendix",
                       help="check the gradient/feature matching equivalence")
    common(p)
    p.set_defaults(func=cmd_verify_appendix)

    p = sub.add_parser("export-grid", help="write a PNG grid of a .dmc file")
    common(p)
    p.add_argument("--synthetic", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DmcondError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
