"""``imb-lab`` command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid input (configuration,
dataset path, checkpoint), 3 architecture too large for exact enumeration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attack import ATTACK_MODES, AttackConfig, robustness_eval
from .config import DEFAULT_MNIST_DIR, PRESETS, DatasetSpec, load_run_config
from .data import LABEL_RULES, gen_binary_task, to_csv, write_idx
from .exact import MAX_LAYER_WIDTH, dpi_violations, info_plane_trace
from .exceptions import BudgetExceededError, ConfigError, IDXFormatError
from .probe import BUILTIN_INSTANCES, builtin_instance, conflict_probe, load_instance
from .reporting import info_plane_svg, mean_trace, write_info_plane_csv
from .training import evaluate, load_checkpoint, save_checkpoint, train

logger = logging.getLogger("imb_lab")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT, EXIT_ENUMERATION = 0, 1, 2, 3


class UsageError(Exception):
    """Bad input detected before any work; maps to exit code 2."""


def _fail(code, msg):
    print(f"imb-lab: {msg}", file=sys.stderr)
    return code


# train -----------------------------------------------------------------------------


def _parse_floats(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    return values[0] if len(values) == 1 else values


def _overrides(args):
    training, doc = {}, {}
    if args.seed is not None:
        training["seed"] = args.seed
    for name in ("algorithm", "epochs"):
        value = getattr(args, name, None)
        if value is not None:
            training[name] = value
    for name in ("beta", "gamma"):
        value = getattr(args, name, None)
        if value is not None:
            training[name] = _parse_floats(value)
    if training:
        doc["training"] = training
    if args.out is not None:
        doc["output_dir"] = str(args.out)
    return doc


def _checkpoint_name(epoch):
    return f"epoch_{epoch:06d}.npz"


def _write_run(out, run_cfg, log):
    dataset_doc = run_cfg.to_document()["dataset"]
    run_cfg.dump(out / "config.yaml")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir()
    for epoch, params in log.checkpoints:
        save_checkpoint(ckpt_dir / _checkpoint_name(epoch), params, run_cfg.imb, epoch, {"dataset": dataset_doc})
    summary = {
        "config": run_cfg.to_document(),
        "records": [asdict(r) for r in log.records],
        "info_plane": [asdict(p) for p in log.info_plane],
        "stage_boundaries": log.stage_boundaries,
        "messages": log.messages,
        "wall_clock_seconds": log.wall_clock,
    }
    (out / "train_log.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
    if log.info_plane:
        write_info_plane_csv(log.info_plane, out / "info_plane.csv")
        if run_cfg.plots:
            info_plane_svg(log.info_plane, out / "info_plane.svg", title=f"{run_cfg.imb.algorithm}, seed {run_cfg.imb.seed}")


def cmd_train(args) -> int:
    try:
        run_cfg = load_run_config(args.config, args.preset, _overrides(args))
        run_cfg.dataset.check_reachable()
    except (ConfigError, UsageError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except (FileNotFoundError, IDXFormatError) as exc:
        return _fail(EXIT_INPUT, f"dataset not available: {exc}")
    out = Path(run_cfg.output_dir)
    if out.exists() and any(out.iterdir()):
        return _fail(EXIT_INPUT, f"output directory {out} is not empty")
    try:
        train_set, eval_set = run_cfg.dataset.load(run_cfg.imb.seed)
    except (FileNotFoundError, IDXFormatError, ValueError) as exc:
        return _fail(EXIT_INPUT, f"dataset not available: {exc}")
    # write into a scratch directory first so a failed run leaves nothing behind
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".imb-lab-", dir=out.parent))
    try:
        log = train(train_set, run_cfg.imb, test=eval_set)
        _write_run(scratch, run_cfg, log)
        if out.exists():
            out.rmdir()
        scratch.rename(out)
    except ConfigError as exc:
        shutil.rmtree(scratch, ignore_errors=True)
        return _fail(EXIT_INPUT, str(exc))
    except Exception as exc:  # noqa: BLE001 - any failure of the run itself
        shutil.rmtree(scratch, ignore_errors=True)
        return _fail(EXIT_RUNTIME, f"training failed: {type(exc).__name__}: {exc}")
    last = log.records[-1]
    print(f"trained {run_cfg.imb.algorithm} for {last.epoch} epochs in {log.wall_clock:.1f}s; "
          f"final objective {last.total:.6g}; artifacts in {out}")
    return EXIT_OK


# eval ------------------------------------------------------------------------------


def _resolve_checkpoint(path) -> Path:
    path = Path(path)
    if path.is_dir():
        candidates = sorted((path / "checkpoints").glob("*.npz")) or sorted(path.glob("*.npz"))
        if not candidates:
            raise UsageError(f"no checkpoints under {path}")
        return candidates[-1]
    if not path.is_file():
        raise UsageError(f"checkpoint {path} does not exist")
    return path


def _load(path):
    ckpt = _resolve_checkpoint(path)
    try:
        return load_checkpoint(ckpt)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read checkpoint {ckpt}: {exc}") from None


def _dataset_spec(meta, args) -> DatasetSpec:
    """Dataset recorded in the checkpoint, or the MNIST directory given by ``--dataset``."""
    doc = dict(meta.get("dataset") or {})
    if getattr(args, "dataset", None) is not None:
        keep = doc if doc.get("kind") == "mnist" else {}
        doc = {**keep, "kind": "mnist", "path": str(args.dataset)}
    if not doc:
        raise UsageError("the checkpoint does not describe its dataset; pass --dataset")
    return DatasetSpec(**doc)


def _check_fit(params, dataset):
    if dataset.n_features != params.widths[0] or dataset.n_classes != params.n_classes:
        raise UsageError(
            f"checkpoint expects {params.widths[0]} features and {params.n_classes} classes, "
            f"dataset has {dataset.n_features} and {dataset.n_classes}"
        )


def cmd_eval(args) -> int:
    try:
        params, meta = _load(args.checkpoint)
        spec = _dataset_spec(meta, args)
        spec.check_reachable()
        cfg = meta.get("config", {})
        train_set, eval_set = spec.load(cfg.get("seed", 0))
        dataset = train_set if args.split == "train" or eval_set is None else eval_set
        _check_fit(params, dataset)
    except UsageError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except (FileNotFoundError, IDXFormatError, TypeError) as exc:
        return _fail(EXIT_INPUT, f"dataset not available: {exc}")
    samples = args.samples or cfg.get("eval_samples") or cfg.get("n_samples", 32)
    deterministic = bool(cfg.get("deterministic", False))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    mean, std = evaluate(params, dataset, samples, args.repeats, seed=seed, deterministic=deterministic)
    report = {
        "checkpoint_epoch": meta.get("epoch"),
        "split": args.split,
        "n_examples": len(dataset),
        "repeats": args.repeats,
        "n_samples": samples,
        "error_mean": mean,
        "error_std": std,
    }
    print(f"error {100 * mean:.2f}% +- {100 * std:.2f}% over {args.repeats} repeats ({len(dataset)} examples)")
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2), encoding="utf-8")
    return EXIT_OK


# info-plane ----------------------------------------------------------------------------


def _checkpoint_files(directory):
    directory = Path(directory)
    return sorted((directory / "checkpoints").glob("*.npz")) or sorted(directory.glob("*.npz"))


def _trace_of(files):
    checkpoints, joint = [], None
    for f in files:
        params, meta = load_checkpoint(f)
        if joint is None:
            spec = DatasetSpec(**(meta.get("dataset") or {"kind": "unknown"})) if meta.get("dataset") else None
            if spec is None or spec.kind != "toy":
                raise BudgetExceededError(
                    f"{f}: only runs on the enumerable synthetic task have exact information quantities"
                )
            joint = gen_binary_task(spec.data_seed, spec.n_bits, label_rule=spec.label_rule, noise=spec.noise).joint
        too_wide = [w for w in params.widths[1:] if w > MAX_LAYER_WIDTH]
        if too_wide:
            raise BudgetExceededError(
                f"{f}: layer width {max(too_wide)} exceeds the enumeration limit of {MAX_LAYER_WIDTH} units"
            )
        checkpoints.append((meta["epoch"], params))
    return info_plane_trace(checkpoints, joint.patterns, joint.pxy)


def cmd_info_plane(args) -> int:
    root = Path(args.run_dir)
    if not root.is_dir():
        return _fail(EXIT_INPUT, f"{root} is not a directory")
    files = _checkpoint_files(root)
    seed_dirs = [] if files else [d for d in sorted(root.iterdir()) if d.is_dir() and _checkpoint_files(d)]
    if not files and not seed_dirs:
        return _fail(EXIT_INPUT, f"no checkpoints found in {root}")
    out = Path(args.out) if args.out is not None else root
    out.mkdir(parents=True, exist_ok=True)
    try:
        if files:
            traces = {"": _trace_of(files)}
        else:
            traces = {d.name: _trace_of(_checkpoint_files(d)) for d in seed_dirs}
    except BudgetExceededError as exc:
        return _fail(EXIT_ENUMERATION, f"exact information plane unavailable: {exc}")
    for name, trace in traces.items():
        stem = "info_plane" if not name else f"info_plane_{name}"
        write_info_plane_csv(trace, out / f"{stem}.csv")
        if args.plot:
            info_plane_svg(trace, out / f"{stem}.svg", title=name or root.name)
        bad = dpi_violations(trace)
        print(f"{stem}.csv: {len(trace)} points, {len(bad)} data-processing violations")
    if len(traces) > 1:
        avg = mean_trace(list(traces.values()))
        write_info_plane_csv(avg, out / "info_plane_mean.csv")
        if args.plot:
            info_plane_svg(avg, out / "info_plane_mean.svg", title=f"mean over {len(traces)} runs")
        print(f"info_plane_mean.csv: mean of {len(traces)} traces, {len(avg)} points")
    return EXIT_OK


# probe-conflict ----------------------------------------------------------------------------


def cmd_probe_conflict(args) -> int:
    try:
        if args.spec is not None:
            dj, name = load_instance(args.spec), Path(args.spec).stem
        else:
            dj, name = builtin_instance(args.instance), args.instance
        report = conflict_probe(dj, args.beta1, args.beta2, args.grid, name=name)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, f"bad probe instance: {exc}")
    out = Path(args.out) if args.out is not None else Path(f"probe_{name}.json")
    if out.suffix != ".json":
        out = out / f"probe_{name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{name}: {report.verdict} (beta1={args.beta1}, beta2={args.beta2}, G={args.grid}); report in {out}")
    return EXIT_OK


# attack ----------------------------------------------------------------------------------------


def cmd_attack(args) -> int:
    try:
        params, meta = _load(args.checkpoint)
        cfg = meta.get("config", {})
        spec = _dataset_spec(meta, args)
        spec.check_reachable()
        _, eval_set = spec.load(cfg.get("seed", 0))
        if eval_set is None:
            raise UsageError("the dataset has no test or holdout split to attack")
        subset = eval_set.head(args.subset)
        _check_fit(params, subset)
        attack_cfg = AttackConfig(args.mode, args.steps, args.step_size, args.radius, args.attack_samples)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except (FileNotFoundError, IDXFormatError, TypeError) as exc:
        return _fail(EXIT_INPUT, f"dataset not available: {exc}")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    samples = args.samples or cfg.get("eval_samples") or cfg.get("n_samples", 32)
    result = robustness_eval(
        params, subset, attack_cfg, n_samples=samples, deterministic=bool(cfg.get("deterministic", False)), seed=seed
    )
    out = Path(args.out) if args.out is not None else Path("attack.csv")
    if out.suffix != ".csv":
        out = out / "attack.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    result.write_csv(out)
    summary = {"robustness_percent": result.robustness, "clean_accuracy_percent": result.clean_accuracy,
               "n_images": len(subset), "attack": asdict(attack_cfg), "inference_samples": samples, "seed": seed}
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"{args.mode} robustness {result.robustness:.2f}% (clean accuracy {result.clean_accuracy:.2f}%) "
          f"on {len(subset)} images; rows in {out}")
    return EXIT_OK


# gen-data --------------------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else 0
    try:
        ds = gen_binary_task(seed, args.n_bits, label_rule=args.label_rule, noise=args.noise)
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    out = Path(args.out) if args.out is not None else Path(f"binary_{args.n_bits}bit.csv")
    if args.format == "csv":
        if out.suffix != ".csv":
            out = out / f"binary_{args.n_bits}bit.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        to_csv(ds, out)
        print(f"wrote {len(ds)} rows to {out}")
    else:
        out.mkdir(parents=True, exist_ok=True)
        images = (ds.inputs * 255).astype(np.uint8).reshape(len(ds), 1, args.n_bits)
        write_idx(out / "train-images-idx3-ubyte", images)
        write_idx(out / "train-labels-idx1-ubyte", ds.labels.astype(np.uint8))
        print(f"wrote {len(ds)} IDX records to {out}")
    return EXIT_OK


# parser -----------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named configuration")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", type=Path, help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="imb-lab", description="Information multi-bottleneck experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a network from a config or preset")
    p.add_argument("--algorithm", choices=["joint", "greedy", "mle"])
    p.add_argument("--beta", help="scalar or comma-separated per-layer values")
    p.add_argument("--gamma", help="scalar or comma-separated per-layer values")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="classification error of a checkpoint")
    p.add_argument("checkpoint", type=Path, help="checkpoint file or run directory")
    p.add_argument("--dataset", type=Path, help="MNIST directory (defaults to the checkpoint's dataset)")
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--samples", type=int, help="sampled paths per input")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info-plane", parents=[common], help="exact information plane of saved checkpoints")
    p.add_argument("run_dir", type=Path, help="run directory, or a directory of run directories")
    p.add_argument("--plot", action="store_true", help="also write SVG scatter plots")
    p.set_defaults(func=cmd_info_plane)

    p = sub.add_parser("probe-conflict", parents=[common], help="grid probe of conflicting layer optima")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--instance", choices=BUILTIN_INSTANCES, default="generic")
    group.add_argument("--spec", type=Path, help="JSON instance with 'pxy' and optional 'p_z2_z1'")
    p.add_argument("--beta1", type=float, default=1.0)
    p.add_argument("--beta2", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=21)
    p.set_defaults(func=cmd_probe_conflict)

    p = sub.add_parser("attack", parents=[common], help="L2 attack robustness of a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--dataset", type=Path, help=f"MNIST directory (default {DEFAULT_MNIST_DIR})")
    p.add_argument("--subset", type=int, default=1000, help="first N test images")
    p.add_argument("--mode", choices=ATTACK_MODES, default="untargeted")
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--attack-samples", type=int, default=0, help="sampled paths for the input gradient (0 = mean field)")
    p.add_argument("--samples", type=int, help="sampled paths for the model decision")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic binary task")
    p.add_argument("--n-bits", type=int, default=12)
    p.add_argument("--label-rule", choices=LABEL_RULES, default="linear")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--format", choices=["csv", "idx"], default="csv")
    p.set_defaults(func=cmd_gen_data)
    return parser


def _thread_limit():
    value = os.environ.get("IMB_LAB_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"IMB_LAB_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"IMB_LAB_THREADS must be a positive integer, got {value!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        limit = _thread_limit()
    except UsageError as exc:
        return _fail(EXIT_INPUT, str(exc))
    if limit is None:
        return args.func(args)
    with threadpool_limits(limits=limit):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
