"""Run configuration files (YAML), their schema, and the named presets.

A run document has four sections::

    dataset:       {kind: toy | mnist | csv, ...}
    architecture:  {hidden: [10, 8, 6, 4]}
    training:      {algorithm: joint, beta: 1.0e-4, ...}   # IMBConfig fields
    output_dir:    runs/toy
    plots:         true

Unknown keys and ill-typed values are rejected with the line they occur on.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .data import LABEL_RULES, Dataset, find_mnist_files, gen_binary_task, load_csv, load_mnist_idx, split_and_batch
from .exceptions import ConfigError
from .network import GROWTH_MODES
from .optim import OPTIMIZERS
from .training import ALGORITHMS, IMBConfig

DEFAULT_MNIST_DIR = os.environ.get("IMB_LAB_MNIST_DIR", "data/mnist")

_NUM = (int, float)
_WEIGHTS = (int, float, list)

DATASET_SCHEMA = {
    "kind": str,
    "path": str,
    "n_bits": int,
    "label_rule": str,
    "noise": _NUM,
    "data_seed": int,
    "holdout_fraction": _NUM,
    "train_subset": (int, type(None)),
    "test_subset": (int, type(None)),
}
ARCHITECTURE_SCHEMA = {"hidden": list}
TRAINING_SCHEMA = {
    "algorithm": str,
    "beta": _WEIGHTS,
    "gamma": _WEIGHTS,
    "n_samples": int,
    "growth": str,
    "n_continuations": int,
    "deterministic": bool,
    "optimizer": str,
    "learning_rate": (int, float, type(None)),
    "optimizer_options": dict,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "mi_eval_every": int,
    "checkpoint_every": int,
    "eval_every": int,
    "eval_samples": (int, type(None)),
    "early_stop": bool,
    "particle_budget": int,
    "init_scale": _NUM,
}
TOP_SCHEMA = {"dataset": dict, "architecture": dict, "training": dict, "output_dir": str, "plots": bool}
SECTION_SCHEMAS = {"dataset": DATASET_SCHEMA, "architecture": ARCHITECTURE_SCHEMA, "training": TRAINING_SCHEMA}
DATASET_KINDS = ("toy", "mnist", "csv")
CHOICES = {
    ("dataset", "kind"): DATASET_KINDS,
    ("dataset", "label_rule"): LABEL_RULES,
    ("training", "algorithm"): ALGORITHMS,
    ("training", "growth"): GROWTH_MODES,
    ("training", "optimizer"): OPTIMIZERS,
}

PRESETS = {
    "toy-12bit": {
        "dataset": {"kind": "toy", "n_bits": 12, "label_rule": "linear", "data_seed": 0, "holdout_fraction": 0.2},
        "architecture": {"hidden": [10, 8, 6, 4]},
        "training": {
            "algorithm": "joint",
            "beta": 1e-4,
            "gamma": 1.0,
            "n_samples": 8,
            "optimizer": "sgd",
            "learning_rate": 0.5,
            "batch_size": 128,
            "epochs": 5000,
            "init_scale": 4.0,
            "mi_eval_every": 25,
            "eval_every": 250,
        },
        "output_dir": "runs/toy-12bit",
        "plots": True,
    },
    "mnist-512x512": {
        "dataset": {"kind": "mnist", "holdout_fraction": 0.0},
        "architecture": {"hidden": [512, 512]},
        "training": {
            "algorithm": "joint",
            "beta": 1e-4,
            "gamma": 1.0,
            "n_samples": 32,
            "optimizer": "adadelta",
            "learning_rate": 1.0,
            "batch_size": 100,
            "epochs": 200,
            "eval_every": 10,
            "checkpoint_every": 10,
        },
        "output_dir": "runs/mnist-512x512",
        "plots": False,
    },
    "mnist-small": {
        "dataset": {"kind": "mnist", "holdout_fraction": 0.0, "train_subset": 10000},
        "architecture": {"hidden": [128, 128]},
        "training": {
            "algorithm": "joint",
            "beta": 1e-4,
            "gamma": 1.0,
            "n_samples": 8,
            "optimizer": "adam",
            "learning_rate": 1e-3,
            "batch_size": 100,
            "epochs": 20,
            "eval_every": 5,
        },
        "output_dir": "runs/mnist-small",
        "plots": False,
    },
}


# Parsing with line numbers ------------------------------------------------------


class _Diagnostics:
    def __init__(self, source):
        self.source = source
        self.errors = []

    def add(self, line, msg):
        where = f"{self.source}:{line}" if line is not None else self.source
        self.errors.append(f"{where}: {msg}")

    def raise_if_any(self):
        if self.errors:
            raise ConfigError("invalid configuration\n  " + "\n  ".join(self.errors))


def _to_python(node, lines, path=()):
    """Plain Python value of a YAML node; ``lines[path]`` gets each key's 1-based line."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            lines[path + (key,)] = key_node.start_mark.line + 1
            out[key] = _to_python(value_node, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def parse_yaml(text, source="<config>"):
    """``(document, line_map)`` of a YAML mapping; syntax errors become ConfigError with the line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    lines = {}
    if node is None:
        return {}, lines
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: the document must be a mapping")
    return _to_python(node, lines), lines


def _type_ok(value, expected):
    expected = expected if isinstance(expected, tuple) else (expected,)
    if isinstance(value, bool) and bool not in expected:
        return False
    return isinstance(value, expected)


def _type_name(expected):
    expected = expected if isinstance(expected, tuple) else (expected,)
    return " or ".join("null" if t is type(None) else {"dict": "mapping", "list": "list"}.get(t.__name__, t.__name__) for t in expected)


def validate_document(doc, lines, source="<config>", *, partial=False):
    """Check keys and value types of a run document; every problem is reported with its line.

    ``partial=True`` is for a file layered over a preset, which may leave
    required keys to the preset.
    """
    diag = _Diagnostics(source)
    for key, value in doc.items():
        line = lines.get((key,))
        if key not in TOP_SCHEMA:
            diag.add(line, f"unknown key '{key}' (allowed: {', '.join(TOP_SCHEMA)})")
            continue
        if not _type_ok(value, TOP_SCHEMA[key]):
            diag.add(line, f"'{key}' must be a {_type_name(TOP_SCHEMA[key])}")
            continue
        schema = SECTION_SCHEMAS.get(key)
        if schema is None:
            continue
        for sub, sub_value in value.items():
            sub_line = lines.get((key, sub), line)
            if sub not in schema:
                diag.add(sub_line, f"unknown key '{key}.{sub}' (allowed: {', '.join(schema)})")
            elif not _type_ok(sub_value, schema[sub]):
                diag.add(sub_line, f"'{key}.{sub}' must be {_type_name(schema[sub])}, got {sub_value!r}")
            elif (key, sub) in CHOICES and sub_value not in CHOICES[key, sub]:
                diag.add(sub_line, f"'{key}.{sub}' must be one of {', '.join(CHOICES[key, sub])}, got {sub_value!r}")
    ds = doc.get("dataset")
    if isinstance(ds, dict):
        if "kind" not in ds and not partial:
            diag.add(lines.get(("dataset",)), "'dataset.kind' is required")
        elif ds.get("kind") == "csv" and "path" not in ds:
            diag.add(lines.get(("dataset",)), "a csv dataset needs 'dataset.path'")
    arch = doc.get("architecture")
    if isinstance(arch, dict) and isinstance(arch.get("hidden"), list):
        if not arch["hidden"] or not all(_type_ok(h, int) and h > 0 for h in arch["hidden"]):
            diag.add(lines.get(("architecture", "hidden")), "'architecture.hidden' must list positive integers")
    diag.raise_if_any()


# Run configuration ------------------------------------------------------------------


@dataclass
class DatasetSpec:
    kind: str = "toy"
    path: str | None = None
    n_bits: int = 12
    label_rule: str = "linear"
    noise: float = 0.0
    data_seed: int = 0
    holdout_fraction: float = 0.2
    train_subset: int | None = None
    test_subset: int | None = None

    def check_reachable(self):
        """Raise FileNotFoundError before any work if the data cannot be found."""
        if self.kind == "mnist":
            directory = self.path or DEFAULT_MNIST_DIR
            find_mnist_files(directory, "train")
            find_mnist_files(directory, "test")
        elif self.kind == "csv" and not Path(self.path).is_file():
            raise FileNotFoundError(f"dataset file {self.path} does not exist")

    def load(self, seed=0) -> tuple[Dataset, Dataset | None]:
        """``(train, evaluation set)``; the toy task keeps its exact joint on the training part."""
        if self.kind == "toy":
            full = gen_binary_task(self.data_seed, self.n_bits, label_rule=self.label_rule, noise=self.noise)
            train, holdout, _ = split_and_batch(full, self.holdout_fraction, 1, seed)
            return train, holdout
        if self.kind == "csv":
            full = load_csv(self.path)
            train, holdout, _ = split_and_batch(full, self.holdout_fraction, 1, seed)
            return train, holdout
        directory = self.path or DEFAULT_MNIST_DIR
        full = load_mnist_idx(*find_mnist_files(directory, "train"))
        train, holdout, _ = split_and_batch(full, self.holdout_fraction, 1, seed)
        if self.train_subset is not None:
            train = train.head(self.train_subset)
        if holdout is None:
            holdout = load_mnist_idx(*find_mnist_files(directory, "test"))
        if self.test_subset is not None:
            holdout = holdout.head(self.test_subset)
        return train, holdout


@dataclass
class RunConfig:
    dataset: DatasetSpec
    imb: IMBConfig
    output_dir: Path
    plots: bool = False

    def to_document(self) -> dict:
        training = self.imb.to_dict()
        hidden = training.pop("hidden")
        ds = {f.name: getattr(self.dataset, f.name) for f in fields(DatasetSpec)}
        return {
            "dataset": {k: v for k, v in ds.items() if v is not None},
            "architecture": {"hidden": hidden},
            "training": training,
            "output_dir": str(self.output_dir),
            "plots": self.plots,
        }

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_document(), sort_keys=False), encoding="utf-8")


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_run_config(doc, source="<config>") -> RunConfig:
    """Turn a validated document into typed objects; semantic errors become ConfigError."""
    validate_document(doc, {}, source)
    ds = DatasetSpec(**doc.get("dataset", {}))
    training = dict(doc.get("training", {}))
    hidden = doc.get("architecture", {}).get("hidden", list(IMBConfig.hidden))
    try:
        imb = IMBConfig(hidden=tuple(hidden), **training)
        if ds.kind == "toy":
            # cheap check of n_bits, label_rule and noise on a 1-bit task
            gen_binary_task(ds.data_seed, 1, label_rule=ds.label_rule, noise=ds.noise)
            if not 1 <= ds.n_bits <= 20:
                raise ConfigError("dataset.n_bits must be in 1..20")
        if not 0 <= ds.holdout_fraction < 1:
            raise ConfigError("dataset.holdout_fraction must lie in [0, 1)")
        imb.make_optimizer()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(ds, imb, Path(doc.get("output_dir", "runs/default")), bool(doc.get("plots", False)))


def load_run_config(path=None, preset=None, overrides=None) -> RunConfig:
    """Preset first, then the YAML file, then command-line overrides (a partial document)."""
    if path is None and preset is None:
        raise ConfigError("give --config PATH or --preset NAME")
    doc = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {', '.join(PRESETS)}")
        doc = copy.deepcopy(PRESETS[preset])
    source = "<preset>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        file_doc, lines = parse_yaml(text, source)
        validate_document(file_doc, lines, source, partial=preset is not None)
        doc = _merge(doc, file_doc)
    if overrides:
        doc = _merge(doc, overrides)
    return build_run_config(doc, source)
