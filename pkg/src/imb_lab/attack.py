"""Projected L2 gradient attacks and robustness rates.

The attack ascends the cross-entropy of the true label (untargeted) or
descends the cross-entropy of a target label (targeted) with normalized
gradient steps, projecting back onto the L2 ball around the clean input and
into the unit box after every step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .data import Dataset
from .exceptions import ConfigError
from .network import NetworkParams, predictive_proba, sigmoid

ATTACK_MODES = ("untargeted", "targeted")
ATTACK_CSV_HEADER = ("image_index", "mode", "target", "success", "l2_norm")
_ATTACK_STREAM = 0x44


@dataclass
class AttackConfig:
    """``n_samples = 0`` takes input gradients through the mean-field pass."""

    mode: str = "untargeted"
    steps: int = 100
    step_size: float = 0.1
    max_l2_radius: float = 3.0
    n_samples: int = 0
    target: int | None = None

    def __post_init__(self):
        if self.mode not in ATTACK_MODES:
            raise ConfigError(f"mode must be one of {ATTACK_MODES}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.max_l2_radius > 0:
            raise ConfigError("max_l2_radius must be > 0")
        if self.step_size < 0 or self.n_samples < 0:
            raise ConfigError("step_size and n_samples must be >= 0")


def _input_gradient(params: NetworkParams, x, labels, n_samples, rng):
    """Gradient of ``-log p(label | x)`` with respect to ``x``, one row per input."""
    n_layers = params.n_layers
    if n_samples == 0:
        probs, values = [], x
        for l in range(n_layers):
            values = sigmoid(values @ params.weights[l].T + params.biases[l])
            probs.append(values)
        logits = values @ params.head_weight.T + params.head_bias
        d_logits = softmax(logits, axis=1)
        d_logits[np.arange(len(x)), labels] -= 1.0
        g = d_logits @ params.head_weight
        for l in range(n_layers - 1, -1, -1):
            g = (g * probs[l] * (1.0 - probs[l])) @ params.weights[l]
        return g

    # sampled paths, each unit passing the gradient of its probability
    m = n_samples
    rows = np.repeat(np.arange(len(x)), m)
    values, probs = x[rows], []
    for l in range(n_layers):
        p = sigmoid(values @ params.weights[l].T + params.biases[l])
        probs.append(p)
        values = (rng.random(p.shape) < p).astype(float)
    logq = log_softmax(values @ params.head_weight.T + params.head_bias, axis=1)
    q = np.exp(logq)
    qy = q[np.arange(len(rows)), labels[rows]].reshape(len(x), m)
    weight = qy / np.maximum(qy.sum(axis=1, keepdims=True), 1e-300)
    # d(-log mean_m q_m(y)) / d logits_m = -w_m (onehot - q_m)
    d_logits = q.copy()
    d_logits[np.arange(len(rows)), labels[rows]] -= 1.0
    d_logits *= weight.reshape(-1, 1)
    g = d_logits @ params.head_weight
    for l in range(n_layers - 1, -1, -1):
        g = (g * probs[l] * (1.0 - probs[l])) @ params.weights[l]
    return g.reshape(len(x), m, -1).sum(axis=1)


def _project(x_adv, x, radius):
    delta = x_adv - x
    norm = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norm, 1e-300))
    return np.clip(x + delta * scale, 0.0, 1.0)


def l2_attack(params: NetworkParams, x, y_true, cfg: AttackConfig, rng=None, *, target=None) -> np.ndarray:
    """Adversarial inputs within ``cfg.max_l2_radius`` of ``x`` (rows of a batch or one vector).

    ``target`` (per row, or ``cfg.target``) is required in targeted mode.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("inputs must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    if cfg.mode == "targeted":
        target = cfg.target if target is None else target
        if target is None:
            raise ConfigError("targeted mode needs a target label")
        labels, sign = np.broadcast_to(np.asarray(target, dtype=int), (len(x),)).copy(), -1.0
    else:
        labels, sign = np.broadcast_to(np.asarray(y_true, dtype=int), (len(x),)).copy(), 1.0
    x_adv = x.copy()
    if cfg.step_size > 0:
        for _ in range(cfg.steps):
            g = sign * _input_gradient(params, x_adv, labels, cfg.n_samples, rng)
            norm = np.linalg.norm(g, axis=1, keepdims=True)
            step = np.divide(g, norm, out=np.zeros_like(g), where=norm > 0)
            x_adv = _project(x_adv + cfg.step_size * step, x, cfg.max_l2_radius)
    return x_adv[0] if single else x_adv


def classify(params, x, *, n_samples=32, seed=0, deterministic=False) -> np.ndarray:
    """Model decision with a fixed inference stream, so repeated calls agree."""
    rng = np.random.default_rng([int(seed), _ATTACK_STREAM])
    return predictive_proba(params, x, n_samples, rng, deterministic=deterministic).argmax(axis=1)


@dataclass
class RobustnessResult:
    robustness: float  # percent
    rows: list  # (image_index, mode, target, success, l2_norm)
    clean_accuracy: float  # percent

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ATTACK_CSV_HEADER)
            for i, mode, target, success, norm in self.rows:
                writer.writerow([i, mode, "" if target is None else target, int(success), f"{norm:.6g}"])


def robustness_eval(
    params: NetworkParams,
    dataset: Dataset,
    cfg: AttackConfig,
    *,
    n_samples=32,
    deterministic=False,
    seed=0,
    batch_size=256,
) -> RobustnessResult:
    """Percentage of inputs the attack fails on.

    Untargeted: share of the subset that is classified correctly both before
    and after the attack (so a zero radius gives the clean accuracy).
    Targeted: share of ``(image, target)`` pairs, over every label other than
    the true one, where the attacked input is not classified as the target.
    """
    if len(dataset) == 0:
        raise ValueError("the attack subset is empty")
    decide = lambda z: classify(params, z, n_samples=n_samples, seed=seed, deterministic=deterministic)  # noqa: E731
    rng = np.random.default_rng([int(seed), _ATTACK_STREAM, 1])
    x, y = dataset.inputs, dataset.labels
    clean = decide(x) == y
    rows = []
    if cfg.mode == "untargeted":
        held = np.zeros(len(x), dtype=bool)
        for s in range(0, len(x), batch_size):
            sl = slice(s, s + batch_size)
            adv = l2_attack(params, x[sl], y[sl], cfg, rng)
            held[sl] = clean[sl] & (decide(adv) == y[sl])
            norms = np.linalg.norm(adv - x[sl], axis=1)
            for k, i in enumerate(range(s, min(s + batch_size, len(x)))):
                rows.append((i, "untargeted", None, not held[i], float(norms[k])))
        robust = 100.0 * held.mean()
    else:
        pairs = [(i, t) for i in range(len(x)) for t in range(dataset.n_classes) if t != y[i]]
        failed = 0
        for s in range(0, len(pairs), batch_size):
            chunk = pairs[s : s + batch_size]
            idx = np.array([i for i, _ in chunk])
            tgt = np.array([t for _, t in chunk])
            adv = l2_attack(params, x[idx], y[idx], cfg, rng, target=tgt)
            hit = decide(adv) == tgt
            failed += int((~hit).sum())
            norms = np.linalg.norm(adv - x[idx], axis=1)
            rows.extend((int(i), "targeted", int(t), bool(h), float(n)) for i, t, h, n in zip(idx, tgt, hit, norms))
        robust = 100.0 * failed / max(len(pairs), 1)
    return RobustnessResult(float(robust), rows, float(100.0 * clean.mean()))
