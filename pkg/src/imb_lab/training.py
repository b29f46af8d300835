"""Raiko surrogate gradients and the JointIMB, GreedyIMB and MLE trainers."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from .data import BatchSampler, Dataset
from .exact import ExactNetwork, InfoPlanePoint, dpi_violations, info_plane_point
from .exceptions import BudgetExceededError, ConfigError, NonFiniteGradientError
from .network import GROWTH_MODES, NetworkParams, ParticleCloud, grow_particles, predictive_proba
from .objectives import PROB_FLOOR, ObjectiveBreakdown, bernoulli_kl_logits, leaf_groups, resolve_weights
from .optim import DEFAULTS, OPTIMIZERS, Optimizer

logger = logging.getLogger(__name__)

ALGORITHMS = ("joint", "greedy", "mle")
CHECKPOINT_VERSION = 1

# tags that separate the independent random streams derived from one seed
_INIT, _PARTICLES, _EVAL = 0x11, 0x22, 0x33


@dataclass
class IMBConfig:
    """Everything a training run depends on.

    ``beta`` weights the compression term of each layer objective and
    ``gamma`` weights the layer objectives in the joint sum; both accept a
    scalar or one value per layer ``0..L``. Under ``algorithm="mle"`` the
    weights are replaced by ``gamma = (1, 0, ..., 0)``.
    """

    hidden: tuple = (10, 8, 6, 4)
    algorithm: str = "joint"
    beta: float | tuple = 1e-4
    gamma: float | tuple = 1.0
    n_samples: int = 32
    growth: str = "chain"
    n_continuations: int = 1
    deterministic: bool = False
    optimizer: str = "sgd"
    learning_rate: float | None = None
    optimizer_options: dict = field(default_factory=dict)
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    mi_eval_every: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_samples: int | None = None
    early_stop: bool = False
    particle_budget: int = 2_000_000
    init_scale: float = 1.0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.beta, list):
            self.beta = tuple(self.beta)
        if isinstance(self.gamma, list):
            self.gamma = tuple(self.gamma)
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden must list at least one positive width")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.growth not in GROWTH_MODES:
            raise ConfigError(f"growth must be one of {GROWTH_MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.n_samples < 1 or self.n_continuations < 1:
            raise ConfigError("n_samples and n_continuations must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        for name in ("mi_eval_every", "checkpoint_every", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        self.betas()
        self.gammas()

    @property
    def n_layers(self):
        return len(self.hidden)

    def betas(self):
        return resolve_weights(self.beta, self.n_layers, "beta", positive=True)

    def gammas(self):
        if self.algorithm == "mle":
            return [1.0] + [0.0] * self.n_layers
        return resolve_weights(self.gamma, self.n_layers, "gamma", positive=False)

    def make_optimizer(self) -> Optimizer:
        options = dict(self.optimizer_options)
        if self.learning_rate is not None:
            options["learning_rate"] = self.learning_rate
        return Optimizer(self.optimizer, **options)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        for k in ("beta", "gamma"):
            if isinstance(d[k], tuple):
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d) -> "IMBConfig":
        return cls(**d)


# Gradients --------------------------------------------------------------------


def _head_backward(params, grads, layer, labels_rows, dqy, q):
    """Push ``d loss / d q_y`` at leaf rows through the softmax head; returns ``d loss / d z_L``."""
    qy = q[np.arange(len(layer)), labels_rows]
    dh = -(dqy * qy)[:, None] * q
    dh[np.arange(len(layer)), labels_rows] += dqy * qy
    grads.head_weight += dh.T @ layer.z
    grads.head_bias += dh.sum(axis=0)
    return dh @ params.head_weight


def _layer_backward(params, grads, l, layer, parent_values, dz, da_extra=None, need_input_grad=True):
    """Raiko step: ``dz/da`` is taken as ``sigmoid'(a)`` even though ``z`` was sampled.

    ``da_extra`` is a direct gradient on the pre-activations of the parent
    rows (one row per distinct generator).
    """
    da = dz * layer.probs * (1.0 - layer.probs)
    fanout = layer.fanout
    # children of one parent share its pre-activation; fold them first
    da_parent = da.reshape(parent_values.shape[0], fanout, -1).sum(axis=1) if fanout > 1 else da
    if da_extra is not None:
        da_parent = da_parent + da_extra
    grads.weights[l - 1] += da_parent.T @ parent_values
    grads.biases[l - 1] += da_parent.sum(axis=0)
    if need_input_grad:
        return da_parent @ params.weights[l - 1]
    return None


def objective_and_gradient(params: NetworkParams, cloud: ParticleCloud, labels, betas, gammas, *, lowest_layer=1):
    """Evaluate the joint objective on a cloud and its Raiko-surrogate gradient.

    Terms with ``gamma_l = 0`` are reported but contribute nothing to the
    gradient. Backpropagation stops at layer ``lowest_layer``: gradients of
    encoders below it are left at zero (used for frozen greedy stages).
    Returns ``(ObjectiveBreakdown, gradient NetworkParams)``.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    n_layers = params.n_layers
    n_inputs = cloud.n_inputs
    for layer in cloud.layers:
        if layer.pre is None or layer.probs is None:
            raise ValueError("particle cloud lacks stored pre-activations")
    grads = params.zeros_like()

    # head outputs at every leaf set, computed once
    def head(layer):
        rows = np.repeat(labels, len(layer) // n_inputs)
        logq = log_softmax(layer.z @ params.head_weight.T + params.head_bias, axis=1)
        q = np.exp(logq)
        return rows, q, q[np.arange(len(layer)), rows]

    last = cloud.layers[-1]
    main_rows, main_q, main_qy = head(last)
    d_main = np.zeros(len(last))
    branch_heads, d_branch = {}, {}

    vcr, floored = [], 0
    for l in range(n_layers + 1):
        leaf_layers, index = leaf_groups(cloud, l)
        if len(leaf_layers) > 1:
            branch_heads[l] = head(leaf_layers[1])
            qy = np.concatenate([main_qy, branch_heads[l][2]])
        else:
            qy = main_qy
        p_v = qy[index].mean(axis=1)
        low = p_v < PROB_FLOOR
        floored += int(low.sum())
        vcr.append(float(np.mean(-np.log(np.maximum(p_v, PROB_FLOOR)))))
        if gammas[l] == 0:
            continue
        coef = np.where(low, 0.0, -gammas[l] / (index.size * np.maximum(p_v, PROB_FLOOR)))
        d = np.zeros(len(qy))
        d[index] = coef[:, None]
        d_main += d[: len(last)]
        if len(leaf_layers) > 1:
            d_branch[l] = d[len(last) :]

    comp = [0.0]
    da_direct = {}
    for l in range(1, n_layers + 1):
        layer = cloud.layer(l)
        rho = params.marginal_logits[l - 1]
        step = layer.fanout
        pre, p = layer.pre[::step], layer.probs[::step]
        comp.append(float(np.mean(bernoulli_kl_logits(pre, rho, p).sum(axis=1))))
        w = gammas[l] * betas[l]
        if w == 0 or l < lowest_layer:
            continue
        n = len(pre)
        # d KL / d a = (a - rho) p (1 - p),  d KL / d rho = r - p
        da_direct[l] = (w / n) * (pre - rho) * p * (1.0 - p)
        grads.marginal_logits[l - 1] += (w / n) * (1.0 / (1.0 + np.exp(-rho)) - p).sum(axis=0)

    breakdown = ObjectiveBreakdown(vcr, comp, list(betas), list(gammas), floored)

    dz = {l: None for l in range(1, n_layers + 1)}
    dz[n_layers] = _head_backward(params, grads, last, main_rows, d_main, main_q)

    # extra continuation paths feed gradients back into their root layer
    for l, d in d_branch.items():
        branch = cloud.continuations[l]
        rows, q, _ = branch_heads[l]
        g = _head_backward(params, grads, branch[-1], rows, d, q)
        for k in range(n_layers, l, -1):
            layer = branch[k - l - 1]
            parent_values = cloud.layer(l).z if k == l + 1 else branch[k - l - 2].z
            g = _layer_backward(params, grads, k, layer, parent_values, g)
        dz[l] = g if dz[l] is None else dz[l] + g

    for l in range(n_layers, lowest_layer - 1, -1):
        layer = cloud.layer(l)
        g = dz[l] if dz[l] is not None else np.zeros_like(layer.z)
        parent_values = cloud.inputs if l == 1 else cloud.layer(l - 1).z
        back = _layer_backward(
            params, grads, l, layer, parent_values, g, da_direct.get(l), need_input_grad=l > lowest_layer
        )
        if back is not None:
            dz[l - 1] = back if dz[l - 1] is None else dz[l - 1] + back
    return breakdown, grads


def raiko_backward(params: NetworkParams, cloud: ParticleCloud, labels, config: IMBConfig) -> NetworkParams:
    """Gradient of the Monte-Carlo joint objective under the Raiko surrogate.

    Sampled units pass gradients as if they were their probabilities; the KL
    compression terms are differentiated in closed form.
    """
    _, grads = objective_and_gradient(params, cloud, labels, config.betas(), config.gammas())
    return grads


# Training ---------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    vcr: list
    comp: list
    total: float
    train_error: float | None = None
    test_error: float | None = None
    aborted: bool = False


@dataclass
class TrainLog:
    config: dict
    records: list = field(default_factory=list)
    info_plane: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    stage_boundaries: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    params: NetworkParams | None = None
    wall_clock: float = 0.0

    def objective_trace(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def relevance(self, layer) -> list[tuple[int, float]]:
        """``(epoch, I(Z_l; Y))`` pairs of the exact info-plane log."""
        return [(p.epoch, p.i_y) for p in self.info_plane if p.layer == layer]


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


def evaluate(params, dataset: Dataset, n_samples=32, repeats=10, *, seed=0, deterministic=False):
    """Mean and standard deviation of the error rate over ``repeats`` fresh inference seeds.

    Each repeat classifies by the argmax of the ``n_samples``-path estimate of ``p(y | x)``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    errors = []
    for r in range(repeats):
        proba = predictive_proba(params, dataset.inputs, n_samples, _rng(seed, _EVAL, r), deterministic=deterministic)
        errors.append(float(np.mean(proba.argmax(axis=1) != dataset.labels)))
    return float(np.mean(errors)), float(np.std(errors))


class _Trainer:
    def __init__(self, train: Dataset, config: IMBConfig, test: Dataset | None, joint):
        self.train = train
        self.test = test
        self.config = config
        self.joint = joint if joint is not None else train.joint
        self.sampler = BatchSampler(len(train), config.batch_size, config.seed)
        self.params = NetworkParams.initialize(
            train.n_features, config.hidden, train.n_classes, _rng(config.seed, _INIT), init_scale=config.init_scale
        )
        self.log = TrainLog(config=config.to_dict())
        self.mi_enabled = config.mi_eval_every > 0 and self.joint is not None
        if config.mi_eval_every > 0 and self.joint is None:
            self._warn("info-plane logging requested but the dataset has no exact joint; skipped")

    def _warn(self, msg):
        warnings.warn(msg, RuntimeWarning)
        self.log.messages.append(msg)

    def _cloud(self, x, epoch, batch):
        c = self.config
        return grow_particles(
            self.params, x, c.n_samples, c.growth, _rng(c.seed, _PARTICLES, epoch, batch),
            n_continuations=c.n_continuations, deterministic=c.deterministic, budget=c.particle_budget,
        )

    def _due(self, every, epoch, last):
        return epoch == 0 or epoch == last or (every > 0 and epoch % every == 0)

    def _snapshot(self, epoch, stage, sums, aborted=False):
        c = self.config
        n = max(sums["n"], 1)
        vcr = [v / n for v in sums["vcr"]]
        comp = [v / n for v in sums["comp"]]
        total = sums["total"] / n
        rec = EpochRecord(epoch, stage, vcr, comp, total, aborted=aborted)
        last = self._last_epoch
        if c.eval_every > 0 and self._due(c.eval_every, epoch, last):
            m = c.eval_samples or c.n_samples
            rec.train_error = evaluate(self.params, self.train, m, 1, seed=c.seed, deterministic=c.deterministic)[0]
            if self.test is not None:
                rec.test_error = evaluate(self.params, self.test, m, 1, seed=c.seed, deterministic=c.deterministic)[0]
        self.log.records.append(rec)
        if self.mi_enabled and self._due(c.mi_eval_every, epoch, last):
            self._log_information(epoch)
        if self._due(c.checkpoint_every or c.mi_eval_every, epoch, last):
            self.log.checkpoints.append((epoch, self.params.copy()))

    def _log_information(self, epoch):
        try:
            net = ExactNetwork(self.params, self.joint.patterns)
        except BudgetExceededError as exc:
            self._warn(f"info-plane logging disabled: {exc}")
            self.mi_enabled = False
            return
        points = [info_plane_point(net, l, epoch, self.joint.pxy) for l in range(1, self.params.n_layers + 1)]
        bad = dpi_violations(points)
        if bad:
            self._warn(f"epoch {epoch}: data-processing inequality violated {bad}")
        self.log.info_plane.extend(points)

    def _empty_sums(self):
        n_layers = self.config.n_layers
        return {"vcr": [0.0] * (n_layers + 1), "comp": [0.0] * (n_layers + 1), "total": 0.0, "n": 0}

    def _accumulate(self, sums, breakdown: ObjectiveBreakdown, weight):
        for l in range(len(breakdown.vcr)):
            sums["vcr"][l] += weight * breakdown.vcr[l]
            sums["comp"][l] += weight * breakdown.comp[l]
        sums["total"] += weight * breakdown.total
        sums["n"] += weight

    def run(self, stages) -> TrainLog:
        """``stages`` is a list of ``(gammas, lowest_trainable_layer, n_epochs)``."""
        c = self.config
        start = time.perf_counter()
        betas = c.betas()
        self._last_epoch = sum(s[2] for s in stages)

        sums = self._empty_sums()
        for b, idx in enumerate(self.sampler.epoch(0)):
            cloud = self._cloud(self.train.inputs[idx], 0, b)
            gammas = stages[0][0] if stages else c.gammas()
            breakdown, _ = objective_and_gradient(self.params, cloud, self.train.labels[idx], betas, gammas)
            self._accumulate(sums, breakdown, len(idx))
        self._snapshot(0, 0, sums)

        epoch = 0
        names = self.params.names()
        history = []
        for stage, (gammas, lowest, n_epochs) in enumerate(stages, 1):
            self.log.stage_boundaries.append(epoch)
            optimizer = c.make_optimizer()
            mask = [_trainable(name, lowest) for name in names]
            for _ in range(n_epochs):
                epoch += 1
                sums = self._empty_sums()
                aborted = False
                for b, idx in enumerate(self.sampler.epoch(epoch)):
                    cloud = self._cloud(self.train.inputs[idx], epoch, b)
                    breakdown, grads = objective_and_gradient(
                        self.params, cloud, self.train.labels[idx], betas, gammas, lowest_layer=lowest
                    )
                    self._accumulate(sums, breakdown, len(idx))
                    try:
                        optimizer.step(self.params.arrays(), grads.arrays(), names=names, mask=mask)
                    except NonFiniteGradientError as exc:
                        self._warn(f"epoch {epoch} aborted at batch {b}: {exc}")
                        aborted = True
                        break
                self._snapshot(epoch, stage, sums, aborted)
                history.append(self.log.records[-1].total)
                if c.early_stop and _converged(history):
                    self._warn(f"early stop at epoch {epoch}: objective moving average stalled")
                    self._last_epoch = epoch
                    break
        self.log.params = self.params
        if not self.log.checkpoints or self.log.checkpoints[-1][0] != epoch:
            self.log.checkpoints.append((epoch, self.params.copy()))
        self.log.wall_clock = time.perf_counter() - start
        return self.log


def _trainable(name, lowest):
    if name in ("W_out", "b_out"):
        return True
    return int(name[1:]) >= lowest


def _converged(history, window=100, tol=1e-6):
    if len(history) < 2 * window:
        return False
    prev = np.mean(history[-2 * window : -window])
    cur = np.mean(history[-window:])
    return prev - cur < tol


def _check_algorithm(config, expected):
    if config.algorithm != expected:
        raise ConfigError(f"this trainer needs algorithm={expected!r}, config has {config.algorithm!r}")


def train_joint_imb(dataset: Dataset, config: IMBConfig, test: Dataset | None = None, joint=None) -> TrainLog:
    """Minimize ``sum_l gamma_l (VCR_l + beta_l COMP_l)`` over all parameters at once."""
    _check_algorithm(config, "joint")
    return _Trainer(dataset, config, test, joint).run([(config.gammas(), 1, config.epochs)])


def train_mle(dataset: Dataset, config: IMBConfig, test: Dataset | None = None, joint=None) -> TrainLog:
    """Minimize the Monte-Carlo negative log-likelihood only (the stochastic baseline).

    With ``config.deterministic`` the units output their probabilities and
    this trains an ordinary sigmoid network.
    """
    _check_algorithm(config, "mle")
    return _Trainer(dataset, config, test, joint).run([(config.gammas(), 1, config.epochs)])


def greedy_stages(config: IMBConfig):
    """Stage ``s`` optimizes ``L_s`` over the encoder into layer ``s`` and everything above it."""
    n_layers = config.n_layers
    per_stage, extra = divmod(config.epochs, n_layers)
    stages = []
    for s in range(1, n_layers + 1):
        gammas = [0.0] * (n_layers + 1)
        gammas[s] = 1.0
        stages.append((gammas, s, per_stage + (extra if s == n_layers else 0)))
    return stages


def train_greedy_imb(dataset: Dataset, config: IMBConfig, test: Dataset | None = None, joint=None) -> TrainLog:
    """Layer-by-layer optimization; encoders of finished stages stay frozen."""
    _check_algorithm(config, "greedy")
    return _Trainer(dataset, config, test, joint).run(greedy_stages(config))


def train(dataset, config, test=None, joint=None) -> TrainLog:
    trainer = {"joint": train_joint_imb, "greedy": train_greedy_imb, "mle": train_mle}[config.algorithm]
    return trainer(dataset, config, test, joint)


# Checkpoints --------------------------------------------------------------------


def save_checkpoint(path, params: NetworkParams, config: IMBConfig | dict, epoch: int, extra=None):
    """Write an ``.npz`` checkpoint: one array per parameter plus a JSON ``__meta__`` record.

    ``__meta__`` holds ``format_version``, ``epoch``, the config snapshot and
    the name and shape of every parameter array.
    """
    cfg = config.to_dict() if isinstance(config, IMBConfig) else dict(config)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "config": cfg,
        "arrays": {name: list(a.shape) for name, a in params.named_arrays()},
        **(extra or {}),
    }
    arrays = dict(params.named_arrays())
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    with np.load(path) as npz:
        meta = json.loads(npz["__meta__"].tobytes().decode())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
        named = {k: npz[k] for k in meta["arrays"]}
    params = NetworkParams.from_named(named)
    for name, shape in meta["arrays"].items():
        if list(named[name].shape) != shape:
            raise ValueError(f"{path}: array {name} has shape {named[name].shape}, header says {shape}")
    return params, meta
