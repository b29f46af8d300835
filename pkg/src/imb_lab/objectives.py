"""Monte-Carlo estimators of the per-layer bottleneck terms.

All values are in nats. For layer ``l`` the relevance term is the variational
conditional relevance (VCR), an upper bound on ``H(Y | Z_l)`` whose decoder
``p_v(y | z_l)`` is the network's own downstream path averaged over the
particle's descendants. The compression term is the mean-field KL bound on
``I(Z_l; Z_{l-1})``. The per-layer objective minimized by the trainers is::

    L_l = VCR_l + beta_l * COMP_l

and the joint objective is ``sum_l gamma_l * L_l`` over ``l = 0..L``, with
``COMP_0 = 0`` because ``I(X; X)`` does not depend on the parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, rel_entr

from .exceptions import ConfigError
from .network import NetworkParams, ParticleCloud, sigmoid

PROB_FLOOR = 1e-12


def bernoulli_kl(p, r):
    """``KL(Bern(p) || Bern(r))`` in nats, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any((r <= 0) | (r >= 1)):
        raise ValueError("the reference probability r must lie strictly inside (0, 1)")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p must lie in [0, 1]")
    out = rel_entr(p, r) + rel_entr(1.0 - p, 1.0 - r)
    return np.maximum(out, 0.0)


def softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def bernoulli_kl_logits(a, rho, p=None):
    """Same divergence parameterized by logits ``a = logit(p)``, ``rho = logit(r)``.

    Uses ``KL = p (a - rho) - softplus(a) + softplus(rho)``.
    """
    if p is None:
        p = sigmoid(a)
    return p * (a - rho) - softplus(a) + softplus(rho)


def compression_term(cloud: ParticleCloud, params: NetworkParams, l: int) -> float:
    """Mean over layer ``l-1`` particles of ``sum_i KL(p(z_{l,i} | z_{l-1}) || r_{l,i})``."""
    if not 1 <= l <= params.n_layers:
        raise ValueError(f"compression is defined for layers 1..{params.n_layers}")
    layer = cloud.layer(l)
    if len(layer) == 0:
        raise ValueError("empty particle cloud")
    # children of one parent share its generator and every parent has the
    # same number of children, so the mean over parents is taken directly
    step = layer.fanout
    kl = bernoulli_kl_logits(layer.pre[::step], params.marginal_logits[l - 1], layer.probs[::step])
    return float(np.mean(kl.sum(axis=1)))


def leaf_groups(cloud: ParticleCloud, l: int) -> tuple[list, np.ndarray]:
    """Leaves reached from each layer-``l`` particle.

    Returns ``(leaf_layers, index)`` where ``leaf_layers`` lists the
    ParticleLayers whose rows are concatenated into one leaf array and
    ``index[j]`` holds the leaf rows descending from particle ``j`` of layer
    ``l`` (``l = 0`` means the inputs themselves).
    """
    last = cloud.layers[-1]
    n_l = cloud.n_inputs if l == 0 else len(cloud.layer(l))
    index = np.arange(len(last)).reshape(n_l, len(last) // n_l)
    leaf_layers = [last]
    branch = cloud.continuations.get(l) if l >= 1 else None
    if branch:
        extra = branch[-1]
        k = len(extra) // n_l
        more = len(last) + np.arange(len(extra)).reshape(n_l, k)
        index = np.concatenate([index, more], axis=1)
        leaf_layers.append(extra)
    return leaf_layers, index


def _label_probs(params, leaf_layers, cloud, labels):
    """Head probability of the true label at every leaf row."""
    out = []
    for layer in leaf_layers:
        owner = np.repeat(np.asarray(labels), len(layer) // cloud.n_inputs)
        logq = log_softmax(layer.z @ params.head_weight.T + params.head_bias, axis=1)
        out.append(np.exp(logq[np.arange(len(layer)), owner]))
    return np.concatenate(out)


def _relevance(cloud, params, l, labels):
    """Returns ``(vcr, decoder_probs, index, leaf_probs, n_floored)``."""
    leaf_layers, index = leaf_groups(cloud, l)
    q = _label_probs(params, leaf_layers, cloud, labels)
    p_v = q[index].mean(axis=1)
    floored = p_v < PROB_FLOOR
    vcr = float(np.mean(-np.log(np.maximum(p_v, PROB_FLOOR))))
    return vcr, p_v, index, q, int(floored.sum())


def _check_cloud(cloud, params, labels):
    if cloud.n_inputs == 0 or len(cloud.layers[-1]) == 0:
        raise ValueError("empty particle cloud")
    if cloud.n_layers != params.n_layers:
        raise ValueError("particle cloud and network have different depths")
    if len(np.atleast_1d(labels)) != cloud.n_inputs:
        raise ValueError("one label per input is required")


def vcr_term(cloud: ParticleCloud, params: NetworkParams, l: int, y) -> float:
    """Monte-Carlo VCR of layer ``l``: ``-E log p_v(y | z_l)`` in nats.

    The log is taken after averaging the head over each particle's
    descendants. Decoder probabilities below ``PROB_FLOOR`` are clamped.
    """
    labels = np.atleast_1d(np.asarray(y, dtype=int))
    _check_cloud(cloud, params, labels)
    if not 0 <= l <= params.n_layers:
        raise ValueError(f"relevance is defined for layers 0..{params.n_layers}")
    vcr, _, _, _, n_floored = _relevance(cloud, params, l, labels)
    if n_floored:
        warnings.warn(f"{n_floored} decoder probabilities clamped at {PROB_FLOOR}", RuntimeWarning)
    return vcr


def nll_term(cloud: ParticleCloud, params: NetworkParams, y) -> float:
    """Monte-Carlo negative log-likelihood ``-log mean_paths p(y | z_L)``.

    This is the VCR of the input layer, evaluated by the same code path.
    """
    return vcr_term(cloud, params, 0, y)


@dataclass
class ObjectiveBreakdown:
    """Per-layer terms of the joint objective, in nats. Index ``l`` runs over ``0..L``."""

    vcr: list[float]
    comp: list[float]
    betas: list[float]
    gammas: list[float]
    n_floored: int = 0
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(self.contributions()))

    def layer_objective(self, l) -> float:
        return self.vcr[l] + self.betas[l] * self.comp[l]

    def contributions(self) -> list[float]:
        """``gamma_l * VCR_l`` and ``gamma_l * beta_l * COMP_l`` for every layer, in order."""
        out = []
        for v, c, b, g in zip(self.vcr, self.comp, self.betas, self.gammas):
            out.append(g * v)
            out.append(g * b * c)
        return out

    @property
    def nll(self) -> float:
        return self.vcr[0]


def resolve_weights(value, n_layers, name, positive):
    """Broadcast a scalar or a per-layer sequence to ``n_layers + 1`` floats."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n_layers + 1, arr[0])
    if arr.size != n_layers + 1:
        raise ConfigError(f"{name} needs 1 or {n_layers + 1} entries (layers 0..{n_layers}), got {arr.size}")
    if positive and np.any(arr <= 0):
        raise ConfigError(f"every {name} must be > 0")
    if not positive and np.any(arr < 0):
        raise ConfigError(f"every {name} must be >= 0")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    return [float(v) for v in arr]


def joint_objective(cloud: ParticleCloud, labels, params: NetworkParams, config) -> ObjectiveBreakdown:
    """Evaluate ``sum_l gamma_l (VCR_l + beta_l COMP_l)`` on one particle cloud.

    ``config`` needs ``beta`` and ``gamma`` attributes (scalars or one value
    per layer ``0..L``). Every term is reported even when its weight is zero.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    _check_cloud(cloud, params, labels)
    n_layers = params.n_layers
    betas = resolve_weights(config.beta, n_layers, "beta", positive=True)
    gammas = resolve_weights(config.gamma, n_layers, "gamma", positive=False)
    vcr, comp, floored = [], [0.0], 0
    for l in range(n_layers + 1):
        value, _, _, _, n = _relevance(cloud, params, l, labels)
        vcr.append(value)
        floored += n
    for l in range(1, n_layers + 1):
        comp.append(compression_term(cloud, params, l))
    return ObjectiveBreakdown(vcr, comp, betas, gammas, floored)
