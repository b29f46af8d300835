"""Exact distributions and information quantities for enumerable networks.

States of a layer of width ``n`` are indexed little-endian: state ``s``
has unit ``i`` on iff ``(s >> i) & 1``. Information-plane quantities are
reported in bits; the variational bounds used to check the Monte-Carlo
objectives are in nats.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

from .exceptions import BudgetExceededError
from .network import NetworkParams, log_sigmoid
from .objectives import bernoulli_kl_logits

MAX_LAYER_WIDTH = 14
MAX_INPUTS = 2**14
_DIST_TOL = 1e-9


def state_bits(n: int) -> np.ndarray:
    """``(2**n, n)`` matrix of 0/1 unit values, little-endian state order."""
    s = np.arange(2**n)[:, None]
    return ((s >> np.arange(n)) & 1).astype(float)


def states_to_index(z) -> np.ndarray:
    z = np.asarray(z, dtype=int)
    return (z << np.arange(z.shape[-1])).sum(axis=-1)


def factorized_table(pre) -> np.ndarray:
    """Rows ``prod_i Bern(z_i; sigmoid(pre_i))`` over every state ``z``."""
    pre = np.atleast_2d(pre)
    bits = state_bits(pre.shape[1])
    log_t = log_sigmoid(pre) @ bits.T + log_sigmoid(-pre) @ (1.0 - bits).T
    return np.exp(log_t)


@dataclass
class ExactLayerDistribution:
    """``table[x, z] = p(z_l = z | x)`` for every enumerated input ``x``."""

    layer: int
    table: np.ndarray


@dataclass
class InfoPlanePoint:
    epoch: int
    layer: int
    i_x: float  # I(Z_l; X) in bits
    i_y: float  # I(Z_l; Y) in bits


class ExactNetwork:
    """Transition tables of a network over a finite input set.

    ``transitions[l]`` maps states of layer ``l - 1`` to states of layer ``l``
    (rows of ``transitions[1]`` are the inputs); ``conditionals[l]`` is
    ``p(z_l | x)``; ``head_table[z, y] = p(y | z_L = z)``.
    """

    def __init__(self, params: NetworkParams, inputs, *, max_width=MAX_LAYER_WIDTH, max_inputs=MAX_INPUTS):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if inputs.shape[0] > max_inputs:
            raise BudgetExceededError(f"{inputs.shape[0]} inputs exceed the enumeration budget of {max_inputs}")
        for l, width in enumerate(params.widths[1:], 1):
            if width > max_width:
                raise BudgetExceededError(
                    f"layer {l} has width {width}; exact enumeration allows at most {max_width} units"
                )
        self.params = params
        self.inputs = inputs
        self.n_layers = params.n_layers
        self.transitions = {}
        prev = inputs
        for l in range(1, self.n_layers + 1):
            pre = prev @ params.weights[l - 1].T + params.biases[l - 1]
            self.transitions[l] = factorized_table(pre)
            prev = state_bits(params.weights[l - 1].shape[0])
        self.conditionals = {1: self.transitions[1]}
        for l in range(2, self.n_layers + 1):
            self.conditionals[l] = self.conditionals[l - 1] @ self.transitions[l]
        last = state_bits(params.widths[-1])
        self.head_table = np.exp(log_softmax(last @ params.head_weight.T + params.head_bias, axis=1))

    def layer_values(self, l) -> np.ndarray:
        """Values feeding layer ``l + 1``: the inputs for ``l = 0``, else every state."""
        return self.inputs if l == 0 else state_bits(self.params.widths[l])

    def decoder(self, l) -> np.ndarray:
        """``p_v(y | z_l)``: the downstream path from layer ``l`` averaged exactly."""
        table = self.head_table
        for k in range(self.n_layers, l, -1):
            table = self.transitions[k] @ table
        return table

    def marginal(self, l, px) -> np.ndarray:
        """``p(z_l)`` under the input distribution ``px`` (``l = 0`` returns ``px``)."""
        return np.asarray(px, dtype=float) if l == 0 else px @ self.conditionals[l]

    def conditional(self, l) -> np.ndarray:
        if l == 0:
            return np.eye(self.inputs.shape[0])
        return self.conditionals[l]

    def predictive(self) -> np.ndarray:
        """Exact ``p(y_hat | x)``."""
        return self.conditionals[self.n_layers] @ self.head_table

    # Exact counterparts of the Monte-Carlo objective terms, in nats.

    def vcr(self, l, pxy) -> float:
        """Exact ``-E log p_v(Y | Z_l)``; ``l = 0`` gives the exact NLL."""
        log_dec = np.log(np.maximum(self.decoder(l), 1e-300))
        cond = self.conditional(l)
        return float(-np.sum(pxy * (cond @ log_dec)))

    def nll(self, pxy) -> float:
        pred = np.maximum(self.predictive(), 1e-300)
        return float(-np.sum(pxy * np.log(pred)))

    def conditional_entropy_y(self, l, pxy) -> float:
        """Exact ``H(Y | Z_l)``."""
        pzy = self.conditional(l).T @ pxy
        pz = pzy.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pzy > 0, pzy / pz, 1.0)
        return float(-np.sum(pzy * np.log(ratio)))

    def compression_bound(self, l, px) -> float:
        """Exact ``E_{z_{l-1}} sum_i KL(p(z_{l,i} | z_{l-1}) || r_{l,i})``."""
        prev = self.layer_values(l - 1)
        pre = prev @ self.params.weights[l - 1].T + self.params.biases[l - 1]
        kl = bernoulli_kl_logits(pre, self.params.marginal_logits[l - 1]).sum(axis=1)
        return float(self.marginal(l - 1, px) @ kl)

    def adjacent_information(self, l, px) -> float:
        """Exact ``I(Z_l; Z_{l-1})`` in nats."""
        return mutual_info(self.transitions[l], self.marginal(l - 1, px), base=np.e)


def propagate_exact(params: NetworkParams, inputs, **budget) -> list[ExactLayerDistribution]:
    """``p(z_l | x)`` for every layer by chaining exact transition tables."""
    net = ExactNetwork(params, inputs, **budget)
    return [ExactLayerDistribution(l, net.conditionals[l]) for l in range(1, net.n_layers + 1)]


def _check_distribution(p, name, axis=None):
    if np.any(p < -_DIST_TOL) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} has negative or non-finite entries")
    sums = p.sum(axis=axis)
    if not np.allclose(sums, 1.0, atol=_DIST_TOL * max(1, p.shape[-1]), rtol=0):
        raise ValueError(f"{name} does not sum to 1")


def mutual_info(P, px, base=2.0) -> float:
    """``I(X; Z)`` for a channel ``P[x, z] = p(z | x)`` and input law ``px``.

    Bits by default; pass ``base=np.e`` for nats.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    px = np.asarray(px, dtype=float)
    if px.shape != (P.shape[0],):
        raise ValueError("px must have one entry per row of P")
    _check_distribution(px, "px")
    _check_distribution(P, "P", axis=1)
    pz = px @ P
    mask = (P > 0) & (px[:, None] > 0)
    joint = (px[:, None] * P)[mask]
    ratio = P[mask] / np.broadcast_to(pz, P.shape)[mask]
    value = float(np.sum(joint * np.log(ratio))) / np.log(base)
    return max(value, 0.0)


def layer_relevance(P, pxy, base=2.0) -> float:
    """``I(Z; Y)`` where ``Z`` depends on ``Y`` only through ``X``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    pxy = np.asarray(pxy, dtype=float)
    if pxy.shape[0] != P.shape[0]:
        raise ValueError("p(x, y) and p(z | x) disagree on the input alphabet")
    _check_distribution(pxy, "p(x, y)")
    py = pxy.sum(axis=0)
    keep = py > 0
    p_x_given_y = pxy[:, keep] / py[keep]
    return mutual_info(p_x_given_y.T @ P, py[keep], base=base)


def entropy(p, base=np.e) -> float:
    p = np.asarray(p, dtype=float).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)) / np.log(base))


@dataclass
class DiscreteJoint:
    """Finite ``p(x, y)`` with optional channels ``p(z1 | x)`` and ``p(z2 | z1)``."""

    pxy: np.ndarray
    p_z1_x: np.ndarray | None = None
    p_z2_z1: np.ndarray | None = None

    def __post_init__(self):
        self.pxy = np.asarray(self.pxy, dtype=float)
        if np.any(self.pxy < 0) or abs(self.pxy.sum() - 1.0) > 1e-12:
            raise ValueError("p(x, y) must be nonnegative and sum to 1 within 1e-12")
        for name in ("p_z1_x", "p_z2_z1"):
            table = getattr(self, name)
            if table is not None:
                table = np.asarray(table, dtype=float)
                _check_distribution(table, name, axis=1)
                setattr(self, name, table)
        if self.p_z1_x is not None and self.p_z1_x.shape[0] != self.pxy.shape[0]:
            raise ValueError("p(z1 | x) needs one row per x")
        if self.p_z2_z1 is not None and self.p_z1_x is not None and self.p_z2_z1.shape[0] != self.p_z1_x.shape[1]:
            raise ValueError("p(z2 | z1) needs one row per z1")

    @property
    def px(self):
        return self.pxy.sum(axis=1)

    def conditional_entropy_y_given_x(self, base=np.e) -> float:
        return entropy(self.pxy, base) - entropy(self.px, base)

    def full_joint(self) -> np.ndarray:
        """``p(x, y, z1, z2) = p(x, y) p(z1 | x) p(z2 | z1)``."""
        if self.p_z1_x is None or self.p_z2_z1 is None:
            raise ValueError("both channels are required")
        return np.einsum("xy,xa,ab->xyab", self.pxy, self.p_z1_x, self.p_z2_z1)


def _marginal_entropy(joint, keep, base):
    drop = tuple(i for i in range(joint.ndim) if i not in keep)
    return entropy(joint.sum(axis=drop), base)


def mutual_info_from_joint(joint, a, b, given=(), base=np.e) -> float:
    """``I(A; B | C)`` from a dense joint; ``a``, ``b``, ``given`` are axis tuples."""
    a, b, c = tuple(a), tuple(b), tuple(given)
    h = lambda axes: _marginal_entropy(joint, axes, base)  # noqa: E731
    return h(a + c) + h(b + c) - h(a + b + c) - (h(c) if c else 0.0)


def lemma1_residuals(dj: DiscreteJoint) -> tuple[float, float]:
    """Residuals of ``I(Z2; V) = I(Z1; V) - I(Z1; V | Z2)`` for ``V = X`` and ``V = Y``, in nats.

    Every term is an exact sum over ``p(x, y, z1, z2)``.
    """
    joint = dj.full_joint()
    X, Y, Z1, Z2 = (0,), (1,), (2,), (3,)
    out = []
    for V in (X, Y):
        lhs = mutual_info_from_joint(joint, Z2, V)
        rhs = mutual_info_from_joint(joint, Z1, V) - mutual_info_from_joint(joint, Z1, V, given=Z2)
        out.append(abs(lhs - rhs))
    return out[0], out[1]


def random_chain(rng, nx=8, ny=4, nz1=4, nz2=4) -> DiscreteJoint:
    """Random ``Y -> X -> Z1 -> Z2`` chain with Dirichlet(1) tables."""
    pxy = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    pxy /= pxy.sum()
    return DiscreteJoint(pxy, rng.dirichlet(np.ones(nz1), size=nx), rng.dirichlet(np.ones(nz2), size=nz1))


def info_plane_point(net: ExactNetwork, l, epoch, pxy) -> InfoPlanePoint:
    cond = net.conditionals[l]
    px = pxy.sum(axis=1)
    return InfoPlanePoint(int(epoch), int(l), mutual_info(cond, px), layer_relevance(cond, pxy))


def info_plane_trace(checkpoints, inputs, pxy, layers=None, *, dpi_tol=1e-6) -> list[InfoPlanePoint]:
    """Exact ``(I(Z_l; X), I(Z_l; Y))`` per checkpoint and layer, in bits.

    ``checkpoints`` is an iterable of ``(epoch, NetworkParams)``. Checkpoints
    whose architecture is not enumerable are skipped with a warning. A
    data-processing violation larger than ``dpi_tol`` bits is reported as a
    warning; see :func:`dpi_violations`.
    """
    pxy = np.asarray(pxy, dtype=float)
    points = []
    for epoch, params in checkpoints:
        try:
            net = ExactNetwork(params, inputs)
        except BudgetExceededError as exc:
            warnings.warn(f"epoch {epoch}: info-plane skipped ({exc})", RuntimeWarning)
            continue
        wanted = layers or range(1, params.n_layers + 1)
        points.extend(info_plane_point(net, l, epoch, pxy) for l in wanted)
    points.sort(key=lambda p: (p.epoch, p.layer))
    bad = dpi_violations(points, dpi_tol)
    if bad:
        warnings.warn(f"data-processing inequality violated at {len(bad)} point(s): {bad[:3]}", RuntimeWarning)
    return points


def dpi_violations(points, tol=1e-6) -> list[tuple[int, int, str, float]]:
    """``(epoch, layer, quantity, excess)`` wherever ``I(Z_{l+1}; .) > I(Z_l; .) + tol``."""
    by_epoch = {}
    for p in points:
        by_epoch.setdefault(p.epoch, {})[p.layer] = p
    out = []
    for epoch, layers in sorted(by_epoch.items()):
        for l in sorted(layers):
            nxt = layers.get(l + 1)
            if nxt is None:
                continue
            for name in ("i_x", "i_y"):
                excess = getattr(nxt, name) - getattr(layers[l], name)
                if excess > tol:
                    out.append((epoch, l, name, excess))
    return out
