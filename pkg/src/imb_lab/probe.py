"""Grid search for conflicting optima of two stacked bottleneck objectives.

For a chain ``Y -> X -> Z1 -> Z2`` with binary ``Z1`` and ``Z2`` the layer
objectives are ``L_l = I(Z_l; X) - beta_l I(Z_l; Y)`` (bits). Stochastic
encoders are enumerated on a grid of ``G`` points per free coordinate:
``p(z1 = 1 | x)`` for every ``x`` and ``p(z2 = 1 | z1)`` for both values of
``z1``. The two objectives conflict on an instance when no grid point
minimizes both.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exact import DiscreteJoint, entropy

MAX_X = 4
_CHUNK = 1 << 16


def _hb(p):
    """Binary entropy in bits, elementwise."""
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.nan_to_num(h, nan=0.0)


@dataclass
class _Law:
    px: np.ndarray
    py: np.ndarray
    p_x_given_y: np.ndarray  # [y, x]

    @classmethod
    def of(cls, pxy):
        px = pxy.sum(axis=1)
        py = pxy.sum(axis=0)
        keep = py > 0
        return cls(px, py[keep], (pxy[:, keep] / py[keep]).T)

    def objective(self, q, beta):
        """``I(Z; X) - beta I(Z; Y)`` for rows ``q[k, x] = p(z = 1 | x)``."""
        i_x = _hb(q @ self.px) - _hb(q) @ self.px
        i_y = _hb(q @ self.px) - _hb(q @ self.p_x_given_y.T) @ self.py
        return i_x - beta * i_y


def encoder_grid(n_x, G) -> np.ndarray:
    """Every ``p(z = 1 | x)`` vector with coordinates on ``linspace(0, 1, G)``."""
    axis = np.linspace(0.0, 1.0, G)
    return np.array(list(itertools.product(axis, repeat=n_x)))


@dataclass
class ProbeReport:
    instance: str
    beta1: float
    beta2: float
    grid: int
    verdict: str
    h_y_given_x_bits: float
    n_encoders: int
    n_channels: int
    l1_min: float
    l2_min: float
    l1_range: float
    l2_range: float
    tolerance: dict
    n_argmin_l1: int
    n_argmin_l2: int
    intersect: bool
    l2_gap: float  # min of L2 over argmin(L1) minus the global min of L2
    witness: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _channel_grid(G):
    axis = np.linspace(0.0, 1.0, G)
    return np.array(list(itertools.product(axis, repeat=2)))


def conflict_probe(dj: DiscreteJoint, beta1, beta2, G=21, *, name="custom", rel_tol=1e-9) -> ProbeReport:
    """Exhaustive grid comparison of the argmin sets of ``L_1`` and ``L_2``.

    When ``dj.p_z2_z1`` is given the second channel is held fixed and only
    ``p(z1 | x)`` is searched; otherwise both channels are searched jointly.
    Argmin sets collect grid points within ``rel_tol`` times the objective's
    range of its minimum.
    """
    pxy = np.asarray(dj.pxy, dtype=float)
    n_x = pxy.shape[0]
    if n_x > MAX_X:
        raise ValueError(f"the probe enumerates at most |X| = {MAX_X} inputs, got {n_x}")
    if G < 2:
        raise ValueError("the grid needs at least 2 points per coordinate")
    h_cond = dj.conditional_entropy_y_given_x(base=2)
    if h_cond <= 0:
        raise ValueError("the probe needs H(Y|X) > 0")
    if dj.p_z1_x is not None and np.asarray(dj.p_z1_x).shape[1] != 2:
        raise ValueError("the probe handles binary Z1 only")
    if dj.p_z2_z1 is not None:
        ch = np.asarray(dj.p_z2_z1, dtype=float)
        if ch.shape != (2, 2):
            raise ValueError("the probe handles binary Z1 and Z2 only")
        channels = ch[:, 1][None, :]
    else:
        channels = _channel_grid(G)

    law = _Law.of(pxy)
    enc = encoder_grid(n_x, G)
    l1 = law.objective(enc, beta1)

    # L2 for every (encoder, channel); p(z2 = 1 | x) = (1 - q) a + q b
    l2 = np.empty((len(enc), len(channels)))
    for j, (a, b) in enumerate(channels):
        for s in range(0, len(enc), _CHUNK):
            q = enc[s : s + _CHUNK]
            l2[s : s + _CHUNK, j] = law.objective((1 - q) * a + q * b, beta2)

    range1 = float(l1.max() - l1.min())
    range2 = float(l2.max() - l2.min())
    tol1, tol2 = rel_tol * range1, rel_tol * range2
    in1 = l1 <= l1.min() + tol1
    in2 = l2 <= l2.min() + tol2
    both = in2 & in1[:, None]
    intersect = bool(both.any())
    gap = float(l2[in1].min() - l2.min())

    i1 = int(np.argmin(l1))
    e2, c2 = np.unravel_index(int(np.argmin(l2)), l2.shape)
    witness = {
        "argmin_l1": {"p_z1_given_x": enc[i1].tolist(), "l1": float(l1[i1]), "l2_best_channel": float(l2[i1].min())},
        "argmin_l2": {
            "p_z1_given_x": enc[e2].tolist(),
            "p_z2_given_z1": channels[c2].tolist(),
            "l1": float(l1[e2]),
            "l2": float(l2[e2, c2]),
        },
    }
    if intersect:
        e, c = np.argwhere(both)[0]
        witness["shared"] = {"p_z1_given_x": enc[e].tolist(), "p_z2_given_z1": channels[c].tolist()}

    fixed = dj.p_z2_z1 is not None
    if fixed and range2 == 0.0:
        verdict = "non-conflicting (condition b)"
    elif range1 == 0.0 or (not fixed and range2 == 0.0):
        verdict = "inconclusive"
    elif intersect:
        copy = fixed and np.allclose(np.asarray(dj.p_z2_z1)[[0, 1], [0, 1]], 1.0)
        verdict = "non-conflicting (condition a)" if copy else "non-conflicting"
    else:
        verdict = "conflicting"

    return ProbeReport(
        instance=name,
        beta1=float(beta1),
        beta2=float(beta2),
        grid=int(G),
        verdict=verdict,
        h_y_given_x_bits=h_cond,
        n_encoders=len(enc),
        n_channels=len(channels),
        l1_min=float(l1.min()),
        l2_min=float(l2.min()),
        l1_range=range1,
        l2_range=range2,
        tolerance={"l1": tol1, "l2": tol2},
        n_argmin_l1=int(in1.sum()),
        n_argmin_l2=int(in2.sum()),
        intersect=intersect,
        l2_gap=gap,
        witness=witness,
    )


# Builtin instances ---------------------------------------------------------------


def _noisy_joint(eps=0.1):
    """``|X| = 4`` with a non-uniform ``p(x)`` and ``y = [x >= 2]`` flipped with probability ``eps``."""
    px = np.array([0.1, 0.2, 0.3, 0.4])
    y = np.array([0, 0, 1, 1])
    pxy = np.zeros((4, 2))
    pxy[np.arange(4), y] = px * (1 - eps)
    pxy[np.arange(4), 1 - y] = px * eps
    return pxy


def builtin_instance(name, eps=0.1) -> DiscreteJoint:
    """``generic`` (free second channel), ``sufficient`` (copy channel) or ``independence`` (constant channel)."""
    pxy = _noisy_joint(eps)
    if name == "generic":
        return DiscreteJoint(pxy)
    if name == "sufficient":
        return DiscreteJoint(pxy, p_z2_z1=np.eye(2))
    if name == "independence":
        return DiscreteJoint(pxy, p_z2_z1=np.array([[0.3, 0.7], [0.3, 0.7]]))
    raise ValueError(f"unknown builtin instance {name!r}; choose generic, sufficient or independence")


BUILTIN_INSTANCES = ("generic", "sufficient", "independence")


def load_instance(path) -> DiscreteJoint:
    """JSON document with ``pxy`` and an optional ``p_z2_z1`` table."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "pxy" not in doc:
        raise ValueError(f"{path}: expected an object with a 'pxy' table")
    unknown = set(doc) - {"pxy", "p_z2_z1"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    channel = doc.get("p_z2_z1")
    return DiscreteJoint(np.asarray(doc["pxy"], dtype=float), p_z2_z1=None if channel is None else np.asarray(channel, dtype=float))


def h_y_given_x(dj: DiscreteJoint) -> float:
    return entropy(dj.pxy, 2) - entropy(dj.px, 2)
