"""Binary stochastic feed-forward networks.

A network maps an input ``x`` (real values in [0, 1]) through ``L`` layers of
binary stochastic units, ``p(z_l = 1 | z_{l-1}) = sigmoid(W_l z_{l-1} + b_l)``,
followed by a softmax head ``p(y | z_L)``. Each layer also owns a factorized
Bernoulli marginal ``r_l`` (stored as logits) used by the compression bound.

Layers are indexed from 1 to L in the public API; layer 0 is the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.special import expit, log_softmax

from .exceptions import BudgetExceededError

GROWTH_MODES = ("chain", "tree")
DEFAULT_PARTICLE_BUDGET = 2_000_000


def sigmoid(a):
    return expit(a)


def log_sigmoid(a):
    """``log(sigmoid(a))`` without overflow for large ``|a|``."""
    return -np.logaddexp(0.0, -a)


def softmax(logits):
    # log_softmax subtracts the row max internally
    return np.exp(log_softmax(logits, axis=-1))


@dataclass
class NetworkParams:
    """Trainable state of a binary stochastic network.

    ``weights[l - 1]`` has shape ``(n_l, n_{l-1})`` and connects layer ``l - 1``
    to layer ``l``. ``marginal_logits[l - 1]`` holds the logits of ``r_l``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    marginal_logits: list[np.ndarray]
    head_weight: np.ndarray
    head_bias: np.ndarray

    @classmethod
    def initialize(cls, n_inputs, hidden, n_classes, rng, *, init_scale=1.0) -> "NetworkParams":
        """Fan-scaled uniform weights, zero biases, marginals at 0.5.

        ``init_scale`` multiplies the hidden-layer weight range (4 is the
        usual choice for sigmoid units); the head keeps the plain range.
        """
        widths = [int(n_inputs), *map(int, hidden)]
        weights, biases, marginals = [], [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            weights.append(init_scale * _glorot_uniform(rng, n_out, n_in))
            biases.append(np.zeros(n_out))
            marginals.append(np.zeros(n_out))
        head_weight = _glorot_uniform(rng, int(n_classes), widths[-1])
        params = cls(weights, biases, marginals, head_weight, np.zeros(int(n_classes)))
        params.validate()
        return params

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> tuple[int, ...]:
        """Input dimension followed by every hidden width."""
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))

    @property
    def n_classes(self) -> int:
        return self.head_weight.shape[0]

    def marginal(self, l) -> np.ndarray:
        return sigmoid(self.marginal_logits[l - 1])

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every parameter array with a stable name, in a fixed order."""
        for l, (w, b, r) in enumerate(zip(self.weights, self.biases, self.marginal_logits), 1):
            yield f"W{l}", w
            yield f"b{l}", b
            yield f"r{l}", r
        yield "W_out", self.head_weight
        yield "b_out", self.head_bias

    def arrays(self) -> list[np.ndarray]:
        return [a for _, a in self.named_arrays()]

    def names(self) -> list[str]:
        return [n for n, _ in self.named_arrays()]

    @classmethod
    def from_named(cls, named: dict) -> "NetworkParams":
        n_layers = sum(1 for k in named if k.startswith("W") and k != "W_out")
        get = lambda k: np.array(named[k], dtype=float)  # noqa: E731
        params = cls(
            [get(f"W{l}") for l in range(1, n_layers + 1)],
            [get(f"b{l}") for l in range(1, n_layers + 1)],
            [get(f"r{l}") for l in range(1, n_layers + 1)],
            get("W_out"),
            get("b_out"),
        )
        params.validate()
        return params

    def copy(self) -> "NetworkParams":
        return NetworkParams.from_named({k: a.copy() for k, a in self.named_arrays()})

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            [np.zeros_like(r) for r in self.marginal_logits],
            np.zeros_like(self.head_weight),
            np.zeros_like(self.head_bias),
        )

    def validate(self):
        if not self.weights:
            raise ValueError("a network needs at least one hidden layer")
        if not (len(self.weights) == len(self.biases) == len(self.marginal_logits)):
            raise ValueError("weights, biases and marginals must have one entry per layer")
        prev = self.weights[0].shape[1]
        for l, (w, b, r) in enumerate(zip(self.weights, self.biases, self.marginal_logits), 1):
            if w.ndim != 2 or w.shape[1] != prev:
                raise ValueError(f"W{l} has shape {w.shape}, expected (*, {prev})")
            if b.shape != (w.shape[0],) or r.shape != (w.shape[0],):
                raise ValueError(f"b{l}/r{l} must have shape ({w.shape[0]},)")
            prev = w.shape[0]
        if self.head_weight.shape[1] != prev or self.head_bias.shape != (self.head_weight.shape[0],):
            raise ValueError("output head does not match the last hidden width")
        for name, a in self.named_arrays():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"parameter {name} contains non-finite values")


def _glorot_uniform(rng, n_out, n_in):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


@dataclass
class BernoulliVector:
    """Factorized Bernoulli distribution of one layer, with its logits."""

    probs: np.ndarray
    pre_activations: np.ndarray

    @classmethod
    def from_logits(cls, a) -> "BernoulliVector":
        a = np.asarray(a, dtype=float)
        return cls(sigmoid(a), a)


def layer_forward(params: NetworkParams, l: int, z_prev) -> BernoulliVector:
    """Unit probabilities of layer ``l`` given the previous layer's values.

    ``z_prev`` may be a single vector or a batch of row vectors.
    """
    if not 1 <= l <= params.n_layers:
        raise ValueError(f"layer index {l} outside 1..{params.n_layers}")
    w, b = params.weights[l - 1], params.biases[l - 1]
    z_prev = np.asarray(z_prev, dtype=float)
    if z_prev.shape[-1] != w.shape[1]:
        raise ValueError(f"layer {l} expects inputs of width {w.shape[1]}, got {z_prev.shape[-1]}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise FloatingPointError(f"layer {l} parameters contain non-finite values")
    return BernoulliVector.from_logits(z_prev @ w.T + b)


def sample_layer(bv: BernoulliVector, rng) -> np.ndarray:
    """Independent Bernoulli draws; returns float 0/1 values of the same shape."""
    probs = np.asarray(bv.probs)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return (rng.random(probs.shape) < probs).astype(float)


def head_forward(params: NetworkParams, z_last) -> np.ndarray:
    """Class probabilities ``softmax(W_out z_L + b_out)``."""
    z_last = np.asarray(z_last, dtype=float)
    if z_last.shape[-1] != params.head_weight.shape[1]:
        raise ValueError(
            f"head expects width {params.head_weight.shape[1]}, got {z_last.shape[-1]}"
        )
    return softmax(z_last @ params.head_weight.T + params.head_bias)


@dataclass
class ParticleLayer:
    """Particles of one layer for a batch of inputs.

    Row ``j`` holds a particle's values ``z`` (0/1, or probabilities in the
    deterministic limit), the logits ``pre`` and probabilities ``probs`` of the
    Bernoulli vector that generated it, and ``parent``, the row of its parent
    in the previous layer (for layer 1, the input row).
    """

    z: np.ndarray
    pre: np.ndarray
    probs: np.ndarray
    parent: np.ndarray

    def __len__(self):
        return self.z.shape[0]

    @property
    def fanout(self) -> int:
        """Children per parent row; parents are stored contiguously."""
        n_parents = int(self.parent[-1]) + 1 if len(self.parent) else 0
        return len(self) // max(n_parents, 1)

    def generator(self, j) -> BernoulliVector:
        return BernoulliVector(self.probs[j], self.pre[j])


@dataclass
class ParticleCloud:
    """Sampled activations ``S_1..S_L`` for a batch of inputs.

    Rows of every layer are grouped by input: with ``B`` inputs, tree growth
    stores ``B * M**l`` rows at layer ``l`` and chain growth ``B * M``.
    ``continuations[l]`` holds optional extra paths ``l+1..L`` drawn from each
    layer-``l`` particle (chain growth only), used to average the relevance
    decoder of layer ``l`` over more than the particle's own path.
    """

    inputs: np.ndarray
    layers: list[ParticleLayer]
    growth: str
    n_samples: int
    continuations: dict[int, list[ParticleLayer]] = field(default_factory=dict)

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer(self, l) -> ParticleLayer:
        return self.layers[l - 1]

    def counts_per_input(self) -> list[int]:
        return [len(layer) // self.n_inputs for layer in self.layers]

    def owner(self, l) -> np.ndarray:
        """Input row owning each particle of layer ``l``."""
        n = len(self.layers[l - 1])
        return np.repeat(np.arange(self.n_inputs), n // self.n_inputs)

    def particles_of(self, i, l) -> list[tuple[np.ndarray, BernoulliVector, int]]:
        """Per-input view: ``(z, generator, parent)`` for every particle of input ``i``."""
        layer = self.layers[l - 1]
        per = len(layer) // self.n_inputs
        rows = range(i * per, (i + 1) * per)
        return [(layer.z[j], layer.generator(j), int(layer.parent[j])) for j in rows]


def _spawn(params, l, parent_values, fanout, rng, deterministic):
    parents = np.repeat(np.arange(parent_values.shape[0]), fanout)
    bv = layer_forward(params, l, parent_values)
    pre = np.repeat(bv.pre_activations, fanout, axis=0)
    probs = np.repeat(bv.probs, fanout, axis=0)
    z = probs.copy() if deterministic else (rng.random(probs.shape) < probs).astype(float)
    return ParticleLayer(z, pre, probs, parents)


def grow_particles(
    params: NetworkParams,
    x,
    n_samples: int,
    growth: str = "chain",
    rng=None,
    *,
    n_continuations: int = 1,
    deterministic: bool = False,
    budget: int = DEFAULT_PARTICLE_BUDGET,
) -> ParticleCloud:
    """Sample particle sets layer by layer for one input or a batch of inputs.

    Tree growth spawns ``n_samples`` children from every particle of the
    previous layer, so layer ``l`` holds ``n_samples**l`` particles per input.
    Chain growth keeps ``n_samples`` independent paths. With
    ``deterministic=True`` the particles are the unit probabilities themselves
    and a single path per input is kept.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if growth not in GROWTH_MODES:
        raise ValueError(f"growth must be one of {GROWTH_MODES}, got {growth!r}")
    if n_continuations < 1:
        raise ValueError("n_continuations must be >= 1")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if rng is None:
        rng = np.random.default_rng()
    n_layers = params.n_layers
    m = 1 if deterministic else int(n_samples)
    n_inputs = x.shape[0]

    if growth == "tree":
        largest = n_inputs * m**n_layers
        if largest > budget:
            raise BudgetExceededError(
                f"tree growth needs {n_inputs} x {m}^{n_layers} = {largest} particles "
                f"at layer {n_layers}, budget is {budget}"
            )

    layers = []
    values = x
    for l in range(1, n_layers + 1):
        fanout = m if (growth == "tree" or l == 1) else 1
        layer = _spawn(params, l, values, fanout, rng, deterministic)
        layers.append(layer)
        values = layer.z

    continuations = {}
    if growth == "chain" and n_continuations > 1 and not deterministic:
        for l in range(1, n_layers):
            branch = []
            values = layers[l - 1].z
            for k in range(l + 1, n_layers + 1):
                fanout = n_continuations - 1 if k == l + 1 else 1
                layer = _spawn(params, k, values, fanout, rng, False)
                branch.append(layer)
                values = layer.z
            continuations[l] = branch
    return ParticleCloud(x, layers, growth, m, continuations)


def mean_field_forward(params: NetworkParams, x) -> list[np.ndarray]:
    """Deterministic pass with unit probabilities in place of samples.

    Returns the probabilities of every hidden layer; this is the network of
    the deterministic limit.
    """
    values = np.asarray(x, dtype=float)
    out = []
    for l in range(1, params.n_layers + 1):
        values = layer_forward(params, l, values).probs
        out.append(values)
    return out


def predictive_proba(params: NetworkParams, x, n_samples, rng, *, deterministic=False, batch_size=2048):
    """Monte-Carlo estimate of ``p(y | x)`` from ``n_samples`` chain paths per input."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    out = np.empty((x.shape[0], params.n_classes))
    for start in range(0, x.shape[0], batch_size):
        chunk = x[start : start + batch_size]
        if deterministic:
            last = mean_field_forward(params, chunk)[-1]
            out[start : start + len(chunk)] = head_forward(params, last)
            continue
        cloud = grow_particles(params, chunk, n_samples, "chain", rng)
        q = head_forward(params, cloud.layers[-1].z)
        out[start : start + len(chunk)] = q.reshape(len(chunk), cloud.n_samples, -1).mean(axis=1)
    return out
