"""First-order optimizers over lists of parameter arrays."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, NonFiniteGradientError

OPTIMIZERS = ("sgd", "adam", "adagrad", "adadelta")

DEFAULTS = {
    "sgd": {"learning_rate": 0.1},
    "adam": {"learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "adagrad": {"learning_rate": 1e-2, "eps": 1e-10},
    "adadelta": {"learning_rate": 1.0, "rho": 0.9, "eps": 1e-6},
}


class Optimizer:
    """Stateful update rule. ``step`` modifies the parameter arrays in place.

    Arrays whose ``mask`` entry is False are left untouched, and so is their state.
    """

    def __init__(self, name="sgd", **hyper):
        if name not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {name!r}")
        unknown = set(hyper) - set(DEFAULTS[name])
        if unknown:
            raise ConfigError(f"unknown {name} hyperparameters: {sorted(unknown)}")
        self.name = name
        self.hyper = {**DEFAULTS[name], **{k: float(v) for k, v in hyper.items()}}
        self.t = 0
        self.state = None

    def _init_state(self, arrays):
        zeros = lambda: [np.zeros_like(a) for a in arrays]  # noqa: E731
        if self.name == "adam":
            self.state = {"m": zeros(), "v": zeros()}
        elif self.name == "adagrad":
            self.state = {"g2": zeros()}
        elif self.name == "adadelta":
            self.state = {"g2": zeros(), "dx2": zeros()}
        else:
            self.state = {}

    def step(self, arrays, grads, names=None, mask=None):
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                name = names[i] if names else f"#{i}"
                raise NonFiniteGradientError(f"non-finite gradient for parameter {name}")
        if self.state is None:
            self._init_state(arrays)
        self.t += 1
        h = self.hyper
        lr = h["learning_rate"]
        for i, (theta, g) in enumerate(zip(arrays, grads)):
            if mask is not None and not mask[i]:
                continue
            if self.name == "sgd":
                theta -= lr * g
            elif self.name == "adam":
                m, v = self.state["m"][i], self.state["v"][i]
                m *= h["beta1"]
                m += (1 - h["beta1"]) * g
                v *= h["beta2"]
                v += (1 - h["beta2"]) * g * g
                m_hat = m / (1 - h["beta1"] ** self.t)
                v_hat = v / (1 - h["beta2"] ** self.t)
                theta -= lr * m_hat / (np.sqrt(v_hat) + h["eps"])
            elif self.name == "adagrad":
                g2 = self.state["g2"][i]
                g2 += g * g
                theta -= lr * g / (np.sqrt(g2) + h["eps"])
            else:
                g2, dx2 = self.state["g2"][i], self.state["dx2"][i]
                g2 *= h["rho"]
                g2 += (1 - h["rho"]) * g * g
                delta = -np.sqrt(dx2 + h["eps"]) / np.sqrt(g2 + h["eps"]) * g
                dx2 *= h["rho"]
                dx2 += (1 - h["rho"]) * delta * delta
                theta += lr * delta


def optimizer_step(params, grads, opt_state: Optimizer | None = None, name="sgd", **hyper):
    """Functional form: returns ``(new_params, optimizer)`` without touching ``params``.

    ``params`` and ``grads`` are NetworkParams; pass the returned optimizer
    back in to keep its moment estimates.
    """
    opt = opt_state if opt_state is not None else Optimizer(name, **hyper)
    new = params.copy()
    opt.step(new.arrays(), grads.arrays(), names=new.names())
    return new, opt
