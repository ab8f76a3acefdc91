"""Concrete (Gumbel-softmax) feature selection.

Each of the ``K`` selection neurons holds positive logits ``alpha`` over the
``d`` inputs.  During training a neuron outputs a softmax-weighted mix of
the inputs; once annealed it simply picks ``argmax(alpha)``.

The trainable parameter is ``log_alpha`` so that ``alpha`` stays positive
without constraints; gradients are reported with respect to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .nn import FORMAT_VERSION, StaleCacheError, _as_float

_U_EPS = 1e-12


@dataclass
class ConcreteLayer:
    log_alpha: np.ndarray  # (K, d)
    t0: float = 10.0
    tb: float = 0.1
    epochs: int = 256

    def __post_init__(self):
        self.log_alpha = _as_float(self.log_alpha)
        if self.log_alpha.ndim != 2 or self.log_alpha.shape[0] < 1:
            raise ValueError("log_alpha must be a K x d matrix with K >= 1")
        if not (self.t0 > self.tb > 0):
            raise ValueError("temperatures must satisfy t0 > tb > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        self.version = 0

    @classmethod
    def create(cls, n_select: int, n_inputs: int, rng: np.random.Generator,
               t0: float = 10.0, tb: float = 0.1, epochs: int = 256,
               dtype=np.float64) -> "ConcreteLayer":
        """Alphas drawn uniformly from ``[0.9/d, 1.1/d]``."""
        alpha = rng.uniform(0.9 / n_inputs, 1.1 / n_inputs, size=(n_select, n_inputs))
        return cls(np.log(alpha).astype(dtype), t0, tb, epochs)

    @property
    def alphas(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def n_select(self) -> int:
        return self.log_alpha.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.log_alpha.shape[1]

    def set_log_alpha(self, log_alpha: np.ndarray) -> None:
        if log_alpha.shape != self.log_alpha.shape:
            raise ValueError("shape mismatch")
        self.log_alpha = log_alpha
        self.version += 1

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "shape": list(self.log_alpha.shape),
                "log_alpha": self.log_alpha.ravel().tolist(),
                "t0": self.t0, "tb": self.tb, "epochs": self.epochs}

    @classmethod
    def from_dict(cls, d: dict) -> "ConcreteLayer":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported layer format {d.get('format_version')!r}")
        log_alpha = np.asarray(d["log_alpha"], dtype=float).reshape(d["shape"])
        return cls(log_alpha, d["t0"], d["tb"], d["epochs"])


def gumbel_from_uniform(u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=float), _U_EPS, 1.0 - _U_EPS)
    return -np.log(-np.log(u))


def gumbel_sample(shape, rng: np.random.Generator) -> np.ndarray:
    return gumbel_from_uniform(rng.random(shape))


def temperature(b: float, layer: ConcreteLayer) -> float:
    """Exponentially decayed temperature at epoch ``b`` of ``layer.epochs``."""
    if not 0 <= b <= layer.epochs:
        raise ValueError(f"epoch {b} outside [0, {layer.epochs}]")
    if b == 0:
        return float(layer.t0)
    if b == layer.epochs:
        return float(layer.tb)
    return float(layer.t0 * (layer.tb / layer.t0) ** (b / layer.epochs))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def concrete_forward_train(x: np.ndarray, layer: ConcreteLayer, temp: float,
                           rng: Optional[np.random.Generator] = None,
                           gumbel: Optional[np.ndarray] = None
                           ) -> Tuple[np.ndarray, np.ndarray, dict]:
    """Relaxed selection; returns ``(x @ m.T, m, cache)``.

    Fresh Gumbel noise is drawn from ``rng`` unless ``gumbel`` is given.
    """
    if temp <= 0:
        raise ValueError("temperature must be positive")
    x = _as_float(x)
    if x.shape[1] != layer.n_inputs:
        raise ValueError(f"expected input width {layer.n_inputs}, got {x.shape[1]}")
    if gumbel is None:
        if rng is None:
            raise ValueError("need an rng or explicit gumbel draws")
        gumbel = gumbel_sample(layer.log_alpha.shape, rng)
    gumbel = np.asarray(gumbel).astype(layer.log_alpha.dtype, copy=False)
    m = _softmax_rows((layer.log_alpha + gumbel) / temp)
    cache = {"x": x, "m": m, "temp": temp, "gumbel": gumbel,
             "layer": id(layer), "version": layer.version}
    return x @ m.T, m, cache


def concrete_backward(layer: ConcreteLayer, cache: dict,
                      output_grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients ``(d log_alpha, d x)`` for the cached Gumbel draws."""
    if cache.get("layer") != id(layer) or cache.get("version") != layer.version:
        raise StaleCacheError("cache does not belong to the current layer state")
    g = _as_float(output_grad)
    m = cache["m"]
    dm = g.T @ cache["x"]
    dx = g @ m
    dlogits = m * (dm - np.sum(dm * m, axis=1, keepdims=True))
    return dlogits / cache["temp"], dx


def alpha_gradient(layer: ConcreteLayer, dlog_alpha: np.ndarray) -> np.ndarray:
    """Convert a ``log_alpha`` gradient into one with respect to ``alpha``."""
    return dlog_alpha / layer.alphas


def selected_features(layer: ConcreteLayer) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return np.argmax(layer.log_alpha, axis=1)


def concrete_forward_eval(x: np.ndarray, layer: ConcreteLayer) -> np.ndarray:
    x = _as_float(x)
    if x.shape[1] != layer.n_inputs:
        raise ValueError(f"expected input width {layer.n_inputs}, got {x.shape[1]}")
    return x[:, selected_features(layer)]
