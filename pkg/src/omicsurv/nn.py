"""A small dense-network core with hand-written backward passes.

Everything is full-batch numpy.  Parameters of a :class:`DenseNetwork` are
exposed as a flat list ``[W0, b0, W1, b1, ...]`` so optimisers and
gradient checks can treat every network the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("relu", "identity")
FORMAT_VERSION = 1


class StaleCacheError(RuntimeError):
    pass


def _as_float(a) -> np.ndarray:
    """Keep float32/float64 arrays as they are, promote anything else to float64."""
    a = np.asarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


@dataclass
class Dense:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ValueError("bias length must equal weight fan_out")


@dataclass(frozen=True)
class TrainNoise:
    dropout_rate: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


class DenseNetwork:
    def __init__(self, layers: Sequence[Dense]):
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError("adjacent layer dimensions do not chain")
        self.layers = layers
        self.version = 0

    @classmethod
    def create(cls, sizes: Sequence[int], activations: Sequence[str],
               rng: np.random.Generator, dtype=np.float64) -> "DenseNetwork":
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
            layers.append(Dense(w, np.zeros(fan_out, dtype=dtype), act))
        return cls(layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.layers[-1].weight.shape[1]

    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise ValueError("parameter count mismatch")
        for layer, w, b in zip(self.layers, params[0::2], params[1::2]):
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ValueError("parameter shape mismatch")
            layer.weight, layer.bias = w, b
        self.version += 1

    def copy(self) -> "DenseNetwork":
        return DenseNetwork([Dense(l.weight.copy(), l.bias.copy(), l.activation)
                             for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "layers": [
                {"shape": list(l.weight.shape), "activation": l.activation,
                 "weight": l.weight.ravel().tolist(), "bias": l.bias.tolist()}
                for l in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNetwork":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format {d.get('format_version')!r}")
        layers = []
        for spec in d["layers"]:
            w = np.asarray(spec["weight"], dtype=float).reshape(spec["shape"])
            layers.append(Dense(w, np.asarray(spec["bias"], dtype=float), spec["activation"]))
        return cls(layers)


def forward(net: DenseNetwork, x: np.ndarray, mode: str = "eval",
            noise: Optional[TrainNoise] = None,
            rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, dict]:
    """Run ``net`` on ``x``.

    In ``"train"`` mode Gaussian noise is added to the input and inverted
    dropout follows every hidden activation; ``"eval"`` is deterministic.
    """
    x = _as_float(x)
    if x.ndim != 2 or x.shape[1] != net.in_features:
        raise ValueError(f"expected input of width {net.in_features}, got {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    noise = noise or TrainNoise()
    train = mode == "train"
    if train and (noise.noise_std > 0 or noise.dropout_rate > 0) and rng is None:
        raise ValueError("train mode with noise needs an rng")
    h = x
    if train and noise.noise_std > 0:
        h = h + noise.noise_std * rng.standard_normal(h.shape, dtype=h.dtype)
    inputs, pre, masks = [], [], []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        inputs.append(h)
        a = h @ layer.weight + layer.bias
        pre.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
        mask = None
        if train and i < last and noise.dropout_rate > 0:
            keep = 1.0 - noise.dropout_rate
            mask = ((rng.random(h.shape, dtype=np.float32) < keep) / keep).astype(h.dtype)
            h = h * mask
        masks.append(mask)
    cache = {"inputs": inputs, "pre": pre, "masks": masks, "version": net.version, "net": id(net)}
    return h, cache


def backward(net: DenseNetwork, cache: dict, output_grad: np.ndarray,
             need_input_grad: bool = True) -> Tuple[List[np.ndarray], Optional[np.ndarray]]:
    """Gradients of ``sum(output * output_grad)``; returns (param grads, input grad).

    The input gradient is ``None`` when ``need_input_grad`` is false.
    """
    if cache.get("net") != id(net) or cache.get("version") != net.version:
        raise StaleCacheError("cache does not belong to the current network state")
    g = _as_float(output_grad)
    grads: List[np.ndarray] = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if cache["masks"][i] is not None:
            g = g * cache["masks"][i]
        if layer.activation == "relu":
            g = g * (cache["pre"][i] > 0)
        grads[2 * i] = cache["inputs"][i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0 or need_input_grad:
            g = g @ layer.weight.T
        else:
            g = None
    return grads, g


def mse_loss(x: np.ndarray, x_hat: np.ndarray) -> Tuple[float, np.ndarray]:
    """Squared error summed over features, averaged over samples."""
    x = _as_float(x)
    x_hat = _as_float(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    n = x.shape[0]
    diff = x_hat - x
    return float(np.sum(diff * diff, dtype=np.float64) / n), diff * (2.0 / n)


def l2_penalty(nets: Sequence[DenseNetwork], lam: float) -> Tuple[float, List[List[np.ndarray]]]:
    """``lam`` times the summed squared Frobenius norms of all weight matrices.

    Biases are not penalised.  Gradients are returned per network in
    ``params()`` order.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    total = 0.0
    grads = []
    for net in nets:
        g = []
        for layer in net.layers:
            total += float(np.sum(layer.weight * layer.weight, dtype=np.float64))
            g.extend((2.0 * lam * layer.weight, np.zeros_like(layer.bias)))
        grads.append(g)
    return lam * total, grads


@dataclass
class AdamState:
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    learning_rate: float = 0.01
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], learning_rate: float = 0.01) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   learning_rate)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> Tuple[List[np.ndarray], AdamState]:
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError("params, grads and state differ in length")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    # bias corrections folded into the step size and epsilon
    c2 = float(np.sqrt(1 - b2 ** t))
    step_size = float(state.learning_rate * c2 / (1 - b1 ** t))
    eps = float(state.epsilon * c2)
    new_params, m_out, v_out = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError("shape mismatch in adam_step")
        m = m * b1
        m += (1 - b1) * g
        v = v * b2
        v += (1 - b2) * (g * g)
        denom = np.sqrt(v)
        denom += eps
        update = m / denom
        update *= step_size
        new_params.append(p - update)
        m_out.append(m)
        v_out.append(v)
    new_state = AdamState(m_out, v_out, state.learning_rate, t, b1, b2, state.epsilon)
    return new_params, new_state
