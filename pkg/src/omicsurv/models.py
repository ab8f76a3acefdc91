"""Fingerprint models: PCA, autoencoder, Cox-supervised autoencoder and the
concrete Cox-supervised autoencoder.

All four are fitted on training rows only and then map any matrix of the
same width to an ``n x F`` fingerprint matrix with :func:`transform`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import concrete as cc
from .data import FeatureRef, SurvivalLabels
from .nn import (AdamState, DenseNetwork, TrainNoise, adam_step, backward, forward, l2_penalty,
                 mse_loss)
from .survival import cox_neural_loss

MODEL_KINDS = ("pca", "ae", "sae", "csae")
MODEL_FORMAT_VERSION = 1


class ModelFitError(RuntimeError):
    pass


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_fingerprints: int = 128
    hidden: int = 512
    epochs: int = 256
    learning_rate: float = 0.01
    l2_lambda: float = 0.001
    dropout: float = 0.3
    noise_std: float = 0.2
    t0: float = 10.0
    tb: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")


@dataclass
class ImportanceReport:
    """Input-to-fingerprint attribution, ``weights[j, f] >= 0``."""

    weights: np.ndarray  # (d, F)
    refs: Optional[List[FeatureRef]] = None

    @property
    def n_fingerprints(self) -> int:
        return self.weights.shape[1]

    def order(self, fingerprint: int) -> np.ndarray:
        return np.argsort(-self.weights[:, fingerprint], kind="stable")

    def ranked(self, fingerprint: int) -> List[Tuple[object, float]]:
        out = []
        for j in self.order(fingerprint):
            key = self.refs[j] if self.refs is not None else int(j)
            out.append((key, float(self.weights[j, fingerprint])))
        return out

    def top_features(self) -> np.ndarray:
        """Most important input index per fingerprint (lowest index on ties)."""
        return np.argmax(self.weights, axis=0)


class FingerprintModel:
    kind: str = ""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        self.seed = int(seed)
        self.fitted = False
        self.n_inputs: Optional[int] = None
        self.history: List[Dict[str, float]] = []

    @property
    def n_fingerprints(self) -> int:
        return self.config.n_fingerprints

    def _check(self, x) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError(f"{self.kind} model is not fitted")
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ValueError(f"expected width {self.n_inputs}, got {x.shape}")
        return x

    def fit(self, x, labels: Optional[SurvivalLabels] = None) -> "FingerprintModel":
        raise NotImplementedError

    def transform(self, x) -> np.ndarray:
        raise NotImplementedError

    def importance(self, refs: Optional[List[FeatureRef]] = None) -> ImportanceReport:
        raise NotImplementedError

    def _state_dict(self) -> dict:
        raise NotImplementedError

    def _load_state(self, state: dict) -> None:
        raise NotImplementedError

    def to_dict(self, refs: Optional[Sequence[FeatureRef]] = None) -> dict:
        if not self.fitted:
            raise NotFittedError(f"{self.kind} model is not fitted")
        d = {"format_version": MODEL_FORMAT_VERSION, "kind": self.kind, "seed": self.seed,
             "config": asdict(self.config), "n_inputs": self.n_inputs,
             "state": self._state_dict()}
        if refs is not None:
            d["features"] = [[r.layer_name, r.feature_name, r.global_index] for r in refs]
        return d


class PCAModel(FingerprintModel):
    kind = "pca"

    def fit(self, x, labels=None):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ModelFitError("PCA needs at least 2 rows")
        self.n_inputs = x.shape[1]
        self.mean_ = x.mean(axis=0)
        try:
            _, s, vt = np.linalg.svd(x - self.mean_, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise ModelFitError(f"SVD did not converge: {exc}") from exc
        n_eff = min(self.config.n_fingerprints, x.shape[0] - 1, x.shape[1])
        comps = vt[:n_eff]
        # sign convention: largest-magnitude loading positive
        signs = np.sign(comps[np.arange(n_eff), np.argmax(np.abs(comps), axis=1)])
        signs[signs == 0] = 1.0
        self.components_ = comps * signs[:, None]
        self.singular_values_ = s[:n_eff]
        self.fitted = True
        return self

    @property
    def n_fingerprints(self) -> int:
        if self.fitted:
            return self.components_.shape[0]
        return self.config.n_fingerprints

    def transform(self, x):
        x = self._check(x)
        return (x - self.mean_) @ self.components_.T

    def importance(self, refs=None):
        if not self.fitted:
            raise NotFittedError("pca model is not fitted")
        return ImportanceReport(np.abs(self.components_.T), refs)

    def _state_dict(self):
        return {"mean": self.mean_.tolist(), "components": self.components_.tolist(),
                "singular_values": self.singular_values_.tolist()}

    def _load_state(self, state):
        self.mean_ = np.asarray(state["mean"], dtype=float)
        self.components_ = np.asarray(state["components"], dtype=float).reshape(
            -1, self.mean_.shape[0])
        self.singular_values_ = np.asarray(state["singular_values"], dtype=float)


class _NeuralModel(FingerprintModel):
    """Shared training loop for the three autoencoder variants."""

    supervised = False

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def _build(self, d: int, rng: np.random.Generator) -> None:
        cfg = self.config
        self.decoder = DenseNetwork.create([cfg.n_fingerprints, cfg.hidden, d],
                                           ["relu", "identity"], rng, self.dtype)
        self.head = DenseNetwork.create([cfg.n_fingerprints, 1], ["identity"], rng,
                                        self.dtype) if self.supervised else None

    def _nets(self) -> List[DenseNetwork]:
        return [n for n in (self.decoder, self.head) if n is not None]

    def _encoder_params(self) -> List[np.ndarray]:
        raise NotImplementedError

    def _set_encoder_params(self, params: List[np.ndarray]) -> None:
        raise NotImplementedError

    def get_params(self) -> List[np.ndarray]:
        params = list(self._encoder_params())
        for net in self._nets():
            params.extend(net.params())
        return params

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        params = list(params)
        n_enc = len(self._encoder_params())
        self._set_encoder_params(params[:n_enc])
        pos = n_enc
        for net in self._nets():
            k = len(net.params())
            net.set_params(params[pos:pos + k])
            pos += k

    def _encode(self, x, mode, rng, temp, gumbel) -> Tuple[np.ndarray, dict]:
        raise NotImplementedError

    def _encode_backward(self, cache, dz) -> List[np.ndarray]:
        raise NotImplementedError

    def _penalised_nets(self) -> List[DenseNetwork]:
        return self._nets()

    def loss_and_grads(self, x, labels: Optional[SurvivalLabels], mode: str = "eval",
                       rng: Optional[np.random.Generator] = None, temp: Optional[float] = None,
                       gumbel: Optional[np.ndarray] = None
                       ) -> Tuple[float, Dict[str, float], List[np.ndarray]]:
        """Total loss, its components and gradients aligned with :meth:`get_params`."""
        cfg = self.config
        dec_noise = TrainNoise(cfg.dropout, 0.0)
        x = np.asarray(x).astype(self.dtype, copy=False)
        z, enc_cache = self._encode(x, mode, rng, temp, gumbel)
        x_hat, dec_cache = forward(self.decoder, z, mode, dec_noise, rng)
        rec, d_xhat = mse_loss(x, x_hat)
        dec_grads, dz = backward(self.decoder, dec_cache, d_xhat)
        parts = {"rec": rec}
        head_grads = []
        if self.head is not None:
            log_h, head_cache = forward(self.head, z, "eval")
            cox, d_logh = cox_neural_loss(log_h[:, 0], labels)
            d_logh = d_logh[:, None].astype(self.dtype)
            head_grads, dz_head = backward(self.head, head_cache, d_logh)
            dz = dz + dz_head
            parts["cox"] = cox
        enc_grads = self._encode_backward(enc_cache, dz)
        norm, norm_grads = l2_penalty(self._penalised_nets(), cfg.l2_lambda)
        parts["norm"] = norm
        grads = enc_grads + dec_grads + head_grads
        offset = len(grads) - sum(len(g) for g in norm_grads)
        for i, ng in enumerate(g for per_net in norm_grads for g in per_net):
            grads[offset + i] += ng
        return sum(parts.values()), parts, grads

    def _temperature(self, epoch: int) -> Optional[float]:
        return None

    def fit(self, x, labels: Optional[SurvivalLabels] = None):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ModelFitError("need at least 2 training rows")
        if self.supervised:
            if labels is None or len(labels) != x.shape[0]:
                raise ModelFitError("supervised models need survival labels for every row")
            if labels.n_events == 0:
                raise ModelFitError("no events in training data")
        else:
            labels = None
        self.n_inputs = x.shape[1]
        x = x.astype(self.dtype)
        rng = np.random.default_rng(self.seed)
        self._build(x.shape[1], rng)
        cfg = self.config
        params = self.get_params()
        state = AdamState.zeros_like(params, cfg.learning_rate)
        self.history = []
        self.initial_loss = self._eval_parts(x, labels)
        for epoch in range(cfg.epochs):
            total, parts, grads = self.loss_and_grads(x, labels, "train", rng,
                                                      self._temperature(epoch))
            if not np.isfinite(total):
                raise ModelFitError(f"non-finite loss at epoch {epoch}")
            self.history.append(dict(parts, total=total))
            params, state = adam_step(params, grads, state)
            self.set_params(params)
        self.fitted = True
        self.final_loss = self._eval_parts(x, labels)
        return self

    def _eval_parts(self, x, labels) -> Dict[str, float]:
        total, parts, _ = self.loss_and_grads(x, labels, "eval")
        return dict(parts, total=total)

    def transform(self, x):
        x = self._check(x)
        z, _ = self._encode(x.astype(self.dtype, copy=False), "eval", None, None, None)
        return z.astype(np.float64)

    def predict_log_hazard(self, x) -> np.ndarray:
        if self.head is None:
            raise ValueError(f"{self.kind} model has no hazard head")
        z = self.transform(x).astype(self.dtype)
        return forward(self.head, z, "eval")[0][:, 0].astype(np.float64)

    def reconstruct(self, x) -> np.ndarray:
        z = self.transform(x).astype(self.dtype)
        return forward(self.decoder, z, "eval")[0].astype(np.float64)


class AutoencoderModel(_NeuralModel):
    """Pyramidal autoencoder ``d -> hidden -> F -> hidden -> d``.

    With ``supervised=True`` a linear hazard head on the fingerprints adds
    the Cox partial-likelihood loss to the reconstruction objective.
    """

    kind = "ae"

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0,
                 supervised: bool = False):
        super().__init__(config, seed)
        self.supervised = supervised
        self.kind = "sae" if supervised else "ae"
        self.encoder: Optional[DenseNetwork] = None
        self.decoder = None
        self.head = None

    def _build(self, d, rng):
        cfg = self.config
        self.encoder = DenseNetwork.create([d, cfg.hidden, cfg.n_fingerprints],
                                           ["relu", "identity"], rng, self.dtype)
        super()._build(d, rng)

    def _encoder_params(self):
        return self.encoder.params()

    def _set_encoder_params(self, params):
        self.encoder.set_params(params)

    def _penalised_nets(self):
        return [self.encoder] + self._nets()

    def _encode(self, x, mode, rng, temp, gumbel):
        noise = TrainNoise(self.config.dropout, self.config.noise_std)
        return forward(self.encoder, x, mode, noise, rng)

    def _encode_backward(self, cache, dz):
        return backward(self.encoder, cache, dz, need_input_grad=False)[0]

    def importance(self, refs=None):
        """Absolute product of weight matrices along encoder paths."""
        if not self.fitted:
            raise NotFittedError(f"{self.kind} model is not fitted")
        path = self.encoder.layers[0].weight
        for layer in self.encoder.layers[1:]:
            path = path @ layer.weight
        return ImportanceReport(np.abs(path), refs)

    def _state_dict(self):
        d = {"encoder": self.encoder.to_dict(), "decoder": self.decoder.to_dict()}
        if self.head is not None:
            d["head"] = self.head.to_dict()
        return d

    def _load_state(self, state):
        self.encoder = DenseNetwork.from_dict(state["encoder"])
        self.decoder = DenseNetwork.from_dict(state["decoder"])
        self.head = DenseNetwork.from_dict(state["head"]) if "head" in state else None


class ConcreteSAEModel(_NeuralModel):
    """Cox-supervised autoencoder whose encoder is a concrete selection layer.

    After training the encoder is frozen in indexing mode, so fingerprints
    are exact copies of the selected input columns.
    """

    kind = "csae"
    supervised = True

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__(config, seed)
        self.selector: Optional[cc.ConcreteLayer] = None
        self.decoder = None
        self.head = None

    def _build(self, d, rng):
        cfg = self.config
        self.selector = cc.ConcreteLayer.create(cfg.n_fingerprints, d, rng, cfg.t0, cfg.tb,
                                                cfg.epochs, self.dtype)
        super()._build(d, rng)

    def _encoder_params(self):
        return [self.selector.log_alpha]

    def _set_encoder_params(self, params):
        self.selector.set_log_alpha(params[0])

    def _temperature(self, epoch):
        return cc.temperature(epoch, self.selector)

    def _encode(self, x, mode, rng, temp, gumbel):
        if mode == "eval":
            return cc.concrete_forward_eval(x, self.selector), {"mode": "eval"}
        if self.config.noise_std > 0 and rng is not None:
            x = x + self.config.noise_std * rng.standard_normal(x.shape, dtype=x.dtype)
        if temp is None:
            temp = self.selector.tb
        z, _, cache = cc.concrete_forward_train(x, self.selector, temp, rng, gumbel)
        cache["mode"] = "train"
        return z, cache

    def _encode_backward(self, cache, dz):
        if cache["mode"] == "eval":
            # indexing has no gradient with respect to log_alpha
            return [np.zeros_like(self.selector.log_alpha)]
        return [cc.concrete_backward(self.selector, cache, dz)[0]]

    def transform(self, x):
        # plain column gather on the caller's array keeps fingerprints bit-exact
        x = self._check(x)
        return cc.concrete_forward_eval(x, self.selector)

    def selected_features(self) -> np.ndarray:
        if self.selector is None:
            raise NotFittedError("csae model is not fitted")
        return cc.selected_features(self.selector)

    def importance(self, refs=None):
        if not self.fitted:
            raise NotFittedError("csae model is not fitted")
        w = np.zeros((self.n_inputs, self.selector.n_select))
        w[self.selected_features(), np.arange(self.selector.n_select)] = 1.0
        return ImportanceReport(w, refs)

    def _state_dict(self):
        return {"selector": self.selector.to_dict(), "decoder": self.decoder.to_dict(),
                "head": self.head.to_dict()}

    def _load_state(self, state):
        self.selector = cc.ConcreteLayer.from_dict(state["selector"])
        self.decoder = DenseNetwork.from_dict(state["decoder"])
        self.head = DenseNetwork.from_dict(state["head"])


def make_model(kind: str, config: ModelConfig = ModelConfig(), seed: int = 0) -> FingerprintModel:
    if kind == "pca":
        return PCAModel(config, seed)
    if kind == "ae":
        return AutoencoderModel(config, seed, supervised=False)
    if kind == "sae":
        return AutoencoderModel(config, seed, supervised=True)
    if kind == "csae":
        return ConcreteSAEModel(config, seed)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def pca_fit(x, config: ModelConfig = ModelConfig()) -> PCAModel:
    return PCAModel(config).fit(x)


def pca_transform(model: PCAModel, x) -> np.ndarray:
    return model.transform(x)


def ae_fit(x, config: ModelConfig = ModelConfig(), seed: int = 0) -> AutoencoderModel:
    return AutoencoderModel(config, seed, supervised=False).fit(x)


def sae_fit(x, labels: SurvivalLabels, config: ModelConfig = ModelConfig(),
            seed: int = 0) -> AutoencoderModel:
    return AutoencoderModel(config, seed, supervised=True).fit(x, labels)


def csae_fit(x, labels: SurvivalLabels, config: ModelConfig = ModelConfig(),
             seed: int = 0) -> ConcreteSAEModel:
    return ConcreteSAEModel(config, seed).fit(x, labels)


def fit_model(kind: str, x, labels: Optional[SurvivalLabels], config: ModelConfig = ModelConfig(),
              seed: int = 0) -> FingerprintModel:
    return make_model(kind, config, seed).fit(x, labels)


def transform(model: FingerprintModel, x) -> np.ndarray:
    return model.transform(x)


def importance(model: FingerprintModel, refs: Optional[List[FeatureRef]] = None) -> ImportanceReport:
    return model.importance(refs)


def model_from_dict(d: dict) -> FingerprintModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')!r}")
    model = make_model(d["kind"], ModelConfig(**d["config"]), d["seed"])
    model._load_state(d["state"])
    model.n_inputs = d["n_inputs"]
    model.fitted = True
    return model


def save_model(model: FingerprintModel, path: str,
               refs: Optional[Sequence[FeatureRef]] = None) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(refs), fh)


def load_model(path: str) -> FingerprintModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
