"""Planted-hazard synthetic multi-omics data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .data import MultiOmicsDataset, OmicsLayer, SurvivalLabels, write_dataset

DAYS_PER_UNIT = 365.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    layers: Tuple[Tuple[str, int], ...]
    planted: Tuple[Tuple[str, int, float], ...] = ()
    censoring_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise ValueError("censoring_rate must be in [0, 1)")
        widths = dict(self.layers)
        if len(widths) != len(self.layers):
            raise ValueError("duplicate layer names")
        for name, width in self.layers:
            if width < 1:
                raise ValueError(f"layer {name!r} must have at least one feature")
        for layer, idx, _ in self.planted:
            if layer not in widths or not 0 <= idx < widths[layer]:
                raise ValueError(f"planted feature ({layer!r}, {idx}) does not exist")


def default_spec(seed: int = 0, n_samples: int = 300, censoring_rate: float = 0.3,
                 weights=(1.0, -1.0, 1.0, -1.0, 1.0)) -> SyntheticSpec:
    """Three layers of 100 features with five planted features spread across them."""
    layers = (("cnv", 100), ("gex", 100), ("meth", 100))
    slots = [("gex", 3), ("gex", 41), ("cnv", 17), ("meth", 8), ("meth", 66)]
    planted = tuple((l, i, float(w)) for (l, i), w in zip(slots, weights))
    return SyntheticSpec(n_samples, layers, planted, censoring_rate, seed)


def _calibrate_censoring(event_time, unit_draws, rate) -> float:
    """Censoring rate parameter whose realised censored fraction is closest to ``rate``."""
    def frac(log_rate):
        return np.mean(unit_draws / np.exp(log_rate) < event_time)

    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) < rate:
            lo = mid
        else:
            hi = mid
    return np.exp(lo if abs(frac(lo) - rate) <= abs(frac(hi) - rate) else hi)


def make_synthetic(spec: SyntheticSpec, name: str = "synthetic") -> MultiOmicsDataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    ids = tuple(f"S{i:05d}" for i in range(n))
    layers = []
    values = {}
    for layer_name, width in spec.layers:
        v = rng.standard_normal((n, width))
        values[layer_name] = v
        layers.append(OmicsLayer(layer_name, tuple(f"{layer_name}_{j}" for j in range(width)), v))
    log_hazard = np.zeros(n)
    for layer_name, idx, weight in spec.planted:
        log_hazard += weight * values[layer_name][:, idx]
    event_time = rng.exponential(1.0, n) / np.exp(log_hazard)
    unit_draws = rng.exponential(1.0, n)
    if spec.censoring_rate > 0:
        c_rate = _calibrate_censoring(event_time, unit_draws, spec.censoring_rate)
        censor_time = unit_draws / c_rate
    else:
        censor_time = np.full(n, np.inf)
    event = event_time <= censor_time
    time = np.minimum(event_time, censor_time) * DAYS_PER_UNIT
    layers.sort(key=lambda l: l.name)
    return MultiOmicsDataset(ids, tuple(layers), SurvivalLabels(time, event), name=name)


def generate_synthetic(spec: SyntheticSpec, out_dir: Optional[str] = None,
                       name: str = "synthetic") -> MultiOmicsDataset:
    """Build the dataset and, when ``out_dir`` is given, write it in TSV layout."""
    dataset = make_synthetic(spec, name)
    if out_dir is not None:
        write_dataset(dataset, out_dir)
    return dataset


def planted_refs(spec: SyntheticSpec) -> List[Tuple[str, str]]:
    return [(layer, f"{layer}_{idx}") for layer, idx, w in spec.planted if w != 0]
