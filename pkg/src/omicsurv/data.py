"""Multi-omics dataset containers, TSV ingestion and train-only preprocessing."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

SURVIVAL_FILE = "survival.tsv"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SurvivalLabels:
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event).astype(bool)
        if time.ndim != 1 or event.shape != time.shape:
            raise DatasetError("time and event must be 1-D arrays of equal length")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise DatasetError("survival times must be finite and nonnegative")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)

    def __len__(self):
        return self.time.shape[0]

    def subset(self, idx) -> "SurvivalLabels":
        return SurvivalLabels(self.time[idx], self.event[idx])

    @property
    def n_events(self) -> int:
        return int(self.event.sum())


@dataclass(frozen=True)
class OmicsLayer:
    name: str
    feature_names: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DatasetError(f"layer {self.name!r}: values must be a matrix")
        names = tuple(str(f) for f in self.feature_names)
        if len(names) != values.shape[1]:
            raise DatasetError(
                f"layer {self.name!r}: {len(names)} feature names for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DatasetError(f"layer {self.name!r}: duplicate feature names")
        if not np.all(np.isfinite(values)):
            raise DatasetError(f"layer {self.name!r}: non-finite values")
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", values)

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MultiOmicsDataset:
    sample_ids: Tuple[str, ...]
    layers: Tuple[OmicsLayer, ...]
    survival: SurvivalLabels
    name: str = "dataset"

    def __post_init__(self):
        ids = tuple(str(s) for s in self.sample_ids)
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate sample id")
        for layer in self.layers:
            if layer.values.shape[0] != len(ids):
                raise DatasetError(
                    f"layer {layer.name!r} has {layer.values.shape[0]} rows, expected {len(ids)}")
        if len(self.survival) != len(ids):
            raise DatasetError("survival labels do not match sample count")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.layers]

    def layer(self, name: str) -> OmicsLayer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)


@dataclass(frozen=True)
class FeatureRef:
    layer_name: str
    feature_name: str
    global_index: int


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray = field(repr=False)

    @property
    def width(self) -> int:
        return self.mean.shape[0]


def _read_tsv(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise DatasetError(f"{path}: empty file") from exc
    if frame.shape[1] == 0 or frame.columns[0] != "sample_id":
        raise DatasetError(f"{path}: first header column must be 'sample_id'")
    ids = frame["sample_id"]
    if ids.duplicated().any():
        dup = ids[ids.duplicated()].iloc[0]
        raise DatasetError(f"{path}: duplicate sample id {dup!r}")
    return frame.set_index("sample_id")


def _to_numeric(frame: pd.DataFrame, path: str) -> np.ndarray:
    out = np.empty(frame.shape, dtype=float)
    for j, col in enumerate(frame.columns):
        try:
            out[:, j] = pd.to_numeric(frame[col], errors="raise").to_numpy(dtype=float)
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"{path}: non-numeric cell in column {col!r}") from exc
    if not np.all(np.isfinite(out)):
        raise DatasetError(f"{path}: missing or non-finite values are not accepted")
    return out


def load_dataset(root_path: str, name: str | None = None) -> MultiOmicsDataset:
    """Load a directory of ``<layer>.tsv`` files plus ``survival.tsv``.

    Samples are aligned on the intersection of ids across all files and
    ordered by sorted id; layers are ordered by name.
    """
    if not os.path.isdir(root_path):
        raise DatasetError(f"{root_path}: not a directory")
    surv_path = os.path.join(root_path, SURVIVAL_FILE)
    if not os.path.exists(surv_path):
        raise DatasetError("missing survival file")

    surv = _read_tsv(surv_path)
    missing = {"time", "event"} - set(surv.columns)
    if missing:
        raise DatasetError(f"{surv_path}: missing columns {sorted(missing)}")
    surv_values = _to_numeric(surv[["time", "event"]], surv_path)
    if not np.isin(surv_values[:, 1], (0.0, 1.0)).all():
        raise DatasetError(f"{surv_path}: event must be 0 or 1")

    layer_files = sorted(
        f for f in os.listdir(root_path) if f.endswith(".tsv") and f != SURVIVAL_FILE)
    if not layer_files:
        raise DatasetError(f"{root_path}: no layer files")
    frames = {f[:-4]: _read_tsv(os.path.join(root_path, f)) for f in layer_files}

    common = set(surv.index)
    for frame in frames.values():
        common &= set(frame.index)
    if not common:
        raise DatasetError("empty sample intersection")
    ids = sorted(common)

    layers = []
    for layer_name, frame in frames.items():
        values = _to_numeric(frame.loc[ids], os.path.join(root_path, layer_name + ".tsv"))
        layers.append(OmicsLayer(layer_name, tuple(frame.columns), values))

    surv_pos = surv.index.get_indexer(ids)
    labels = SurvivalLabels(surv_values[surv_pos, 0], surv_values[surv_pos, 1].astype(bool))
    return MultiOmicsDataset(tuple(ids), tuple(layers), labels,
                             name=name or os.path.basename(os.path.normpath(root_path)))


def write_dataset(dataset: MultiOmicsDataset, root_path: str) -> None:
    os.makedirs(root_path, exist_ok=True)
    for layer in dataset.layers:
        frame = pd.DataFrame(layer.values, index=pd.Index(dataset.sample_ids, name="sample_id"),
                             columns=list(layer.feature_names))
        frame.to_csv(os.path.join(root_path, layer.name + ".tsv"), sep="\t", float_format="%.17g",
                     lineterminator="\n")
    surv = pd.DataFrame({"time": dataset.survival.time,
                         "event": dataset.survival.event.astype(int)},
                        index=pd.Index(dataset.sample_ids, name="sample_id"))
    surv.to_csv(os.path.join(root_path, SURVIVAL_FILE), sep="\t", float_format="%.17g",
                lineterminator="\n")


def variance_topk(layer: OmicsLayer | np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest-variance columns, ascending.

    Population variance; ties go to the lower column index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    values = layer.values if isinstance(layer, OmicsLayer) else np.asarray(layer, dtype=float)
    if values.shape[1] == 0:
        return np.zeros(0, dtype=int)
    if values.shape[0] < 1:
        raise ValueError("layer has no rows")
    var = values.var(axis=0)
    # stable sort on -var keeps lower indices first among ties
    order = np.argsort(-var, kind="stable")
    return np.sort(order[:k])


def concat_selected(dataset: MultiOmicsDataset, per_layer_indices: Sequence[np.ndarray],
                    rows=None) -> Tuple[np.ndarray, List[FeatureRef]]:
    if len(per_layer_indices) != len(dataset.layers):
        raise ValueError("one index array per layer is required")
    blocks, refs = [], []
    for layer, idx in zip(dataset.layers, per_layer_indices):
        idx = np.sort(np.asarray(idx, dtype=int))
        if idx.size and (idx.min() < 0 or idx.max() >= layer.n_features):
            raise IndexError(f"layer {layer.name!r}: feature index out of range")
        values = layer.values if rows is None else layer.values[rows]
        blocks.append(values[:, idx])
        for j in idx:
            refs.append(FeatureRef(layer.name, layer.feature_names[j], len(refs)))
    n = dataset.n_samples if rows is None else len(np.arange(dataset.n_samples)[rows])
    x = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return x, refs


def zscore_fit(train: np.ndarray) -> Scaler:
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] < 2:
        raise ValueError("zscore_fit needs at least 2 rows")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std <= 1e-12, 1.0, std)
    return Scaler(mean, std)


def zscore_apply(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != scaler.width:
        raise ValueError(f"width mismatch: scaler has {scaler.width}, input has {x.shape[-1]}")
    return (x - scaler.mean) / scaler.std
