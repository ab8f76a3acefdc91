"""Leakage-free cross-validated evaluation of fingerprint models.

Each fold runs six steps, every one of them fitted on training rows only:

A. top-k variance selection per omics layer
B. z-scoring
C. fingerprint model fit / transform
D. univariate Cox screening of fingerprints
E. 2-means clustering of the screened fingerprints, logrank on test clusters
F. multivariable Cox regression, C-index on the test hazards
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .data import (FeatureRef, MultiOmicsDataset, Scaler, concat_selected, variance_topk,
                   zscore_apply, zscore_fit)
from .models import MODEL_KINDS, FingerprintModel, ModelConfig, ModelFitError, make_model
from .survival import (CoxModel, SurvivalError, concordance_index, cox_fit_with_fallback,
                       logrank_test, univariate_cox_select)

log = logging.getLogger(__name__)

ModelFactory = Callable[[str, ModelConfig, int], FingerprintModel]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class KMeansConfig:
    k: int = 2
    n_init: int = 10
    max_iter: int = 300
    tol: float = 0.001


@dataclass(frozen=True)
class PipelineConfig:
    k_per_layer: int = 1000
    n_fingerprints: int = 128
    hidden: int = 512
    epochs: int = 256
    learning_rate: float = 0.01
    l2_lambda: float = 0.001
    dropout: float = 0.3
    noise_std: float = 0.2
    t0: float = 10.0
    tb: float = 0.1
    select_alpha: float = 0.05
    cox_fallback_penalty: float = 0.1
    kmeans: KMeansConfig = KMeansConfig()
    folds: int = 10
    repeats: int = 10
    master_seed: int = 0
    selection_on_train_only: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        positive = ("k_per_layer", "n_fingerprints", "hidden", "epochs", "learning_rate",
                    "folds", "repeats")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("l2_lambda", "noise_std", "cox_fallback_penalty"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if not 0 < self.select_alpha < 1:
            raise ConfigError("select_alpha must be in (0, 1)")
        if not self.t0 > self.tb > 0:
            raise ConfigError("t0 > tb > 0 required")
        if self.kmeans.k != 2:
            raise ConfigError("kmeans.k must be 2")
        if self.kmeans.n_init < 1 or self.kmeans.max_iter < 1 or self.kmeans.tol < 0:
            raise ConfigError("invalid kmeans settings")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.n_fingerprints, self.hidden, self.epochs, self.learning_rate,
                           self.l2_lambda, self.dropout, self.noise_std, self.t0, self.tb,
                           self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        d = dict(d)
        if "kmeans" in d:
            km = d["kmeans"]
            if not isinstance(km, dict):
                raise ConfigError("config key 'kmeans' must be an object")
            km_known = {f.name for f in fields(KMeansConfig)}
            for key in km:
                if key not in km_known:
                    raise ConfigError(f"unknown config key 'kmeans.{key}'")
            d["kmeans"] = KMeansConfig(**km)
        types = {f.name: f.type for f in fields(cls)}
        for key, value in d.items():
            if key == "kmeans":
                continue
            expected = types[key]
            if expected == "str" and not isinstance(value, str):
                raise ConfigError(f"config key {key!r} must be a string")
            if expected == "bool" and not isinstance(value, bool):
                raise ConfigError(f"config key {key!r} must be a boolean")
            if expected in ("int", "float") and (isinstance(value, bool)
                                                 or not isinstance(value, (int, float))):
                raise ConfigError(f"config key {key!r} must be numeric")
            if expected == "int" and not float(value).is_integer():
                raise ConfigError(f"config key {key!r} must be an integer")
            if expected == "int":
                d[key] = int(value)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str) -> "PipelineConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def make_folds(n: int, folds: int, repeats: int,
               master_seed: int) -> List[List[Tuple[np.ndarray, np.ndarray]]]:
    """Per repeat, a seeded shuffle cut into ``folds`` near-equal test blocks."""
    if n < folds:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    out = []
    for r in range(repeats):
        perm = np.random.default_rng(derive_seed(master_seed, r)).permutation(n)
        blocks = np.array_split(perm, folds)
        splits = []
        for test in blocks:
            test = np.sort(test)
            train = np.setdiff1d(np.arange(n), test)
            splits.append((train, test))
        out.append(splits)
    return out


@dataclass
class KMeansResult:
    centroids: np.ndarray
    inertia: float
    labels: np.ndarray
    n_iter: int
    run_inertias: List[float]


def _sq_dist(z, centroids):
    return ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(z, k, rng):
    n = z.shape[0]
    centers = [z[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dist(z, np.asarray(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(z[rng.integers(n)])
        else:
            centers.append(z[rng.choice(n, p=d2 / total)])
    return np.asarray(centers, dtype=float)


def _lloyd(z, centroids, max_iter, tol):
    k = centroids.shape[0]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dist(z, centroids)
        labels = np.argmin(d2, axis=1)
        new = np.empty_like(centroids)
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = z[members].mean(axis=0)
            else:
                # re-seed from the point farthest from its current centroid
                far = np.argmax(d2[np.arange(len(z)), labels])
                new[c] = z[far]
                labels[far] = c
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    labels = np.argmin(_sq_dist(z, centroids), axis=1)
    inertia = float(_sq_dist(z, centroids)[np.arange(len(z)), labels].sum())
    return centroids, labels, inertia, n_iter


def kmeans_fit(z, cfg: KMeansConfig = KMeansConfig(), seed: int = 0) -> KMeansResult:
    """Best-inertia run out of ``cfg.n_init`` k-means++ seeded Lloyd runs."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] < cfg.k:
        raise ValueError(f"need at least {cfg.k} rows to fit {cfg.k} clusters")
    rng = np.random.default_rng(seed)
    best = None
    inertias = []
    for _ in range(cfg.n_init):
        init = _kmeanspp(z, cfg.k, rng)
        centroids, labels, inertia, n_iter = _lloyd(z, init, cfg.max_iter, cfg.tol)
        inertias.append(inertia)
        if best is None or inertia < best[2]:
            best = (centroids, labels, inertia, n_iter)
    return KMeansResult(best[0], best[2], best[1], best[3], inertias)


def kmeans_assign(centroids: np.ndarray, z) -> np.ndarray:
    return np.argmin(_sq_dist(np.asarray(z, dtype=float), centroids), axis=1)


@dataclass
class FoldArtifacts:
    """Everything fitted on the training rows of one fold."""

    per_layer_indices: List[np.ndarray]
    refs: List[FeatureRef]
    scaler: Scaler
    model: FingerprintModel
    selected: np.ndarray
    kmeans: KMeansResult
    cox: CoxModel
    high_risk_cluster: int


@dataclass
class FoldResult:
    repeat_index: int
    fold_index: int
    test_indices: List[int] = field(default_factory=list)
    test_c_index: Optional[float] = None
    test_logrank_p: Optional[float] = None
    selected_fingerprints: List[int] = field(default_factory=list)
    cluster_labels: List[int] = field(default_factory=list)
    n_fingerprints: Optional[int] = None
    cox_penalty: Optional[float] = None
    failure: Optional[str] = None
    artifacts: Optional[FoldArtifacts] = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.failure is None

    @property
    def key(self) -> Tuple[int, int]:
        return (self.repeat_index, self.fold_index)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("artifacts")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FoldResult":
        return cls(**d)


def _default_factory(kind: str, config: ModelConfig, seed: int) -> FingerprintModel:
    return make_model(kind, config, seed)


def prepare_features(dataset: MultiOmicsDataset, train_idx, k_per_layer: int,
                     train_only: bool = True) -> Tuple[List[np.ndarray], np.ndarray, List[FeatureRef]]:
    """Step A: per-layer variance selection; returns indices and the full concatenated matrix."""
    rows = train_idx if train_only else slice(None)
    per_layer = [variance_topk(layer.values[rows], k_per_layer) for layer in dataset.layers]
    x, refs = concat_selected(dataset, per_layer)
    return per_layer, x, refs


def run_fold(dataset: MultiOmicsDataset, train_idx, test_idx, kind: str,
             config: PipelineConfig, seed: int, repeat_index: int = 0, fold_index: int = 0,
             model_factory: Optional[ModelFactory] = None,
             keep_artifacts: bool = False) -> FoldResult:
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.asarray(test_idx, dtype=int)
    if train_idx.size == 0 or test_idx.size == 0:
        raise ValueError("train and test index sets must be non-empty")
    if np.intersect1d(train_idx, test_idx).size:
        raise ValueError("train and test index sets overlap")
    result = FoldResult(repeat_index, fold_index, test_indices=[int(i) for i in test_idx])
    factory = model_factory or _default_factory
    y_train = dataset.survival.subset(train_idx)
    y_test = dataset.survival.subset(test_idx)
    try:
        if y_train.n_events == 0:
            raise SurvivalError("no events in training fold")
        per_layer, x, refs = prepare_features(dataset, train_idx, config.k_per_layer,
                                              config.selection_on_train_only)
        scaler = zscore_fit(x[train_idx])
        x_train = zscore_apply(scaler, x[train_idx])
        x_test = zscore_apply(scaler, x[test_idx])

        model = factory(kind, config.model_config(), derive_seed(seed, 1))
        model.fit(x_train, y_train)
        z_train = model.transform(x_train)
        z_test = model.transform(x_test)
        if not (np.all(np.isfinite(z_train)) and np.all(np.isfinite(z_test))):
            raise ModelFitError("non-finite fingerprints")
        result.n_fingerprints = int(z_train.shape[1])

        selected = univariate_cox_select(z_train, y_train, config.select_alpha,
                                         config.cox_fallback_penalty)
        zs_train, zs_test = z_train[:, selected], z_test[:, selected]

        cox = cox_fit_with_fallback(zs_train, y_train, config.cox_fallback_penalty)
        if not cox.converged:
            raise ModelFitError("Cox regression did not converge with or without penalty")

        km = kmeans_fit(zs_train, config.kmeans, derive_seed(seed, 2))
        train_risk = cox.predict_log_hazard(zs_train)
        means = [train_risk[km.labels == c].mean() if np.any(km.labels == c) else -np.inf
                 for c in range(config.kmeans.k)]
        high = int(np.argmax(means))
        test_clusters = (kmeans_assign(km.centroids, zs_test) == high).astype(int)

        try:
            _, p = logrank_test(y_test, test_clusters)
        except SurvivalError:
            p = float("nan")
        result.test_logrank_p = float(p)
        result.test_c_index = float(concordance_index(cox.predict_log_hazard(zs_test), y_test))
        result.selected_fingerprints = [int(i) for i in selected]
        result.cluster_labels = [int(c) for c in test_clusters]
        result.cox_penalty = cox.penalty
        if keep_artifacts:
            result.artifacts = FoldArtifacts(per_layer, refs, scaler, model, selected, km, cox,
                                             high)
    except (ModelFitError, SurvivalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("fold (%d, %d) failed: %s", repeat_index, fold_index, exc)
        result = FoldResult(repeat_index, fold_index, test_indices=[int(i) for i in test_idx],
                            failure=f"{type(exc).__name__}: {exc}")
    return result


CSV_COLUMNS = ("model", "repeat", "fold", "c_index", "logrank_p", "failure")


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _parse(text: str) -> Optional[float]:
    return None if text == "" else float(text)


@dataclass
class CvReport:
    model: str
    dataset: str
    folds: List[FoldResult]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = [f.key for f in self.folds]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (repeat, fold) keys in report")

    @property
    def successes(self) -> List[FoldResult]:
        return [f for f in self.folds if f.ok]

    def c_indices(self) -> Dict[Tuple[int, int], float]:
        return {f.key: f.test_c_index for f in self.successes}

    @property
    def mean_c_index(self) -> float:
        vals = [f.test_c_index for f in self.successes]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def std_c_index(self) -> float:
        vals = [f.test_c_index for f in self.successes]
        return float(np.std(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for f in sorted(self.folds, key=lambda f: f.key):
            writer.writerow([self.model, f.repeat_index, f.fold_index, _fmt(f.test_c_index),
                             _fmt(f.test_logrank_p), f.failure or ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dataset: str = "dataset") -> "CvReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        if rows and tuple(rows[0].keys()) != CSV_COLUMNS:
            raise ValueError(f"unexpected report columns {tuple(rows[0].keys())}")
        folds = [FoldResult(int(r["repeat"]), int(r["fold"]), test_c_index=_parse(r["c_index"]),
                            test_logrank_p=_parse(r["logrank_p"]), failure=r["failure"] or None)
                 for r in rows]
        model = rows[0]["model"] if rows else "unknown"
        return cls(model, dataset, folds)

    def to_dict(self) -> dict:
        return {"model": self.model, "dataset": self.dataset, "config": self.config,
                "mean_c_index": self.mean_c_index, "std_c_index": self.std_c_index,
                "n_success": len(self.successes),
                "folds": [f.to_dict() for f in sorted(self.folds, key=lambda f: f.key)]}

    @classmethod
    def from_dict(cls, d: dict) -> "CvReport":
        return cls(d["model"], d["dataset"], [FoldResult.from_dict(f) for f in d["folds"]],
                   d.get("config", {}))

    def save(self, out_dir: str) -> Tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "report.csv")
        json_path = os.path.join(out_dir, "report.json")
        with open(csv_path, "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return csv_path, json_path

    @classmethod
    def load(cls, path: str) -> "CvReport":
        if os.path.isdir(path):
            path = os.path.join(path, "report.json")
        with open(path) as fh:
            if path.endswith(".csv"):
                name = os.path.basename(os.path.dirname(os.path.abspath(path)))
                return cls.from_csv(fh.read(), dataset=name)
            return cls.from_dict(json.load(fh))


def _fold_task(args):
    dataset, train, test, kind, config, r, f = args
    return run_fold(dataset, train, test, kind, config, derive_seed(config.master_seed, r, f),
                    r, f)


def cross_validate(dataset: MultiOmicsDataset, kind: str, config: PipelineConfig = PipelineConfig(),
                   workers: int = 1, model_factory: Optional[ModelFactory] = None,
                   keep_artifacts: bool = False) -> CvReport:
    """Repeated k-fold evaluation; fold splits depend only on ``config.master_seed``."""
    if kind not in MODEL_KINDS and model_factory is None:
        raise ValueError(f"unknown model kind {kind!r}")
    splits = make_folds(dataset.n_samples, config.folds, config.repeats, config.master_seed)
    tasks = [(dataset, train, test, kind, config, r, f)
             for r, per_repeat in enumerate(splits)
             for f, (train, test) in enumerate(per_repeat)]
    if workers > 1 and model_factory is None and not keep_artifacts:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_task, tasks))
    else:
        results = []
        for dataset_, train, test, kind_, cfg, r, f in tasks:
            results.append(run_fold(dataset_, train, test, kind_, cfg,
                                    derive_seed(cfg.master_seed, r, f), r, f,
                                    model_factory, keep_artifacts))
            log.info("%s repeat %d fold %d: %s", kind, r, f,
                     results[-1].failure or f"C={results[-1].test_c_index:.3f}")
    report = CvReport(kind, dataset.name, results, config.to_dict())
    if not report.successes:
        raise RuntimeError(f"all folds failed for model {kind!r}")
    return report


@dataclass
class PairTest:
    model_a: str
    model_b: str
    scope: str
    t_stat: float
    p_value: float
    n_a: int
    n_b: int


@dataclass
class ModelSummary:
    model: str
    mean_c_index: float
    average_rank: float
    n_folds: int


@dataclass
class ComparisonTable:
    rows: List[ModelSummary]
    per_dataset: Dict[str, Dict[str, float]]
    tests: List[PairTest]

    def sorted_rows(self) -> List[ModelSummary]:
        return sorted(self.rows, key=lambda r: (r.average_rank, -r.mean_c_index, r.model))

    def to_text(self) -> str:
        lines = [f"{'model':<12}{'avg rank':>10}{'mean C':>10}{'folds':>8}"]
        for r in self.sorted_rows():
            lines.append(f"{r.model:<12}{r.average_rank:>10.2f}{r.mean_c_index:>10.3f}"
                         f"{r.n_folds:>8d}")
        pooled = [t for t in self.tests if t.scope == "pooled"]
        if pooled:
            lines.append("")
            lines.append("pairwise two-sided t-tests (pooled folds)")
            for t in pooled:
                lines.append(f"  {t.model_a} vs {t.model_b}: t={t.t_stat:.3f} p={t.p_value:.3g}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "average_rank", "mean_c_index", "n_folds"])
        for r in self.sorted_rows():
            w.writerow([r.model, _fmt(r.average_rank), _fmt(r.mean_c_index), r.n_folds])
        return buf.getvalue()

    def tests_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model_a", "model_b", "scope", "t_stat", "p_value", "n_a", "n_b"])
        for t in self.tests:
            w.writerow([t.model_a, t.model_b, t.scope, _fmt(t.t_stat), _fmt(t.p_value),
                        t.n_a, t.n_b])
        return buf.getvalue()


def _ttest(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    if a.shape == b.shape and np.array_equal(a, b):
        return 0.0, 1.0
    if len(a) < 2 or len(b) < 2:
        return float("nan"), float("nan")
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        # zero spread in both samples: distinct constants are perfectly separated
        return float(np.sign(a[0] - b[0]) * np.inf), 0.0
    t, p = stats.ttest_ind(a, b)
    return float(t), float(p)


def compare_models(reports: Sequence[CvReport]) -> ComparisonTable:
    """Average ranks across datasets and pairwise independent two-sided t-tests.

    Means are taken over the folds every model in a dataset completed.
    Rank 1 is the best mean C-index; ties share the average rank.
    """
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    by_dataset: Dict[str, Dict[str, CvReport]] = {}
    for rep in reports:
        slot = by_dataset.setdefault(rep.dataset, {})
        label = rep.model
        suffix = 2
        while label in slot:
            label = f"{rep.model}#{suffix}"
            suffix += 1
        slot[label] = rep
    models = sorted({m for slot in by_dataset.values() for m in slot})
    ranks: Dict[str, List[float]] = {m: [] for m in models}
    pooled: Dict[str, List[float]] = {m: [] for m in models}
    per_dataset: Dict[str, Dict[str, float]] = {}
    tests: List[PairTest] = []
    for name in sorted(by_dataset):
        slot = by_dataset[name]
        if len(slot) < 2:
            continue
        common = set.intersection(*(set(r.c_indices()) for r in slot.values()))
        if not common:
            raise ValueError(f"no common folds in dataset {name!r}")
        keys = sorted(common)
        vals = {m: np.array([r.c_indices()[k] for k in keys]) for m, r in slot.items()}
        labels = sorted(vals)
        means = np.array([vals[m].mean() for m in labels])
        for m, rk in zip(labels, stats.rankdata(-means, method="average")):
            ranks[m].append(float(rk))
        per_dataset[name] = {m: float(vals[m].mean()) for m in labels}
        for m in labels:
            pooled[m].extend(vals[m].tolist())
        for a, b in itertools.combinations(labels, 2):
            t, p = _ttest(vals[a], vals[b])
            tests.append(PairTest(a, b, name, t, p, len(vals[a]), len(vals[b])))
    if not per_dataset:
        raise ValueError("no common folds")
    for a, b in itertools.combinations(models, 2):
        t, p = _ttest(np.array(pooled[a]), np.array(pooled[b]))
        tests.append(PairTest(a, b, "pooled", t, p, len(pooled[a]), len(pooled[b])))
    rows = [ModelSummary(m, float(np.mean(pooled[m])) if pooled[m] else float("nan"),
                         float(np.mean(ranks[m])) if ranks[m] else float("nan"), len(pooled[m]))
            for m in models]
    return ComparisonTable(rows, per_dataset, tests)


@dataclass
class StabilityResult:
    model: str
    runs: int
    layer_counts: Dict[str, int]
    layer_widths: Dict[str, int]
    feature_counts: List[Tuple[str, str, int]]  # (layer, feature, runs it appeared in)
    n_fingerprints: List[int]

    @property
    def layer_normalised(self) -> Dict[str, float]:
        return {l: (self.layer_counts[l] / self.layer_widths[l]) if self.layer_widths[l] else 0.0
                for l in self.layer_counts}


def stability_analysis(dataset: MultiOmicsDataset, kind: str, runs: int = 32,
                       config: PipelineConfig = PipelineConfig(),
                       model_factory: Optional[ModelFactory] = None) -> StabilityResult:
    """Refit a model ``runs`` times and tally its top-1 important feature per fingerprint."""
    if kind not in MODEL_KINDS and model_factory is None:
        raise ValueError(f"model kind {kind!r} does not support importance analysis")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    factory = model_factory or _default_factory
    all_idx = np.arange(dataset.n_samples)
    per_layer, x, refs = prepare_features(dataset, all_idx, config.k_per_layer, True)
    x = zscore_apply(zscore_fit(x), x)
    widths = {layer.name: int(len(idx)) for layer, idx in zip(dataset.layers, per_layer)}
    layer_counts = {name: 0 for name in widths}
    appearances: Dict[int, int] = {}
    n_fp = []
    for r in range(runs):
        model = factory(kind, config.model_config(), derive_seed(config.master_seed, 7919, r))
        model.fit(x, dataset.survival)
        top = model.importance(refs).top_features()
        n_fp.append(int(top.shape[0]))
        for j in top:
            layer_counts[refs[j].layer_name] += 1
        for j in set(int(j) for j in top):
            appearances[j] = appearances.get(j, 0) + 1
    freq = sorted(appearances.items(), key=lambda kv: (-kv[1], kv[0]))
    feature_counts = [(refs[j].layer_name, refs[j].feature_name, c) for j, c in freq]
    return StabilityResult(kind, runs, layer_counts, widths, feature_counts, n_fp)
