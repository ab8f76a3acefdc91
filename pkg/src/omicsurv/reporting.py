"""File outputs: delimited tables, Kaplan-Meier exports, SVG and PNG figures.

Every CSV goes through :func:`write_table`, which formats floats with
``repr`` so that parsing a table and writing it again reproduces the same
bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .data import MultiOmicsDataset, SurvivalLabels
from .pipeline import (ComparisonTable, CvReport, PipelineConfig, StabilityResult, derive_seed,
                       make_folds)
from .survival import KmCurve, km_estimate, logrank_test

GROUP_NAMES = ("low risk", "high risk")


# ---------------------------------------------------------------- tables

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def table_to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row length does not match header")
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def parse_csv(text: str) -> Tuple[List[str], List[List[object]]]:
    """Parse a table written by :func:`table_to_csv`.

    Cells that look like integers or floats come back as numbers, empty
    cells as ``None``; everything else stays a string.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = [[_typed(c) for c in row] for row in reader]
    return header, rows


def _typed(cell: str):
    if cell == "":
        return None
    # only convert text that would be re-emitted unchanged
    try:
        value = int(cell)
        if str(value) == cell:
            return value
    except ValueError:
        pass
    try:
        value = float(cell)
    except ValueError:
        return cell
    return value if repr(value) == cell else cell


def write_table(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    with open(path, "w", newline="") as fh:
        fh.write(table_to_csv(header, rows))
    return path


# ---------------------------------------------------------------- Kaplan-Meier

@dataclass(frozen=True)
class KmExport:
    curves: Dict[str, KmCurve]
    labels: Dict[str, SurvivalLabels]
    logrank_p: float

    def __post_init__(self):
        for name, lab in self.labels.items():
            if len(lab) == 0:
                raise ValueError(f"group {name!r} is empty")

    @property
    def group_sizes(self) -> Dict[str, int]:
        return {name: len(lab) for name, lab in self.labels.items()}


def km_export(labels: SurvivalLabels, groups) -> KmExport:
    """Per-group curves and the logrank p; group 1 is the high-risk cluster."""
    g = np.asarray(groups).astype(int).ravel()
    if g.shape[0] != len(labels):
        raise ValueError("groups and labels differ in length")
    if not np.all(np.isin(g, (0, 1))):
        raise ValueError("groups must be 0/1")
    _, p = logrank_test(labels, g)
    subsets = {GROUP_NAMES[k]: labels.subset(np.flatnonzero(g == k)) for k in (0, 1)}
    return KmExport({k: km_estimate(v) for k, v in subsets.items()}, subsets, p)


def km_rows(export: KmExport) -> List[list]:
    rows = []
    for name, curve in export.curves.items():
        n = export.group_sizes[name]
        rows.append([name, 0.0, 1.0, n])
        for t, s, r in zip(curve.event_times, curve.survival, curve.at_risk):
            rows.append([name, float(t), float(s), int(r)])
    return rows


KM_COLUMNS = ("group", "time", "survival", "at_risk")


def _step_points(curve: KmCurve, t_max: float) -> List[Tuple[float, float]]:
    pts = [(0.0, 1.0)]
    s = 1.0
    for t, s_new in zip(curve.event_times, curve.survival):
        pts.append((float(t), s))
        pts.append((float(t), float(s_new)))
        s = float(s_new)
    pts.append((t_max, s))
    return pts


def _survival_at(curve: KmCurve, t: float) -> float:
    idx = np.searchsorted(curve.event_times, t, side="right")
    return 1.0 if idx == 0 else float(curve.survival[idx - 1])


def km_svg(export: KmExport, title: str = "Kaplan-Meier", width: int = 480,
           height: int = 320) -> str:
    """Standalone SVG with one step line per group and ticks at censored times."""
    margin_l, margin_r, margin_t, margin_b = 50, 110, 36, 40
    pw, ph = width - margin_l - margin_r, height - margin_t - margin_b
    t_max = max(float(lab.time.max()) for lab in export.labels.values())
    t_max = t_max if t_max > 0 else 1.0

    def sx(t):
        return margin_l + pw * t / t_max

    def sy(s):
        return margin_t + ph * (1.0 - s)

    colours = {GROUP_NAMES[0]: "#1f77b4", GROUP_NAMES[1]: "#d62728"}
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{escape(title)} (logrank p = {export.logrank_p:.3g})</text>',
        f'<path d="M{margin_l},{margin_t} V{margin_t + ph} H{margin_l + pw}" '
        'stroke="black" fill="none"/>',
    ]
    for s in (0.0, 0.5, 1.0):
        out.append(f'<text x="{margin_l - 6}" y="{sy(s) + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{s:.1f}</text>')
    out.append(f'<text x="{margin_l + pw / 2:.2f}" y="{height - 8}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="11">time</text>')
    for i, (name, curve) in enumerate(export.curves.items()):
        colour = colours.get(name, "black")
        pts = _step_points(curve, t_max)
        d = "M" + " L".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in pts)
        out.append(f'<path d="{d}" stroke="{colour}" stroke-width="1.5" fill="none"/>')
        lab = export.labels[name]
        ticks = []
        for t in np.unique(lab.time[~lab.event]):
            x, y = sx(float(t)), sy(_survival_at(curve, float(t)))
            ticks.append(f"M{x:.2f},{y - 4:.2f} V{y + 4:.2f}")
        if ticks:
            out.append(f'<path d="{" ".join(ticks)}" stroke="{colour}" fill="none"/>')
        ly = margin_t + 14 + 16 * i
        out.append(f'<path d="M{margin_l + pw + 10},{ly - 4} h18" stroke="{colour}" '
                   'stroke-width="1.5"/>')
        out.append(f'<text x="{margin_l + pw + 32}" y="{ly}" font-family="sans-serif" '
                   f'font-size="10">{escape(name)} (n={len(lab)})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def km_png(export: KmExport, path: str, title: str = "Kaplan-Meier") -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve in export.curves.items():
        t = np.concatenate(([0.0], curve.event_times))
        s = np.concatenate(([1.0], curve.survival))
        line, = ax.step(t, s, where="post", label=f"{name} (n={len(export.labels[name])})")
        lab = export.labels[name]
        cens = np.unique(lab.time[~lab.event])
        ax.plot(cens, [_survival_at(curve, c) for c in cens], "|", color=line.get_color())
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("time")
    ax.set_ylabel("survival probability")
    ax.set_title(f"{title} (logrank p = {export.logrank_p:.3g})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def fold_groups(report: CvReport, dataset: MultiOmicsDataset,
                repeat: Optional[int] = None) -> Tuple[SurvivalLabels, np.ndarray]:
    """Pool test-cluster labels over the successful folds of one repeat (or all)."""
    idx, groups = [], []
    for f in report.successes:
        if repeat is not None and f.repeat_index != repeat:
            continue
        if not f.cluster_labels or len(f.cluster_labels) != len(f.test_indices):
            raise ValueError("report has no cluster labels")
        idx.extend(f.test_indices)
        groups.extend(f.cluster_labels)
    if not idx:
        raise ValueError("report has no cluster labels")
    idx = np.asarray(idx)
    if idx.max() >= dataset.n_samples:
        raise ValueError("report does not match the dataset")
    return dataset.survival.subset(idx), np.asarray(groups, dtype=int)


def write_km(export: KmExport, out_prefix: str, title: str = "Kaplan-Meier",
             png: bool = True) -> List[str]:
    paths = [write_table(out_prefix + ".csv", KM_COLUMNS, km_rows(export))]
    with open(out_prefix + ".svg", "w") as fh:
        fh.write(km_svg(export, title))
    paths.append(out_prefix + ".svg")
    if png:
        paths.append(km_png(export, out_prefix + ".png", title))
    return paths


# ---------------------------------------------------------------- comparison

def violin_rows(reports: Sequence[CvReport]) -> List[list]:
    rows = []
    for rep in reports:
        for f in sorted(rep.successes, key=lambda f: f.key):
            rows.append([rep.model, rep.dataset, f.repeat_index, f.fold_index, f.test_c_index])
    return rows


VIOLIN_COLUMNS = ("model", "dataset", "repeat", "fold", "c_index")


def write_comparison(table: ComparisonTable, reports: Sequence[CvReport],
                     out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, text in (("summary.csv", table.summary_csv()), ("tests.csv", table.tests_csv())):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths.append(path)
    paths.append(write_table(os.path.join(out_dir, "c_index_distribution.csv"),
                             VIOLIN_COLUMNS, violin_rows(reports)))
    path = os.path.join(out_dir, "summary.txt")
    with open(path, "w") as fh:
        fh.write(table.to_text())
    paths.append(path)
    return paths


# ---------------------------------------------------------------- stability

LAYER_COLUMNS = ("layer", "count", "width", "normalised")
FREQ_COLUMNS = ("rank", "layer", "feature", "appearances")


def stability_tables(result: StabilityResult) -> Tuple[List[list], List[list]]:
    norm = result.layer_normalised
    layer_rows = [[name, result.layer_counts[name], result.layer_widths[name], norm[name]]
                  for name in result.layer_counts]
    freq_rows = [[i + 1, layer, feat, count]
                 for i, (layer, feat, count) in enumerate(result.feature_counts)]
    return layer_rows, freq_rows


def stability_png(result: StabilityResult, path: str) -> str:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    names = list(result.layer_counts)
    axes[0].bar(names, [result.layer_counts[n] for n in names])
    axes[0].set_title("top features per layer")
    norm = result.layer_normalised
    axes[1].bar(names, [norm[n] for n in names])
    axes[1].set_title("normalised by layer width")
    counts = [c for _, _, c in result.feature_counts]
    axes[2].plot(np.arange(1, len(counts) + 1), counts, marker=".")
    axes[2].set_xlabel("feature rank")
    axes[2].set_ylabel(f"appearances in {result.runs} runs")
    for ax in axes[:2]:
        ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def write_stability(result: StabilityResult, out_dir: str, png: bool = True) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    layer_rows, freq_rows = stability_tables(result)
    paths = [write_table(os.path.join(out_dir, "layer_counts.csv"), LAYER_COLUMNS, layer_rows),
             write_table(os.path.join(out_dir, "feature_frequency.csv"), FREQ_COLUMNS, freq_rows)]
    if png:
        paths.append(stability_png(result, os.path.join(out_dir, "stability.png")))
    return paths


# ---------------------------------------------------------------- manifest

def config_hash(config: PipelineConfig) -> str:
    text = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def run_manifest(config: PipelineConfig, kind: str, dataset_path: str,
                 dataset: MultiOmicsDataset) -> dict:
    splits = make_folds(dataset.n_samples, config.folds, config.repeats, config.master_seed)
    return {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "model": kind,
        "dataset": os.path.abspath(dataset_path),
        "n_samples": dataset.n_samples,
        "config": config.to_dict(),
        "config_sha256": config_hash(config),
        "master_seed": config.master_seed,
        "fold_seeds": [[derive_seed(config.master_seed, r, f) for f in range(len(per))]
                       for r, per in enumerate(splits)],
    }


def write_manifest(manifest: dict, out_dir: str) -> str:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path
