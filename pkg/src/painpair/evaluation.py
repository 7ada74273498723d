"""Held-out evaluation: EvalReport assembly, cross-dataset matrix, table emitters."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import PainDataset
from .metrics import (PAIN_THRESHOLD, UndefinedMetricError, binary_metrics, icc31, pearson,
                      rolling_window_max, window_frames)
from .pain_scales import DATASETS, HeadTable, build_head_table
from .training import predict_dataset, reference_map

REPORT_SCHEMA = "painpair.eval/1"
DEFAULT_WINDOWS = (1, 5, 20)


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


def _safe(fn, *args):
    try:
        return fn(*args)
    except (UndefinedMetricError, ValueError):
        return None


def windowed_series(values, gts, groups, window: int):
    """Rolling max per subject sequence, concatenated; subjects shorter than the window drop out."""
    out_v, out_g = [], []
    for ids in groups:
        if len(ids) < window:
            continue
        out_v.append(rolling_window_max(values[ids], window))
        out_g.append(rolling_window_max(gts[ids], window))
    if not out_v:
        return None, None
    return np.concatenate(out_v), np.concatenate(out_g)


def _sequence_groups(records, indices):
    """Positions into ``indices`` grouped by subject and ordered by frame index."""
    groups = {}
    for pos, i in enumerate(indices):
        groups.setdefault(records[i].subject_id, []).append(pos)
    return [sorted(g, key=lambda p: records[indices[p]].frame_index)
            for _, g in sorted(groups.items())]


def dataset_metrics(preds, gts, groups, fps: float, windows=DEFAULT_WINDOWS,
                    threshold: float = PAIN_THRESHOLD) -> dict:
    cols = {"frame": 1}
    for sec in windows:
        cols[f"{sec:g}s"] = window_frames(fps, sec)
    out = {"pcc": {}, "f1": {}, "ap": {}, "auc": {}, "window_frames": cols}
    for name, w in cols.items():
        v, g = windowed_series(preds, gts, groups, w)
        if v is None:
            for key in ("pcc", "f1", "ap", "auc"):
                out[key][name] = None
            continue
        out["pcc"][name] = _clean(_safe(pearson, v, g))
        bm = binary_metrics(v, g, threshold) if len(v) else None
        out["f1"][name] = _clean(bm.f1) if bm else None
        out["ap"][name] = _clean(bm.ap) if bm else None
        out["auc"][name] = _clean(bm.auc) if bm else None
    out["icc31"] = _clean(_safe(icc31, preds, gts))
    return out


@dataclass
class EvalReport:
    datasets: dict = field(default_factory=dict)
    cross_dataset: list = field(default_factory=list)
    folds: dict = field(default_factory=dict)
    test_fold: int | None = None
    n_refs: int = 5
    threshold: float = PAIN_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "threshold": self.threshold,
            "n_refs": self.n_refs,
            "test_fold": self.test_fold,
            "datasets": self.datasets,
            "cross_dataset": {"rows": list(DATASETS), "cols": list(DATASETS),
                              "pcc": self.cross_dataset},
            "folds": self.folds,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def cross_dataset_matrix(model, datasets: dict, heads: HeadTable | None = None,
                         n_refs: int = 5, seed: int = 0, predictions=None) -> np.ndarray:
    """3x3 PCC: row = evaluated dataset, column = PSPI head used. NaN where unavailable.

    ``predictions`` may carry precomputed (indices, outputs) per dataset name.
    """
    heads = heads or build_head_table()
    mat = np.full((len(DATASETS), len(DATASETS)), np.nan)
    for d, name in enumerate(DATASETS):
        ds = datasets.get(name)
        if ds is None or len(ds) == 0:
            continue
        if predictions and name in predictions:
            idx, out = predictions[name]
        else:
            idx, out = predict_dataset(model, ds, n_refs, seed)
        if len(idx) < 2:
            continue
        gts = np.array([ds.records[i].pspi for i in idx])
        for h, head_ds in enumerate(DATASETS):
            r = _safe(pearson, out[:, heads.pspi_head(head_ds)], gts)
            mat[d, h] = np.nan if r is None else r
    return mat


def evaluate(model, dataset: PainDataset, heads: HeadTable | None = None,
             windows=DEFAULT_WINDOWS, n_refs: int = 5, seed: int = 0,
             threshold: float = PAIN_THRESHOLD, folds=None, test_fold=None) -> EvalReport:
    """Per-dataset frame/window metrics on ``dataset`` using each subject's own PSPI head."""
    heads = heads or build_head_table()
    by_ds = {name: dataset.subset({r.subject_id for r in dataset.records
                                   if r.dataset_id == name}) for name in DATASETS}
    by_ds = {k: v for k, v in by_ds.items() if len(v)}
    report = EvalReport(folds=dict(folds or {}), test_fold=test_fold, n_refs=n_refs,
                        threshold=threshold)
    predictions = {}
    for name, ds in by_ds.items():
        refs = reference_map(ds, n_refs, seed)
        idx, out = predict_dataset(model, ds, n_refs, seed, refs=refs)
        predictions[name] = (idx, out)
        preds = out[:, heads.pspi_head(name)] if len(idx) else np.zeros(0)
        gts = np.array([ds.records[i].pspi for i in idx])
        fps = ds.records[0].fps
        groups = _sequence_groups(ds.records, idx)
        entry = dataset_metrics(preds, gts, groups, fps, windows, threshold)
        entry.update(n_frames=int(len(idx)), n_subjects=len(refs), fps=fps)
        report.datasets[name] = entry
    mat = cross_dataset_matrix(model, by_ds, heads, n_refs, seed, predictions)
    report.cross_dataset = [[_clean(v) for v in row] for row in mat]
    return report


# -- CSV tables ---------------------------------------------------------------------

def _fmt(v):
    return "N/A" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.2f}"


def write_experiment_table(path, rows: dict) -> None:
    """Experiments x datasets frame PCC (layout of the pairing/contrastive comparison).

    ``rows`` maps experiment name -> EvalReport (or its dict).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment"] + list(DATASETS))
        for name, rep in rows.items():
            d = rep.to_dict() if isinstance(rep, EvalReport) else rep
            w.writerow([name] + [_fmt(d["datasets"].get(ds, {}).get("pcc", {}).get("frame"))
                                 for ds in DATASETS])


def write_cross_dataset_table(path, matrix) -> None:
    """Dataset rows x output-head columns (layout of the cross-dataset/ablation tables)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset"] + list(DATASETS))
        for name, row in zip(DATASETS, matrix):
            w.writerow([name] + [_fmt(None if v is None else float(v)) for v in row])


def write_window_table(path, rows: dict, metric: str = "pcc", windows=DEFAULT_WINDOWS) -> None:
    """Model rows x (dataset, frame/1s/5s/20s) columns for ``metric`` (pcc or f1)."""
    cols = ["frame"] + [f"{s:g}s" for s in windows]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model"] + [f"{ds}:{c}" for ds in DATASETS for c in cols])
        for name, rep in rows.items():
            d = rep.to_dict() if isinstance(rep, EvalReport) else rep
            cells = []
            for ds in DATASETS:
                m = d["datasets"].get(ds, {}).get(metric, {})
                cells.extend(_fmt(m.get(c)) for c in cols)
            w.writerow([name] + cells)
