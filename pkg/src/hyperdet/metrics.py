"""Detection metrics and report containers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

METRICS = ("acc", "precision", "recall", "f1", "auc")


def confusion_metrics(predicted: Iterable[int], sources: Iterable[int], n: int) -> dict[str, float]:
    """ACC / precision / recall / F1 of a predicted source set.

    Empty-set conventions: precision is 1 when both sets are empty and 0
    when only the prediction is empty; recall is 1 when there are no true
    sources and nothing was predicted, else 0 for an empty truth.
    """
    pred = {int(v) for v in predicted}
    true = {int(v) for v in sources}
    hit = len(pred & true)
    if pred:
        precision = hit / len(pred)
    else:
        precision = 1.0 if not true else 0.0
    if true:
        recall = hit / len(true)
    else:
        recall = 1.0 if not pred else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    wrong = len(pred ^ true)
    return {"acc": (n - wrong) / n, "precision": precision, "recall": recall, "f1": f1}


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with average ranks for ties; NaN without both classes."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def snapshot_metrics(predicted, scores, labels) -> dict[str, float]:
    labels = np.asarray(labels)
    row = confusion_metrics(predicted, np.flatnonzero(labels), labels.size)
    row["auc"] = auc(scores, labels)
    return row


@dataclass
class MetricsReport:
    """Per-snapshot metric rows plus macro aggregates over them."""

    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, metrics: dict, **tags) -> None:
        self.rows.append({**tags, **{k: float(metrics[k]) for k in METRICS}})

    def aggregate(self) -> dict[str, dict[str, float]]:
        out = {}
        for k in METRICS:
            vals = np.array([r[k] for r in self.rows], dtype=float)
            vals = vals[np.isfinite(vals)]
            if vals.size:
                out[k] = {"mean": float(vals.mean()), "std": float(vals.std()), "count": int(vals.size)}
            else:
                out[k] = {"mean": float("nan"), "std": float("nan"), "count": 0}
        return out

    def mean(self, metric: str) -> float:
        return self.aggregate()[metric]["mean"]

    def by(self, tag: str, metric: str) -> dict:
        """Mean of ``metric`` grouped by a row tag (e.g. per seed)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(r[tag], []).append(r[metric])
        return {k: float(np.nanmean(v)) for k, v in groups.items()}

    def to_json(self) -> dict:
        return {
            "meta": self.meta,
            "aggregation": "macro mean over snapshots; auc skips single-class snapshots",
            "aggregate": _jsonable(self.aggregate()),
            "rows": _jsonable(self.rows),
        }

    def write(self, stem: str | Path) -> tuple[Path, Path]:
        stem = Path(stem)
        json_path = stem.with_suffix(".json")
        csv_path = stem.with_suffix(".csv")
        json_path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        write_rows_csv(csv_path, self.rows)
        return json_path, csv_path


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def write_rows_csv(path: str | Path, rows: Sequence[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in keys})


def long_format(reports: Sequence[MetricsReport], axis: str) -> list[dict]:
    """Plot-ready rows ``(axis value, metric, mean, std)`` for a sweep series."""
    out = []
    for rep in reports:
        agg = rep.aggregate()
        for k in METRICS:
            out.append(
                {
                    axis: rep.meta.get(axis),
                    "variant": rep.meta.get("variant"),
                    "metric": k,
                    "mean": agg[k]["mean"],
                    "std": agg[k]["std"],
                }
            )
    return out
