"""Cluster merging and IoU / Dice evaluation of a region of interest.

Both metrics score two empty masks as 1 (perfect agreement).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


def _mask(a) -> np.ndarray:
    return np.asarray(getattr(a, "labels", a)).astype(bool)


def merge_clusters(labels, selection: Iterable[int]) -> np.ndarray:
    """Boolean mask of voxels whose label is in ``selection``."""
    sel = sorted({int(s) for s in selection})
    if not sel:
        raise ValueError("cluster selection must not be empty")
    if sel[0] < 0:
        raise ValueError("cluster ids must be non-negative")
    return np.isin(np.asarray(getattr(labels, "labels", labels)), sel)


def _counts(a, b):
    a, b = _mask(a), _mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.count_nonzero(a & b))
    return inter, int(np.count_nonzero(a)), int(np.count_nonzero(b))


def _iou(inter, na, nb):
    union = na + nb - inter
    return 1.0 if union == 0 else inter / union


def _dice(inter, na, nb):
    return 1.0 if na + nb == 0 else 2.0 * inter / (na + nb)


def iou(a, b) -> float:
    return _iou(*_counts(a, b))


def dice(a, b) -> float:
    return _dice(*_counts(a, b))


def select_clusters(labels, truth, min_fraction: float = 0.5) -> list[int]:
    """Clusters with at least ``min_fraction`` of their voxels inside ``truth``.

    Automates the one-volume cluster identification; fall back to the
    single best-overlapping cluster when no cluster qualifies.
    """
    lab = np.asarray(getattr(labels, "labels", labels)).ravel()
    t = _mask(truth).ravel()
    present = np.unique(lab)
    frac = {int(c): float(t[lab == c].mean()) for c in present}
    chosen = [c for c, f in frac.items() if f >= min_fraction]
    return chosen or [max(frac, key=frac.get)]


@dataclass
class VolumeMetrics:
    volume_id: str
    iou: float
    dice: float
    intersection: int = 0
    pred_size: int = 0
    truth_size: int = 0


@dataclass
class MetricsReport:
    volumes: list[VolumeMetrics] = field(default_factory=list)

    def add(self, volume_id: str, pred, truth) -> VolumeMetrics:
        inter, na, nb = _counts(pred, truth)
        m = VolumeMetrics(str(volume_id), _iou(inter, na, nb), _dice(inter, na, nb), inter, na, nb)
        self.volumes.append(m)
        return m

    def aggregates(self) -> dict:
        if not self.volumes:
            return {"mean_iou": None, "mean_dice": None, "pooled_iou": None, "pooled_dice": None}
        inter = sum(v.intersection for v in self.volumes)
        na = sum(v.pred_size for v in self.volumes)
        nb = sum(v.truth_size for v in self.volumes)
        return {
            "mean_iou": float(np.mean([v.iou for v in self.volumes])),
            "mean_dice": float(np.mean([v.dice for v in self.volumes])),
            "pooled_iou": _iou(inter, na, nb),
            "pooled_dice": _dice(inter, na, nb),
        }

    def to_dict(self) -> dict:
        return {"volumes": [asdict(v) for v in self.volumes], "aggregates": self.aggregates()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls([VolumeMetrics(**v) for v in d["volumes"]])


def write_report(report: MetricsReport, path) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (volume_id, iou, dice) and ``<stem>.json`` next to ``path``."""
    path = Path(path)
    if path.suffix.lower() not in (".csv", ".json"):
        path = path / "metrics.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["volume_id", "iou", "dice"])
        for v in report.volumes:
            w.writerow([v.volume_id, repr(v.iou), repr(v.dice)])
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return csv_path, json_path


def read_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).with_suffix(".json").read_text()))
