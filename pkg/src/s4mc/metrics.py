"""Segmentation scores and pseudo-label instrumentation."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from s4mc.tensor_core import IGNORE

CSV_COLUMNS = (
    "iter",
    "alpha_t",
    "gamma_t",
    "pass_raw",
    "pass_refined",
    "pseudo_acc",
    "tp",
    "fp",
    "added",
    "excluded",
    "loss_s",
    "loss_u",
    "miou_val",
)


class BoundaryFallbackWarning(UserWarning):
    """No boundary pixels were found; boundary IoU fell back to plain mIoU."""


@dataclass
class RunMetrics:
    """One logged training iteration.  Pass fractions are per batch, not cumulative."""

    iter: int
    alpha_t: float
    gamma_t: float
    pass_raw: float
    pass_refined: float
    pseudo_acc: float
    tp: int
    fp: int
    added: int
    excluded: int
    loss_s: float
    loss_u: float
    miou_val: float = math.nan

    def as_row(self) -> dict:
        return asdict(self)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, classes: int) -> np.ndarray:
    """``cm[g, p]`` counts gt class g predicted as p; IGNORE gt pixels are dropped.

    IGNORE predictions land in an extra trailing column so they still count as misses.
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in size")
    keep = gt != IGNORE
    p = np.where(pred[keep] == IGNORE, classes, pred[keep])
    idx = gt[keep].astype(np.int64) * (classes + 1) + p
    return np.bincount(idx, minlength=classes * (classes + 1)).reshape(classes, classes + 1)


def per_class_iou(pred, gt, classes: int) -> np.ndarray:
    """IoU per class, NaN for classes absent from both masks."""
    if np.asarray(pred).shape != np.asarray(gt).shape:
        raise ValueError("prediction and ground truth differ in shape")
    cm = confusion_matrix(pred, gt, classes)
    tp = np.diag(cm[:, :classes]).astype(np.float64)
    fn = cm.sum(axis=1) - tp
    fp = cm[:, :classes].sum(axis=0) - tp
    union = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def miou(pred, gt, classes: int) -> float:
    gt = np.asarray(gt)
    if not np.any(gt != IGNORE):
        raise ValueError("ground truth has no labeled pixels")
    return float(np.nanmean(per_class_iou(pred, gt, classes)))


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbor carrying a different label."""
    mask = np.asarray(mask)
    edge = np.zeros(mask.shape, dtype=bool)
    vertical = mask[..., 1:, :] != mask[..., :-1, :]
    horizontal = mask[..., :, 1:] != mask[..., :, :-1]
    edge[..., 1:, :] |= vertical
    edge[..., :-1, :] |= vertical
    edge[..., :, 1:] |= horizontal
    edge[..., :, :-1] |= horizontal
    return edge


def boundary_band(pred, gt, dilation: int) -> np.ndarray:
    """Pixels within Chebyshev distance ``dilation`` of a gt or prediction boundary."""
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    edges = boundary_pixels(gt) | boundary_pixels(pred)
    size = [1] * (edges.ndim - 2) + [2 * dilation + 1, 2 * dilation + 1]
    return ndimage.maximum_filter(edges, size=size, mode="constant", cval=False)


def boundary_iou(pred, gt, dilation: int = 2, classes: int | None = None) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in shape")
    if classes is None:
        classes = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    band = boundary_band(pred, gt, dilation)
    if not band.any():
        warnings.warn("no boundary pixels; returning plain mIoU", BoundaryFallbackWarning, stacklevel=2)
        return miou(pred, gt, classes)
    gt_band = np.where(band, gt, IGNORE)
    pred_band = np.where(band, pred, IGNORE)
    if not np.any(gt_band != IGNORE):
        warnings.warn("boundary band holds only IGNORE pixels; returning plain mIoU", BoundaryFallbackWarning, stacklevel=2)
        return miou(pred, gt, classes)
    return float(np.nanmean(per_class_iou(pred_band, gt_band, classes)))


def pseudo_stats(pseudo, gt, baseline_pseudo) -> dict:
    """Quantity and quality of a pseudo-label mask against gt and a baseline mask."""
    pseudo = np.asarray(pseudo)
    gt = np.asarray(gt)
    baseline_pseudo = np.asarray(baseline_pseudo)
    if not (pseudo.shape == gt.shape == baseline_pseudo.shape):
        raise ValueError("pseudo, gt and baseline masks differ in shape")
    total = pseudo.size
    assigned = pseudo != IGNORE
    base_assigned = baseline_pseudo != IGNORE
    n_assigned = int(assigned.sum())
    tp = int((assigned & (pseudo == gt) & (gt != IGNORE)).sum())
    return {
        "pass_refined": n_assigned / total if total else 0.0,
        "pass_raw": int(base_assigned.sum()) / total if total else 0.0,
        "pseudo_acc": tp / n_assigned if n_assigned else math.nan,
        "tp": tp,
        "fp": n_assigned - tp,
        "added": int((assigned & ~base_assigned).sum()),
        "excluded": int((base_assigned & ~assigned).sum()),
    }


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            record = row.as_row() if isinstance(row, RunMetrics) else dict(row)
            writer.writerow({k: _fmt(record[k]) for k in CSV_COLUMNS})


def read_metrics_csv(path) -> list[RunMetrics]:
    types = {f.name: f.type for f in fields(RunMetrics)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            out.append(RunMetrics(**{k: (int(v) if types[k] == "int" else float(v)) for k, v in rec.items()}))
    return out


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value
