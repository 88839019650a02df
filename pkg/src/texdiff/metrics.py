"""Segmentation evaluation metrics: MAE, max F-measure, S-measure combination,
max E-measure aggregation (pluggable alignment term), and mIoU."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numeric import ConfigError, ShapeError

DEFAULT_THRESHOLDS = 256


@dataclass
class MetricsReport:
    mae: float | None = None
    f_beta_max: float | None = None
    s_measure: float | None = None
    e_measure_max: float | None = None
    miou: float | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mae", "f_beta_max", "s_measure", "e_measure_max", "miou"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        ts = self.config.get("thresholds")
        if ts is not None and np.any(np.diff(ts) <= 0):
            raise ConfigError("thresholds must be strictly increasing")

    def to_dict(self) -> dict:
        out = {
            k: v
            for k, v in (
                ("mae", self.mae),
                ("f_beta_max", self.f_beta_max),
                ("s_measure", self.s_measure),
                ("e_measure_max", self.e_measure_max),
                ("miou", self.miou),
            )
            if v is not None
        }
        out["config"] = self.config
        return out


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ConfigError("pred values must lie in [0, 1]")
    if not np.isin(gt, (0.0, 1.0)).all():
        raise ConfigError("gt must be binary {0, 1}")
    return pred, gt


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute error between a soft prediction map and a binary mask."""
    pred, gt = _check_pair(pred, gt)
    return float(np.abs(pred - gt).mean())


def uniform_thresholds(n: int = DEFAULT_THRESHOLDS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def f_measure_max(
    pred: np.ndarray,
    gt: np.ndarray,
    beta2: float = 0.3,
    thresholds: np.ndarray | None = None,
) -> float:
    """Maximum F-measure over a threshold sweep.

    At each threshold the prediction is binarized at pred >= t; an empty
    prediction contributes F = 0. A gt without foreground has undefined
    recall and is rejected.
    """
    pred, gt = _check_pair(pred, gt)
    if gt.sum() == 0:
        raise ConfigError("f_measure_max: gt has no foreground pixels")
    if thresholds is None:
        thresholds = uniform_thresholds()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size == 0 or np.any(np.diff(thresholds) <= 0):
        raise ConfigError("thresholds must be non-empty and strictly increasing")
    p = pred.ravel()
    g = gt.ravel().astype(bool)
    best = 0.0
    for t in thresholds:
        b = p >= t
        tp = np.count_nonzero(b & g)
        if tp == 0:
            continue
        precision = tp / np.count_nonzero(b)
        recall = tp / np.count_nonzero(g)
        f = (1.0 + beta2) * precision * recall / (beta2 * precision + recall)
        best = max(best, f)
    return float(best)


def s_measure(s_o: float, s_r: float, m: float = 0.5) -> float:
    """Convex combination of object-aware and region-aware similarities.

    The sub-measures come from external implementations; only the
    combination is computed here.
    """
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"m must be in [0, 1], got {m}")
    for name, v in (("s_o", s_o), ("s_r", s_r)):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must be in [0, 1], got {v}")
    return m * s_o + (1.0 - m) * s_r


def e_measure_max(
    pred: np.ndarray,
    gt: np.ndarray,
    theta: Callable[[np.ndarray, np.ndarray], np.ndarray],
    thresholds: np.ndarray | None = None,
) -> float:
    """Maximum over thresholds of the mean enhanced-alignment value.

    theta maps (binarized prediction, gt) to the per-pixel enhanced
    alignment matrix; its construction is an extension point, not provided
    here.
    """
    pred, gt = _check_pair(pred, gt)
    if thresholds is None:
        thresholds = uniform_thresholds()
    best = -np.inf
    for t in np.asarray(thresholds, dtype=np.float64):
        enhanced = np.asarray(theta((pred >= t).astype(np.float64), gt))
        if enhanced.shape != pred.shape:
            raise ShapeError(
                f"theta returned shape {enhanced.shape}, expected {pred.shape}"
            )
        best = max(best, float(enhanced.mean()))
    return best


def miou(
    pred_labels: np.ndarray,
    gt_labels: np.ndarray,
    num_classes: int,
    ignore_label: int | None = None,
) -> float:
    """Mean per-class intersection-over-union.

    Classes absent from both maps are skipped; pixels whose gt equals
    ignore_label are excluded entirely.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ShapeError(
            f"label map shapes differ: {pred_labels.shape} vs {gt_labels.shape}"
        )
    keep = np.ones(gt_labels.shape, dtype=bool)
    if ignore_label is not None:
        keep = gt_labels != ignore_label
    p = pred_labels[keep].ravel()
    g = gt_labels[keep].ravel()
    for name, arr in (("pred", p), ("gt", g)):
        bad = (arr < 0) | (arr >= num_classes)
        if bad.any():
            raise ConfigError(f"{name} contains invalid label {arr[bad][0]}")
    ious = []
    for c in range(num_classes):
        in_p = p == c
        in_g = g == c
        union = np.count_nonzero(in_p | in_g)
        if union == 0:
            continue
        ious.append(np.count_nonzero(in_p & in_g) / union)
    if not ious:
        raise ConfigError("miou: no class present in either map")
    return float(np.mean(ious))
