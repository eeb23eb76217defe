"""Axis-aligned box arithmetic: IoU, L1 distance, NMS, ground-truth assignment."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np


class Box(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    def normalized(self, width: float, height: float) -> Box:
        return Box(self.x1 / width, self.y1 / height, self.x2 / width, self.y2 / height)

    def is_valid(self) -> bool:
        return bool(np.isfinite(self).all()) and self.x1 <= self.x2 and self.y1 <= self.y2


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (n, 4) and (m, 4) box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.clip(out, 0.0, 1.0)


def gt_assign(boxes: Sequence[Sequence[float]], gt_position: Sequence[float] | None, min_iou: float = 0.5) -> int | None:
    """Index of the detection covering a ground-truth box, or ``None``.

    ``None`` when the track is absent in this frame or no box reaches
    ``min_iou``; ties go to the lowest index.
    """
    if gt_position is None or len(boxes) == 0:
        return None
    overlaps = iou_matrix(np.asarray(boxes), np.asarray(gt_position))[:, 0]
    best = int(np.argmax(overlaps))  # first maximum on ties
    if overlaps[best] < min_iou:
        return None
    return best


def l1_box(a: Sequence[float], b: Sequence[float]) -> float:
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def nms(boxes: Sequence[Sequence[float]], scores: Sequence[float], iou_threshold: float = 0.7) -> list[int]:
    """Greedy suppression; returns kept indices in descending score order."""
    if len(boxes) == 0:
        return []
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    overlaps = iou_matrix(np.asarray(boxes), np.asarray(boxes))
    kept: list[int] = []
    for i in order:
        if all(overlaps[i, k] <= iou_threshold for k in kept):
            kept.append(int(i))
    return kept
