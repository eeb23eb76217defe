"""Rescoring head, score fusion and the Hungarian-matched focal loss that trains it."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core_math import LinearParams, Tensor, analytic_grads, init_linear, linear_forward
from .core_math import tensor as tn
from .geometry import Box

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_EPS = 1e-7


@dataclass
class Detection:
    frame: int
    box: Box
    score: float  # original spotter confidence
    query: np.ndarray
    text: str = ""

    def __post_init__(self):
        self.box = Box(*map(float, self.box))
        self.query = np.asarray(self.query, dtype=np.float64)


@dataclass
class ScoredInstance:
    detection: Detection
    score_rescored: float
    score_fused: float


@dataclass
class RescoreParams:
    head: LinearParams


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)

    def total(self, cost: np.ndarray) -> float:
        return float(sum(cost[i, j] for i, j in sorted(self.pairs)))


class Fusion(str, Enum):
    MAX = "max"
    MEAN = "mean"
    GEO_MEAN = "geo-mean"

    @classmethod
    def parse(cls, value: str | Fusion) -> Fusion:
        if isinstance(value, Fusion):
            return value
        return cls(value.replace("_", "-"))


def init_rescore(rng: np.random.Generator, query_dim: int) -> RescoreParams:
    return RescoreParams(init_linear(rng, query_dim, 1))


def rescore_logits(queries, p: RescoreParams) -> Tensor:
    q = tn.as_tensor(queries)
    if q.shape[0] == 0:
        return Tensor(np.zeros(0))
    return tn.reshape(linear_forward(q, p.head), (q.shape[0],))


def rescore(queries, p: RescoreParams) -> np.ndarray:
    q = np.asarray(queries.data if isinstance(queries, Tensor) else queries, dtype=np.float64)
    if q.shape[0] == 0:
        return np.zeros(0)
    return tn.sigmoid(rescore_logits(q, p)).data


def fuse_scores(c_o, c_r, strategy: str | Fusion = Fusion.MAX):
    strategy = Fusion.parse(strategy)
    c_o = np.asarray(c_o, dtype=np.float64)
    c_r = np.asarray(c_r, dtype=np.float64)
    if strategy is Fusion.MAX:
        out = np.maximum(c_o, c_r)
    elif strategy is Fusion.MEAN:
        out = (c_o + c_r) / 2
    else:
        out = np.sqrt(c_o * c_r)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def hungarian(cost) -> Assignment:
    """Minimum-cost injective assignment of ``min(n, m)`` row/column pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        n = cost.shape[0] if cost.ndim == 2 else 0
        m = cost.shape[1] if cost.ndim == 2 else 0
        return Assignment([], list(range(n)), list(range(m)))
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols)]
    used_r, used_c = set(rows.tolist()), set(cols.tolist())
    return Assignment(
        pairs,
        [i for i in range(cost.shape[0]) if i not in used_r],
        [j for j in range(cost.shape[1]) if j not in used_c],
    )


def _clamp(p):
    return np.clip(p, PROB_EPS, 1 - PROB_EPS)


def match_cost(
    pred_probs: Sequence[float],
    pred_boxes: Sequence[Sequence[float]],
    gt_boxes: Sequence[Sequence[float]],
    cls_weight: float = 2.0,
    box_weight: float = 5.0,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> np.ndarray:
    """Matching cost, rows = ground truth, columns = predictions. Boxes in [0, 1]."""
    n_gt, n_pred = len(gt_boxes), len(pred_probs)
    if n_gt == 0 or n_pred == 0:
        return np.zeros((n_gt, n_pred))
    p = _clamp(np.asarray(pred_probs, dtype=np.float64))
    cls_cost = -alpha * (1 - p) ** gamma * np.log(p)
    g = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    box_cost = np.abs(g[:, None, :] - b[None, :, :]).sum(axis=-1)
    return cls_weight * cls_cost[None, :] + box_weight * box_cost


def focal_loss_t(p_hat: Tensor, is_positive, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> Tensor:
    pos = np.asarray(is_positive, dtype=bool)
    if p_hat.shape[0] == 0:
        return Tensor(0.0)
    p = tn.clip(p_hat, PROB_EPS, 1 - PROB_EPS)
    one_minus = tn.add(1.0, tn.neg(p))
    pos_term = tn.scale(tn.mul(tn.power(one_minus, gamma), tn.log(p)), -alpha)
    neg_term = tn.scale(tn.mul(tn.power(p, gamma), tn.log(one_minus)), -(1 - alpha))
    return tn.total(tn.add(tn.mul(pos_term, pos.astype(float)), tn.mul(neg_term, (~pos).astype(float))))


def focal_loss(p_hat, is_positive, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> float:
    return focal_loss_t(Tensor(np.asarray(p_hat, dtype=np.float64).reshape(-1)), is_positive, alpha, gamma).item()


def _frame_arrays(frame: Sequence[Detection], frame_size: tuple[float, float] | None):
    queries = np.stack([d.query for d in frame]) if frame else np.zeros((0, 0))
    boxes = np.asarray([d.box for d in frame], dtype=np.float64).reshape(-1, 4)
    if frame_size is not None:
        boxes = boxes / np.array([frame_size[0], frame_size[1], frame_size[0], frame_size[1]])
    return queries, boxes


def rescoring_loss_t(
    queries: np.ndarray,
    boxes: np.ndarray,
    gt_boxes: np.ndarray,
    params: RescoreParams,
    cls_weight: float = 2.0,
    box_weight: float = 5.0,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Differentiable per-frame rescoring loss; boxes already normalised."""
    if len(queries) == 0:
        return Tensor(0.0)
    probs = tn.sigmoid(rescore_logits(queries, params))
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    positive = np.zeros(len(queries), dtype=bool)
    if len(gt_boxes):
        cost = match_cost(probs.data, boxes, gt_boxes, cls_weight, box_weight, alpha, gamma)
        for _, j in hungarian(cost).pairs:
            positive[j] = True
    return focal_loss_t(probs, positive, alpha, gamma)


def rescoring_loss(
    frame: Sequence[Detection],
    gt_boxes: Sequence[Sequence[float]],
    params: RescoreParams,
    cls_weight: float = 2.0,
    box_weight: float = 5.0,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
    frame_size: tuple[float, float] | None = None,
) -> tuple[float, RescoreParams]:
    """Loss value and head gradients for one frame.

    Pass ``frame_size`` to normalise pixel boxes (detections and ground
    truth alike); otherwise both are taken to be normalised already.
    """
    queries, boxes = _frame_arrays(frame, frame_size)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if frame_size is not None:
        gt = gt / np.array([frame_size[0], frame_size[1], frame_size[0], frame_size[1]])
    return analytic_grads(
        lambda tp: rescoring_loss_t(queries, boxes, gt, tp, cls_weight, box_weight, alpha, gamma), params
    )


def matched_positives(frame: Sequence[Detection], gt_boxes, params: RescoreParams, frame_size=None,
                      cls_weight: float = 2.0, box_weight: float = 5.0) -> list[int]:
    """Prediction indices the Hungarian step labels as text."""
    queries, boxes = _frame_arrays(frame, frame_size)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if frame_size is not None:
        gt = gt / np.array([frame_size[0], frame_size[1], frame_size[0], frame_size[1]])
    if not len(queries) or not len(gt):
        return []
    cost = match_cost(rescore(queries, params), boxes, gt, cls_weight, box_weight)
    return sorted(j for _, j in hungarian(cost).pairs)
