"""CLEAR-MOT (MOTA, MOTP) and IDF1 with IoU-based matching."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import iou_matrix

# frame -> {track id: box}
FrameBoxes = Mapping[int, Mapping[int, Sequence[float]]]


@dataclass
class MetricsReport:
    mota: float | None  # None when there is no ground truth
    motp: float | None  # None when nothing matched
    idf1: float | None
    fp: int
    fn: int
    id_switches: int
    matches: int
    gt_total: int
    pred_total: int
    idtp: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        rows = [
            ("MOTA", fmt(self.mota)),
            ("MOTP", fmt(self.motp)),
            ("IDF1", fmt(self.idf1)),
            ("FP", str(self.fp)),
            ("FN", str(self.fn)),
            ("IDS", str(self.id_switches)),
            ("matches", str(self.matches)),
            ("gt_total", str(self.gt_total)),
            ("pred_total", str(self.pred_total)),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>10}" for k, v in rows)


def _by_frame(tracks: Mapping[int, Mapping[int, Sequence[float]]]) -> dict[int, dict[int, Sequence[float]]]:
    """Pivot ``{track: {frame: box}}`` into ``{frame: {track: box}}``."""
    out: dict[int, dict[int, Sequence[float]]] = defaultdict(dict)
    for tid, frames in tracks.items():
        for f, box in frames.items():
            out[f][tid] = box
    return out


def _ratios(fp, fn, ids, matches, gt_total, pred_total, iou_sum, idtp) -> MetricsReport:
    mota = 1.0 - (fn + fp + ids) / gt_total if gt_total else None
    motp = iou_sum / matches if matches else None
    denom = gt_total + pred_total
    idf1 = 2 * idtp / denom if denom else None
    return MetricsReport(mota, motp, idf1, fp, fn, ids, matches, gt_total, pred_total, idtp)


@dataclass
class _Counts:
    fp: int = 0
    fn: int = 0
    ids: int = 0
    matches: int = 0
    gt_total: int = 0
    pred_total: int = 0
    iou_sum: float = 0.0
    idtp: int = 0


def _count(pred: Mapping[int, Mapping[int, Sequence[float]]], gt: Mapping[int, Mapping[int, Sequence[float]]],
           iou_threshold: float) -> _Counts:
    pf, gf = _by_frame(pred), _by_frame(gt)
    c = _Counts()
    last_match: dict[int, int] = {}  # gt id -> pred id it was last matched to
    current: dict[int, int] = {}  # pairs alive in the previous frame
    for f in sorted(set(pf) | set(gf)):
        g_ids = sorted(gf.get(f, {}))
        p_ids = sorted(pf.get(f, {}))
        c.gt_total += len(g_ids)
        c.pred_total += len(p_ids)
        if not g_ids or not p_ids:
            c.fn += len(g_ids)
            c.fp += len(p_ids)
            current = {}
            continue
        ov = iou_matrix(np.array([gf[f][g] for g in g_ids]), np.array([pf[f][p] for p in p_ids]))
        gi = {g: i for i, g in enumerate(g_ids)}
        pi = {p: j for j, p in enumerate(p_ids)}
        matched: dict[int, int] = {}
        # carry over last frame's pairs that still overlap enough
        for g, p in current.items():
            if g in gi and p in pi and ov[gi[g], pi[p]] >= iou_threshold:
                matched[g] = p
        free_g = [g for g in g_ids if g not in matched]
        used_p = set(matched.values())
        free_p = [p for p in p_ids if p not in used_p]
        if free_g and free_p:
            sub = ov[np.ix_([gi[g] for g in free_g], [pi[p] for p in free_p])]
            cost = np.where(sub >= iou_threshold, 1.0 - sub, 1e6)
            rows, cols = linear_sum_assignment(cost)
            for r, col in zip(rows, cols):
                if sub[r, col] >= iou_threshold:
                    matched[free_g[r]] = free_p[col]
        for g, p in matched.items():
            if g in last_match and last_match[g] != p:
                c.ids += 1
            last_match[g] = p
            c.iou_sum += float(ov[gi[g], pi[p]])
        c.matches += len(matched)
        c.fn += len(g_ids) - len(matched)
        c.fp += len(p_ids) - len(matched)
        current = matched

    # identity measures: best one-to-one track correspondence by co-detected frames
    g_all, p_all = sorted(gt), sorted(pred)
    if g_all and p_all:
        overlap = np.zeros((len(g_all), len(p_all)))
        pidx = {p: j for j, p in enumerate(p_all)}
        for i, g in enumerate(g_all):
            for f, gbox in gt[g].items():
                frame_preds = pf.get(f, {})
                if not frame_preds:
                    continue
                ids = sorted(frame_preds)
                ious = iou_matrix(np.array(gbox), np.array([frame_preds[p] for p in ids]))[0]
                for p, v in zip(ids, ious):
                    if v >= iou_threshold:
                        overlap[i, pidx[p]] += 1
        rows, cols = linear_sum_assignment(-overlap)
        c.idtp = int(overlap[rows, cols].sum())
    return c


def evaluate(pred: Mapping[int, Mapping[int, Sequence[float]]], gt: Mapping[int, Mapping[int, Sequence[float]]],
             iou_threshold: float = 0.5) -> MetricsReport:
    """Score predicted trajectories ``{id: {frame: box}}`` against ground truth of the same shape."""
    c = _count(pred, gt, iou_threshold)
    return _ratios(c.fp, c.fn, c.ids, c.matches, c.gt_total, c.pred_total, c.iou_sum, c.idtp)


def evaluate_many(pairs: Iterable[tuple[Mapping, Mapping]], iou_threshold: float = 0.5) -> MetricsReport:
    """Pool several videos by summing counts before forming ratios."""
    tot = _Counts()
    for pred, gt in pairs:
        c = _count(pred, gt, iou_threshold)
        for k in vars(tot):
            setattr(tot, k, getattr(tot, k) + getattr(c, k))
    return _ratios(tot.fp, tot.fn, tot.ids, tot.matches, tot.gt_total, tot.pred_total, tot.iou_sum, tot.idtp)


def trajectories_to_tracks(trajectories) -> dict[int, dict[int, tuple]]:
    return {t.id: {m.frame: tuple(m.box) for m in t.members} for t in trajectories}


def gt_to_tracks(gt) -> dict[int, dict[int, tuple]]:
    return {g.track_id: dict(g.boxes) for g in gt}
