from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lstmatch.metrics import evaluate, evaluate_many


def lane(k: int, jitter: float = 0.0) -> tuple[float, float, float, float]:
    return (0.0 + jitter, 100.0 * k, 50.0 + jitter, 100.0 * k + 20.0)


A, B = lane(0), lane(1)
GT2 = {1: {f: A for f in range(4)}, 2: {f: B for f in range(4)}}


def test_hand_case_one_switch():
    pred = {10: {0: A, 1: A}, 11: {2: A, 3: A}, 12: {f: B for f in range(4)}}
    r = evaluate(pred, GT2)
    assert r.id_switches == 1 and r.fp == 0 and r.fn == 0
    assert r.mota == 0.875
    assert r.idf1 == pytest.approx(0.75, abs=1e-12)
    assert r.motp == 1.0


def test_perfect():
    r = evaluate({7: GT2[1], 9: GT2[2]}, GT2)
    assert (r.mota, r.motp, r.idf1) == (1.0, 1.0, 1.0)


def test_no_predictions():
    r = evaluate({}, GT2)
    assert r.mota == 0.0 and r.idf1 == 0.0 and r.fn == 8 and r.motp is None


def test_empty_gt():
    r = evaluate({1: {0: A}}, {})
    assert r.mota is None and r.fp == 1 and r.idf1 == 0.0


def test_both_empty():
    r = evaluate({}, {})
    assert r.mota is None and r.idf1 is None


def test_iou_threshold_boundary():
    # intersection 40x20, union 80x20: IoU exactly 0.5
    shifted = (20.0, 0.0, 80.0, 20.0)
    gt = {1: {0: (0.0, 0.0, 60.0, 20.0)}}
    assert evaluate({1: {0: shifted}}, gt).matches == 1
    assert evaluate({1: {0: shifted}}, gt, iou_threshold=0.51).matches == 0


def test_carry_over_keeps_previous_pair():
    # two predictions overlap the gt in frame 1; the one matched in frame 0 is kept
    near = lane(0, 2.0)
    gt = {1: {0: A, 1: A}}
    pred = {1: {0: near, 1: near}, 2: {1: A}}
    r = evaluate(pred, gt)
    assert r.id_switches == 0 and r.fp == 1


def test_evaluate_many_pools_counts():
    pred = {10: {0: A, 1: A}, 11: {2: A, 3: A}, 12: {f: B for f in range(4)}}
    pooled = evaluate_many([(pred, GT2), ({7: GT2[1], 9: GT2[2]}, GT2)])
    assert pooled.mota == 1 - 1 / 16
    assert pooled.gt_total == 16


# ------------------------------------------------------------------ lane oracle

@st.composite
def lane_case(draw):
    """Ground truth in disjoint lanes; predictions copy it with misses, swaps and false positives."""
    n_gt, n_frames = draw(st.integers(1, 4)), draw(st.integers(1, 6))
    gt, pred = {}, {}
    labels = []  # (frame, gt lane or None, pred id)
    for k in range(n_gt):
        frames = draw(st.lists(st.integers(0, n_frames - 1), unique=True, max_size=n_frames))
        gt[k + 1] = {f: lane(k) for f in frames}
        for f in frames:
            pid = draw(st.one_of(st.none(), st.integers(1, 6)))
            labels.append((f, k, pid))
    for f in range(n_frames):
        if draw(st.booleans()):
            labels.append((f, None, draw(st.integers(1, 6))))
    for f, k, pid in labels:
        if pid is None:
            continue
        box = lane(k, 1.0) if k is not None else lane(10 + f, 0.0)
        frames = pred.setdefault(pid, {})
        if f in frames:  # one box per id per frame: demote the clash to a fresh id
            pid = 100 + len(pred)
            frames = pred.setdefault(pid, {})
        frames[f] = box
    return gt, pred


def oracle(gt, pred):
    """Counts for lane-separated data, where matches are forced."""
    def lane_of(box):
        return int(round(box[1] / 100.0))

    fp = fn = ids = tp = 0
    seqs = {}
    frames = sorted({f for t in gt.values() for f in t} | {f for t in pred.values() for f in t})
    for f in frames:
        g_here = {lane_of(b[f]): g for g, b in gt.items() if f in b}
        p_here = [(p, lane_of(b[f])) for p, b in pred.items() if f in b]
        hit = set()
        for p, ln in p_here:
            if ln in g_here and ln not in hit:
                hit.add(ln)
                tp += 1
                seq = seqs.setdefault(g_here[ln], [])
                if seq and seq[-1] != p:
                    ids += 1
                seq.append(p)
            else:
                fp += 1
        fn += len(g_here) - len(hit)
    gt_total = sum(len(t) for t in gt.values())
    # identity: brute-force best one-to-one map over all permutations
    g_ids, p_ids = sorted(gt), sorted(pred)
    co = {(g, p): sum(1 for f, b in pred[p].items() if f in gt[g] and lane_of(b) == lane_of(gt[g][f]))
          for g in g_ids for p in p_ids}
    best = 0
    small, big = (g_ids, p_ids) if len(g_ids) <= len(p_ids) else (p_ids, g_ids)
    for perm in itertools.permutations(big, len(small)):
        pairs = zip(small, perm) if small is g_ids else zip(perm, small)
        best = max(best, sum(co[g, p] for g, p in pairs))
    return fp, fn, ids, tp, gt_total, best


@given(lane_case())
def test_lane_oracle(case):
    gt, pred = case
    fp, fn, ids, tp, gt_total, idtp = oracle(gt, pred)
    r = evaluate(pred, gt)
    assert (r.fp, r.fn, r.id_switches, r.matches, r.idtp) == (fp, fn, ids, tp, idtp)
    if gt_total:
        assert r.mota == pytest.approx(1 - (fp + fn + ids) / gt_total, abs=1e-12)


@given(lane_case(), st.randoms(use_true_random=False))
def test_relabel_invariance(case, rnd):
    gt, pred = case
    ids = list(pred)
    new = ids[:]
    rnd.shuffle(new)
    new = [i + 1000 for i in new]
    relabelled = {n: pred[o] for o, n in zip(ids, new)}
    assert evaluate(relabelled, gt) == evaluate(pred, gt)


@given(lane_case(), st.integers(0, 10_000))
def test_dropping_a_true_positive_adds_one_fn(case, seed):
    gt, _ = case
    perfect = {g: dict(t) for g, t in gt.items()}
    members = [(g, f) for g, t in perfect.items() for f in t]
    if not members:
        return
    g, f = members[np.random.default_rng(seed).integers(len(members))]
    base = evaluate(perfect, gt)
    del perfect[g][f]
    r = evaluate(perfect, gt)
    assert r.fn == base.fn + 1 and r.fp == base.fp
