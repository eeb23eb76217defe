"""Two-stage online inference: filter, short-term match, long-term match, update."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core_math import Tensor
from .geometry import Box, nms
from .matcher import MatcherParams, assoc_probabilities, embed, raw_scores, with_null
from .model import ModelParams
from .rescoring import Detection, Fusion, RescoreParams, ScoredInstance, fuse_scores, rescore

SCORING_MODES = ("fused", "original", "rescored")


@dataclass
class TrackerConfig:
    score_threshold: float = 0.3
    score_threshold_train: float = 0.3
    assoc_threshold: float = 0.2
    nms_iou: float = 0.7
    clip_len: int = 6
    fusion: str = "max"
    scoring: str = "fused"
    use_st: bool = True
    use_lt: bool = True

    def __post_init__(self):
        for name in ("score_threshold", "score_threshold_train", "nms_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.assoc_threshold < 0:
            raise ValueError("assoc_threshold must be >= 0")
        if self.clip_len < 2:
            raise ValueError("clip_len must be >= 2")
        if self.scoring not in SCORING_MODES:
            raise ValueError(f"scoring must be one of {SCORING_MODES}")
        Fusion.parse(self.fusion)

    @property
    def memory(self) -> int:
        """Frames held by the memory bank (clip length minus one)."""
        return self.clip_len - 1


@dataclass
class Member:
    frame: int
    box: Box
    embedding: np.ndarray
    score: float
    text: str


@dataclass
class Trajectory:
    id: int
    members: list[Member] = field(default_factory=list)

    @property
    def last_frame(self) -> int:
        return self.members[-1].frame


class Scorer(Protocol):
    def embed(self, queries: np.ndarray) -> np.ndarray: ...

    def st_probs(self, current: np.ndarray, previous: np.ndarray) -> np.ndarray: ...

    def lt_probs(self, current: np.ndarray, bank: np.ndarray) -> np.ndarray: ...


class LearnedScorer:
    """Association probabilities from trained matcher weights."""

    def __init__(self, params: MatcherParams):
        self.params = params

    def embed(self, queries: np.ndarray) -> np.ndarray:
        return embed(np.asarray(queries, dtype=np.float64).reshape(len(queries), -1), self.params).data

    def st_probs(self, current, previous):
        s = raw_scores(Tensor(current), Tensor(previous), self.params.st)
        return assoc_probabilities(with_null(s))

    def lt_probs(self, current, bank):
        # the encoder sees the bank plus the current frame, as in training over a whole clip
        source = np.concatenate([bank, current]) if len(current) else bank
        s = raw_scores(Tensor(current), None, self.params.lt,
                       encoder_input=Tensor(source), history_rows=np.arange(len(bank)))
        return assoc_probabilities(with_null(s))


def filter_frame(dets: Sequence[Detection], rescorer: RescoreParams | None, cfg: TrackerConfig,
                 threshold: float | None = None, apply_nms: bool = True) -> list[ScoredInstance]:
    """Rescore, fuse, threshold and suppress; result ordered by descending fused score."""
    if not dets:
        return []
    threshold = cfg.score_threshold if threshold is None else threshold
    c_o = np.array([d.score for d in dets])
    if rescorer is not None:
        c_r = rescore(np.stack([d.query for d in dets]), rescorer)
    else:
        c_r = c_o.copy()
    if cfg.scoring == "original" or rescorer is None:
        c_f = c_o
    elif cfg.scoring == "rescored":
        c_f = c_r
    else:
        c_f = np.asarray(fuse_scores(c_o, c_r, cfg.fusion)).reshape(-1)
    keep = [i for i in range(len(dets)) if c_f[i] >= threshold]
    if apply_nms and keep:
        kept = nms([dets[i].box for i in keep], [c_f[i] for i in keep], cfg.nms_iou)
        keep = [keep[i] for i in kept]
    keep.sort(key=lambda i: (-c_f[i], i))
    return [ScoredInstance(dets[i], float(c_r[i]), float(c_f[i])) for i in keep]


def greedy_link(scores: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Descending-score one-to-one linking of (row, col) pairs whose score exceeds ``threshold``."""
    if scores.size == 0:
        return []
    rows, cols = np.nonzero(scores > threshold)
    order = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: (-scores[rc], rc))
    used_r, used_c, out = set(), set(), []
    for r, c in order:
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        out.append((r, c))
    return out


def st_match(current: np.ndarray, prev_ids: Sequence[int], prev_emb: np.ndarray, threshold: float,
             scorer: Scorer) -> tuple[dict[int, int], list[int]]:
    """Link current instances to trajectories present in the previous frame.

    Returns ``({instance: trajectory_id}, unmatched_instances)``.
    """
    n = len(current)
    if n == 0 or len(prev_ids) == 0:
        return {}, list(range(n))
    probs = scorer.st_probs(current, prev_emb)[:, 1:]
    links = {c: prev_ids[r] for r, c in greedy_link(probs, threshold)}
    return links, [i for i in range(n) if i not in links]


def lt_match(current: np.ndarray, candidates: Sequence[int], bank_ids: Sequence[int],
             bank_emb: np.ndarray, threshold: float, scorer: Scorer) -> tuple[dict[int, int], list[int]]:
    """Link leftover instances to trajectories held in the memory bank.

    A trajectory's score for an instance is the mean match probability over
    its banked members.  Instances left over start new trajectories.
    """
    candidates = list(candidates)
    if not candidates or len(bank_ids) == 0:
        return {}, candidates
    probs = scorer.lt_probs(current, bank_emb)[:, 1:]
    traj_ids = sorted(set(bank_ids))
    bank_ids = np.asarray(bank_ids)
    per_traj = np.stack([probs[bank_ids == tid].mean(axis=0) for tid in traj_ids])
    sub = per_traj[:, candidates]
    links = {candidates[c]: traj_ids[r] for r, c in greedy_link(sub, threshold)}
    return links, [i for i in candidates if i not in links]


@dataclass
class TrackerState:
    trajectories: dict[int, Trajectory] = field(default_factory=dict)
    bank: deque = field(default_factory=deque)  # (frame, [trajectory ids], embeddings)
    next_id: int = 1
    last_frame: int | None = None


class Tracker:
    def __init__(self, params: ModelParams | None, cfg: TrackerConfig | None = None,
                 scorer: Scorer | None = None):
        self.cfg = cfg or TrackerConfig()
        self.rescorer = params.rescore if params is not None else None
        if scorer is None:
            if params is None:
                raise ValueError("need model params or an explicit scorer")
            scorer = LearnedScorer(params.matcher)
        self.scorer = scorer
        self.state = TrackerState()

    def step(self, frame: int, dets: Sequence[Detection]) -> list[tuple[ScoredInstance, int]]:
        """Process one frame; returns each kept instance with its trajectory id."""
        st, cfg = self.state, self.cfg
        if st.last_frame is not None and frame <= st.last_frame:
            raise ValueError(f"frame {frame} not after {st.last_frame}")
        st.last_frame = frame

        insts = filter_frame(dets, self.rescorer, cfg)
        n = len(insts)
        emb = self.scorer.embed(np.stack([s.detection.query for s in insts])) if n else np.zeros((0, 0))

        links: dict[int, int] = {}
        unmatched = list(range(n))
        if cfg.use_st and st.bank and st.bank[-1][0] == frame - 1:
            _, prev_ids, prev_emb = st.bank[-1]
            links, unmatched = st_match(emb, prev_ids, prev_emb, cfg.assoc_threshold, self.scorer)

        if cfg.use_lt and unmatched and st.bank:
            taken = set(links.values())
            ids, rows = [], []
            for _, f_ids, f_emb in st.bank:
                for tid, e in zip(f_ids, f_emb):
                    if tid not in taken:
                        ids.append(tid)
                        rows.append(e)
            if ids:
                lt_links, unmatched = lt_match(emb, unmatched, ids, np.stack(rows), cfg.assoc_threshold,
                                               self.scorer)
                links.update(lt_links)

        for i in unmatched:
            links[i] = st.next_id
            st.trajectories[st.next_id] = Trajectory(st.next_id)
            st.next_id += 1

        frame_ids = []
        for i, s in enumerate(insts):
            tid = links[i]
            d = s.detection
            st.trajectories[tid].members.append(Member(frame, d.box, emb[i], s.score_fused, d.text))
            frame_ids.append(tid)

        st.bank.append((frame, frame_ids, emb))
        while st.bank and st.bank[0][0] <= frame - cfg.memory:
            st.bank.popleft()
        return [(s, links[i]) for i, s in enumerate(insts)]

    def trajectories(self) -> list[Trajectory]:
        return [self.state.trajectories[k] for k in sorted(self.state.trajectories)]


def run(frames: Iterable[tuple[int, Sequence[Detection]]], params: ModelParams | None,
        cfg: TrackerConfig | None = None, scorer: Scorer | None = None) -> list[Trajectory]:
    """Track one video given ``(frame_index, detections)`` pairs in ascending order.

    Frame indices missing from the input are processed as empty frames so the
    memory bank ages in real time.
    """
    tracker = Tracker(params, cfg, scorer)
    prev = None
    for frame, dets in frames:
        if prev is not None and frame <= prev:
            raise ValueError(f"frames out of order: {frame} after {prev}")
        if prev is not None:
            for gap in range(prev + 1, frame):
                tracker.step(gap, [])
        tracker.step(frame, dets)
        prev = frame
    return tracker.trajectories()
