"""Short- and long-term transformer matchers and their association losses.

Both matchers share one layout: an encoder block that refines the history
embeddings with self-attention, a decoder block in which current-frame
embeddings cross-attend to the refined history, and a scaled dot product
between the two that yields one raw score per (history row, current
instance).  A fixed zero column for the null outcome is prepended, so column 0
of every association row means "no match".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core_math import (
    AttentionParams,
    LinearParams,
    Tensor,
    attention_forward,
    init_attention,
    init_linear,
    linear_forward,
    mlp_forward,
)
from .core_math import tensor as tn
from .core_math.layers import NormParams
from .geometry import gt_assign

Which = Literal["st", "lt"]


@dataclass
class MatcherHead:
    encoder: AttentionParams
    decoder: AttentionParams
    score: LinearParams


@dataclass
class MatcherParams:
    embedder: list[LinearParams]
    st: MatcherHead
    lt: MatcherHead

    @property
    def dim(self) -> int:
        return self.embedder[-1].out_dim

    def head(self, which: Which) -> MatcherHead:
        if which not in ("st", "lt"):
            raise ValueError(f"unknown matcher {which!r}")
        return self.st if which == "st" else self.lt


def _init_head(rng: np.random.Generator, dim: int, heads: int) -> MatcherHead:
    return MatcherHead(
        encoder=init_attention(rng, dim, heads),
        decoder=init_attention(rng, dim, heads),
        # identity start: the initial score is plain embedding similarity
        score=LinearParams(np.eye(dim)),
    )


def init_matcher(rng: np.random.Generator, query_dim: int, dim: int = 256, heads: int = 8,
                 hidden: int = 256) -> MatcherParams:
    return MatcherParams(
        embedder=[init_linear(rng, query_dim, hidden), init_linear(rng, hidden, dim)],
        st=_init_head(rng, dim, heads),
        lt=_init_head(rng, dim, heads),
    )


def identity_head(dim: int, heads: int = 1) -> MatcherHead:
    """Head whose projections are identities and feed-forward is zero (test fixture)."""
    eye, zero = np.eye(dim), np.zeros(dim)

    def block():
        return AttentionParams(
            wq=LinearParams(eye.copy(), zero.copy()),
            wk=LinearParams(eye.copy()),
            wv=LinearParams(eye.copy(), zero.copy()),
            wo=LinearParams(eye.copy(), zero.copy()),
            norm1=NormParams(np.ones(dim), zero.copy()),
            ff1=LinearParams(np.zeros((4 * dim, dim)), np.zeros(4 * dim)),
            ff2=LinearParams(np.zeros((dim, 4 * dim)), zero.copy()),
            norm2=NormParams(np.ones(dim), zero.copy()),
            heads=heads,
        )

    return MatcherHead(block(), block(), LinearParams(eye.copy()))


# ------------------------------------------------------------------ forward


def embed(queries, p: MatcherParams) -> Tensor:
    q = tn.as_tensor(queries)
    if q.shape[0] == 0:
        return Tensor(np.zeros((0, p.dim)))
    return mlp_forward(q, p.embedder)


def raw_scores(current: Tensor, history: Tensor, head: MatcherHead,
               encoder_input: Tensor | None = None, history_rows=None) -> Tensor:
    """Score matrix (|history rows| x N_t) without the null column.

    ``encoder_input`` defaults to ``history``; when given, ``history_rows``
    selects which encoded rows act as trajectory queries.
    """
    current = tn.as_tensor(current)
    source = tn.as_tensor(history if encoder_input is None else encoder_input)
    n_cur = current.shape[0]
    enc = attention_forward(source, source, source, head.encoder)
    if history_rows is not None:
        enc = tn.index(enc, np.asarray(history_rows, dtype=int))
    m = enc.shape[0]
    if m == 0 or n_cur == 0:
        return Tensor(np.zeros((m, n_cur)))
    dec = attention_forward(current, enc, enc, head.decoder)
    proj = linear_forward(dec, head.score)
    return tn.scale(tn.matmul(enc, tn.transpose(proj)), 1.0 / math.sqrt(head.score.out_dim))


def with_null(scores: Tensor) -> Tensor:
    """Prepend the fixed-zero null column."""
    return tn.concat([Tensor(np.zeros((scores.shape[0], 1))), scores], axis=1)


def pairwise_scores(current, history, which: Which, p: MatcherParams) -> Tensor:
    """Association matrix (|history| x (N_t + 1)); column 0 is the null slot."""
    return with_null(raw_scores(current, history, p.head(which)))


def assoc_distribution(row) -> np.ndarray:
    """Softmax over ``[null, 1..N_t]``; the null entry must be exactly zero."""
    row = np.asarray(row, dtype=np.float64)
    if row[0] != 0.0:
        raise ValueError("null slot must hold a raw score of exactly 0")
    e = np.exp(row - row.max())
    return e / e.sum()


def assoc_probabilities(scores_with_null) -> np.ndarray:
    s = np.asarray(scores_with_null.data if isinstance(scores_with_null, Tensor) else scores_with_null)
    if s.shape[0] == 0:
        return s.copy()
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------ training data


@dataclass
class GtTrack:
    track_id: int
    boxes: dict[int, tuple[float, float, float, float]]  # frame -> box
    text: str = ""

    def at(self, frame: int):
        return self.boxes.get(frame)


@dataclass
class EmbeddingBatch:
    """Per-frame filtered instance queries and boxes of one clip."""

    frames: list[int]
    queries: list[np.ndarray]  # each (N_t, D_q)
    boxes: list[np.ndarray]  # each (N_t, 4)
    offsets: list[int] = field(init=False)

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum([len(q) for q in self.queries])]).astype(int).tolist()

    @property
    def size(self) -> int:
        return self.offsets[-1]

    def __len__(self) -> int:
        return len(self.frames)


def gt_targets(batch: EmbeddingBatch, gt: Sequence[GtTrack]) -> list[list[int | None]]:
    """``targets[k][t]``: instance index in frame t covering track k, or None."""
    return [[gt_assign(batch.boxes[t], track.at(f)) for t, f in enumerate(batch.frames)] for track in gt]


def _embed_frames(batch: EmbeddingBatch, p: MatcherParams) -> list[Tensor]:
    if batch.size == 0:
        return [Tensor(np.zeros((0, p.dim))) for _ in batch.frames]
    dq = next(q.shape[1] for q in batch.queries if len(q))
    allq = np.concatenate([q.reshape(-1, dq) for q in batch.queries])
    emb = embed(allq, p)
    return [tn.index(emb, slice(a, b)) for a, b in zip(batch.offsets[:-1], batch.offsets[1:])]


def _nll(logp: Tensor, rows: list[int], cols: list[int]) -> Tensor:
    if not rows:
        return Tensor(0.0)
    return tn.neg(tn.total(tn.index(logp, (np.asarray(rows), np.asarray(cols)))))


def st_association_loss(batch: EmbeddingBatch, gt: Sequence[GtTrack], p: MatcherParams,
                        targets=None, embeddings=None, split: bool = False):
    """Short-term assignment + background loss over adjacent frame pairs.

    The trajectory query for step t is the track's instance at t-1; rows of
    frame t-1 owned by no track are pushed to the null slot.  With
    ``split=True`` returns ``(assignment_term, background_term)``.
    """
    targets = gt_targets(batch, gt) if targets is None else targets
    emb = _embed_frames(batch, p) if embeddings is None else embeddings
    ass_terms, bg_terms = [], []
    for t in range(1, len(batch)):
        prev, cur = emb[t - 1], emb[t]
        if prev.shape[0] == 0:
            continue
        logp = tn.log_softmax(with_null(raw_scores(cur, prev, p.st)), axis=1)
        rows, cols = [], []
        owned = set()
        for tk in targets:
            j = tk[t - 1]
            if j is None:
                continue
            owned.add(j)
            rows.append(j)
            cols.append(0 if tk[t] is None else tk[t] + 1)
        ass_terms.append(_nll(logp, rows, cols))
        bg = [j for j in range(prev.shape[0]) if j not in owned]
        bg_terms.append(_nll(logp, bg, [0] * len(bg)))
    ass, bg = tn.sum_all(ass_terms), tn.sum_all(bg_terms)
    return (ass, bg) if split else tn.add(ass, bg)


def lt_association_loss(batch: EmbeddingBatch, gt: Sequence[GtTrack], p: MatcherParams,
                        targets=None, embeddings=None, split: bool = False):
    """Long-term assignment + background loss over every (query frame, target frame) pair."""
    targets = gt_targets(batch, gt) if targets is None else targets
    emb = _embed_frames(batch, p) if embeddings is None else embeddings
    n = batch.size
    if n == 0:
        z = Tensor(0.0)
        return (z, z) if split else z
    allemb = tn.concat(emb, axis=0)
    scores = raw_scores(allemb, allemb, p.lt)  # rows: query instances, cols: target instances
    off = batch.offsets

    owned_rows = []
    track_rows = []  # (global row, track index)
    for k, tk in enumerate(targets):
        for w, j in enumerate(tk):
            if j is not None:
                track_rows.append((off[w] + j, k))
                owned_rows.append(off[w] + j)
    owned = set(owned_rows)
    bg_rows = [r for r in range(n) if r not in owned]

    ass_terms, bg_terms = [], []
    for t in range(len(batch)):
        block = tn.index(scores, (slice(None), slice(off[t], off[t + 1])))
        logp = tn.log_softmax(with_null(block), axis=1)
        rows = [r for r, _ in track_rows]
        cols = [0 if targets[k][t] is None else targets[k][t] + 1 for _, k in track_rows]
        ass_terms.append(_nll(logp, rows, cols))
        bg_terms.append(_nll(logp, bg_rows, [0] * len(bg_rows)))
    ass, bg = tn.sum_all(ass_terms), tn.sum_all(bg_terms)
    return (ass, bg) if split else tn.add(ass, bg)


def association_loss(batch: EmbeddingBatch, gt: Sequence[GtTrack], p: MatcherParams) -> Tensor:
    if batch.size == 0:
        return Tensor(0.0)
    targets = gt_targets(batch, gt)
    emb = _embed_frames(batch, p)
    return tn.add(
        st_association_loss(batch, gt, p, targets, emb),
        lt_association_loss(batch, gt, p, targets, emb),
    )
