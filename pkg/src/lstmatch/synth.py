"""Deterministic synthetic scenes standing in for a frozen image text spotter.

A scene is a set of text tracks moving through a frame.  Each frame the
"spotter" emits one detection per visible track (jittered box, identity
query, confidence from a score model) plus a few false positives.  The query
vector is laid out as::

    [ textness | x1 y1 x2 y2 (normalised) | identity anchor ... ]

Textness is what a rescoring head can pick up on; the anchor is what the
matchers can use to tell tracks apart.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Box
from .matcher import GtTrack
from .rescoring import Detection

POSITION_DIMS = 4
IDENTITY_OFFSET = 1 + POSITION_DIMS
SUITES = ("easy", "occlusion", "domain_gap")


@dataclass
class SceneConfig:
    name: str = "scene"
    frames: int = 30
    tracks: int = 5
    frame_size: tuple[int, int] = (1280, 720)
    speed: float = 6.0  # px/frame, upper bound per axis
    motion_jitter: float = 0.5
    box_noise: float = 1.0
    box_width: tuple[float, float] = (90.0, 220.0)
    box_height: tuple[float, float] = (26.0, 48.0)
    query_dim: int = 32
    anchor_margin: float = 0.8
    embedding_noise: float = 0.05
    text_signal: float = 3.0
    position_scale: float = 1.0
    # (track index, first frame, last frame) inclusive, frames 0-based
    occlusions: list[tuple[int, int, int]] = field(default_factory=list)
    full_lifetime: bool = False
    base_score: float = 0.85
    score_jitter: float = 0.05
    small_tracks: int = 0
    small_size: tuple[float, float] = (34.0, 12.0)
    small_penalty: float = 0.6
    blur_prob: float = 0.0
    blur_penalty: float = 0.5
    fp_rate: float = 0.0  # expected false positives per frame
    fp_score: tuple[float, float] = (0.02, 0.25)
    seed: int = 0

    def __post_init__(self):
        self.frame_size = tuple(self.frame_size)
        self.box_width = tuple(self.box_width)
        self.box_height = tuple(self.box_height)
        self.small_size = tuple(self.small_size)
        self.fp_score = tuple(self.fp_score)
        self.occlusions = [tuple(o) for o in self.occlusions]
        for name in ("motion_jitter", "box_noise", "embedding_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("blur_prob",):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.query_dim <= IDENTITY_OFFSET + 1:
            raise ValueError(f"query_dim must exceed {IDENTITY_OFFSET + 1}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scene:
    video_id: str
    config: SceneConfig
    gt: list[GtTrack]
    detections: list[list[Detection]]  # indexed by frame
    sources: list[list[int | None]]  # generating track index per detection, None for false positives

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.config.frame_size


def _anchors(rng: np.random.Generator, n: int, dim: int, margin: float) -> np.ndarray:
    out: list[np.ndarray] = []
    for _ in range(10_000):
        if len(out) == n:
            break
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(np.linalg.norm(v - u) >= margin for u in out):
            out.append(v)
    if len(out) < n:
        raise ValueError(f"could not place {n} anchors {margin} apart in {dim} dims")
    return np.stack(out) if out else np.zeros((0, dim))


def _query(cfg: SceneConfig, textness: float, box: Box, identity: np.ndarray) -> np.ndarray:
    w, h = cfg.frame_size
    pos = np.array([box.x1 / w, box.y1 / h, box.x2 / w, box.y2 / h]) * cfg.position_scale
    return np.concatenate([[textness], pos, identity])


def generate(cfg: SceneConfig, video_id: str | None = None) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    W, H = cfg.frame_size
    id_dim = cfg.query_dim - IDENTITY_OFFSET
    anchors = _anchors(rng, cfg.tracks, id_dim, cfg.anchor_margin)

    # lanes keep tracks from overlapping each other
    lane_h = H / max(cfg.tracks, 1)
    small = set(rng.choice(cfg.tracks, size=min(cfg.small_tracks, cfg.tracks), replace=False).tolist()) \
        if cfg.small_tracks else set()
    blur_frames = rng.random(cfg.frames) < cfg.blur_prob

    occluded: dict[int, set[int]] = {}
    for k, a, b in cfg.occlusions:
        occluded.setdefault(k, set()).update(range(a, b + 1))

    gt: list[GtTrack] = []
    true_boxes: list[dict[int, Box]] = []
    for k in range(cfg.tracks):
        if k in small:
            bw, bh = cfg.small_size
        else:
            bw = rng.uniform(*cfg.box_width)
            bh = rng.uniform(*cfg.box_height)
        bh = min(bh, lane_h * 0.8)
        x = rng.uniform(0, W - bw)
        y = k * lane_h + rng.uniform(0, max(lane_h - bh, 0.0))
        vx = rng.uniform(-cfg.speed, cfg.speed)
        vy = rng.uniform(-cfg.speed, cfg.speed) * 0.2
        if cfg.full_lifetime:
            start, end = 0, cfg.frames - 1
        else:
            start = int(rng.integers(0, max(cfg.frames // 4, 1)))
            end = int(cfg.frames - 1 - rng.integers(0, max(cfg.frames // 4, 1)))
        boxes: dict[int, Box] = {}
        for t in range(cfg.frames):
            if t > 0:
                x += vx + rng.normal(0, cfg.motion_jitter) if cfg.motion_jitter else vx
                y += vy + rng.normal(0, cfg.motion_jitter) * 0.2 if cfg.motion_jitter else vy
                if x < 0 or x + bw > W:
                    vx = -vx
                    x = min(max(x, 0.0), W - bw)
                lo, hi = k * lane_h, (k + 1) * lane_h - bh
                if y < lo or y > hi:
                    vy = -vy
                    y = min(max(y, lo), hi)
            if start <= t <= end and t not in occluded.get(k, ()):
                boxes[t] = Box(x, y, x + bw, y + bh)
        true_boxes.append(boxes)
        gt.append(GtTrack(k + 1, {t: tuple(b) for t, b in boxes.items()}, text=f"w{k:03d}"))

    detections: list[list[Detection]] = []
    sources: list[list[int | None]] = []
    for t in range(cfg.frames):
        dets: list[Detection] = []
        src: list[int | None] = []
        for k in range(cfg.tracks):
            if t not in true_boxes[k]:
                continue
            b = true_boxes[k][t]
            if cfg.box_noise:
                b = Box(*(np.asarray(b) + rng.normal(0, cfg.box_noise, size=4)))
                b = Box(min(b.x1, b.x2), min(b.y1, b.y2), max(b.x1, b.x2), max(b.y1, b.y2))
            ident = anchors[k] + (rng.normal(0, cfg.embedding_noise, size=id_dim) if cfg.embedding_noise else 0.0)
            text_ness = cfg.text_signal + (rng.normal(0, cfg.embedding_noise) if cfg.embedding_noise else 0.0)
            score = cfg.base_score + (rng.normal(0, cfg.score_jitter) if cfg.score_jitter else 0.0)
            if k in small:
                score -= cfg.small_penalty
            if blur_frames[t]:
                score -= cfg.blur_penalty
            score = float(np.clip(score, 0.01, 0.99))
            dets.append(Detection(t, b, score, _query(cfg, text_ness, b, ident), f"w{k:03d}"))
            src.append(k)
        n_fp = int(rng.poisson(cfg.fp_rate)) if cfg.fp_rate > 0 else 0
        for _ in range(n_fp):
            bw = rng.uniform(*cfg.box_width)
            bh = rng.uniform(*cfg.box_height)
            x, y = rng.uniform(0, W - bw), rng.uniform(0, H - bh)
            b = Box(x, y, x + bw, y + bh)
            ident = rng.normal(size=id_dim)
            ident /= np.linalg.norm(ident)
            text_ness = -cfg.text_signal + rng.normal(0, 0.5)
            dets.append(Detection(t, b, float(rng.uniform(*cfg.fp_score)), _query(cfg, text_ness, b, ident), ""))
            src.append(None)
        detections.append(dets)
        sources.append(src)

    return Scene(video_id or cfg.name, cfg, gt, detections, sources)


def make_suite(name: str, seed: int = 0, scenes: int = 10) -> list[SceneConfig]:
    """Fixed scene recipes for the three evaluation suites.

    ``easy``: low noise, no occlusion.  ``occlusion``: every scene hides a
    track for 2-4 frames (short enough for a 5-frame memory).  ``domain_gap``:
    small or blurred instances whose spotter confidence drops under 0.3 while
    their queries stay informative.
    """
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    rng = np.random.default_rng([seed, SUITES.index(name)])
    out = []
    for i in range(scenes):
        scene_seed = int(rng.integers(0, 2**31 - 1))
        base = dict(name=f"{name}-{seed:02d}-{i:03d}", frames=30, tracks=5, seed=scene_seed)
        if name == "easy":
            cfg = SceneConfig(**base, box_noise=1.0, embedding_noise=0.05, fp_rate=0.2)
        elif name == "occlusion":
            occ = []
            for k in rng.choice(5, size=int(rng.integers(1, 3)), replace=False):
                length = int(rng.integers(2, 5))
                first = int(rng.integers(10, 30 - length - 3))
                occ.append((int(k), first, first + length - 1))
            cfg = SceneConfig(**base, box_noise=1.0, embedding_noise=0.05, fp_rate=0.2,
                              occlusions=occ, full_lifetime=True)
        else:
            cfg = SceneConfig(**base, box_noise=1.0, embedding_noise=0.05, fp_rate=0.3,
                              small_tracks=2, small_penalty=0.6, blur_prob=0.2, blur_penalty=0.45,
                              fp_score=(0.02, 0.35))
        out.append(cfg)
    return out


def generate_suite(name: str, seed: int = 0, scenes: int = 10) -> list[Scene]:
    return [generate(cfg) for cfg in make_suite(name, seed, scenes)]
