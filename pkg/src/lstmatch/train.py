"""Joint objective for the rescoring head and matchers, and the loop that minimises it."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from .core_math import Tensor, backward, copy_params, grads_of, named_leaves, to_tensors, tree_map
from .core_math import tensor as tn
from .matcher import EmbeddingBatch, GtTrack, association_loss
from .model import ModelConfig, ModelParams, init_model, save_model
from .rescoring import FOCAL_ALPHA, FOCAL_GAMMA, Detection, fuse_scores, rescoring_loss_t
from .synth import Scene


@dataclass
class TrainConfig:
    res_weight: float = 1.0
    asso_weight: float = 0.5
    alpha: float = FOCAL_ALPHA
    gamma: float = FOCAL_GAMMA
    cls_weight: float = 2.0
    box_weight: float = 5.0
    lr: float = 5e-5
    weight_decay: float = 1e-4
    warmup_frac: float = 0.1
    iterations: int = 2000
    clip_len: int = 6
    score_threshold: float = 0.3
    fusion: str = "max"
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.res_weight < 0 or self.asso_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if self.clip_len < 2:
            raise ValueError("clip_len must be >= 2")


@dataclass
class Clip:
    frames: list[int]
    detections: list[list[Detection]]
    gt: list[GtTrack]
    frame_size: tuple[float, float]


def clip_from_scene(scene: Scene, start: int, length: int) -> Clip:
    frames = list(range(start, min(start + length, len(scene.detections))))
    return Clip(frames, [scene.detections[f] for f in frames], scene.gt, scene.frame_size)


def _norm(boxes: np.ndarray, size) -> np.ndarray:
    w, h = size
    return boxes / np.array([w, h, w, h], dtype=np.float64)


def filter_for_matcher(dets: Sequence[Detection], rescore_params, cfg: TrainConfig) -> list[int]:
    """Indices whose fused score clears the training threshold (no NMS during training)."""
    if not dets:
        return []
    q = np.stack([d.query for d in dets])
    logits = q @ np.asarray(rescore_params.head.weight).T + np.asarray(rescore_params.head.bias)
    c_r = 1.0 / (1.0 + np.exp(-logits[:, 0]))
    c_f = np.asarray(fuse_scores(np.array([d.score for d in dets]), c_r, cfg.fusion)).reshape(-1)
    return [i for i in range(len(dets)) if c_f[i] > cfg.score_threshold]


def loss_terms(clip: Clip, params: ModelParams, cfg: TrainConfig) -> dict[str, Tensor]:
    """Rescoring and association losses for one clip (params may be tensors)."""
    if not clip.frames:
        return {"res": Tensor(0.0), "asso": Tensor(0.0)}
    res_terms = []
    plain_rescore = tree_map(lambda a: a.data if isinstance(a, Tensor) else a, params.rescore)
    queries, boxes = [], []
    for f, dets in zip(clip.frames, clip.detections):
        gt_boxes = np.array([g.at(f) for g in clip.gt if g.at(f) is not None], dtype=np.float64).reshape(-1, 4)
        if dets and cfg.res_weight > 0:
            q = np.stack([d.query for d in dets])
            b = np.array([d.box for d in dets], dtype=np.float64)
            res_terms.append(rescoring_loss_t(q, _norm(b, clip.frame_size), _norm(gt_boxes, clip.frame_size),
                                              params.rescore, cfg.cls_weight, cfg.box_weight, cfg.alpha, cfg.gamma))
        keep = filter_for_matcher(dets, plain_rescore, cfg)
        dq = params.rescore.head.weight.shape[1]
        queries.append(np.array([dets[i].query for i in keep], dtype=np.float64).reshape(-1, dq))
        boxes.append(np.array([dets[i].box for i in keep], dtype=np.float64).reshape(-1, 4))
    res = tn.sum_all(res_terms)
    asso = association_loss(EmbeddingBatch(clip.frames, queries, boxes), clip.gt, params.matcher) \
        if cfg.asso_weight > 0 else Tensor(0.0)
    return {"res": res, "asso": asso}


def total_loss(clip: Clip, params: ModelParams, cfg: TrainConfig) -> Tensor:
    terms = loss_terms(clip, params, cfg)
    return tn.add(tn.scale(terms["res"], cfg.res_weight), tn.scale(terms["asso"], cfg.asso_weight))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup then cosine decay to zero; ``step`` is 1-based."""
    warm = max(1, int(round(cfg.warmup_frac * cfg.iterations)))
    if step <= warm:
        return cfg.lr * step / warm
    span = max(1, cfg.iterations - warm)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, (step - warm) / span)))


class AdamW:
    def __init__(self, params, lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = tree_map(np.zeros_like, params)
        self.v = tree_map(np.zeros_like, params)
        self.t = 0

    def step(self, params, grads, lr: float):
        self.t += 1
        b1, b2 = self.b1, self.b2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        m = dict(named_leaves(self.m))
        v = dict(named_leaves(self.v))
        g = dict(named_leaves(grads))
        for path, p in named_leaves(params):
            m[path] *= b1
            m[path] += (1 - b1) * g[path]
            v[path] *= b2
            v[path] += (1 - b2) * g[path] ** 2
            p -= lr * self.weight_decay * p
            p -= lr * (m[path] / c1) / (np.sqrt(v[path] / c2) + self.eps)


def frozen_checksum(scenes: Sequence[Scene]) -> str:
    h = hashlib.sha256()
    for s in scenes:
        for frame in s.detections:
            for d in frame:
                h.update(np.asarray(d.box, dtype=np.float64).tobytes())
                h.update(np.float64(d.score).tobytes())
                h.update(d.query.tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_loss: float = float("inf")
    best_params: ModelParams | None = None


def train(scenes: Sequence[Scene], cfg: TrainConfig, model_cfg: ModelConfig | None = None,
          init: ModelParams | None = None, log: IO[str] | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """AdamW with warmup-cosine over random contiguous clips, one video per step.

    Only parameter groups with a non-zero loss weight are updated.  When
    ``out_dir`` is given, ``final.json`` and ``best.json`` checkpoints are
    written there.
    """
    if not scenes:
        raise ValueError("empty training set")
    model_cfg = model_cfg or ModelConfig(query_dim=scenes[0].config.query_dim)
    params = copy_params(init) if init is not None else init_model(model_cfg, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    groups = []
    if cfg.res_weight > 0:
        groups.append("rescore")
    if cfg.asso_weight > 0:
        groups.append("matcher")
    opts = {g: AdamW(getattr(params, g), cfg.lr, cfg.weight_decay) for g in groups}

    result = TrainResult(params)
    window: list[float] = []
    for step in range(1, cfg.iterations + 1):
        scene = scenes[int(rng.integers(len(scenes)))]
        n_frames = len(scene.detections)
        start = int(rng.integers(0, max(1, n_frames - cfg.clip_len + 1)))
        clip = clip_from_scene(scene, start, cfg.clip_len)

        tparams = to_tensors(params)
        terms = loss_terms(clip, tparams, cfg)
        loss = tn.add(tn.scale(terms["res"], cfg.res_weight), tn.scale(terms["asso"], cfg.asso_weight))
        if not np.isfinite(loss.data):
            raise FloatingPointError(
                f"non-finite loss at step {step} (scene {scene.video_id}, start {start}): "
                f"res={terms['res'].item()} asso={terms['asso'].item()}"
            )
        if loss.requires_grad:
            backward(loss)
        grads = grads_of(tparams)
        lr = lr_at(step, cfg)
        for g, opt in opts.items():
            opt.step(getattr(params, g), getattr(grads, g), lr)

        window.append(loss.item())
        if step % cfg.log_every == 0 or step == cfg.iterations:
            mean = float(np.mean(window))
            event = {"event": "train", "step": step, "loss": mean, "res": terms["res"].item(),
                     "asso": terms["asso"].item(), "lr": lr}
            result.history.append(event)
            if log is not None:
                log.write(json.dumps(event) + "\n")
            if mean < result.best_loss:
                result.best_loss = mean
                result.best_params = copy_params(params)
            window = []

    if log is not None:
        log.write(json.dumps({"event": "done", "iterations": cfg.iterations, "best_loss": result.best_loss}) + "\n")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"train": asdict(cfg)}
        save_model(out / "final.json", params, model_cfg, meta)
        save_model(out / "best.json", result.best_params or params, model_cfg, meta)
    return result
