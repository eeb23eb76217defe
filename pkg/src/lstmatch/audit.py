"""Finite-difference audit of every differentiable piece, at small dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_math import (
    attention_forward,
    grad_check_report,
    init_attention,
    init_linear,
    linear_forward,
    mlp_forward,
)
from .core_math import tensor as tn
from .matcher import EmbeddingBatch, init_matcher, lt_association_loss, st_association_loss
from .model import ModelConfig, init_model
from .rescoring import init_rescore, rescoring_loss_t
from .synth import SceneConfig, generate
from .train import TrainConfig, clip_from_scene, total_loss

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    worst_path: str
    arrays: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _probe(rng: np.random.Generator, shape) -> np.ndarray:
    # fixed random projection turns any output into a scalar with generic gradients
    return rng.normal(size=shape)


def _cases(seed: int, only: set[str] | None = None) -> list[tuple[str, Callable, object]]:
    rng = np.random.default_rng(seed)
    d, heads, dq = 8, 2, 12
    cases = []

    lin = init_linear(rng, 5, 4)
    x5 = rng.normal(size=(3, 5))
    r4 = _probe(rng, (3, 4))
    cases.append(("linear", lambda p: tn.total(tn.mul(linear_forward(x5, p), r4)), lin))

    mlp = [init_linear(rng, 5, 6), init_linear(rng, 6, 4)]
    cases.append(("mlp", lambda p: tn.total(tn.mul(mlp_forward(x5, p), r4)), mlp))

    norm_in = rng.normal(size=(4, d))
    gamma, beta = 1 + 0.1 * rng.normal(size=d), 0.1 * rng.normal(size=d)
    r_norm = _probe(rng, (4, d))
    cases.append(("layer_norm", lambda p: tn.total(tn.mul(tn.layer_norm(tn.as_tensor(norm_in), p[0], p[1]), r_norm)),
                  [gamma, beta]))

    att = init_attention(rng, d, heads)
    xs, ys = rng.normal(size=(4, d)), rng.normal(size=(3, d))
    r_att = _probe(rng, (4, d))
    cases.append(("self_attention", lambda p: tn.total(tn.mul(attention_forward(xs, xs, xs, p), r_att)), att))
    cases.append(("cross_attention", lambda p: tn.total(tn.mul(attention_forward(xs, ys, ys, p), r_att)), att))

    logits_in = rng.normal(size=(3, 5))
    r_sm = _probe(rng, (3, 5))
    cases.append(("log_softmax", lambda p: tn.total(tn.mul(tn.log_softmax(p, axis=1), r_sm)), logits_in))
    cases.append(("softmax", lambda p: tn.total(tn.mul(tn.softmax(p, axis=1), r_sm)), logits_in))

    head = init_rescore(rng, dq)
    q = rng.normal(size=(6, dq))
    boxes = rng.uniform(0.0, 0.5, size=(6, 4))
    boxes[:, 2:] += 0.5
    gt = boxes[:2] + rng.normal(0, 0.01, size=(2, 4))
    cases.append(("focal_loss", lambda p: rescoring_loss_t(q, boxes, gt, p), head))

    scene = generate(SceneConfig(frames=4, tracks=2, query_dim=dq, fp_rate=1.0, seed=seed, box_noise=1.0))
    # keep every detection so the matcher sees tracks and background rows
    batch = EmbeddingBatch(
        list(range(4)),
        [np.stack([det.query for det in f]) for f in scene.detections],
        [np.array([det.box for det in f], dtype=np.float64) for f in scene.detections],
    )
    matcher = init_matcher(rng, dq, d, heads, d)
    cases.append(("st_association", lambda p: st_association_loss(batch, scene.gt, p), matcher))
    cases.append(("lt_association", lambda p: lt_association_loss(batch, scene.gt, p), matcher))

    model = init_model(ModelConfig(query_dim=dq, dim=d, heads=heads, hidden=d), seed)
    clip = clip_from_scene(scene, 0, 4)
    cfg = TrainConfig()
    cases.append(("total_loss", lambda p: total_loss(clip, p, cfg), model))
    return [c for c in cases if only is None or c[0] in only]


def run_gradcheck(seed: int = 0, eps: float = 1e-5, max_coords: int | None = 12) -> list[CheckResult]:
    """Compare analytic and central-difference gradients for each component.

    ``max_coords`` limits the probed coordinates per parameter array.
    """
    out = []
    for name, f, params in _cases(seed):
        report = grad_check_report(f, params, eps=eps, max_coords=max_coords, seed=seed)
        path, err = max(report.items(), key=lambda kv: kv[1]) if report else ("", 0.0)
        out.append(CheckResult(name, float(err), path, len(report)))
    return out
