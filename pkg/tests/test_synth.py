from __future__ import annotations

import numpy as np
import pytest

from lstmatch.geometry import gt_assign
from lstmatch.synth import SUITES, SceneConfig, generate, generate_suite, make_suite


def test_zero_noise_matches_gt_exactly():
    scene = generate(SceneConfig(box_noise=0.0, fp_rate=0.0, seed=4))
    by_id = {g.track_id: g for g in scene.gt}
    for t, (dets, src) in enumerate(zip(scene.detections, scene.sources)):
        assert len(dets) == sum(t in g.boxes for g in scene.gt)
        for d, k in zip(dets, src):
            assert tuple(d.box) == tuple(by_id[k + 1].boxes[t])


def test_deterministic():
    a = generate(SceneConfig(fp_rate=0.5, seed=11))
    b = generate(SceneConfig(fp_rate=0.5, seed=11))
    assert [g.boxes for g in a.gt] == [g.boxes for g in b.gt]
    for da, db in zip(a.detections, b.detections):
        assert [tuple(d.box) for d in da] == [tuple(d.box) for d in db]
        assert all(np.array_equal(x.query, y.query) and x.score == y.score for x, y in zip(da, db))


def test_different_seeds_differ():
    a = generate(SceneConfig(seed=1))
    b = generate(SceneConfig(seed=2))
    assert [g.boxes for g in a.gt] != [g.boxes for g in b.gt]


def test_occlusion_window_has_no_detections():
    cfg = SceneConfig(occlusions=[(2, 5, 8)], full_lifetime=True, seed=3)
    scene = generate(cfg)
    for t in range(5, 9):
        assert 2 not in scene.sources[t]
        assert t not in scene.gt[2].boxes
    assert 4 in scene.gt[2].boxes and 9 in scene.gt[2].boxes


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(box_noise=-1)
    with pytest.raises(ValueError):
        SceneConfig(query_dim=4)
    with pytest.raises(ValueError):
        SceneConfig(blur_prob=2.0)


def test_query_layout():
    cfg = SceneConfig(fp_rate=2.0, seed=5)
    scene = generate(cfg)
    dets = [d for f in scene.detections for d in f]
    src = [k for f in scene.sources for k in f]
    assert all(d.query.shape == (cfg.query_dim,) for d in dets)
    true_t = [d.query[0] for d, k in zip(dets, src) if k is not None]
    fp_t = [d.query[0] for d, k in zip(dets, src) if k is None]
    assert min(true_t) > 0 > max(fp_t)


@pytest.mark.parametrize("name", SUITES)
def test_suite_shapes(name):
    scenes = generate_suite(name, seed=0)
    assert len(scenes) == 10
    assert len({s.video_id for s in scenes}) == 10
    for s in scenes:
        assert len(s.detections) == 30 and len(s.gt) == 5


def test_occlusion_suite_gaps():
    for cfg in make_suite("occlusion", seed=1):
        assert 1 <= len(cfg.occlusions) <= 2
        for k, a, b in cfg.occlusions:
            assert 2 <= b - a + 1 <= 4
            assert 0 < a and b < cfg.frames - 1
        scene = generate(cfg)
        for k, a, b in cfg.occlusions:
            frames = sorted(scene.gt[k].boxes)
            gaps = [y - x - 1 for x, y in zip(frames, frames[1:]) if y - x > 1]
            assert gaps == [b - a + 1]


def test_domain_gap_low_confidence_share():
    scenes = generate_suite("domain_gap", seed=0)
    scores = [d.score for s in scenes for d, k in zip((d for f in s.detections for d in f),
                                                      (k for f in s.sources for k in f)) if k is not None]
    assert np.mean(np.array(scores) < 0.3) >= 0.3


def test_gt_assign_recovers_source():
    scene = generate(SceneConfig(fp_rate=1.0, seed=8))
    for t, (dets, src) in enumerate(zip(scene.detections, scene.sources)):
        boxes = [d.box for d in dets]
        for k, g in enumerate(scene.gt):
            idx = gt_assign(boxes, g.boxes.get(t))
            if t in g.boxes:
                assert src[idx] == k
            else:
                assert idx is None or src[idx] != k


def test_unknown_suite():
    with pytest.raises(ValueError):
        make_suite("night")
