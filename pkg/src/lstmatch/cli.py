"""Command-line entry point: synth, train, track, eval, gradcheck.

Every subcommand accepts ``--config FILE`` holding a flat JSON object whose
keys are flag names (dashes or underscores).  Explicit flags win over the
file, the file wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import MISSING, asdict, fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .audit import TOLERANCE, run_gradcheck
from .io import (
    detection_records,
    gt_records,
    read_detections,
    read_gt,
    read_tracks,
    trajectory_records,
    write_jsonl,
)
from .metrics import evaluate_many
from .model import ModelConfig, load_model
from .pipeline import SCORING_MODES, TrackerConfig, run
from .rescoring import Fusion
from .synth import SUITES, Scene, SceneConfig, generate, make_suite
from .train import TrainConfig, train

# provenance shown next to each default in --help
PUBLISHED = "published setting"
DECLARED = "declared default"  # value unstated in the source method
DESK = "desk-scale default"
TRAIN_HELP = {
    "res_weight": ("weight of the rescoring loss", PUBLISHED),
    "asso_weight": ("weight of the association loss", PUBLISHED),
    "alpha": ("focal loss alpha", PUBLISHED),
    "gamma": ("focal loss gamma", PUBLISHED),
    "cls_weight": ("classification weight in the rescoring match cost", DECLARED),
    "box_weight": ("L1 box weight in the rescoring match cost", DECLARED),
    "lr": ("base learning rate", PUBLISHED),
    "weight_decay": ("decoupled weight decay", DESK),
    "warmup_frac": ("fraction of iterations spent in linear warmup", DESK),
    "iterations": ("optimizer steps (published runs use 30k on real data)", DESK),
    "clip_len": ("frames per training clip T", PUBLISHED),
    "score_threshold": ("fused-score filter before the matchers during training", PUBLISHED),
    "fusion": ("score fusion used during training", PUBLISHED),
    "seed": ("random seed for init and clip sampling", DESK),
    "log_every": ("steps between log events", DESK),
}
TRACK_HELP = {
    "score_threshold": ("fused-score filter at inference (training value reused)", DECLARED),
    "score_threshold_train": ("training-time filter (recorded for reference)", PUBLISHED),
    "assoc_threshold": ("minimum association probability theta", PUBLISHED),
    "nms_iou": ("NMS IoU threshold", DECLARED),
    "clip_len": ("clip length T; the memory bank keeps T-1 frames", PUBLISHED),
    "fusion": ("score fusion strategy", PUBLISHED),
    "scoring": ("which confidence drives filtering", DESK),
    "use_st": ("run the short-term matcher", PUBLISHED),
    "use_lt": ("run the long-term matcher on leftovers", PUBLISHED),
}
MODEL_HELP = {
    "dim": ("matcher width D", DECLARED),
    "heads": ("attention heads", DECLARED),
    "hidden": ("embedder hidden width", DECLARED),
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, helps: dict, prefix: str = "",
                         skip: Sequence[str] = ()) -> None:
    for f in fields(cls):
        if f.name in skip or f.name not in helps:
            continue
        default = f.default if f.default is not MISSING else None
        text, source = helps[f.name]
        dest = prefix + f.name
        help_text = f"{text} (default: {default}; {source})"
        if isinstance(default, bool):
            parser.add_argument(_flag(f.name), dest=dest, action=argparse.BooleanOptionalAction, default=default,
                                help=help_text)
        elif f.name == "fusion":
            parser.add_argument(_flag(f.name), dest=dest, choices=[m.value for m in Fusion], default=default,
                                help=help_text)
        elif f.name == "scoring":
            parser.add_argument(_flag(f.name), dest=dest, choices=SCORING_MODES, default=default, help=help_text)
        else:
            parser.add_argument(_flag(f.name), dest=dest, type=type(default), default=default, help=help_text)


def _pick(ns: argparse.Namespace, cls, prefix: str = ""):
    kw = {}
    for f in fields(cls):
        key = prefix + f.name
        if hasattr(ns, key):
            kw[f.name] = getattr(ns, key)
    return cls(**kw)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file of flag defaults")


# ------------------------------------------------------------------ synth


def cmd_synth(ns: argparse.Namespace) -> int:
    out = Path(ns.out)
    configs = make_suite(ns.suite, ns.seed, ns.scenes)
    scenes = [generate(c) for c in configs]
    n_test = min(max(ns.holdout, 0), len(scenes))
    split = {"train": scenes[: len(scenes) - n_test], "test": scenes[len(scenes) - n_test:]}
    for part, group in split.items():
        if not group:
            continue
        write_jsonl(out / part / "detections.jsonl",
                    (r for s in group for r in detection_records(s.video_id, s.detections)))
        write_jsonl(out / part / "gt.jsonl", (r for s in group for r in gt_records(s.video_id, s.gt)))
    manifest = {"suite": ns.suite, "seed": ns.seed, "version": __version__,
                "splits": {k: [s.video_id for s in v] for k, v in split.items()},
                "scenes": [c.to_dict() for c in configs]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(scenes)} scenes of suite {ns.suite!r} to {out}")
    return 0


# ------------------------------------------------------------------ train


def _scenes_from_files(dets_path: Path, gt_path: Path, frame_size: tuple[int, int]) -> list[Scene]:
    dets = read_detections(dets_path)
    gts = read_gt(gt_path)
    scenes = []
    for vid in sorted(set(dets) | set(gts)):
        frames = dets.get(vid, {})
        gt = gts.get(vid, [])
        last = max([*frames, *(f for g in gt for f in g.boxes)], default=-1)
        per_frame = [frames.get(f, []) for f in range(last + 1)]
        qdim = next((len(d.query) for fr in per_frame for d in fr), 0)
        cfg = SceneConfig(name=vid, frames=last + 1, frame_size=frame_size, query_dim=max(qdim, 7))
        scenes.append(Scene(vid, cfg, gt, per_frame, [[None] * len(fr) for fr in per_frame]))
    return scenes


def cmd_train(ns: argparse.Namespace) -> int:
    scenes = _scenes_from_files(Path(ns.dets), Path(ns.gt), tuple(ns.frame_size))
    if not scenes:
        print("error: no training videos", file=sys.stderr)
        return 2
    tcfg = _pick(ns, TrainConfig)
    qdim = scenes[0].config.query_dim
    mcfg = ModelConfig(query_dim=qdim, dim=ns.dim, heads=ns.heads, hidden=ns.hidden)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_log.jsonl", "w", encoding="utf-8", newline="\n") as log:
        result = train(scenes, tcfg, mcfg, log=log, out_dir=out)
    final = result.history[-1] if result.history else {}
    print(json.dumps({"out": str(out), "final_loss": final.get("loss"), "best_loss": result.best_loss,
                      "config": asdict(tcfg), "model": asdict(mcfg)}, sort_keys=True))
    return 0


# ------------------------------------------------------------------ track


def cmd_track(ns: argparse.Namespace) -> int:
    params, _ = load_model(ns.ckpt)
    cfg = _pick(ns, TrackerConfig)
    dets = read_detections(ns.dets)
    records = []
    for vid in sorted(dets):
        frames = dets[vid]
        trajs = run(((f, frames[f]) for f in sorted(frames)), params, cfg)
        records.extend(trajectory_records(vid, trajs))
    n = write_jsonl(ns.out, records)
    print(f"wrote {n} trajectory members for {len(dets)} videos to {ns.out}")
    return 0


# ------------------------------------------------------------------ eval


def cmd_eval(ns: argparse.Namespace) -> int:
    pred = read_tracks(ns.pred)
    gt = read_tracks(ns.gt)
    videos = sorted(set(pred) | set(gt))
    report = evaluate_many(((pred.get(v, {}), gt.get(v, {})) for v in videos), ns.iou)
    doc = {"videos": len(videos), "iou_threshold": ns.iou, **report.to_dict()}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if ns.out:
        Path(ns.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    print(report.table())
    return 0


# ------------------------------------------------------------------ gradcheck


def cmd_gradcheck(ns: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    results = run_gradcheck(seed=ns.seed, max_coords=ns.max_coords)
    elapsed = time.perf_counter() - t0
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  rel_err={r.max_rel_error:.3e}  worst={r.worst_path or '-'}")
    ok = all(r.passed for r in results)
    print(f"{'all' if ok else 'NOT all'} relative errors < {TOLERANCE:g} ({elapsed:.1f} s)", file=sys.stderr)
    return 0 if ok else 1


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lstmatch", description="Video text tracking on frozen spotter queries.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic suite as JSON Lines")
    _common(p)
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="suite seed (default: 0)")
    p.add_argument("--scenes", type=int, default=10, help="videos in the suite (default: 10)")
    p.add_argument("--holdout", type=int, default=2, help="trailing videos written to test/ (default: 2)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the rescoring head and matchers")
    _common(p)
    p.add_argument("--dets", required=True, help="detections JSON Lines")
    p.add_argument("--gt", required=True, help="ground-truth JSON Lines")
    p.add_argument("--out", required=True, help="directory for checkpoints and the log")
    p.add_argument("--frame-size", type=int, nargs=2, default=[1280, 720], metavar=("W", "H"),
                   help="frame size used to normalise boxes (default: 1280 720)")
    _add_dataclass_flags(p, TrainConfig, TRAIN_HELP)
    _add_dataclass_flags(p, ModelConfig, MODEL_HELP)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="run the tracker on a detections file")
    _common(p)
    p.add_argument("--dets", required=True, help="detections JSON Lines")
    p.add_argument("--ckpt", required=True, help="checkpoint written by train")
    p.add_argument("--out", required=True, help="trajectories JSON Lines")
    _add_dataclass_flags(p, TrackerConfig, TRACK_HELP)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="MOTA / MOTP / IDF1 of trajectories against ground truth")
    _common(p)
    p.add_argument("--pred", required=True, help="trajectories JSON Lines")
    p.add_argument("--gt", required=True, help="ground-truth JSON Lines")
    p.add_argument("--iou", type=float, default=0.5, help="match IoU threshold (default: 0.5)")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _common(p)
    p.add_argument("--seed", type=int, default=0, help="seed for inputs and probed coordinates (default: 0)")
    p.add_argument("--max-coords", type=int, default=12,
                   help="coordinates probed per parameter array (default: 12)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((a for a in argv if a in subparsers), None)
    if known.config is not None and command is not None:
        try:
            doc = json.loads(known.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        if not isinstance(doc, dict):
            parser.error("config must be a JSON object")
        sub = subparsers[command]
        actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
        values = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(values) - set(actions))
        if unknown:
            parser.error(f"unknown config keys for {command}: {unknown}")
        sub.set_defaults(**values)
        for dest in values:
            # a flag supplied by the file is no longer required on the command line
            actions[dest].required = False
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = _apply_config(parser, argv)
    try:
        return ns.func(ns)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
