from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core_math import load_into, read_checkpoint, save_checkpoint
from .matcher import MatcherParams, init_matcher
from .rescoring import RescoreParams, init_rescore


@dataclass(frozen=True)
class ModelConfig:
    query_dim: int = 32
    dim: int = 256
    heads: int = 8
    hidden: int = 256


@dataclass
class ModelParams:
    rescore: RescoreParams
    matcher: MatcherParams


def init_model(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    rescore = init_rescore(rng, cfg.query_dim)
    matcher = init_matcher(rng, cfg.query_dim, cfg.dim, cfg.heads, cfg.hidden)
    return ModelParams(rescore, matcher)


def save_model(path: str | Path, params: ModelParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    meta = {"model": asdict(cfg), **(extra or {})}
    save_checkpoint(path, params, meta)


def load_model(path: str | Path) -> tuple[ModelParams, ModelConfig]:
    doc = read_checkpoint(path)
    cfg = ModelConfig(**doc.get("meta", {}).get("model", {}))
    return load_into(init_model(cfg), doc), cfg
