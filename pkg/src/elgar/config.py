"""Run configuration: one JSON file drives training, generation, ablation.

Every command writes the parsed config back next to its outputs
(config.echo.json) so artifacts carry their provenance.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .cello import CelloSpec, default_cello, load_cello
from .denoiser import DenoiserConfig
from .errors import ShapeMismatch
from .losses import LossWeights
from .skeleton import Skeleton, default_skeleton, load_skeleton
from .training import OptimizerSettings


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # "synthetic" | "dir"
    path: str | None = None
    n_train_scores: int = 12
    n_test_scores: int = 4
    notes_per_score: int = 8
    note_durations: tuple[float, ...] = (0.4, 0.6, 0.8)
    seed: int = 0


@dataclass
class RunConfig:
    skeleton_path: str | None = None  # packaged default when unset
    cello_path: str | None = None
    out_dir: str = "out"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    fps: float = 30.0
    seed: int = 0
    timesteps: int = 1000
    sample_steps: int = 50
    guidance_w: float = 2.0
    cond_dropout: float = 0.10
    overlap_s: float = 4.0
    train_steps: int = 1200
    batch_size: int = 4
    log_every: int = 10
    checkpoint_every: int = 500
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def load_skeleton(self) -> Skeleton:
        return default_skeleton() if self.skeleton_path is None else load_skeleton(self.skeleton_path)

    def load_cello(self) -> CelloSpec:
        return default_cello() if self.cello_path is None else load_cello(self.cello_path)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["dataset"]["note_durations"] = list(self.dataset.note_durations)
        return d


def load_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RunConfig:
    cfg = RunConfig()
    plain = {
        k: v
        for k, v in doc.items()
        if k not in ("dataset", "denoiser", "weights", "optimizer")
    }
    for k, v in plain.items():
        if not hasattr(cfg, k):
            raise ShapeMismatch(f"unknown config key {k!r}")
        setattr(cfg, k, v)
    if "dataset" in doc:
        ds = doc["dataset"]
        cfg.dataset = DatasetConfig(**{**ds, "note_durations": tuple(ds.get("note_durations", (0.4, 0.6, 0.8)))})
    if "denoiser" in doc:
        cfg.denoiser = DenoiserConfig(**doc["denoiser"])
    if "weights" in doc:
        cfg.weights = LossWeights(**doc["weights"])
    if "optimizer" in doc:
        cfg.optimizer = OptimizerSettings(**doc["optimizer"])
    for p in (cfg.skeleton_path, cfg.cello_path):
        if p is not None and not Path(p).exists():
            raise ShapeMismatch(f"configured file {p} does not exist")
    return cfg


def echo_config(cfg: RunConfig, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo.json").write_text(
        json.dumps(cfg.as_dict(), indent=1, sort_keys=True), encoding="utf-8"
    )


def thread_count() -> int:
    """Worker cap from ELGAR_THREADS (at least 1)."""
    raw = os.environ.get("ELGAR_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
