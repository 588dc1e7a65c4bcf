"""Training loop: Adam updates, condition dropout, logging, checkpoints.

Each step draws a batch of 5-second slices, noises them to random
timesteps, and regresses the predicted clean signal against the full
weighted loss. The loss gradients with respect to the prediction are
computed analytically by the losses module and seeded into the network
tape, so parameter gradients combine both paths in one reverse sweep.
Parameter gradients are summed over batch items in index order and
everything is driven by one seeded generator, making runs
bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cello import CelloSpec
from .conditions import ConditionTrack
from .denoiser import DenoiserConfig, DenoiserParams, forward_with_tape, write_checkpoint
from .diffusion import GuidanceConfig, NoiseSchedule, q_sample
from .errors import NonFiniteActivation, ShapeMismatch
from .losses import LossBreakdown, LossWeights, loss_total_grad, make_bundle
from .motion import MotionSequence
from .skeleton import Skeleton

LOG_COLUMNS = ("step", "simple", "pos", "foot", "rotvel", "posvel", "hand", "bow", "total")


@dataclass
class TrainSlice:
    """One training example: motion, its condition track, foot labels.

    fk_cache holds the precomputed ground-truth FK products; it is filled
    lazily on first use and never serialized.
    """

    motion: MotionSequence
    track: ConditionTrack
    foot_contact: np.ndarray
    fk_cache: object = field(default=None, repr=False, compare=False)


@dataclass
class OptimizerSettings:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    params: DenoiserParams
    log: list[dict[str, float]] = field(default_factory=list)


class Adam:
    def __init__(self, params: DenoiserParams, settings: OptimizerSettings):
        self.settings = settings
        self.m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays.items()}
        self.t = 0

    def step(self, params: DenoiserParams, grads: dict[str, np.ndarray]) -> None:
        s = self.settings
        self.t += 1
        bias1 = 1.0 - s.beta1**self.t
        bias2 = 1.0 - s.beta2**self.t
        for k, g in grads.items():
            self.m[k] = s.beta1 * self.m[k] + (1 - s.beta1) * g
            self.v[k] = s.beta2 * self.v[k] + (1 - s.beta2) * g * g
            params.arrays[k] -= s.lr * (self.m[k] / bias1) / (np.sqrt(self.v[k] / bias2) + s.eps)


@dataclass
class BatchItem:
    """One noised training example: which slice, at which timestep, with
    which noise draw, and whether its condition is dropped to the null."""

    slice: TrainSlice
    t: int
    noise: np.ndarray
    drop_condition: bool


def backward(
    params: DenoiserParams,
    batch: list[BatchItem],
    schedule: NoiseSchedule,
    skeleton: Skeleton,
    cello: CelloSpec,
    weights: LossWeights = LossWeights(),
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Gradients of the weighted total loss for a batch.

    Returns the batch-mean loss breakdown and per-parameter gradients
    summed over items in index order (sum reduction: duplicating an item
    doubles its gradient contribution).
    """
    if not batch:
        raise ShapeMismatch("empty batch")
    sums = LossBreakdown()
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    for item in batch:
        x0 = item.slice.motion.features
        x_t = q_sample(x0, item.t, item.noise, schedule)
        cond = None if item.drop_condition else item.slice.track.features
        out, tensors = forward_with_tape(params, x_t, item.t, cond)
        if item.slice.fk_cache is None:
            item.slice.fk_cache = make_bundle(x0, skeleton, cello.bow_length)
        breakdown, grad_pred = loss_total_grad(
            out.data,
            x0,
            item.slice.track,
            skeleton,
            cello,
            item.slice.foot_contact,
            weights,
            gt_bundle=item.slice.fk_cache,
        )
        if not np.isfinite(breakdown.total):
            raise NonFiniteActivation("loss went non-finite")
        out.backward(grad_pred)
        for name, tensor in tensors.items():
            if tensor.grad is not None:
                grads[name] += tensor.grad
        for f in LOG_COLUMNS[1:]:
            setattr(sums, f, getattr(sums, f) + getattr(breakdown, f))
    for f in LOG_COLUMNS[1:]:
        setattr(sums, f, getattr(sums, f) / len(batch))
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise NonFiniteActivation("gradient went non-finite")
    return sums, grads


def train(
    dataset: list[TrainSlice],
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    guidance: GuidanceConfig,
    skeleton: Skeleton,
    cello: CelloSpec,
    weights: LossWeights = LossWeights(),
    optimizer: OptimizerSettings = OptimizerSettings(),
    steps: int = 2000,
    batch_size: int = 8,
    seed: int = 0,
    log_every: int = 10,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 500,
) -> TrainResult:
    """Deterministic training run; returns final parameters and the loss log.

    Condition dropout follows the guidance config (the dropped path feeds
    the learned null embedding). On divergence the last good parameters
    are checkpointed (when a path is given) and NonFiniteActivation is
    re-raised.
    """
    if not dataset:
        raise ShapeMismatch("dataset is empty")
    for item in dataset:
        if len(item.motion) != len(item.track):
            raise ShapeMismatch("slice motion and track lengths disagree")
    params = DenoiserParams.initialize(config, seed=seed)
    adam = Adam(params, optimizer)
    rng = np.random.default_rng(seed)
    log: list[dict[str, float]] = []
    last_good = params.copy()
    try:
        for step in range(1, steps + 1):
            idx = rng.integers(0, len(dataset), size=batch_size)
            ts = rng.integers(1, schedule.timesteps + 1, size=batch_size)
            drops = rng.random(batch_size) < guidance.cond_dropout
            batch = []
            for j in range(batch_size):
                sl = dataset[int(idx[j])]
                noise = rng.standard_normal(sl.motion.features.shape)
                batch.append(BatchItem(sl, int(ts[j]), noise, bool(drops[j])))
            breakdown, grads = backward(params, batch, schedule, skeleton, cello, weights)
            adam.step(params, grads)
            if step % log_every == 0 or step == steps:
                row = {"step": float(step), **{k: getattr(breakdown, k) for k in LOG_COLUMNS[1:]}}
                log.append(row)
            if checkpoint_path is not None and (step % checkpoint_every == 0 or step == steps):
                write_checkpoint(checkpoint_path, params)
                last_good = params.copy()
    except NonFiniteActivation:
        if checkpoint_path is not None:
            write_checkpoint(checkpoint_path, last_good)
        raise
    return TrainResult(params=params, log=log)


def write_log(path: str | Path, log: list[dict[str, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in log:
            writer.writerow({k: repr(row[k]) for k in LOG_COLUMNS})


def slice_dataset(
    takes: list[tuple[MotionSequence, ConditionTrack, np.ndarray]],
    slice_frames: int = 150,
    hop_frames: int = 150,
) -> list[TrainSlice]:
    """Cut takes into fixed-length training slices; short remainders are
    padded by repeating the final frame."""
    out: list[TrainSlice] = []
    for motion, track, foot in takes:
        n = len(motion)
        starts = list(range(0, max(n - slice_frames, 0) + 1, hop_frames))
        if not starts or starts[-1] + slice_frames < n:
            starts.append(max(n - slice_frames, 0))
        for s in sorted(set(starts)):
            e = min(s + slice_frames, n)
            feats = motion.features[s:e]
            sub_track = track.slice(s, e)
            sub_foot = foot[s:e].copy()
            if e - s < slice_frames:
                reps = slice_frames - (e - s)
                feats = np.concatenate([feats, np.repeat(feats[-1:], reps, axis=0)])
                sub_track = sub_track.pad_to(slice_frames)
                sub_foot = np.concatenate([sub_foot, np.repeat(sub_foot[-1:], reps)])
            out.append(
                TrainSlice(
                    motion=MotionSequence(motion.fps, feats),
                    track=sub_track,
                    foot_contact=sub_foot,
                )
            )
    return out
