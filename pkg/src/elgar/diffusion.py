"""Noise schedule, forward noising, guidance, sampling, and stitching.

The model predicts the clean signal (x0), never the noise; the implied
noise is derived where a sampler needs it. DDIM runs deterministically
(eta = 0) over an evenly spaced timestep subset. Long takes are produced
by sampling overlapping slices and blending each new slice onto the
accumulated output with linearly decaying weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BadOverlap, FpsMismatch, ModelFailure, ShapeMismatch
from .motion import MotionSequence

COSINE_OFFSET = 0.008
BETA_CLIP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Monotone noising constants indexed 0..T (alpha_bar[0] = 1)."""

    betas: np.ndarray  # (T+1,), betas[0] unused
    alphas: np.ndarray  # (T+1,)
    alpha_bars: np.ndarray  # (T+1,)

    @property
    def timesteps(self) -> int:
        return self.betas.size - 1

    def __post_init__(self):
        t = self.timesteps
        if t < 2:
            raise ShapeMismatch("schedule needs at least 2 timesteps")
        if self.alpha_bars[0] != 1.0:
            raise ShapeMismatch("alpha_bar at t=0 must be exactly 1")
        if np.any(self.betas[1:] <= 0) or np.any(self.betas[1:] >= 1):
            raise ShapeMismatch("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ShapeMismatch("alpha_bar must decrease strictly")


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 2.0
    cond_dropout: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ShapeMismatch("condition dropout must be a probability")


def cosine_schedule(timesteps: int = 1000) -> NoiseSchedule:
    """Squared-cosine noising: alpha_bar(t) = f(t)/f(0) with
    f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2), betas clipped at 0.999
    and alpha_bar rebuilt from the clipped betas."""
    if timesteps < 2:
        raise ShapeMismatch("timesteps must be at least 2")
    t = np.arange(timesteps + 1) / timesteps
    f = np.cos((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
    raw_bar = f / f[0]
    betas = np.zeros(timesteps + 1)
    betas[1:] = np.minimum(1.0 - raw_bar[1:] / raw_bar[:-1], BETA_CLIP)
    alphas = 1.0 - betas
    alpha_bars = np.empty(timesteps + 1)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(alphas[1:])
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def q_sample(x0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward noising: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ShapeMismatch("noise must match the sample shape")
    if not 0 <= t <= schedule.timesteps:
        raise ShapeMismatch(f"t must lie in [0, {schedule.timesteps}]")
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def invert_q_sample(
    x_t: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Exact inversion of q_sample given the same noise draw."""
    ab = schedule.alpha_bars[t]
    return (np.asarray(x_t) - np.sqrt(1.0 - ab) * np.asarray(noise)) / np.sqrt(ab)


def cfg_combine(out_cond: np.ndarray, out_uncond: np.ndarray, w: float) -> np.ndarray:
    """Classifier-free guidance: (1 + w) * conditional - w * unconditional."""
    out_cond = np.asarray(out_cond, dtype=np.float64)
    out_uncond = np.asarray(out_uncond, dtype=np.float64)
    if out_cond.shape != out_uncond.shape:
        raise ShapeMismatch("guidance operands must share a shape")
    return (1.0 + w) * out_cond - w * out_uncond


def ddim_timesteps(timesteps: int, steps: int) -> np.ndarray:
    """Evenly spaced sampling subset from T down to 1, inclusive of both."""
    if not 1 <= steps <= timesteps:
        raise ShapeMismatch("steps must lie in [1, T]")
    if steps == 1:
        return np.array([timesteps])
    ts = np.unique(np.round(np.linspace(1, timesteps, steps)).astype(np.int64))[::-1]
    return ts


ModelFn = Callable[[np.ndarray, int], np.ndarray]
"""A denoiser closure: (x_t, t) -> predicted x0 (conditioning baked in)."""


def _call_model(model: ModelFn, x_t: np.ndarray, t: int) -> np.ndarray:
    try:
        out = model(x_t, t)
    except Exception as exc:  # noqa: BLE001 - wrap for the sampling contract
        raise ModelFailure(f"denoiser failed at t={t}: {exc}") from exc
    out = np.asarray(out, dtype=np.float64)
    if out.shape != x_t.shape:
        raise ModelFailure(f"denoiser returned {out.shape}, expected {x_t.shape}")
    if not np.all(np.isfinite(out)):
        raise ModelFailure("denoiser returned non-finite values")
    return out


def ddim_sample(
    model: ModelFn,
    shape: tuple[int, int],
    schedule: NoiseSchedule,
    steps: int = 50,
    rng: np.random.Generator | None = None,
    x_t: np.ndarray | None = None,
) -> np.ndarray:
    """Deterministic DDIM (eta = 0) from pure noise to the predicted signal.

    The initial x_T comes from `rng` unless `x_t` is supplied. Each step
    re-derives the implied noise from the x0 prediction; the final output
    is the last x0 prediction itself.
    """
    if x_t is None:
        if rng is None:
            raise ShapeMismatch("ddim_sample needs either noise or a generator")
        x_t = rng.standard_normal(shape)
    x_t = np.asarray(x_t, dtype=np.float64)
    ts = ddim_timesteps(schedule.timesteps, steps)
    x0_hat = None
    for i, t in enumerate(ts):
        x0_hat = _call_model(model, x_t, int(t))
        t_next = int(ts[i + 1]) if i + 1 < ts.size else 0
        ab_t = schedule.alpha_bars[t]
        ab_n = schedule.alpha_bars[t_next]
        eps_hat = (x_t - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
        x_t = np.sqrt(ab_n) * x0_hat + np.sqrt(1.0 - ab_n) * eps_hat
    return x0_hat


def ddpm_step(
    model: ModelFn,
    x_t: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    noise: np.ndarray,
) -> np.ndarray:
    """One ancestral step: posterior mean from the x0 prediction plus
    sqrt(beta_tilde) noise; the t = 1 step is deterministic."""
    if not 1 <= t <= schedule.timesteps:
        raise ShapeMismatch("t out of range")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = _call_model(model, x_t, t)
    ab_t = schedule.alpha_bars[t]
    ab_prev = schedule.alpha_bars[t - 1]
    beta_t = schedule.betas[t]
    alpha_t = schedule.alphas[t]
    coef_x0 = np.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * x0_hat + coef_xt * x_t
    if t == 1:
        return mean
    beta_tilde = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return mean + np.sqrt(beta_tilde) * np.asarray(noise)


def stitch_long_form(segments: list[MotionSequence], overlap_s: float = 4.0) -> MotionSequence:
    """Blend overlapping slices into one take.

    Consecutive segments share overlap_s seconds of timeline. Inside each
    overlap the earlier material's weight decays linearly from 1 to 0
    (and the newcomer's rises symmetrically); outside, frames pass
    through untouched.
    """
    if not segments:
        raise BadOverlap("nothing to stitch")
    fps = segments[0].fps
    if any(s.fps != fps for s in segments):
        raise FpsMismatch("all segments must share the frame rate")
    if len(segments) == 1:
        return segments[0].copy()
    n_overlap = int(round(overlap_s * fps))
    if n_overlap < 2:
        raise BadOverlap("overlap must span at least 2 frames")
    out = segments[0].features.copy()
    ramp = np.linspace(1.0, 0.0, n_overlap)[:, None]
    for seg in segments[1:]:
        feats = seg.features
        if feats.shape[0] < n_overlap or out.shape[0] < n_overlap:
            raise BadOverlap("segment shorter than the overlap")
        blended = ramp * out[-n_overlap:] + (1.0 - ramp) * feats[:n_overlap]
        out = np.concatenate([out[:-n_overlap], blended, feats[n_overlap:]], axis=0)
    return MotionSequence(fps, out)


def slice_starts(total_frames: int, slice_len: int, hop: int) -> list[int]:
    """Start indices covering total_frames with fixed-length slices."""
    if total_frames <= slice_len:
        return [0]
    n = int(np.ceil((total_frames - slice_len) / hop)) + 1
    return [i * hop for i in range(n)]


def dropout_mask(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Per-item condition dropout decisions (True = drop to the null token)."""
    return rng.random(n) < p
