"""Rigid alignment and closest-distance primitives.

Kabsch solves the weighted least-squares rotation via the covariance SVD
with reflection correction. Segment distances use the closed-form
clamped minimization; both the distance and the minimizing parameters
are returned because the contact losses and the bowing metrics need the
contact parameter, not just the gap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateConfiguration, ShapeMismatch, ZeroLengthSegment

_PARALLEL_EPS = 1e-12
_LENGTH_EPS = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    """x -> R @ x + t with R a proper rotation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


def _fit_rotation(p_c: np.ndarray, q_c: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Proper rotation maximizing sum_i w_i <R p_i, q_i> for centered points."""
    h = (p_c * w[:, None]).T @ q_c
    u, s, vt = np.linalg.svd(h)
    scale = max(s[0], _LENGTH_EPS)
    if s[1] / scale < 1e-9:
        raise DegenerateConfiguration("points are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


def kabsch(p: np.ndarray, q: np.ndarray, weights: np.ndarray | None = None) -> RigidTransform:
    """Least-squares rigid transform taking point set p onto q.

    Minimizes sum_i w_i * ||R p_i + t - q_i||^2; reflections are corrected
    through the sign of the smallest singular value. Needs at least three
    non-collinear points.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ShapeMismatch(f"point sets must both be (n, 3), got {p.shape} and {q.shape}")
    n = p.shape[0]
    if n < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
            raise ShapeMismatch("weights must be nonnegative with positive sum")
        w = w / w.sum()
    p_bar = w @ p
    q_bar = w @ q
    r = _fit_rotation(p - p_bar, q - q_bar, w)
    return RigidTransform(r, q_bar - r @ p_bar)


def fit_rotation_about(p: np.ndarray, q: np.ndarray, pivot: np.ndarray) -> np.ndarray:
    """Rotation about a fixed pivot taking p toward q (no translation fit)."""
    p = np.asarray(p, dtype=np.float64) - pivot
    q = np.asarray(q, dtype=np.float64) - pivot
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise ShapeMismatch("point sets must both be (n, 3)")
    if p.shape[0] < 2:
        raise DegenerateConfiguration("need at least 2 points besides the pivot")
    w = np.full(p.shape[0], 1.0 / p.shape[0])
    return _fit_rotation(p, q, w)


def point_segment_distance(
    p: np.ndarray, b0: np.ndarray, b1: np.ndarray
) -> tuple[float, float]:
    """Distance from point p to segment b0-b1 and the parameter of the foot."""
    p = np.asarray(p, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    d = b1 - b0
    dd = float(d @ d)
    if dd <= _LENGTH_EPS:
        raise ZeroLengthSegment("segment has zero length")
    u = float(np.clip((p - b0) @ d / dd, 0.0, 1.0))
    return float(np.linalg.norm(p - (b0 + u * d))), u


def segment_segment_distance(
    a0: np.ndarray, a1: np.ndarray, b0: np.ndarray, b1: np.ndarray
) -> tuple[float, float, float]:
    """Closest distance between segments a and b with minimizing parameters (s, u)."""
    a0 = np.asarray(a0, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    b0 = np.asarray(b0, dtype=np.float64)
    b1 = np.asarray(b1, dtype=np.float64)
    s, u = _segment_params(a0, a1, b0, b1)
    dist = float(np.linalg.norm((a0 + s * (a1 - a0)) - (b0 + u * (b1 - b0))))
    return dist, s, u


def _segment_params(a0, a1, b0, b1) -> tuple[float, float]:
    """Clamped closed-form closest-point parameters between two segments."""
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    if a <= _LENGTH_EPS or e <= _LENGTH_EPS:
        raise ZeroLengthSegment("segment has zero length")
    f = float(d2 @ r)
    c = float(d1 @ r)
    b = float(d1 @ d2)
    denom = a * e - b * b
    # parallel segments leave s free; anchor it and let u follow
    s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > _PARALLEL_EPS * a * e else 0.0
    u = (b * s + f) / e
    if u < 0.0:
        u = 0.0
        s = float(np.clip(-c / a, 0.0, 1.0))
    elif u > 1.0:
        u = 1.0
        s = float(np.clip((b - c) / a, 0.0, 1.0))
    return s, u


def segment_segment_distance_batch(
    a0: np.ndarray, a1: np.ndarray, b0: np.ndarray, b1: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized segment-segment distance over leading dimensions."""
    a0, a1, b0, b1 = (np.asarray(x, dtype=np.float64) for x in (a0, a1, b0, b1))
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    if np.any(a <= _LENGTH_EPS) or np.any(e <= _LENGTH_EPS):
        raise ZeroLengthSegment("segment has zero length")
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    denom = a * e - b * b
    parallel = denom <= _PARALLEL_EPS * a * e
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(parallel, 0.0, np.clip((b * f - c * e) / np.where(parallel, 1.0, denom), 0.0, 1.0))
    u = (b * s + f) / e
    low = u < 0.0
    high = u > 1.0
    s = np.where(low, np.clip(-c / a, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / a, 0.0, 1.0), s)
    u = np.clip(u, 0.0, 1.0)
    gap = (a0 + s[..., None] * d1) - (b0 + u[..., None] * d2)
    return np.linalg.norm(gap, axis=-1), s, u


@dataclass
class RawTake:
    """Un-normalized capture: per-frame named keypoints, optionally with
    motion features (309 per frame) and an f0 track carried alongside."""

    fps: float
    frames: list[dict[str, np.ndarray]]
    motion: np.ndarray | None = None  # (F, 309)
    f0: np.ndarray | None = None  # (F,)


def load_raw_take(path: str | Path) -> RawTake:
    """Read a raw take file.

    Accepts the bare form (a JSON array of frames, each mapping a landmark
    name to [x, y, z] in meters) or an object {"fps", "frames", "motion",
    "f0"} where motion rows are full feature vectors.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, list):
        frames = [{k: np.asarray(v, dtype=np.float64) for k, v in fr.items()} for fr in doc]
        return RawTake(fps=30.0, frames=frames)
    frames = [{k: np.asarray(v, dtype=np.float64) for k, v in fr.items()} for fr in doc["frames"]]
    motion = np.asarray(doc["motion"], dtype=np.float64) if "motion" in doc else None
    f0 = np.asarray(doc["f0"], dtype=np.float64) if "f0" in doc else None
    return RawTake(fps=float(doc.get("fps", 30.0)), frames=frames, motion=motion, f0=f0)


@dataclass
class NormalizedTake:
    """Output of normalize_take: per-frame transforms, transformed keypoints,
    and the residual RMSD over the cello landmarks."""

    transforms: list[RigidTransform]
    frames: list[dict[str, np.ndarray]]
    rmsd: np.ndarray  # (F,)


def normalize_take(
    raw: RawTake, shared_landmarks: dict[str, np.ndarray], endpin_name: str = "endpin"
) -> NormalizedTake:
    """Align every frame's instrument onto the shared one.

    Per frame: translate so the endpin coincides with the shared endpin,
    then rotate about the endpin with the Kabsch fit of the remaining
    instrument landmarks. The same rigid transform is applied to every
    keypoint in the frame (the performer moves with the instrument).
    """
    if endpin_name not in shared_landmarks:
        raise DegenerateConfiguration(f"shared landmarks lack {endpin_name!r}")
    fit_names = sorted(n for n in shared_landmarks if n != endpin_name)
    shared_endpin = np.asarray(shared_landmarks[endpin_name], dtype=np.float64)
    shared_pts = np.array([shared_landmarks[n] for n in fit_names], dtype=np.float64)

    transforms: list[RigidTransform] = []
    frames_out: list[dict[str, np.ndarray]] = []
    rmsd = np.empty(len(raw.frames))
    for k, frame in enumerate(raw.frames):
        missing = [n for n in [endpin_name, *fit_names] if n not in frame]
        if missing:
            raise DegenerateConfiguration(f"frame {k} lacks landmark(s) {missing}")
        endpin = frame[endpin_name]
        pts = np.array([frame[n] for n in fit_names], dtype=np.float64) + (shared_endpin - endpin)
        try:
            rot = fit_rotation_about(pts, shared_pts, shared_endpin)
        except DegenerateConfiguration as exc:
            raise DegenerateConfiguration(f"frame {k}: {exc}") from exc
        # combined map x -> R (x + t_pin - pivot) + pivot = R x + (pivot - R endpin)
        transform = RigidTransform(rot, shared_endpin - rot @ endpin)
        aligned = {name: transform.apply(p) for name, p in frame.items()}
        resid = np.array([aligned[n] for n in fit_names]) - shared_pts
        rmsd[k] = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
        transforms.append(transform)
        frames_out.append(aligned)
    return NormalizedTake(transforms=transforms, frames=frames_out, rmsd=rmsd)
