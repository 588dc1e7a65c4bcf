"""Motion sequences: the 309-feature layout and bow endpoint computation.

A frame holds 51 joint rotations in 6D (306 values, skeleton feature
order) followed by a 3-vector bow direction, 309 features total. The bow
starts at the frog, anchored to the bowing hand: the mean of the PIP-DIP
midpoints of the middle finger, ring finger, and thumb. The tip is the
frog plus bow_length times the unit direction, so the bow is rigid by
definition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotation, ShapeMismatch
from .rotations import matrix_to_rot6d, rot6d_to_matrix
from .skeleton import N_ROTATED, Skeleton, end_site_positions, fk_world

FEATURE_DIM = 6 * N_ROTATED + 3  # 309
ROT_DIM = 6 * N_ROTATED  # 306


@dataclass
class MotionSequence:
    """F frames of 309 features at a fixed frame rate."""

    fps: float
    features: np.ndarray  # (F, 309) float64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != FEATURE_DIM:
            raise ShapeMismatch(f"expected (F, {FEATURE_DIM}) features, got {self.features.shape}")
        if self.fps <= 0:
            raise ShapeMismatch("fps must be positive")
        if self.features.shape[0] < 1:
            raise ShapeMismatch("a motion sequence needs at least one frame")
        if not np.all(np.isfinite(self.features)):
            raise ShapeMismatch("motion features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    def rot6d(self) -> np.ndarray:
        """Rotation features as (F, 51, 6)."""
        return self.features[:, :ROT_DIM].reshape(len(self), N_ROTATED, 6)

    def rotations(self) -> np.ndarray:
        """Decoded local rotation matrices (F, 51, 3, 3)."""
        return rot6d_to_matrix(self.rot6d())

    def bow_dir(self) -> np.ndarray:
        """Bow direction features (F, 3); not necessarily unit for raw output."""
        return self.features[:, ROT_DIM:]

    def copy(self) -> "MotionSequence":
        return MotionSequence(self.fps, self.features.copy())


def join_features(rot6d: np.ndarray, bow_dir: np.ndarray) -> np.ndarray:
    """Pack (F, 51, 6) rotations and (F, 3) directions into (F, 309)."""
    rot6d = np.asarray(rot6d, dtype=np.float64)
    bow_dir = np.asarray(bow_dir, dtype=np.float64)
    if rot6d.shape[1:] != (N_ROTATED, 6) or bow_dir.shape != (rot6d.shape[0], 3):
        raise ShapeMismatch("rotation and direction blocks disagree")
    return np.concatenate([rot6d.reshape(rot6d.shape[0], ROT_DIM), bow_dir], axis=1)


def split_features(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of join_features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"expected (F, {FEATURE_DIM}), got {features.shape}")
    return features[:, :ROT_DIM].reshape(-1, N_ROTATED, 6), features[:, ROT_DIM:]


def sequence_from_rotations(
    fps: float, rotations: np.ndarray, bow_dir: np.ndarray
) -> MotionSequence:
    """Build a sequence from local rotation matrices (F, 51, 3, 3) and directions."""
    return MotionSequence(fps, join_features(matrix_to_rot6d(rotations), bow_dir))


def renormalize_bow_dir(features: np.ndarray) -> np.ndarray:
    """Return features with the bow direction scaled to unit length per frame.

    Raw network output carries no norm guarantee; decoding renormalizes.
    Near-zero directions cannot be oriented and raise DegenerateRotation.
    """
    out = np.array(features, dtype=np.float64, copy=True)
    v = out[:, ROT_DIM:]
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= 1e-8):
        raise DegenerateRotation("bow direction has near-zero norm")
    out[:, ROT_DIM:] = v / norms[:, None]
    return out


def bow_endpoints(
    joint_positions: np.ndarray,
    bow_dir: np.ndarray,
    bow_length: float,
    skeleton: Skeleton,
) -> tuple[np.ndarray, np.ndarray]:
    """Frog and tip positions, each (F, 3).

    joint_positions: (F, 52, 3) FK output. The frog is the mean of the
    PIP-DIP midpoints of the three anchor fingers; the tip is exactly
    frog + bow_length * unit direction. A non-unit direction is
    renormalized with a warning.
    """
    joint_positions = np.asarray(joint_positions, dtype=np.float64)
    bow_dir = np.asarray(bow_dir, dtype=np.float64)
    if bow_length <= 0:
        raise ShapeMismatch("bow_length must be positive")
    pip = skeleton.anchor_joints("frog_pip")
    dip = skeleton.anchor_joints("frog_dip")
    if len(pip) != 3 or len(dip) != 3:
        raise ShapeMismatch("frog anchors must name three PIP and three DIP joints")
    mid = 0.5 * (joint_positions[:, pip] + joint_positions[:, dip])
    frog = mid.mean(axis=1)

    norms = np.linalg.norm(bow_dir, axis=-1)
    if np.any(norms <= 1e-8):
        raise DegenerateRotation("bow direction has near-zero norm")
    if np.any(np.abs(norms - 1.0) > 1e-6):
        warnings.warn("bow direction not unit length; renormalizing", stacklevel=2)
    unit = bow_dir / norms[..., None]
    tip = frog + bow_length * unit
    return frog, tip


def sequence_keypoints(
    seq: MotionSequence, skeleton: Skeleton, bow_length: float
) -> dict[str, np.ndarray]:
    """FK-derived keypoints of a whole sequence.

    Returns joints (F, 52, 3), end_sites (F, E, 3), frog (F, 3), tip (F, 3).
    """
    rot = seq.rotations()
    pos, world = fk_world(rot, skeleton)
    sites = end_site_positions(pos, world, skeleton)
    frog, tip = bow_endpoints(pos, seq.bow_dir(), bow_length, skeleton)
    return {"joints": pos, "end_sites": sites, "frog": frog, "tip": tip}
