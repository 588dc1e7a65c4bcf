"""6D rotation representation and small rotation helpers.

A 6D rotation is the first two columns of a rotation matrix stored
column-major: a = [R00, R10, R20, R01, R11, R21]. Decoding runs
Gram-Schmidt on the two columns and completes the basis with a cross
product, so any pair of non-parallel columns maps to a proper rotation.
All functions accept stacked inputs (leading batch dimensions).
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotation, NotARotation

# Below this norm a column is considered collapsed and the decode fails.
_DEGENERATE_EPS = 1e-8


def rot6d_to_matrix(a: np.ndarray) -> np.ndarray:
    """Decode 6D features (..., 6) into rotation matrices (..., 3, 3).

    Raises DegenerateRotation if the first column has near-zero norm or the
    two columns are parallel after normalization.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != 6:
        raise DegenerateRotation(f"expected 6 features per rotation, got {a.shape[-1]}")
    c1 = a[..., 0:3]
    c2 = a[..., 3:6]

    n1 = np.linalg.norm(c1, axis=-1, keepdims=True)
    if np.any(n1 <= _DEGENERATE_EPS):
        raise DegenerateRotation("first 6D column has near-zero norm")
    b1 = c1 / n1

    n2 = np.linalg.norm(c2, axis=-1, keepdims=True)
    if np.any(n2 <= _DEGENERATE_EPS):
        raise DegenerateRotation("second 6D column has near-zero norm")
    c2n = c2 / n2
    # residual of the normalized second column against b1; parallel columns
    # leave nothing to orthonormalize
    resid = c2n - np.sum(b1 * c2n, axis=-1, keepdims=True) * b1
    if np.any(np.linalg.norm(resid, axis=-1) <= _DEGENERATE_EPS):
        raise DegenerateRotation("6D columns are parallel")

    w = c2 - np.sum(b1 * c2, axis=-1, keepdims=True) * b1
    b2 = w / np.linalg.norm(w, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(mat: np.ndarray) -> np.ndarray:
    """Encode rotation matrices (..., 3, 3) as 6D features (..., 6).

    Raises NotARotation unless the input is orthonormal with det +1
    within 1e-6.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[-2:] != (3, 3):
        raise NotARotation(f"expected (..., 3, 3) matrices, got {mat.shape}")
    eye = np.eye(3)
    gram_err = np.abs(np.swapaxes(mat, -1, -2) @ mat - eye).max(axis=(-1, -2))
    det_err = np.abs(np.linalg.det(mat) - 1.0)
    if np.any(gram_err > 1e-6) or np.any(det_err > 1e-6):
        raise NotARotation("matrix is not orthonormal with determinant +1")
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal rotation matrix taking direction u onto direction v.

    The twist about the target axis is left at zero. Near-antiparallel
    inputs rotate by pi about an arbitrary perpendicular axis.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    un = np.linalg.norm(u)
    vn = np.linalg.norm(v)
    if un <= _DEGENERATE_EPS or vn <= _DEGENERATE_EPS:
        raise DegenerateRotation("cannot orient a zero-length direction")
    u = u / un
    v = v / vn
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    c = float(np.dot(u, v))
    if s <= _DEGENERATE_EPS:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: pick any axis perpendicular to u
        helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(u, helper)
        axis /= np.linalg.norm(axis)
        return axis_angle_to_matrix(axis, np.pi)
    return axis_angle_to_matrix(axis / s, float(np.arctan2(s, c)))


def axis_angle_to_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula; the axis is normalized, the angle is in radians."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n <= _DEGENERATE_EPS:
        raise DegenerateRotation("rotation axis has near-zero norm")
    x, y, z = axis / n
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n rotation matrices uniformly (via unit quaternions), shape (n, 3, 3)."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((n, 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out
