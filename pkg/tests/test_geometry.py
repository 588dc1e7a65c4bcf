import numpy as np
import pytest

from elgar.errors import DegenerateConfiguration, ZeroLengthSegment
from elgar.geometry import (
    RawTake,
    RigidTransform,
    kabsch,
    normalize_take,
    point_segment_distance,
    segment_segment_distance,
    segment_segment_distance_batch,
)
from elgar.rotations import axis_angle_to_matrix, random_rotations

TRIANGLE = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def rmsd(t: RigidTransform, p, q):
    return np.sqrt(np.mean(np.sum((t.apply(p) - q) ** 2, axis=1)))


def test_kabsch_identity():
    t = kabsch(TRIANGLE, TRIANGLE)
    assert np.allclose(t.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(t.translation, 0.0, atol=1e-12)
    assert rmsd(t, TRIANGLE, TRIANGLE) < 1e-12


def test_kabsch_recovers_constructed_transform():
    r0 = axis_angle_to_matrix([0, 0, 1], np.deg2rad(30))
    t0 = np.array([1.0, 2.0, 3.0])
    q = TRIANGLE @ r0.T + t0
    t = kabsch(TRIANGLE, q)
    assert np.abs(t.rotation - r0).max() < 1e-9
    assert np.abs(t.translation - t0).max() < 1e-9


def test_kabsch_beats_random_rotations():
    # optimality oracle: no random rotation (with its best translation)
    # does better than the closed form on noisy data
    rng = np.random.default_rng(17)
    p = rng.standard_normal((8, 3))
    r0 = random_rotations(1, rng)[0]
    q = p @ r0.T + rng.standard_normal(3) + 1e-3 * rng.standard_normal((8, 3))
    best = kabsch(p, q)
    best_val = rmsd(best, p, q)
    trials = random_rotations(20000, rng)
    centered_p = p - p.mean(axis=0)
    centered_q = q - q.mean(axis=0)
    vals = np.sqrt(np.mean(np.sum((centered_p @ np.swapaxes(trials, 1, 2) - centered_q) ** 2, axis=2), axis=1))
    assert best_val <= vals.min() + 1e-15


def test_kabsch_weighted_prioritizes_points():
    rng = np.random.default_rng(2)
    p = rng.standard_normal((6, 3))
    r0 = random_rotations(1, rng)[0]
    q = p @ r0.T
    q[5] += 0.5  # outlier
    w = np.array([1.0, 1, 1, 1, 1, 1e-9])
    t = kabsch(p, q, weights=w)
    assert np.abs(t.rotation - r0).max() < 1e-6


def test_kabsch_conjugation_consistency():
    # transforming both point sets by a common rigid map conjugates the optimum
    rng = np.random.default_rng(21)
    p = rng.standard_normal((7, 3))
    q = rng.standard_normal((7, 3))
    g_r = random_rotations(1, rng)[0]
    g_t = rng.standard_normal(3)
    t = kabsch(p, q)
    tg = kabsch(p @ g_r.T + g_t, q @ g_r.T + g_t)
    conj = g_r @ t.rotation @ g_r.T
    assert np.abs(tg.rotation - conj).max() < 1e-9
    assert np.abs(tg.translation - (g_r @ t.translation + g_t - conj @ g_t)).max() < 1e-9


def test_kabsch_degenerate_collinear():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    with pytest.raises(DegenerateConfiguration):
        kabsch(p, p)


def test_segment_intersecting():
    d, s, u = segment_segment_distance([0, 0, 0], [1, 0, 0], [0.5, -1, 0], [0.5, 1, 0])
    assert d < 1e-12
    assert np.isclose(s, 0.5) and np.isclose(u, 0.5)


def test_segment_parallel_offset():
    d, _, _ = segment_segment_distance([0, 0, 0], [1, 0, 0], [0, 0.005, 0], [1, 0.005, 0])
    assert np.isclose(d, 0.005)


def test_segment_skew_case():
    a0, a1 = np.array([0.0, 0, 0]), np.array([1.0, 0, 0])
    b0, b1 = np.array([0.5, 1, -1.0]), np.array([0.5, 1, 1.0])
    d, s, u = segment_segment_distance(a0, a1, b0, b1)
    assert np.isclose(d, 1.0, atol=1e-12)
    assert np.isclose(s, 0.5) and np.isclose(u, 0.5)
    # dense sampling oracle
    ss = np.linspace(0, 1, 2000)
    uu = np.linspace(0, 1, 2000)
    pa = a0 + ss[:, None] * (a1 - a0)
    pb = b0 + uu[:, None] * (b1 - b0)
    d2 = np.sum(pa[:, None, :] ** 2 + pb[None, :, :] ** 2 - 2 * pa[:, None, :] * pb[None, :, :], axis=2)
    assert abs(np.sqrt(d2.min()) - d) < 1e-4


def test_segment_distance_random_vs_sampling_oracle(rng):
    for _ in range(50):
        a0, a1, b0, b1 = rng.standard_normal((4, 3))
        d, s, u = segment_segment_distance(a0, a1, b0, b1)
        ss = np.linspace(0, 1, 500)
        pa = a0 + ss[:, None] * (a1 - a0)
        # exact over u for each sampled s keeps the oracle sharp
        db = b1 - b0
        t = np.clip((pa - b0) @ db / (db @ db), 0, 1)
        gaps = np.linalg.norm(pa - (b0 + t[:, None] * db), axis=1)
        # closed form can never beat the sampled upper bound, and must come close
        assert d <= gaps.min() + 1e-12
        assert gaps.min() - d < 1e-5


def test_segment_symmetry(rng):
    for _ in range(25):
        a0, a1, b0, b1 = rng.standard_normal((4, 3))
        d1, s1, u1 = segment_segment_distance(a0, a1, b0, b1)
        d2, s2, u2 = segment_segment_distance(b0, b1, a0, a1)
        assert np.isclose(d1, d2, atol=1e-12)
        assert np.isclose(s1, u2, atol=1e-9) and np.isclose(u1, s2, atol=1e-9)


def test_segment_batch_matches_scalar(rng):
    pts = rng.standard_normal((40, 4, 3))
    d, s, u = segment_segment_distance_batch(pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3])
    for i in range(40):
        di, si, ui = segment_segment_distance(*pts[i])
        assert np.isclose(d[i], di) and np.isclose(s[i], si) and np.isclose(u[i], ui)


def test_zero_length_segment():
    with pytest.raises(ZeroLengthSegment):
        segment_segment_distance([0, 0, 0], [0, 0, 0], [1, 0, 0], [2, 0, 0])
    with pytest.raises(ZeroLengthSegment):
        point_segment_distance([1, 1, 1], [0, 0, 0], [0, 0, 0])


def test_point_on_segment():
    d, u = point_segment_distance([0.25, 0, 0], [0, 0, 0], [1, 0, 0])
    assert d < 1e-12 and np.isclose(u, 0.25)


def test_point_above_midpoint():
    d, u = point_segment_distance([0, 1, 0], [-1, 0, 0], [1, 0, 0])
    assert np.isclose(d, 1.0) and np.isclose(u, 0.5)


def test_point_beyond_endpoint_clamps():
    d, u = point_segment_distance([2, 1, 0], [-1, 0, 0], [1, 0, 0])
    assert np.isclose(d, np.sqrt(2.0)) and np.isclose(u, 1.0)


def _demo_landmarks():
    return {
        "endpin": np.array([0.0, 0.0, 0.0]),
        "bridge_l": np.array([-0.2, 0.6, 0.1]),
        "bridge_r": np.array([0.2, 0.6, 0.1]),
        "scroll": np.array([0.0, 1.4, -0.1]),
    }


def test_normalize_identity_take():
    lm = _demo_landmarks()
    take = RawTake(fps=30.0, frames=[dict(lm) for _ in range(3)])
    out = normalize_take(take, lm)
    for t in out.transforms:
        assert np.abs(t.rotation - np.eye(3)).max() < 1e-9
        assert np.abs(t.translation).max() < 1e-9
    assert out.rmsd.max() < 1e-12


def test_normalize_restores_rotated_take():
    lm = _demo_landmarks()
    rot = axis_angle_to_matrix([0, 1, 0], np.deg2rad(10))
    performer = {"left_wrist": np.array([0.3, 0.8, 0.2])}
    frame = {n: rot @ p for n, p in {**lm, **performer}.items()}
    out = normalize_take(RawTake(30.0, [frame]), lm)
    assert out.rmsd[0] < 1e-9
    for n, p in lm.items():
        assert np.abs(out.frames[0][n] - p).max() < 1e-9
    # the human keypoint rotates back by the inverse
    assert np.abs(out.frames[0]["left_wrist"] - performer["left_wrist"]).max() < 1e-9


def test_normalize_two_frames_different_offsets():
    lm = _demo_landmarks()
    r1 = axis_angle_to_matrix([0, 0, 1], 0.2)
    r2 = axis_angle_to_matrix([1, 0, 0], -0.3)
    f1 = {n: r1 @ p + np.array([0.5, 0.0, -0.2]) for n, p in lm.items()}
    f2 = {n: r2 @ p + np.array([-0.1, 0.3, 0.0]) for n, p in lm.items()}
    out = normalize_take(RawTake(30.0, [f1, f2]), lm)
    assert not np.allclose(out.transforms[0].rotation, out.transforms[1].rotation)
    for fr in out.frames:
        for n, p in lm.items():
            assert np.abs(fr[n] - p).max() < 1e-9


def test_normalize_is_idempotent():
    lm = _demo_landmarks()
    rot = axis_angle_to_matrix([1, 2, 3], 0.4)
    frame = {n: rot @ p + np.array([0.2, -0.1, 0.6]) for n, p in lm.items()}
    once = normalize_take(RawTake(30.0, [frame]), lm)
    twice = normalize_take(RawTake(30.0, once.frames), lm)
    assert np.abs(twice.transforms[0].rotation - np.eye(3)).max() < 1e-9
    assert np.abs(twice.transforms[0].translation).max() < 1e-9


def test_normalize_missing_landmark():
    lm = _demo_landmarks()
    frame = dict(lm)
    del frame["endpin"]
    with pytest.raises(DegenerateConfiguration, match="endpin"):
        normalize_take(RawTake(30.0, [frame]), lm)
