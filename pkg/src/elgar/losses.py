"""Training losses with analytic gradients.

Seven terms: the plain feature reconstruction, four geometric losses
(position, foot contact, rotation velocity, position velocity), and the
two interactive contact losses tying the hand and the bow to the
instrument. Every term returns a scalar; the *_grad variants also return
the gradient with respect to the predicted feature array (F, 309),
computed by reverse accumulation through the forward kinematics and the
6D decoding. Contact terms are gated per frame by the voicing indicator
(f0 > 0) and are zero on unvoiced frames by construction.

Conventions: contact distances are in meters. The bow used by the
position-velocity and contact terms is the decoded one: the direction
features are normalized to unit length (with a small norm floor so early
training cannot blow the gradient up), so the losses optimize exactly
the geometry the metrics later measure.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .cello import CelloSpec
from .conditions import ConditionTrack
from .errors import MissingAnnotation, ShapeMismatch
from .geometry import segment_segment_distance_batch
from .motion import FEATURE_DIM, ROT_DIM, MotionSequence
from .skeleton import N_JOINTS, N_ROTATED, Skeleton, end_site_positions, fk_world

DEFAULT_BOW_LENGTH = 0.71
# below this norm the direction is scaled as if it had the floor norm,
# bounding the normalization gradient early in training
_BOW_NORM_FLOOR = 0.05


@dataclass(frozen=True)
class LossWeights:
    simple: float = 1.0
    pos: float = 1.0
    foot: float = 1.0
    rotvel: float = 1.0
    posvel: float = 1.0
    hand: float = 10.0
    bow: float = 10.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossBreakdown:
    simple: float = 0.0
    pos: float = 0.0
    foot: float = 0.0
    rotvel: float = 0.0
    posvel: float = 0.0
    hand: float = 0.0
    bow: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _features_of(x) -> np.ndarray:
    feats = x.features if isinstance(x, MotionSequence) else np.asarray(x, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"expected (F, {FEATURE_DIM}) features, got {feats.shape}")
    return feats


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# 6D decode with gradient


def _rot6d_forward(r6: np.ndarray) -> tuple[np.ndarray, dict]:
    """Gram-Schmidt decode of (F, J, 6) keeping intermediates for backward."""
    u = r6[..., 0:3]
    v = r6[..., 3:6]
    n1 = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(n1 <= 1e-8):
        raise ShapeMismatch("degenerate rotation features (zero first column)")
    b1 = u / n1
    proj = np.sum(b1 * v, axis=-1, keepdims=True)
    w = v - proj * b1
    n2 = np.linalg.norm(w, axis=-1, keepdims=True)
    if np.any(n2 <= 1e-8):
        raise ShapeMismatch("degenerate rotation features (parallel columns)")
    b2 = w / n2
    b3 = np.cross(b1, b2)
    rot = np.stack([b1, b2, b3], axis=-1)
    return rot, {"b1": b1, "b2": b2, "n1": n1, "n2": n2, "v": v}


def _rot6d_backward(grad_rot: np.ndarray, cache: dict) -> np.ndarray:
    """Gradient of the decode: (F, J, 3, 3) cotangent -> (F, J, 6)."""
    b1, b2, n1, n2, v = cache["b1"], cache["b2"], cache["n1"], cache["n2"], cache["v"]
    g1 = grad_rot[..., :, 0]
    g2 = grad_rot[..., :, 1]
    g3 = grad_rot[..., :, 2]
    # b3 = b1 x b2
    gb1 = g1 + np.cross(b2, g3)
    gb2 = g2 + np.cross(g3, b1)
    # b2 = w / ||w||
    gw = (gb2 - np.sum(gb2 * b2, axis=-1, keepdims=True) * b2) / n2
    # w = v - (b1 . v) b1
    gv = gw - np.sum(b1 * gw, axis=-1, keepdims=True) * b1
    dot_b1v = np.sum(b1 * v, axis=-1, keepdims=True)
    gb1 = gb1 - np.sum(gw * b1, axis=-1, keepdims=True) * v - dot_b1v * gw
    # b1 = u / ||u||
    gu = (gb1 - np.sum(gb1 * b1, axis=-1, keepdims=True) * b1) / n1
    return np.concatenate([gu, gv], axis=-1)


# ---------------------------------------------------------------------------
# FK with reverse accumulation


class _FkCache:
    def __init__(self, rot, pos, world, skeleton: Skeleton):
        self.rot = rot
        self.pos = pos
        self.world = world
        self.skeleton = skeleton


def _fk_forward(rot: np.ndarray, skeleton: Skeleton) -> _FkCache:
    pos, world = fk_world(rot, skeleton)
    return _FkCache(rot, pos, world, skeleton)


def _fk_backward(
    cache: _FkCache, grad_pos: np.ndarray, grad_sites: np.ndarray | None = None
) -> np.ndarray:
    """Cotangents on joint (and end-site) positions -> (F, 51, 3, 3) on rotations."""
    sk = cache.skeleton
    f = cache.pos.shape[0]
    g_pos = grad_pos.copy()
    g_world = np.zeros((f, N_JOINTS, 3, 3))
    if grad_sites is not None:
        for e, p in enumerate(sk.end_site_parents):
            g_pos[:, p] += grad_sites[:, e]
            g_world[:, p] += np.einsum("fi,j->fij", grad_sites[:, e], sk.end_site_offsets[e])
    g_rot = np.zeros((f, N_ROTATED, 3, 3))
    for i in range(N_JOINTS - 1, 0, -1):
        p = sk.parents[i]
        g_pos[:, p] += g_pos[:, i]
        g_world[:, p] += np.einsum("fi,j->fij", g_pos[:, i], sk.offsets[i])
        g_world[:, p] += np.einsum("fij,fkj->fik", g_world[:, i], cache.rot[:, i - 1])
        g_rot[:, i - 1] = np.einsum("fji,fjk->fik", cache.world[:, p], g_world[:, i])
    return g_rot


# ---------------------------------------------------------------------------
# shared prediction-side bundle


class _Bundle:
    """Forward products of one feature array plus gradient accumulators."""

    def __init__(self, feats: np.ndarray, skeleton: Skeleton, bow_length: float):
        self.feats = feats
        self.skeleton = skeleton
        self.bow_length = bow_length
        self.n = feats.shape[0]
        r6 = feats[:, :ROT_DIM].reshape(self.n, N_ROTATED, 6)
        self.rotmat, self._rot_cache = _rot6d_forward(r6)
        self.fk = _fk_forward(self.rotmat, skeleton)
        self.sites = end_site_positions(self.fk.pos, self.fk.world, skeleton)
        self.v_raw = feats[:, ROT_DIM:]
        norms = np.linalg.norm(self.v_raw, axis=1, keepdims=True)
        self._v_scale = np.maximum(norms, _BOW_NORM_FLOOR)
        self.v_unit = self.v_raw / self._v_scale
        self._v_floored = norms[:, 0] < _BOW_NORM_FLOOR
        pip = skeleton.anchor_joints("frog_pip")
        dip = skeleton.anchor_joints("frog_dip")
        self.frog_joints = pip + dip
        self.frog = 0.5 * (
            self.fk.pos[:, pip].mean(axis=1) + self.fk.pos[:, dip].mean(axis=1)
        )
        self.tip = self.frog + bow_length * self.v_unit
        # accumulators
        self.g_pos = np.zeros_like(self.fk.pos)
        self.g_sites = np.zeros_like(self.sites)
        self.g_v = np.zeros_like(self.v_raw)
        self.g_feats_direct = np.zeros_like(feats)

    def add_frog_grad(self, g: np.ndarray) -> None:
        for j in self.frog_joints:
            self.g_pos[:, j] += g / 6.0

    def add_tip_grad(self, g: np.ndarray) -> None:
        self.add_frog_grad(g)
        # through the normalization: J = (I - v v^T) / scale above the floor,
        # a plain 1/floor scaling below it
        gv = self.bow_length * g
        proj = np.where(
            self._v_floored[:, None],
            gv,
            gv - np.sum(gv * self.v_unit, axis=1, keepdims=True) * self.v_unit,
        )
        self.g_v += proj / self._v_scale

    def gradient(self) -> np.ndarray:
        g_rot = _fk_backward(self.fk, self.g_pos, self.g_sites)
        g_r6 = _rot6d_backward(g_rot, self._rot_cache)
        out = self.g_feats_direct.copy()
        out[:, :ROT_DIM] += g_r6.reshape(self.n, ROT_DIM)
        out[:, ROT_DIM:] += self.g_v
        return out


# ---------------------------------------------------------------------------
# simple reconstruction


def loss_simple(pred, gt) -> float:
    return loss_simple_grad(pred, gt)[0]


def loss_simple_grad(pred, gt) -> tuple[float, np.ndarray]:
    p = _features_of(pred)
    g = _features_of(gt)
    _check_same_shape(p, g)
    delta = p - g
    value = float(np.mean(delta**2))
    return value, 2.0 * delta / delta.size


# ---------------------------------------------------------------------------
# geometric losses


def _keypoints(bundle: _Bundle) -> np.ndarray:
    """Eq-style keypoint stack: 52 joints plus the two bow endpoints."""
    return np.concatenate(
        [bundle.fk.pos, bundle.frog[:, None, :], bundle.tip[:, None, :]], axis=1
    )


def loss_geometric(
    pred,
    gt,
    skeleton: Skeleton,
    foot_contact: np.ndarray,
    bow_length: float = DEFAULT_BOW_LENGTH,
) -> tuple[float, float, float, float]:
    out = loss_geometric_grad(pred, gt, skeleton, foot_contact, bow_length)
    return out[0]


def loss_geometric_grad(
    pred,
    gt,
    skeleton: Skeleton,
    foot_contact: np.ndarray,
    bow_length: float = DEFAULT_BOW_LENGTH,
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
    pred_bundle: _Bundle | None = None,
    gt_bundle: _Bundle | None = None,
    accumulate: bool = False,
) -> tuple[tuple[float, float, float, float], np.ndarray | None]:
    """(pos, foot, rotvel, posvel) and the gradient of their weighted sum.

    When `accumulate` is set the gradients are added into pred_bundle and
    the caller finalizes; otherwise a standalone gradient array returns.
    """
    p = _features_of(pred)
    g = _features_of(gt)
    _check_same_shape(p, g)
    foot_contact = np.asarray(foot_contact, dtype=bool)
    if foot_contact.shape != (p.shape[0],):
        raise ShapeMismatch("foot contact labels must be one flag per frame")
    bp = pred_bundle if pred_bundle is not None else _Bundle(p, skeleton, bow_length)
    bg = gt_bundle if gt_bundle is not None else _Bundle(g, skeleton, bow_length)
    n = bp.n
    w_pos, w_foot, w_rotvel, w_posvel = weights

    # position: MSE over the 52 joint positions
    dpos = bp.fk.pos - bg.fk.pos
    l_pos = float(np.mean(dpos**2))
    bp.g_pos += w_pos * 2.0 * dpos / dpos.size

    # foot contact: mean over labeled frames of summed squared foot velocities
    feet = skeleton.anchor_joints("feet")
    l_foot = 0.0
    if n >= 2:
        labels = foot_contact[: n - 1]
        m = int(labels.sum())
        if m > 0:
            vel = bp.fk.pos[1:, feet] - bp.fk.pos[:-1, feet]  # (n-1, feet, 3)
            sq = np.sum(vel**2, axis=(1, 2))
            l_foot = float(sq[labels].sum() / m)
            g_vel = np.zeros_like(vel)
            g_vel[labels] = 2.0 * vel[labels] / m
            scaled = w_foot * g_vel
            for a, j in enumerate(feet):
                bp.g_pos[1:, j] += scaled[:, a]
                bp.g_pos[:-1, j] -= scaled[:, a]

    # rotation velocity: MSE of frame differences of the 306 rotation features
    l_rotvel = 0.0
    if n >= 2:
        dr_p = p[1:, :ROT_DIM] - p[:-1, :ROT_DIM]
        dr_g = g[1:, :ROT_DIM] - g[:-1, :ROT_DIM]
        diff = dr_p - dr_g
        l_rotvel = float(np.mean(diff**2))
        gd = w_rotvel * 2.0 * diff / diff.size
        bp.g_feats_direct[1:, :ROT_DIM] += gd
        bp.g_feats_direct[:-1, :ROT_DIM] -= gd

    # position velocity: mean over frame pairs of the squared norm of the
    # keypoint-delta mismatch (joints plus bow endpoints)
    l_posvel = 0.0
    if n >= 2:
        kp_p = _keypoints(bp)
        kp_g = _keypoints(bg)
        dv = (kp_p[1:] - kp_p[:-1]) - (kp_g[1:] - kp_g[:-1])
        l_posvel = float(np.sum(dv**2) / (n - 1))
        gdv = w_posvel * 2.0 * dv / (n - 1)
        g_kp = np.zeros_like(kp_p)
        g_kp[1:] += gdv
        g_kp[:-1] -= gdv
        bp.g_pos += g_kp[:, :N_JOINTS]
        bp.add_frog_grad(g_kp[:, N_JOINTS])
        bp.add_tip_grad(g_kp[:, N_JOINTS + 1])

    values = (l_pos, l_foot, l_rotvel, l_posvel)
    if accumulate:
        return values, None
    return values, bp.gradient()


# ---------------------------------------------------------------------------
# interactive contact losses


def _require_annotations(cond: ConditionTrack, n: int) -> np.ndarray:
    if len(cond) != n:
        raise ShapeMismatch("condition track and motion disagree in length")
    voiced = cond.voiced
    if np.any(voiced & ~cond.annotated):
        raise MissingAnnotation("voiced frames lack contact annotations")
    return voiced


def loss_hicl(pred, cond: ConditionTrack, skeleton: Skeleton, cello: CelloSpec) -> float:
    return loss_hicl_grad(pred, cond, skeleton, cello)[0]


def loss_hicl_grad(
    pred,
    cond: ConditionTrack,
    skeleton: Skeleton,
    cello: CelloSpec,
    weight: float = 1.0,
    pred_bundle: _Bundle | None = None,
    accumulate: bool = False,
) -> tuple[float, np.ndarray | None]:
    """Hand contact loss: on voiced frames the note finger's squared
    tip-to-contact distance, plus squared deviations of the other
    fingertips' distances from their recorded values. Open strings have
    no note finger, so all four fingertips fall in the second group."""
    p = _features_of(pred)
    bp = pred_bundle if pred_bundle is not None else _Bundle(p, skeleton, DEFAULT_BOW_LENGTH)
    voiced = _require_annotations(cond, bp.n)
    n_voiced = int(voiced.sum())
    if n_voiced == 0:
        return 0.0, (None if accumulate else np.zeros_like(p))

    tips_idx = skeleton.anchor_end_sites("left_fingertips")
    tips = bp.sites[:, tips_idx]  # (F, 4, 3)
    delta = tips - cond.contact[:, None, :]  # (F, 4, 3)
    dist = np.linalg.norm(delta, axis=2)  # (F, 4)

    finger = cond.note_finger  # (F,), -1 = none
    note_mask = np.zeros_like(dist, dtype=bool)
    rows = np.where(voiced & (finger >= 0))[0]
    note_mask[rows, finger[rows]] = True
    others_mask = voiced[:, None] & cond.annotated[:, None] & ~note_mask

    dev = dist - cond.d_cp
    value = float((np.sum(dist[note_mask] ** 2) + np.sum(dev[others_mask] ** 2)) / n_voiced)

    g_tips = np.zeros_like(delta)
    g_tips[note_mask] = 2.0 * delta[note_mask] / n_voiced
    safe = np.where(dist > 1e-12, dist, 1.0)
    coeff = np.where(others_mask, 2.0 * dev / safe / n_voiced, 0.0)
    g_tips += coeff[:, :, None] * delta
    for a, e in enumerate(tips_idx):
        bp.g_sites[:, e] += weight * g_tips[:, a]
    if accumulate:
        return value, None
    return value, bp.gradient()


def loss_bicl(
    pred,
    cond: ConditionTrack,
    skeleton: Skeleton,
    cello: CelloSpec,
) -> float:
    return loss_bicl_grad(pred, cond, skeleton, cello)[0]


def loss_bicl_grad(
    pred,
    cond: ConditionTrack,
    skeleton: Skeleton,
    cello: CelloSpec,
    weight: float = 1.0,
    pred_bundle: _Bundle | None = None,
    accumulate: bool = False,
) -> tuple[float, np.ndarray | None]:
    """Bow contact loss: on voiced frames the squared bow-to-string
    distance plus squared deviations of the frog and tip distances to the
    activating string from their recorded values."""
    p = _features_of(pred)
    bp = pred_bundle if pred_bundle is not None else _Bundle(p, skeleton, cello.bow_length)
    voiced = _require_annotations(cond, bp.n)
    rows = np.where(voiced)[0]
    n_voiced = rows.size
    if n_voiced == 0:
        return 0.0, (None if accumulate else np.zeros_like(p))

    bridges = np.array([s.bridge for s in cello.strings])
    nuts = np.array([s.nut for s in cello.strings])
    si = cond.string_index[rows]
    seg0 = np.where(cond.is_open[rows, None], nuts[si], cond.contact[rows])
    seg1 = bridges[si]
    frog = bp.frog[rows]
    tip = bp.tip[rows]

    # term 1: squared segment-segment distance, gradient via the minimizer
    d1 = tip - frog
    d2 = seg1 - seg0
    dist, s_par, u_par = segment_segment_distance_batch(frog, tip, seg0, seg1)
    gap = (frog + s_par[:, None] * d1) - (seg0 + u_par[:, None] * d2)
    term1 = float(np.sum(dist**2) / n_voiced)
    g_gap = 2.0 * gap / n_voiced
    g_frog_rows = g_gap * (1.0 - s_par[:, None])
    g_tip_rows = g_gap * s_par[:, None]

    # term 2: endpoint distances to the activating string vs their targets
    term2 = 0.0
    for e, pt in enumerate((frog, tip)):
        t_par = np.clip(
            np.einsum("fi,fi->f", pt - seg0, d2) / np.einsum("fi,fi->f", d2, d2), 0.0, 1.0
        )
        off = pt - (seg0 + t_par[:, None] * d2)
        d_hat = np.linalg.norm(off, axis=1)
        dev = d_hat - cond.d_ends[rows, e]
        term2 += float(np.sum(dev**2) / n_voiced)
        safe = np.where(d_hat > 1e-12, d_hat, 1.0)
        g_pt = (2.0 * dev / safe / n_voiced)[:, None] * off
        if e == 0:
            g_frog_rows = g_frog_rows + g_pt
        else:
            g_tip_rows = g_tip_rows + g_pt

    value = term1 + term2
    g_frog = np.zeros((bp.n, 3))
    g_tip = np.zeros((bp.n, 3))
    g_frog[rows] = g_frog_rows
    g_tip[rows] = g_tip_rows
    bp.add_frog_grad(weight * g_frog)
    bp.add_tip_grad(weight * g_tip)
    if accumulate:
        return value, None
    return value, bp.gradient()


# ---------------------------------------------------------------------------
# weighted total


def loss_total(
    pred,
    gt,
    cond: ConditionTrack,
    skeleton: Skeleton,
    cello: CelloSpec,
    foot_contact: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    return loss_total_grad(pred, gt, cond, skeleton, cello, foot_contact, weights)[0]


def make_bundle(features, skeleton: Skeleton, bow_length: float) -> "_Bundle":
    """Precompute the FK products of a feature array (cacheable for ground
    truth, whose side never accumulates gradients)."""
    return _Bundle(_features_of(features), skeleton, bow_length)


def loss_total_grad(
    pred,
    gt,
    cond: ConditionTrack,
    skeleton: Skeleton,
    cello: CelloSpec,
    foot_contact: np.ndarray,
    weights: LossWeights = LossWeights(),
    gt_bundle: "_Bundle | None" = None,
) -> tuple[LossBreakdown, np.ndarray]:
    """All loss components and the gradient of the weighted total.

    One FK pass is shared across the position, velocity, and contact
    terms; the returned gradient is d(total)/d(pred features). A cached
    gt_bundle (from make_bundle) skips the ground-truth FK.
    """
    p = _features_of(pred)
    g = _features_of(gt)
    _check_same_shape(p, g)
    need_geo = any((weights.pos, weights.foot, weights.rotvel, weights.posvel))
    need_contact = weights.hand != 0.0 or weights.bow != 0.0
    need_fk = need_geo or need_contact
    bp = _Bundle(p, skeleton, cello.bow_length) if need_fk else None
    bg = None
    if need_geo:
        bg = gt_bundle if gt_bundle is not None else _Bundle(g, skeleton, cello.bow_length)

    l_simple, g_simple = loss_simple_grad(p, g)
    l_pos = l_foot = l_rotvel = l_posvel = l_hand = l_bow = 0.0
    if need_geo:
        (l_pos, l_foot, l_rotvel, l_posvel), _ = loss_geometric_grad(
            p,
            g,
            skeleton,
            foot_contact,
            cello.bow_length,
            weights=(weights.pos, weights.foot, weights.rotvel, weights.posvel),
            pred_bundle=bp,
            gt_bundle=bg,
            accumulate=True,
        )
    if weights.hand != 0.0:
        l_hand, _ = loss_hicl_grad(
            p, cond, skeleton, cello, weight=weights.hand, pred_bundle=bp, accumulate=True
        )
    if weights.bow != 0.0:
        l_bow, _ = loss_bicl_grad(
            p, cond, skeleton, cello, weight=weights.bow, pred_bundle=bp, accumulate=True
        )
    total = (
        weights.simple * l_simple
        + weights.pos * l_pos
        + weights.foot * l_foot
        + weights.rotvel * l_rotvel
        + weights.posvel * l_posvel
        + weights.hand * l_hand
        + weights.bow * l_bow
    )
    breakdown = LossBreakdown(
        simple=l_simple,
        pos=l_pos,
        foot=l_foot,
        rotvel=l_rotvel,
        posvel=l_posvel,
        hand=l_hand,
        bow=l_bow,
        total=total,
    )
    grad = bp.gradient() if bp is not None else np.zeros_like(p)
    grad += weights.simple * g_simple
    return breakdown, grad
