"""String-performance evaluation metrics.

Four scores: finger-contact distance (how far the note-playing fingertip
sits from the pitch's trigger position), bow-string distance (gap
between the bow and the string it should excite), bowing F1 (direction
reversals matched against reference reversals within a 3-frame
tolerance), and bowing cosine similarity (agreement of where along the
bow the string is struck, signed negative for the lower half).

The "intent" of a frame is the playable position nearest the performer's
hand, so a pitch playable on two strings is scored against whichever
realization the motion is actually attempting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cello import CelloSpec, activating_string, select_intent
from .errors import NoPlayablePosition, NoVoicedFrames, ShapeMismatch, ZeroVector
from .geometry import segment_segment_distance
from .motion import MotionSequence, bow_endpoints
from .skeleton import Skeleton, end_site_positions, fk_world

ATTACK_TOLERANCE_FRAMES = 3
SMOOTH_WINDOW = 5
HYSTERESIS_FRAMES = 2
_SPEED_EPS = 1e-9


@dataclass
class EvaluationReport:
    fcd_mm: float | None = None
    bsd_mm: float | None = None
    bowing_precision: float | None = None
    bowing_recall: float | None = None
    bowing_f1: float | None = None
    bcs: float | None = None
    fcd_trace_mm: list = field(default_factory=list)
    bsd_trace_mm: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "fcd_mm": self.fcd_mm,
            "bsd_mm": self.bsd_mm,
            "bowing_precision": self.bowing_precision,
            "bowing_recall": self.bowing_recall,
            "bowing_f1": self.bowing_f1,
            "bcs": self.bcs,
            "fcd_trace_mm": self.fcd_trace_mm,
            "bsd_trace_mm": self.bsd_trace_mm,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1)

    def table(self) -> str:
        """Aligned text row in the standard column order."""

        def fmt(v, digits=2):
            return "-" if v is None else f"{v:.{digits}f}"

        header = f"{'FCD':>8} {'BSD':>8} {'BF1':>8} {'BCS':>8}"
        row = (
            f"{fmt(self.fcd_mm):>8} {fmt(self.bsd_mm):>8} "
            f"{fmt(self.bowing_f1, 4):>8} {fmt(self.bcs, 4):>8}"
        )
        return header + "\n" + row


def _frame_geometry(seq: MotionSequence, skeleton: Skeleton, cello: CelloSpec):
    rot = seq.rotations()
    pos, world = fk_world(rot, skeleton)
    sites = end_site_positions(pos, world, skeleton)
    tips = sites[:, skeleton.anchor_end_sites("left_fingertips")]
    frog, tip = bow_endpoints(pos, seq.bow_dir(), cello.bow_length, skeleton)
    return tips, frog, tip


def _intents(seq, f0, skeleton, cello):
    """Per-frame (intent, finger, distance) for voiced frames, None elsewhere.

    Frames whose pitch no string admits (tracker noise outside the
    instrument range) are treated as unvoiced rather than fatal.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    if f0.size != len(seq):
        raise ShapeMismatch("f0 track and motion disagree in length")
    tips, frog, tip = _frame_geometry(seq, skeleton, cello)
    out = []
    for k in range(len(seq)):
        if f0[k] <= 0:
            out.append(None)
            continue
        try:
            out.append(select_intent(float(f0[k]), tips[k], cello))
        except NoPlayablePosition:
            out.append(None)
    return out, tips, frog, tip


def finger_contact_distance(
    seq: MotionSequence, f0: np.ndarray, skeleton: Skeleton, cello: CelloSpec
) -> tuple[float, np.ndarray]:
    """Mean distance (mm) from the note-playing fingertip to the trigger
    position, over voiced stopped frames; open-string and unvoiced frames
    are excluded. Also returns the per-frame trace (NaN where excluded)."""
    intents, tips, _, _ = _intents(seq, f0, skeleton, cello)
    trace = np.full(len(seq), np.nan)
    for k, item in enumerate(intents):
        if item is None:
            continue
        intent, finger, dist = item
        if intent.is_open_string or finger is None:
            continue
        trace[k] = dist * 1000.0
    if np.all(np.isnan(trace)):
        raise NoVoicedFrames("no voiced stopped frames to evaluate")
    return float(np.nanmean(trace)), trace


def bow_string_distance(
    seq: MotionSequence, f0: np.ndarray, skeleton: Skeleton, cello: CelloSpec
) -> tuple[float, np.ndarray]:
    """Mean distance (mm) between the bow segment and the activating
    string over voiced frames, with the per-frame trace."""
    intents, _, frog, tip = _intents(seq, f0, skeleton, cello)
    trace = np.full(len(seq), np.nan)
    for k, item in enumerate(intents):
        if item is None:
            continue
        seg0, seg1 = activating_string(item[0], cello)
        trace[k] = segment_segment_distance(frog[k], tip[k], seg0, seg1)[0] * 1000.0
    if np.all(np.isnan(trace)):
        raise NoVoicedFrames("no voiced frames to evaluate")
    return float(np.nanmean(trace)), trace


def _smooth(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with shrinking windows at the edges."""
    half = window // 2
    out = np.empty_like(x)
    for k in range(x.size):
        lo = max(0, k - half)
        hi = min(x.size, k + half + 1)
        out[k] = x[lo:hi].mean()
    return out


def detect_bowing_attacks(
    seq: MotionSequence, skeleton: Skeleton, cello: CelloSpec
) -> np.ndarray:
    """Frames where the bow travel direction reverses.

    The scalar signal is the frog position relative to the bridge center
    projected on the bow direction; its smoothed frame delta changes sign
    at an attack. A new direction must persist for a couple of frames, and
    near-zero speeds carry no direction at all.
    """
    if len(seq) < 3:
        return np.empty(0, dtype=np.int64)
    rot = seq.rotations()
    pos, _ = fk_world(rot, skeleton)
    frog, _ = bow_endpoints(pos, seq.bow_dir(), cello.bow_length, skeleton)
    v = seq.bow_dir()
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    s = np.einsum("fi,fi->f", frog - cello.bridge_center, v)
    s = _smooth(s, SMOOTH_WINDOW)
    ds = np.diff(s)
    signs = np.where(ds > _SPEED_EPS, 1, np.where(ds < -_SPEED_EPS, -1, 0))

    attacks = []
    current = 0  # established direction
    k = 0
    n = signs.size
    while k < n:
        sg = signs[k]
        if sg != 0 and sg != current:
            run = 1
            while k + run < n and signs[k + run] == sg:
                run += 1
            if run >= HYSTERESIS_FRAMES:
                if current != 0:
                    attacks.append(k + 1)  # frame index of the new direction
                current = sg
            k += run
        else:
            k += 1
    return np.asarray(attacks, dtype=np.int64)


def bowing_f1(
    pred: np.ndarray, gt: np.ndarray, tolerance: int = ATTACK_TOLERANCE_FRAMES
) -> tuple[float, float, float]:
    """Greedy one-to-one matching of attack lists within the tolerance.

    Returns (precision, recall, f1); empty-vs-empty counts as perfect.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if np.any(np.diff(pred) < 0) or np.any(np.diff(gt) < 0):
        raise ShapeMismatch("attack lists must be sorted")
    matched_gt = np.zeros(gt.size, dtype=bool)
    tp = 0
    for p in pred:
        for i in range(gt.size):
            if not matched_gt[i] and abs(int(p) - int(gt[i])) <= tolerance:
                matched_gt[i] = True
                tp += 1
                break
    precision = tp / pred.size if pred.size else (1.0 if gt.size == 0 else 0.0)
    recall = tp / gt.size if gt.size else (1.0 if pred.size == 0 else 0.0)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def bow_contact_series(
    seq: MotionSequence, f0: np.ndarray, skeleton: Skeleton, cello: CelloSpec
) -> np.ndarray:
    """Signed contact position along the bow per voiced frame: -1 at the
    frog, +1 at the tip, NaN on unvoiced frames."""
    intents, _, frog, tip = _intents(seq, f0, skeleton, cello)
    out = np.full(len(seq), np.nan)
    for k, item in enumerate(intents):
        if item is None:
            continue
        seg0, seg1 = activating_string(item[0], cello)
        _, s, _ = segment_segment_distance(frog[k], tip[k], seg0, seg1)
        out[k] = 2.0 * s - 1.0
    return out


def bowing_cosine_similarity(
    gen: MotionSequence,
    gt: MotionSequence,
    f0: np.ndarray,
    skeleton: Skeleton,
    cello: CelloSpec,
) -> float:
    """Cosine similarity of the signed bow-contact series over voiced frames."""
    if len(gen) != len(gt):
        raise ShapeMismatch("sequences must have equal length")
    a = bow_contact_series(gen, f0, skeleton, cello)
    b = bow_contact_series(gt, f0, skeleton, cello)
    mask = ~np.isnan(a) & ~np.isnan(b)
    if not mask.any():
        raise NoVoicedFrames("no voiced frames to compare")
    a = a[mask]
    b = b[mask]
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ZeroVector("a contact series is identically zero")
    return float(a @ b / (na * nb))


def evaluate(
    seq: MotionSequence,
    f0: np.ndarray,
    skeleton: Skeleton,
    cello: CelloSpec,
    gt: MotionSequence | None = None,
) -> EvaluationReport:
    """Full report; the bowing scores need a reference motion and stay
    unset without one."""
    report = EvaluationReport()
    try:
        report.fcd_mm, fcd_trace = finger_contact_distance(seq, f0, skeleton, cello)
        report.fcd_trace_mm = [None if np.isnan(v) else v for v in fcd_trace]
    except NoVoicedFrames:
        pass
    report.bsd_mm, bsd_trace = bow_string_distance(seq, f0, skeleton, cello)
    report.bsd_trace_mm = [None if np.isnan(v) else v for v in bsd_trace]
    if gt is not None:
        pred_attacks = detect_bowing_attacks(seq, skeleton, cello)
        gt_attacks = detect_bowing_attacks(gt, skeleton, cello)
        p, r, f1 = bowing_f1(pred_attacks, gt_attacks)
        report.bowing_precision = p
        report.bowing_recall = r
        report.bowing_f1 = f1
        report.bcs = bowing_cosine_similarity(seq, gt, f0, skeleton, cello)
    return report
