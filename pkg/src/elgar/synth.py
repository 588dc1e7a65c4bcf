"""Synthetic performances: audio, annotations, and ground-truth motion.

The generator is its own oracle. Given a score it renders a sawtooth
audio track, computes the exact contact intents from the instrument
geometry, and builds joint rotations analytically so that

  * the note-playing left fingertip sits exactly on the contact point,
  * the bow (anchored to the right hand) crosses the activating string
    at a fixed spot near the bridge, tilted along the bridge arch so
    neighboring strings are cleared,
  * the crossing parameter sweeps linearly within each note and reverses
    direction at every note boundary (one bow stroke per note).

Kinematic recipe: every joint holds its rest rotation except the two
shoulder and elbow pairs. Treating the wrist-and-hand as rigid, each arm
is a two-bone chain whose end point (fingertip or frog anchor) is a
fixed offset in the forearm frame, so placing it on a target is a
closed-form two-link reach: the elbow swings in the plane selected by a
pole direction and the two world rotations follow from aligning bone
vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, build_features
from .cello import CelloSpec, ContactIntent, activating_string, pitch_to_positions
from .conditions import ConditionTrack
from .errors import NoPlayablePosition, ShapeMismatch, UnreachableTarget
from .geometry import point_segment_distance
from .motion import MotionSequence, bow_endpoints, sequence_from_rotations
from .rotations import rotation_between
from .skeleton import N_ROTATED, Skeleton, end_site_positions, fk_world

SAMPLE_RATE = 44100
# bow handling constants: crossing point up from the bridge (fraction of the
# speaking length), per-string tilt along the arch normal, sweep behavior
CROSSING_FRACTION = 0.10
BOW_TILTS = (0.52, 0.18, -0.18, -0.52)
BOW_U_HOME = 0.5
BOW_U_TRAVEL_MAX = 0.22
BOW_SWEEP_RATE = 0.42  # bow-parameter units per second
_FINGER_CHAINS = ("index", "middle", "ring", "pinky")


@dataclass(frozen=True)
class Note:
    """One score entry; pitch_hz = 0 denotes a rest (string/finger ignored).

    finger is the left-hand finger index 0..3 (index..pinky) or None for
    an open string.
    """

    pitch_hz: float
    duration_s: float
    string: int | None = None
    finger: int | None = None


@dataclass
class SynthResult:
    audio: AudioClip
    track: ConditionTrack
    motion: MotionSequence
    foot_contact: np.ndarray  # (F,) bool, all True for a seated performer
    attack_frames: list[int]  # constructed bow-reversal frames (note starts)


def _saw(f0: float, n: int, sr: int, amp: float = 0.5) -> np.ndarray:
    t = np.arange(n) / sr
    x = amp * (2.0 * ((f0 * t) % 1.0) - 1.0)
    fade = min(int(0.005 * sr), n // 4)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade)
        x[:fade] *= ramp
        x[-fade:] *= ramp[::-1]
    return x


def _chain_offset(skeleton: Skeleton, side: str, names: list[str], tip: str | None) -> np.ndarray:
    """Offset of a rigid hand point in the forearm frame (wrist onward)."""
    total = skeleton.offsets[skeleton.index(f"{side}_wrist")].copy()
    for n in names:
        total += skeleton.offsets[skeleton.index(f"{side}_{n}")]
    if tip is not None:
        total += skeleton.end_site_offsets[skeleton.end_site_index(f"{side}_{tip}")]
    return total


def _frog_anchor_offset(skeleton: Skeleton) -> np.ndarray:
    """Frog anchor (mean of PIP-DIP midpoints) in the right forearm frame."""
    wrist = skeleton.offsets[skeleton.index("right_wrist")]
    acc = np.zeros(3)
    for f in ("middle", "ring", "thumb"):
        o1 = skeleton.offsets[skeleton.index(f"right_{f}1")]
        o2 = skeleton.offsets[skeleton.index(f"right_{f}2")]
        o3 = skeleton.offsets[skeleton.index(f"right_{f}3")]
        acc += (o1 + o2) + 0.5 * o3
    return wrist + acc / 3.0


def solve_two_link(
    shoulder: np.ndarray,
    upper_offset: np.ndarray,
    chain_offset: np.ndarray,
    target: np.ndarray,
    pole: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """World rotations (shoulder, elbow) placing the chain end on target.

    upper_offset is the elbow rest offset, chain_offset the end point in
    the forearm frame. The elbow bends toward the pole direction.
    """
    l1 = float(np.linalg.norm(upper_offset))
    l2 = float(np.linalg.norm(chain_offset))
    delta = np.asarray(target, dtype=np.float64) - shoulder
    r = float(np.linalg.norm(delta))
    if not (abs(l1 - l2) + 1e-6 < r < l1 + l2 - 1e-6):
        raise UnreachableTarget(f"target at {r:.3f} m outside reach ({abs(l1-l2):.3f}, {l1+l2:.3f})")
    a_hat = delta / r
    cos_a = (l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r)
    cos_a = float(np.clip(cos_a, -1.0, 1.0))
    sin_a = float(np.sqrt(max(0.0, 1.0 - cos_a * cos_a)))
    n = np.asarray(pole, dtype=np.float64) - (pole @ a_hat) * a_hat
    nn = np.linalg.norm(n)
    if nn < 1e-9:
        helper = np.array([0.0, 0.0, 1.0]) if abs(a_hat[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        n = helper - (helper @ a_hat) * a_hat
        nn = np.linalg.norm(n)
    n /= nn
    elbow = shoulder + l1 * (cos_a * a_hat + sin_a * n)
    w_upper = rotation_between(upper_offset, elbow - shoulder)
    w_fore = rotation_between(chain_offset, np.asarray(target) - elbow)
    return w_upper, w_fore


class _Arm:
    """Closed-form reach bookkeeping for one arm of the fixed skeleton."""

    def __init__(self, skeleton: Skeleton, side: str, pole: np.ndarray):
        self.side = side
        self.pole = np.asarray(pole, dtype=np.float64)
        self.shoulder_idx = skeleton.index(f"{side}_shoulder")
        self.elbow_idx = skeleton.index(f"{side}_elbow")
        rest = skeleton.rest_positions()
        self.shoulder = rest[self.shoulder_idx]
        self.upper_offset = skeleton.offsets[self.elbow_idx]

    def local_rotations(self, chain_offset: np.ndarray, target: np.ndarray):
        w_upper, w_fore = solve_two_link(
            self.shoulder, self.upper_offset, chain_offset, target, self.pole
        )
        # parent chain holds identity world rotation, so locals follow directly
        return w_upper, w_upper.T @ w_fore


def _note_intent(note: Note, cello: CelloSpec) -> ContactIntent:
    if note.duration_s <= 0:
        raise ShapeMismatch("note duration must be positive")
    cands = pitch_to_positions(note.pitch_hz, cello)
    if note.string is not None:
        cands = [c for c in cands if c.string_index == note.string]
        if not cands:
            raise NoPlayablePosition(
                f"{note.pitch_hz:.2f} Hz is not playable on string {note.string}"
            )
    intent = cands[0]
    if not intent.is_open_string and not (note.finger is not None and 0 <= note.finger <= 3):
        raise ShapeMismatch("a stopped note needs a finger index in 0..3")
    return intent


def _bow_direction(cello: CelloSpec, string_index: int) -> np.ndarray:
    """Unit bow direction for a string: across the bridge, tilted to clear
    the taller (or shorter) neighbors along the arch normal."""
    outer_lo, outer_hi = cello.strings[0], cello.strings[3]
    across = outer_hi.bridge - outer_lo.bridge
    across /= np.linalg.norm(across)
    s = cello.strings[string_index]
    sdir = (s.nut - s.bridge) / s.speaking_length
    mid = cello.strings[1].bridge - 0.5 * (outer_lo.bridge + outer_hi.bridge)
    face = mid - (mid @ sdir) * sdir - (mid @ across) * across
    face /= np.linalg.norm(face)
    tilt = across + BOW_TILTS[string_index] * face
    return tilt / np.linalg.norm(tilt)


def synth_performance(
    score: list[Note],
    skeleton: Skeleton,
    cello: CelloSpec,
    fps: float = 30.0,
    sample_rate: int = SAMPLE_RATE,
    start_up_bow: bool = False,
) -> SynthResult:
    """Render a score into audio, an annotated condition track, and motion.

    start_up_bow flips the first stroke direction, mirroring the whole
    sweep about the middle of the bow.
    """
    if not score:
        raise ShapeMismatch("score is empty")
    total = sum(n.duration_s for n in score)
    n_frames = int(round(total * fps))
    if n_frames < 1:
        raise ShapeMismatch("score too short for a single frame")

    # audio
    chunks = []
    for note in score:
        n = int(round(note.duration_s * sample_rate))
        chunks.append(_saw(note.pitch_hz, n, sample_rate) if note.pitch_hz > 0 else np.zeros(n))
    audio = AudioClip(sample_rate, np.concatenate(chunks))

    # note schedule and per-note bow plan (alternating sweep direction)
    starts = np.cumsum([0.0] + [n.duration_s for n in score])
    intents: list[ContactIntent | None] = []
    u_start = np.empty(len(score))
    u_rate = np.zeros(len(score))
    attack_frames: list[int] = []
    u = BOW_U_HOME
    direction = 1.0 if start_up_bow else -1.0
    played_before = False
    for i, note in enumerate(score):
        if note.pitch_hz <= 0:
            intents.append(None)
            u_start[i] = u
            continue
        intents.append(_note_intent(note, cello))
        direction *= -1.0
        travel = direction * min(BOW_SWEEP_RATE * note.duration_s, BOW_U_TRAVEL_MAX)
        u_start[i] = u
        u_rate[i] = travel / note.duration_s
        u += travel
        if played_before:
            attack_frames.append(int(np.ceil(starts[i] * fps - 0.5)))
        played_before = True

    # per-frame assembly
    left = _Arm(skeleton, "left", pole=np.array([0.6, -1.0, 0.35]))
    right = _Arm(skeleton, "right", pole=np.array([-0.6, -1.0, 0.35]))
    frog_chain = _frog_anchor_offset(skeleton)
    tip_chains = [
        _chain_offset(skeleton, "left", [f"{f}{k}" for k in (1, 2, 3)], f"{f}_tip")
        for f in _FINGER_CHAINS
    ]
    hover = cello.strings[2].point_at(0.15) + 0.04 * _face_normal(cello)

    rot = np.broadcast_to(np.eye(3), (n_frames, N_ROTATED, 3, 3)).copy()
    bow_dir = np.zeros((n_frames, 3))
    f0_track = np.zeros(n_frames)
    note_of_frame = np.searchsorted(starts[1:], (np.arange(n_frames) + 0.5) / fps, side="right")
    note_of_frame = np.minimum(note_of_frame, len(score) - 1)

    # hand state persists across open strings and rests (the hand holds still)
    left_chain = tip_chains[0]
    left_target = hover
    s2 = cello.strings[2]
    park_crossing = s2.bridge + CROSSING_FRACTION * (s2.nut - s2.bridge)
    last_dir = _bow_direction(cello, 2)
    last_frog = park_crossing - BOW_U_HOME * cello.bow_length * last_dir
    for k in range(n_frames):
        i = int(note_of_frame[k])
        note, intent = score[i], intents[i]
        t = (k + 0.5) / fps
        if intent is not None:
            f0_track[k] = note.pitch_hz
            s = cello.strings[intent.string_index]
            sdir = (s.nut - s.bridge) / s.speaking_length
            crossing = s.bridge + CROSSING_FRACTION * s.speaking_length * sdir
            u_k = float(u_start[i] + u_rate[i] * (t - starts[i]))
            last_dir = _bow_direction(cello, intent.string_index)
            last_frog = crossing - u_k * cello.bow_length * last_dir
            if not intent.is_open_string:
                left_chain = tip_chains[note.finger]
                left_target = intent.contact_point
        bow_dir[k] = last_dir

        wl_u, wl_f = left.local_rotations(left_chain, left_target)
        rot[k, left.shoulder_idx - 1] = wl_u
        rot[k, left.elbow_idx - 1] = wl_f
        wr_u, wr_f = right.local_rotations(frog_chain, last_frog)
        rot[k, right.shoulder_idx - 1] = wr_u
        rot[k, right.elbow_idx - 1] = wr_f

    motion = sequence_from_rotations(fps, rot, bow_dir)

    # annotations come straight from the constructed motion
    pos, world = fk_world(motion.rotations(), skeleton)
    tips = end_site_positions(pos, world, skeleton)
    tip_idx = skeleton.anchor_end_sites("left_fingertips")
    frog, bow_tip = bow_endpoints(pos, bow_dir, cello.bow_length, skeleton)

    track = ConditionTrack(
        fps=fps,
        f0=f0_track,
        features=build_features(f0_track, audio, fps),
    )
    for k in range(n_frames):
        i = int(note_of_frame[k])
        intent = intents[i]
        if intent is None:
            continue
        track.annotated[k] = True
        track.note_finger[k] = -1 if (intent.is_open_string or score[i].finger is None) else score[i].finger
        track.string_index[k] = intent.string_index
        track.contact[k] = intent.contact_point
        track.is_open[k] = intent.is_open_string
        track.d_cp[k] = np.linalg.norm(tips[k, tip_idx] - intent.contact_point, axis=1)
        seg0, seg1 = activating_string(intent, cello)
        track.d_ends[k, 0] = point_segment_distance(frog[k], seg0, seg1)[0]
        track.d_ends[k, 1] = point_segment_distance(bow_tip[k], seg0, seg1)[0]

    return SynthResult(
        audio=audio,
        track=track,
        motion=motion,
        foot_contact=np.ones(n_frames, dtype=bool),
        attack_frames=attack_frames,
    )


def _face_normal(cello: CelloSpec) -> np.ndarray:
    """Unit normal of the string plane, pointing off the instrument face."""
    s = cello.strings[2]
    sdir = (s.nut - s.bridge) / s.speaking_length
    across = cello.strings[3].bridge - cello.strings[0].bridge
    across /= np.linalg.norm(across)
    n = np.cross(across, sdir)
    middle_rise = cello.strings[1].bridge - 0.5 * (cello.strings[0].bridge + cello.strings[3].bridge)
    if n @ middle_rise < 0:
        n = -n
    return n / np.linalg.norm(n)


def semitone_note(
    cello: CelloSpec, string: int, semitones: int, duration_s: float
) -> Note:
    """Score helper: a note `semitones` above the open string.

    Semitone 0 is the open string; 1..6 map to fingers by a fixed
    first-position rule; 7..9 are the shifted-position realizations of
    the pitches that also exist low on the next string up.
    """
    if not 0 <= semitones <= 9:
        raise NoPlayablePosition("semitone offset must be within 0..9")
    f0 = cello.strings[string].open_hz * 2.0 ** (semitones / 12.0)
    finger = (None, 0, 0, 1, 1, 2, 3, 0, 1, 2)[semitones]
    return Note(pitch_hz=f0, duration_s=duration_s, string=string, finger=finger)


def random_score(
    rng: np.random.Generator,
    cello: CelloSpec,
    n_notes: int = 8,
    durations: tuple[float, ...] = (0.4, 0.6, 0.8),
    alt_fingering_prob: float = 0.0,
) -> list[Note]:
    """A playable random score.

    With alt_fingering_prob > 0, pitches that exist both low on a string
    and high on the string below are sometimes realized the second way,
    so the corpus plays the same pitch with two different poses; audio
    alone then underdetermines the motion, as in real performance.
    """
    score = []
    for _ in range(n_notes):
        string = int(rng.integers(0, 4))
        semis = int(rng.integers(0, 5))
        dur = float(durations[rng.integers(0, len(durations))])
        # only the stopped low notes get the alternative: a semitone-7 twin
        # would duplicate an open pitch, which the open band claims outright
        if string >= 1 and 1 <= semis <= 2 and rng.random() < alt_fingering_prob:
            string, semis = string - 1, semis + 7
        score.append(semitone_note(cello, string, semis, dur))
    return score
