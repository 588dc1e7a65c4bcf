"""Instrument geometry and pitch-to-contact logic.

Four strings run from nut to bridge; the four bridge points form an arch
so a straight bow can touch one string without grazing its neighbors. A
detected fundamental frequency maps to candidate contact positions via
the vibrating-string relation: sounding a pitch f on a string with open
frequency f_open leaves a vibrating length L * f_open / f, so the finger
sits at distance L * (1 - f_open / f) from the nut.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import NoPlayablePosition, ShapeMismatch

STRING_NAMES = ("C", "G", "D", "A")


@dataclass(frozen=True)
class CelloString:
    name: str
    nut: np.ndarray  # (3,)
    bridge: np.ndarray  # (3,)
    open_hz: float

    @property
    def speaking_length(self) -> float:
        return float(np.linalg.norm(self.bridge - self.nut))

    def point_at(self, distance_from_nut: float) -> np.ndarray:
        """World point on the string at a given distance from the nut."""
        direction = (self.bridge - self.nut) / self.speaking_length
        return self.nut + distance_from_nut * direction


@dataclass(frozen=True)
class CelloSpec:
    strings: tuple[CelloString, ...]
    bow_length: float
    endpin: np.ndarray
    landmarks: dict[str, np.ndarray]  # named alignment landmarks incl. "endpin"
    max_ratio: float = 3.0  # playable range cap: f0 <= max_ratio * f_open
    open_tolerance_cents: float = 15.0

    def __post_init__(self):
        if len(self.strings) != 4:
            raise ShapeMismatch("a cello has four strings")
        freqs = [s.open_hz for s in self.strings]
        if not all(a < b for a, b in zip(freqs, freqs[1:])):
            raise ShapeMismatch("open frequencies must be strictly increasing C<G<D<A")
        for s in self.strings:
            if s.speaking_length <= 0:
                raise ShapeMismatch(f"string {s.name} has zero speaking length")
        bridge_pts = np.array([s.bridge for s in self.strings])
        span = bridge_pts - bridge_pts[0]
        if np.linalg.matrix_rank(span, tol=1e-9) < 2:
            raise ShapeMismatch("bridge points are collinear; the bridge must be arched")

    @property
    def bridge_center(self) -> np.ndarray:
        return np.mean([s.bridge for s in self.strings], axis=0)


@dataclass(frozen=True)
class ContactIntent:
    """A playable realization of a pitch: which string, where on it."""

    string_index: int
    contact_point: np.ndarray  # (3,)
    distance_from_nut: float
    is_open_string: bool


def cents(f_a: float, f_b: float) -> float:
    """Signed interval from f_b to f_a in cents."""
    return 1200.0 * float(np.log2(f_a / f_b))


def pitch_to_positions(f0: float, cello: CelloSpec) -> list[ContactIntent]:
    """All per-string contact candidates for a pitch.

    Strings with f0 below the open pitch produce no candidate; a pitch
    within the open tolerance band sits exactly at the nut and is flagged
    open. Raises NoPlayablePosition when no string admits f0.
    """
    if f0 <= 0:
        raise NoPlayablePosition("f0 must be positive")
    out: list[ContactIntent] = []
    for i, s in enumerate(cello.strings):
        if abs(cents(f0, s.open_hz)) <= cello.open_tolerance_cents:
            out.append(ContactIntent(i, s.point_at(0.0), 0.0, True))
            continue
        if f0 < s.open_hz or f0 > cello.max_ratio * s.open_hz:
            continue
        d = s.speaking_length * (1.0 - s.open_hz / f0)
        out.append(ContactIntent(i, s.point_at(d), d, False))
    if not out:
        raise NoPlayablePosition(f"no string admits {f0:.2f} Hz")
    return out


def select_intent(
    f0: float, fingertips: np.ndarray, cello: CelloSpec
) -> tuple[ContactIntent, int | None, float]:
    """Pick the contact intent nearest the note-playing hand.

    fingertips: (4, 3) left-hand non-thumb tip positions. When the pitch
    matches a string's open band, the open intent wins outright and no
    finger is assigned. Otherwise the (candidate, finger) pair with the
    smallest tip-to-contact distance is chosen; ties break toward the
    lower string index then the lower finger index. Returns
    (intent, finger index or None, that minimal distance).
    """
    fingertips = np.asarray(fingertips, dtype=np.float64)
    if fingertips.shape != (4, 3):
        raise ShapeMismatch(f"expected (4, 3) fingertips, got {fingertips.shape}")
    candidates = pitch_to_positions(f0, cello)
    for cand in candidates:
        if cand.is_open_string:
            dist = float(np.linalg.norm(fingertips - cand.contact_point, axis=1).min())
            return cand, None, dist
    best: tuple[float, int, int] | None = None
    for c_idx, cand in enumerate(candidates):
        dists = np.linalg.norm(fingertips - cand.contact_point, axis=1)
        for f_idx in range(4):
            key = (float(dists[f_idx]), cand.string_index, f_idx)
            if best is None or key < (best[0], candidates[best[1]].string_index, best[2]):
                best = (key[0], c_idx, f_idx)
    assert best is not None
    return candidates[best[1]], best[2], best[0]


def activating_string(intent: ContactIntent, cello: CelloSpec) -> tuple[np.ndarray, np.ndarray]:
    """The bowed (vibrating) part of the string: contact point to bridge.

    Open intents return the whole nut-to-bridge segment.
    """
    s = cello.strings[intent.string_index]
    start = s.nut if intent.is_open_string else np.asarray(intent.contact_point, dtype=np.float64)
    return start, s.bridge


def load_cello(path: str | Path) -> CelloSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return cello_from_dict(json.load(fh))


def cello_from_dict(doc: dict) -> CelloSpec:
    strings = tuple(
        CelloString(
            name=s["name"],
            nut=np.asarray(s["nut"], dtype=np.float64),
            bridge=np.asarray(s["bridge"], dtype=np.float64),
            open_hz=float(s["open_hz"]),
        )
        for s in doc["strings"]
    )
    return CelloSpec(
        strings=strings,
        bow_length=float(doc["bow_length"]),
        endpin=np.asarray(doc["endpin"], dtype=np.float64),
        landmarks={k: np.asarray(v, dtype=np.float64) for k, v in doc["landmarks"].items()},
        max_ratio=float(doc.get("max_ratio", 3.0)),
        open_tolerance_cents=float(doc.get("open_tolerance_cents", 15.0)),
    )


def default_cello() -> CelloSpec:
    """The shared instrument shipped with the package (data/cello.json)."""
    text = resources.files("elgar").joinpath("data/cello.json").read_text(encoding="utf-8")
    return cello_from_dict(json.loads(text))
