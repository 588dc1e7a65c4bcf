"""Per-frame conditioning tracks and their JSONL codec.

A ConditionTrack pairs every motion frame with its fundamental frequency
(0 = unvoiced), the condition feature vector fed to the denoiser, and an
optional contact annotation: which finger stops which string where, plus
the ground-truth interaction distances the contact losses regress to.
File form is JSON lines, one frame per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch


@dataclass
class ConditionTrack:
    fps: float
    f0: np.ndarray  # (F,)
    features: np.ndarray  # (F, D)
    # annotation arrays; annotated[k] says whether frame k carries one
    annotated: np.ndarray = field(default=None)  # (F,) bool
    note_finger: np.ndarray = field(default=None)  # (F,) int, -1 = none
    string_index: np.ndarray = field(default=None)  # (F,) int, -1 = none
    contact: np.ndarray = field(default=None)  # (F, 3)
    is_open: np.ndarray = field(default=None)  # (F,) bool
    d_cp: np.ndarray = field(default=None)  # (F, 4) fingertip-to-contact, meters
    d_ends: np.ndarray = field(default=None)  # (F, 2) frog/tip to string, meters

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.f0.size
        if self.features.shape[0] != n:
            raise ShapeMismatch("f0 track and features disagree in length")
        if np.any(self.f0 < 0) or not np.all(np.isfinite(self.features)):
            raise ShapeMismatch("f0 must be nonnegative and features finite")
        if self.annotated is None:
            self.annotated = np.zeros(n, dtype=bool)
            self.note_finger = np.full(n, -1, dtype=np.int64)
            self.string_index = np.full(n, -1, dtype=np.int64)
            self.contact = np.zeros((n, 3))
            self.is_open = np.zeros(n, dtype=bool)
            self.d_cp = np.zeros((n, 4))
            self.d_ends = np.zeros((n, 2))

    def __len__(self) -> int:
        return self.f0.size

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    def slice(self, lo: int, hi: int) -> "ConditionTrack":
        """Copying slice; the result owns its arrays."""
        return ConditionTrack(
            fps=self.fps,
            f0=self.f0[lo:hi].copy(),
            features=self.features[lo:hi].copy(),
            annotated=self.annotated[lo:hi].copy(),
            note_finger=self.note_finger[lo:hi].copy(),
            string_index=self.string_index[lo:hi].copy(),
            contact=self.contact[lo:hi].copy(),
            is_open=self.is_open[lo:hi].copy(),
            d_cp=self.d_cp[lo:hi].copy(),
            d_ends=self.d_ends[lo:hi].copy(),
        )

    def pad_to(self, n: int) -> "ConditionTrack":
        """Extend to n frames by repeating the final frame."""
        if n <= len(self):
            return self
        reps = n - len(self)

        def rep(a):
            return np.concatenate([a, np.repeat(a[-1:], reps, axis=0)], axis=0)

        return ConditionTrack(
            fps=self.fps,
            f0=rep(self.f0),
            features=rep(self.features),
            annotated=rep(self.annotated),
            note_finger=rep(self.note_finger),
            string_index=rep(self.string_index),
            contact=rep(self.contact),
            is_open=rep(self.is_open),
            d_cp=rep(self.d_cp),
            d_ends=rep(self.d_ends),
        )


def save_condition_track(path: str | Path, track: ConditionTrack) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"fps": track.fps, "frames": len(track)}) + "\n")
        for k in range(len(track)):
            row: dict = {
                "f0": float(track.f0[k]),
                "features": [float(v) for v in track.features[k]],
            }
            if track.annotated[k]:
                row["note_finger"] = None if track.note_finger[k] < 0 else int(track.note_finger[k])
                row["string"] = int(track.string_index[k])
                row["contact"] = [float(v) for v in track.contact[k]]
                row["open"] = bool(track.is_open[k])
                row["d_cp"] = [float(v) for v in track.d_cp[k]]
                row["d_ends"] = [float(v) for v in track.d_ends[k]]
            fh.write(json.dumps(row) + "\n")


def load_condition_track(path: str | Path) -> ConditionTrack:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    n = len(rows)
    if n != int(header["frames"]):
        raise ShapeMismatch("condition file frame count disagrees with header")
    d = len(rows[0]["features"]) if n else 0
    track = ConditionTrack(fps=float(header["fps"]), f0=np.zeros(n), features=np.zeros((n, d)))
    for k, row in enumerate(rows):
        track.f0[k] = row["f0"]
        track.features[k] = row["features"]
        if "string" in row:
            track.annotated[k] = True
            track.note_finger[k] = -1 if row["note_finger"] is None else int(row["note_finger"])
            track.string_index[k] = int(row["string"])
            track.contact[k] = row["contact"]
            track.is_open[k] = bool(row["open"])
            track.d_cp[k] = row["d_cp"]
            track.d_ends[k] = row["d_ends"]
    return track
