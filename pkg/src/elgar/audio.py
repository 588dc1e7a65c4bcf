"""Audio input and conditioning features.

The fundamental frequency is tracked per motion frame with a cumulative
mean normalized difference function (autocorrelation via FFT, threshold
0.15, parabolic interpolation), restricted to the cello range. The
per-frame condition vector replaces a heavyweight learned encoder with
four hand-crafted features: normalized log pitch, a voicing flag, RMS
energy, and the log-pitch delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import ShapeMismatch

F0_MIN = 60.0
F0_MAX = 1200.0
YIN_WINDOW = 2048
YIN_THRESHOLD = 0.15
FEATURE_DIM = 4
_LOG_REF_HZ = 440.0
_LOG_SCALE = 4.0


@dataclass
class AudioClip:
    """Mono audio in [-1, 1]."""

    sample_rate: int
    samples: np.ndarray  # (n,) float64

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate < 8000:
            raise ShapeMismatch("sample rate must be at least 8000 Hz")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ShapeMismatch("clip must be non-empty mono")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: str | Path) -> AudioClip:
    """Load a WAV file (PCM16 or float32); stereo is downmixed by averaging."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    else:
        data = data.astype(np.float64)
    return AudioClip(int(rate), data)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))


def _frame_slice(samples: np.ndarray, center: int, width: int) -> np.ndarray:
    """Window of `width` samples centered at `center`, zero padded at edges."""
    lo = center - width // 2
    hi = lo + width
    out = np.zeros(width)
    src_lo = max(lo, 0)
    src_hi = min(hi, samples.size)
    if src_hi > src_lo:
        out[src_lo - lo : src_hi - lo] = samples[src_lo:src_hi]
    return out


def _cmndf(buf: np.ndarray, w_int: int, tau_max: int) -> np.ndarray:
    """Cumulative mean normalized difference function for lags 0..tau_max."""
    n = 1
    while n < buf.size + w_int:
        n <<= 1
    spec = np.fft.rfft(buf, n)
    spec_head = np.fft.rfft(buf[:w_int], n)
    corr = np.fft.irfft(spec * np.conj(spec_head), n)[: tau_max + 1]
    energy = np.concatenate([[0.0], np.cumsum(buf**2)])
    head = energy[w_int]
    sliding = energy[w_int : w_int + tau_max + 1] - energy[0 : tau_max + 1]
    # d(tau) = ||x[0:W] - x[tau:tau+W]||^2, rewritten via autocorrelation
    diff = np.maximum(head + sliding - 2.0 * corr, 0.0)
    out = np.ones(tau_max + 1)
    cum = np.cumsum(diff[1:])
    nz = cum > 0
    out[1:][nz] = diff[1:][nz] * np.arange(1, tau_max + 1)[nz] / cum[nz]
    return out


def _pick_period(d: np.ndarray, tau_min: int, threshold: float) -> float | None:
    """First dip under the threshold (descended to its local minimum),
    refined by parabolic interpolation. None when unvoiced."""
    tau = None
    for t in range(tau_min, d.size):
        if d[t] < threshold:
            while t + 1 < d.size and d[t + 1] < d[t]:
                t += 1
            tau = t
            break
    if tau is None:
        best = tau_min + int(np.argmin(d[tau_min:]))
        if d[best] >= threshold:
            return None
        tau = best
    if 0 < tau < d.size - 1:
        a, b, c = d[tau - 1], d[tau], d[tau + 1]
        denom = a - 2 * b + c
        if abs(denom) > 1e-12:
            shift = 0.5 * (a - c) / denom
            if abs(shift) < 1.0:
                return tau + float(shift)
    return float(tau)


def extract_f0(clip: AudioClip, fps: float) -> np.ndarray:
    """Per-frame fundamental frequency at hop 1/fps; 0 marks unvoiced frames.

    Voiced estimates are confined to [F0_MIN, F0_MAX]; silence or an
    aperiodic window yields 0.
    """
    if fps <= 0:
        raise ShapeMismatch("fps must be positive")
    sr = clip.sample_rate
    tau_min = max(2, int(np.floor(sr / F0_MAX)))
    tau_max = int(np.ceil(sr / F0_MIN))
    w_int = YIN_WINDOW - tau_max
    if w_int < 2 * tau_min:
        raise ShapeMismatch("sample rate too high for the analysis window")
    n_frames = max(1, int(round(clip.duration * fps)))
    out = np.zeros(n_frames)
    for k in range(n_frames):
        center = int(round((k + 0.5) * sr / fps))
        buf = _frame_slice(clip.samples, center, YIN_WINDOW)
        if np.sqrt(np.mean(buf**2)) < 1e-5:
            continue
        d = _cmndf(buf, w_int, tau_max)
        period = _pick_period(d, tau_min, YIN_THRESHOLD)
        if period is None:
            continue
        f0 = sr / period
        if F0_MIN <= f0 <= F0_MAX:
            out[k] = f0
    return out


def build_features(f0: np.ndarray, clip: AudioClip | None, fps: float) -> np.ndarray:
    """Per-frame condition vectors (F, 4), aligned with the f0 track.

    Columns: normalized log pitch (0 when unvoiced), voicing flag, frame
    RMS energy (0 when no audio is available), and the log-pitch delta
    (0 across voicing changes). Deterministic for fixed input.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    n = f0.size
    feats = np.zeros((n, FEATURE_DIM))
    voiced = f0 > 0
    log_f0 = np.zeros(n)
    log_f0[voiced] = np.log2(f0[voiced] / _LOG_REF_HZ) / _LOG_SCALE
    feats[:, 0] = log_f0
    feats[:, 1] = voiced.astype(np.float64)
    if clip is not None:
        hop = clip.sample_rate / fps
        for k in range(n):
            lo = int(round(k * hop))
            hi = min(int(round((k + 1) * hop)), clip.samples.size)
            if hi > lo:
                feats[k, 2] = np.sqrt(np.mean(clip.samples[lo:hi] ** 2))
    both = voiced[1:] & voiced[:-1]
    feats[1:, 3] = np.where(both, log_f0[1:] - log_f0[:-1], 0.0)
    return feats
