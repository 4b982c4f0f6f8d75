"""Acoustic front end: framing, log-mel filterbank, pitch, delta features.

Input is 16 kHz mono PCM16 audio. Each frame yields 26 log-mel energies
plus a 2-dimensional pitch feature (f0 estimate, voicing score); first and
second order differences are appended, giving 84-dimensional rows.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-10
PITCH_MIN_HZ = 60.0
PITCH_MAX_HZ = 400.0


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FrameConfig:
    window_ms: int = 25
    hop_ms: int = 10
    num_mel: int = 26

    def __post_init__(self):
        if not (self.window_ms >= self.hop_ms > 0):
            raise FeatureError("require window_ms >= hop_ms > 0")
        if self.num_mel < 1:
            raise FeatureError("num_mel must be >= 1")

    def window_samples(self, sample_rate: int) -> int:
        return sample_rate * self.window_ms // 1000

    def hop_samples(self, sample_rate: int) -> int:
        return sample_rate * self.hop_ms // 1000


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray  # int16
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate != 16000:
            raise FeatureError(
                f"expected 16 kHz audio, got {self.sample_rate} Hz")


def read_wav(path) -> AudioBuffer:
    """Read a mono PCM16 WAV file."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise FeatureError("expected mono audio")
        if w.getsampwidth() != 2:
            raise FeatureError("expected 16-bit PCM")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    samples = np.frombuffer(data, dtype="<i2")
    return AudioBuffer(samples=samples, sample_rate=rate)


def frame_signal(audio: AudioBuffer, cfg: FrameConfig) -> np.ndarray:
    """Slice audio into overlapping frames; returns (num_frames, window)."""
    win = cfg.window_samples(audio.sample_rate)
    hop = cfg.hop_samples(audio.sample_rate)
    s = np.asarray(audio.samples, dtype=np.float64)
    if len(s) < win:
        return np.zeros((0, win))
    n = (len(s) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return s[idx]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_matrix(num_mel: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters, (num_mel, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0),
                          num_mel + 2)
    hz_pts = mel_to_hz(mel_pts)
    freqs = np.arange(n_bins) * sample_rate / n_fft
    fb = np.zeros((num_mel, n_bins))
    for m in range(num_mel):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / (center - lo)
        down = (hi - freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _fft_size(window: int) -> int:
    n = 1
    while n < window:
        n *= 2
    return n


def log_mel_filterbank(frame: np.ndarray, cfg: FrameConfig,
                       sample_rate: int = 16000) -> np.ndarray:
    """Log mel-filterbank energies of one frame (num_mel,)."""
    win = cfg.window_samples(sample_rate)
    if len(frame) != win:
        raise FeatureError(f"frame length {len(frame)} != window {win}")
    n_fft = _fft_size(win)
    windowed = frame * np.hamming(win)
    spec = np.abs(np.fft.rfft(windowed, n=n_fft)) ** 2
    fb = mel_filterbank_matrix(cfg.num_mel, n_fft, sample_rate)
    return np.log(np.maximum(fb @ spec, LOG_FLOOR))


def pitch_features(frame: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """(f0, voicing) from the normalized-autocorrelation peak in 60-400 Hz.

    f0 is 0 when the frame is unvoiced (or silent); voicing is the peak
    normalized autocorrelation clipped to [0, 1].
    """
    frame = np.asarray(frame, dtype=np.float64)
    energy = float(frame @ frame)
    if energy <= 0.0:
        return np.array([0.0, 0.0])
    lag_min = int(np.ceil(sample_rate / PITCH_MAX_HZ))
    lag_max = min(int(sample_rate / PITCH_MIN_HZ), len(frame) - 1)
    best_lag, best_val = 0, -1.0
    for lag in range(lag_min, lag_max + 1):
        a, b = frame[:-lag], frame[lag:]
        denom = np.sqrt((a @ a) * (b @ b))
        if denom <= 0.0:
            continue
        val = float(a @ b) / denom
        if val > best_val:
            best_val, best_lag = val, lag
    if best_lag == 0 or best_val <= 0.0:
        return np.array([0.0, 0.0])
    voicing = min(max(best_val, 0.0), 1.0)
    f0 = sample_rate / best_lag if voicing > 0.5 else 0.0
    return np.array([min(f0, PITCH_MAX_HZ), voicing])


def append_differences(feats: np.ndarray) -> np.ndarray:
    """Append first and second adjacent differences: rows become 3x wider.

    Delta at t=0 is zero (no lookbehind); same for the second difference.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.size == 0:
        return feats.reshape(0, feats.shape[1] * 3 if feats.ndim == 2 else 0)
    delta = np.diff(feats, axis=0, prepend=feats[:1])
    delta2 = np.diff(delta, axis=0, prepend=delta[:1])
    return np.hstack([feats, delta, delta2])


def extract_features(audio: AudioBuffer,
                     cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Full front end: (T, 3 * (num_mel + 2)) feature matrix."""
    frames = frame_signal(audio, cfg)
    if frames.shape[0] == 0:
        return np.zeros((0, 3 * (cfg.num_mel + 2)))
    base = np.array([
        np.concatenate([
            log_mel_filterbank(f, cfg, audio.sample_rate),
            pitch_features(f, audio.sample_rate),
        ])
        for f in frames
    ])
    return append_differences(base)
