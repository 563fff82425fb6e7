"""Raw EMG conditioning: causal filter chain, sliding windows, time-domain features.

Streams of 8-channel samples at 1 kHz pass through a 2nd-order Butterworth
high-pass at 20 Hz and a 2nd-order notch at 50 Hz, then a 200 ms window
sliding by 50 ms (20 Hz cadence).  Each window yields four per-channel
features: mean absolute value (MAV), waveform length (TWL), zero crossings
(ZC) and slope-sign changes (SLPCH), stacked channel-major into a
32-dimensional state vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import signal

SAMPLE_RATE_HZ = 1000
N_CHANNELS = 8
WINDOW_MS = 200
STRIDE_MS = 50
FEATURES_PER_CHANNEL = 4
FEATURE_DIM = N_CHANNELS * FEATURES_PER_CHANNEL

FEATURE_NAMES = ("mav", "twl", "zc", "slpch")


class ChannelCountError(ValueError):
    """Frame does not carry the configured number of channels."""


class WindowTooShortError(ValueError):
    """Feature extraction needs at least two samples."""


class FilterChain:
    """Causal per-channel high-pass (20 Hz) -> notch (50 Hz, Q=30) cascade.

    Filter state persists across calls so a signal may be processed in
    arbitrary chunks; ``reset()`` is the only way to clear it.
    """

    def __init__(
        self,
        fs: float = SAMPLE_RATE_HZ,
        highpass_hz: float = 20.0,
        notch_hz: float = 50.0,
        notch_q: float = 30.0,
        n_channels: int = N_CHANNELS,
    ):
        self.fs = fs
        self.n_channels = n_channels
        self._b_hp, self._a_hp = signal.butter(2, highpass_hz, btype="highpass", fs=fs)
        self._b_notch, self._a_notch = signal.iirnotch(notch_hz, notch_q, fs=fs)
        self.reset()

    def reset(self) -> None:
        self._zi_hp = np.zeros((2, self.n_channels))
        self._zi_notch = np.zeros((2, self.n_channels))

    def process(self, samples) -> np.ndarray:
        """Filter a chunk of shape (n, channels); returns the same shape."""
        x = np.atleast_2d(np.asarray(samples, dtype=float))
        if x.ndim != 2 or x.shape[1] != self.n_channels:
            raise ChannelCountError(
                f"expected (n, {self.n_channels}) samples, got {x.shape}"
            )
        y, self._zi_hp = signal.lfilter(self._b_hp, self._a_hp, x, axis=0, zi=self._zi_hp)
        y, self._zi_notch = signal.lfilter(
            self._b_notch, self._a_notch, y, axis=0, zi=self._zi_notch
        )
        return y

    def frequency_response(self, freqs_hz) -> np.ndarray:
        """Complex cascade response at the given frequencies."""
        w = 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.fs
        _, h_hp = signal.freqz(self._b_hp, self._a_hp, worN=w)
        _, h_n = signal.freqz(self._b_notch, self._a_notch, worN=w)
        return h_hp * h_n


@dataclass(frozen=True)
class Window:
    """One 200 ms slice of the filtered stream."""

    start_ms: int
    samples: np.ndarray  # (window_len, n_channels)


class Windower:
    """Sequential 200 ms / 50 ms sliding windower over a sample stream."""

    def __init__(
        self,
        window_ms: int = WINDOW_MS,
        stride_ms: int = STRIDE_MS,
        fs: float = SAMPLE_RATE_HZ,
        n_channels: int = N_CHANNELS,
    ):
        self._ms_per_sample = 1000.0 / fs
        samples_per_ms = fs / 1000.0
        self.window_len = int(round(window_ms * samples_per_ms))
        self.stride = int(round(stride_ms * samples_per_ms))
        self.n_channels = n_channels
        self._buffer = np.empty((0, n_channels))
        self._consumed = 0  # absolute index of buffer[0]
        self._next_start = 0  # absolute index of the next window start

    def push(self, samples) -> list[Window]:
        """Buffer new samples; emit every window that became complete."""
        x = np.atleast_2d(np.asarray(samples, dtype=float))
        if x.shape[1] != self.n_channels:
            raise ChannelCountError(
                f"expected (n, {self.n_channels}) samples, got {x.shape}"
            )
        self._buffer = np.concatenate([self._buffer, x], axis=0)
        out = []
        while self._consumed + self._buffer.shape[0] - self._next_start >= self.window_len:
            rel = self._next_start - self._consumed
            win = self._buffer[rel : rel + self.window_len]
            out.append(
                Window(
                    start_ms=int(round(self._next_start * self._ms_per_sample)),
                    samples=win.copy(),
                )
            )
            self._next_start += self.stride
        # Drop samples no window can ever need again.
        drop = min(self._next_start - self._consumed, self._buffer.shape[0])
        if drop > 0:
            self._buffer = self._buffer[drop:]
            self._consumed += drop
        return out


def slide_windows(stream, window_ms: int = WINDOW_MS, stride_ms: int = STRIDE_MS) -> list[Window]:
    """One-shot windowing of a complete (n, channels) array sampled at 1 kHz."""
    x = np.atleast_2d(np.asarray(stream, dtype=float))
    window_len = window_ms  # 1 sample per ms at 1 kHz
    stride = stride_ms
    out = []
    start = 0
    while start + window_len <= x.shape[0]:
        out.append(Window(start_ms=start, samples=x[start : start + window_len].copy()))
        start += stride
    return out


def window_count(n_ms: int, window_ms: int = WINDOW_MS, stride_ms: int = STRIDE_MS) -> int:
    """Number of windows a stream of n_ms milliseconds yields."""
    return max(0, (n_ms - window_ms) // stride_ms + 1)


def channel_features(x, deadband: float = 0.0) -> tuple[float, float, int, int]:
    """(MAV, TWL, ZC, SLPCH) for one channel of samples.

    ZC counts sign changes whose step exceeds the dead-band; SLPCH counts
    slope-sign reversals where both adjacent differences exceed it.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size < 2:
        raise WindowTooShortError(f"need >= 2 samples, got {x.size}")
    diffs = np.diff(x)
    mav = float(np.mean(np.abs(x)))
    twl = float(np.sum(np.abs(diffs)))
    zc = int(np.sum((x[:-1] * x[1:] < 0) & (np.abs(diffs) > deadband)))
    slpch = int(
        np.sum(
            (diffs[:-1] * diffs[1:] < 0)
            & (np.abs(diffs[:-1]) > deadband)
            & (np.abs(diffs[1:]) > deadband)
        )
    )
    return mav, twl, zc, slpch


def hudgins_features(window, deadband: float = 0.0) -> np.ndarray:
    """Stacked 32-vector [ch1:(MAV,TWL,ZC,SLPCH), ..., ch8:(...)] for a window."""
    samples = window.samples if isinstance(window, Window) else np.asarray(window, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    feats = np.empty(samples.shape[1] * FEATURES_PER_CHANNEL)
    for ch in range(samples.shape[1]):
        feats[4 * ch : 4 * ch + 4] = channel_features(samples[:, ch], deadband)
    return feats


def feature_stream(raw_stream, chain: FilterChain | None = None, deadband: float = 0.0):
    """Raw (n, 8) samples -> list of (start_ms, feature 32-vector)."""
    x = np.atleast_2d(np.asarray(raw_stream, dtype=float))
    if chain is None:
        chain = FilterChain(n_channels=x.shape[1])
    filtered = chain.process(x)
    return [(w.start_ms, hudgins_features(w, deadband)) for w in slide_windows(filtered)]


def write_raw_session(path, stream, t0_ms: int = 0) -> None:
    """JSON-lines raw session file: one {t_ms, ch[8]} record per sample."""
    x = np.atleast_2d(np.asarray(stream, dtype=float))
    with open(path, "w") as fh:
        for i, row in enumerate(x):
            fh.write(json.dumps({"t_ms": t0_ms + i, "ch": [float(v) for v in row]}))
            fh.write("\n")


def read_raw_session(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (t_ms array, (n, channels) samples)."""
    ts, rows = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            ts.append(rec["t_ms"])
            rows.append(rec["ch"])
    return np.asarray(ts, dtype=int), np.asarray(rows, dtype=float)


def write_feature_session(path, t_ms, features) -> None:
    """JSON-lines feature session file: one {t_ms, features[32]} per window."""
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    with open(path, "w") as fh:
        for t, row in zip(t_ms, feats):
            fh.write(json.dumps({"t_ms": int(t), "features": [float(v) for v in row]}))
            fh.write("\n")


def read_feature_session(path) -> tuple[np.ndarray, np.ndarray]:
    ts, rows = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            ts.append(rec["t_ms"])
            rows.append(rec["features"])
    return np.asarray(ts, dtype=int), np.asarray(rows, dtype=float)
