"""STFT analysis and weighted overlap-add synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer

ENVELOPE_FLOOR = 1e-8


def periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 22050
    window_len: int = 550
    hop: int = 132
    fft_size: int = 1024

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not 0 < self.hop <= self.window_len <= self.fft_size:
            raise ValueError(
                f"need 0 < hop <= window_len <= fft_size, got hop={self.hop}, "
                f"window_len={self.window_len}, fft_size={self.fft_size}")
        if self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.hop > self.window_len // 2:
            raise ValueError(
                f"hop {self.hop} > window_len/2 leaves the overlap-add envelope near zero")
        env = self.envelope_period()
        if env.min() < 1e-3:
            raise ValueError("synthesis envelope is not bounded away from zero")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return periodic_hann(self.window_len)

    @property
    def window_ms(self) -> float:
        return 1000.0 * self.window_len / self.sample_rate

    @property
    def hop_ms(self) -> float:
        return 1000.0 * self.hop / self.sample_rate

    def envelope_period(self) -> np.ndarray:
        """Steady-state sum of squared windows over one hop period."""
        w2 = self.window ** 2
        env = np.zeros(self.hop)
        for start in range(0, self.window_len, self.hop):
            seg = w2[start:start + self.hop]
            env[:seg.size] += seg
        return env

    def covered(self, n_samples: int) -> int:
        """Samples reconstructed by istft from a signal of ``n_samples``."""
        n = self.n_frames(n_samples)
        return 0 if n == 0 else (n - 1) * self.hop + self.window_len

    def interior(self, n_samples: int) -> slice:
        """Reconstructed region minus half a window at each edge.

        Near the edges the synthesis envelope approaches zero, so modified
        spectra are amplified there.
        """
        half = self.window_len // 2
        return slice(half, max(half, self.covered(n_samples) - half))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1


@dataclass
class Spectrogram:
    frames: np.ndarray  # complex, (n_frames, n_bins)
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D (frames, bins), got shape {self.frames.shape}")
        if self.frames.shape[1] != self.config.n_bins:
            raise ValueError(
                f"frames have {self.frames.shape[1]} bins, config expects {self.config.n_bins}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def __add__(self, other: "Spectrogram") -> "Spectrogram":
        return Spectrogram(self.frames + other.frames, self.config)


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n = cfg.n_frames(x.shape[0])
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)
    return view[::cfg.hop][:n]


def analyze_frame(segment: np.ndarray, cfg: StftConfig, window=None) -> np.ndarray:
    """FFT of one windowed, zero-padded frame."""
    w = cfg.window if window is None else window
    return np.fft.rfft(segment * w, n=cfg.fft_size)


def synthesize_frame(bins: np.ndarray, cfg: StftConfig, window=None) -> np.ndarray:
    """Inverse FFT of one frame, truncated and multiplied by the synthesis window."""
    w = cfg.window if window is None else window
    return np.fft.irfft(bins, n=cfg.fft_size)[:cfg.window_len] * w


def stft(buf: AudioBuffer, cfg: StftConfig = StftConfig()) -> Spectrogram:
    if buf.sample_rate != cfg.sample_rate:
        raise ValueError(f"buffer at {buf.sample_rate} Hz, config at {cfg.sample_rate} Hz")
    if len(buf) < cfg.window_len:
        raise ValueError(f"signal of {len(buf)} samples shorter than window {cfg.window_len}")
    frames = frame_signal(buf.samples, cfg) * cfg.window
    return Spectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=1), cfg)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Weighted overlap-add, normalised by the accumulated squared-window envelope."""
    cfg = spec.config
    frames = spec.frames
    if frames.shape[0] == 0:
        return AudioBuffer(np.zeros(0), cfg.sample_rate)
    w = cfg.window
    seg = np.fft.irfft(frames, n=cfg.fft_size, axis=1)[:, :cfg.window_len] * w
    n_out = (frames.shape[0] - 1) * cfg.hop + cfg.window_len
    out = np.zeros(n_out)
    env = np.zeros(n_out)
    w2 = w * w
    for t in range(frames.shape[0]):
        s = t * cfg.hop
        out[s:s + cfg.window_len] += seg[t]
        env[s:s + cfg.window_len] += w2
    return AudioBuffer(out / np.maximum(env, ENVELOPE_FLOOR), cfg.sample_rate)
