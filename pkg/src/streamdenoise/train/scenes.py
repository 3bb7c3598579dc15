"""Synthetic speech-in-noise scenes.

The speech proxy is a harmonic complex with a gliding fundamental, three
formant resonances that drift and are amplitude modulated, and a syllabic
on/off envelope. Babble is a sum of detuned proxies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..audio import AudioBuffer, Mixture, mix_at_snr

NOISE_KINDS = ("white", "pink", "babble")
_FORMANT_RANGES = ((300.0, 900.0), (900.0, 2400.0), (2400.0, 3500.0))
_FORMANT_WIDTHS = (90.0, 140.0, 200.0)
_MAX_HARMONIC_HZ = 5000.0


@dataclass(frozen=True)
class SceneConfig:
    f0_range: tuple = (90.0, 220.0)
    formant_am_rate: tuple = (2.0, 6.0)
    syllable_rate: tuple = (3.0, 6.0)
    noise_kind: str = "white"
    snr_range: tuple = (0.0, 0.0)
    duration: float = 2.0
    sample_rate: int = 22050
    speech_rms: float = 0.05
    babble_talkers: int = 6

    def __post_init__(self):
        lo, hi = self.snr_range
        if not -12.0 <= lo <= hi <= 12.0:
            raise ValueError(f"snr_range {self.snr_range} must lie within [-12, 12] dB")
        if self.duration < 1.0:
            raise ValueError(f"duration {self.duration} s is below the 1 s minimum")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind {self.noise_kind!r} not in {NOISE_KINDS}")
        if not 0 < self.f0_range[0] <= self.f0_range[1]:
            raise ValueError(f"invalid f0_range {self.f0_range}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


def _syllable_envelope(n, sr, rate_range, rng):
    env = np.zeros(n)
    t = int(rng.uniform(0.02, 0.15) * sr)
    while t < n:
        rate = rng.uniform(*rate_range)
        dur = int(sr * rng.uniform(0.55, 0.9) / rate)
        gap = int(sr * rng.uniform(0.1, 0.45) / rate)
        seg = min(dur, n - t)
        if seg > 0:
            ramp = np.sin(np.pi * np.arange(seg) / max(dur, 1)) ** 0.6
            env[t:t + seg] = ramp * rng.uniform(0.6, 1.0)
        t += dur + gap
    return env


def _smooth_track(n, lo, hi, rate, rng):
    """Random piecewise-linear track between lo and hi with ~``rate`` knots per second."""
    knots = max(2, int(np.ceil(rate * n / 22050.0)) + 2)
    xs = np.linspace(0, n - 1, knots)
    return np.interp(np.arange(n), xs, rng.uniform(lo, hi, size=knots))


def speech_proxy(cfg: SceneConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    sr = cfg.sample_rate
    f0 = _smooth_track(n, cfg.f0_range[0], cfg.f0_range[1], 3.0 * 22050.0 / sr, rng)
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    formants = [_smooth_track(n, lo, hi, 4.0 * 22050.0 / sr, rng) for lo, hi in _FORMANT_RANGES]
    am = []
    for _ in _FORMANT_RANGES:
        rate = rng.uniform(*cfg.formant_am_rate)
        am.append(0.65 + 0.35 * np.sin(2 * np.pi * rate * np.arange(n) / sr + rng.uniform(0, 2 * np.pi)))
    n_harm = int(min(_MAX_HARMONIC_HZ, 0.45 * sr) // cfg.f0_range[0])
    out = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f0
        live = fk < min(_MAX_HARMONIC_HZ, 0.45 * sr)
        if not live.any():
            break
        gain = np.zeros(n)
        for (fc, width, a) in zip(formants, _FORMANT_WIDTHS, am):
            gain += a * np.exp(-0.5 * ((fk - fc) / width) ** 2)
        gain += 0.05  # spectral floor between formants
        gain *= 1.0 / (1.0 + fk / 1500.0)  # overall spectral tilt
        out += np.where(live, gain, 0.0) * np.sin(k * phase)
    out *= _syllable_envelope(n, sr, cfg.syllable_rate, rng)
    rms = np.sqrt(np.mean(out ** 2))
    return out * (cfg.speech_rms / rms) if rms > 0 else out


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    return x / np.std(x)


def make_noise(cfg: SceneConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.noise_kind == "white":
        return rng.standard_normal(n)
    if cfg.noise_kind == "pink":
        return pink_noise(n, rng)
    talker_cfg = SceneConfig(f0_range=(cfg.f0_range[0] * 0.8, cfg.f0_range[1] * 1.3),
                             formant_am_rate=cfg.formant_am_rate,
                             syllable_rate=cfg.syllable_rate, noise_kind="white",
                             duration=max(cfg.duration, 1.0), sample_rate=cfg.sample_rate)
    babble = np.zeros(n)
    for _ in range(cfg.babble_talkers):
        babble += speech_proxy(talker_cfg, n, rng)
    return babble


def scene_sources(cfg: SceneConfig, rng: np.random.Generator):
    """Unmixed (clean, noise) buffers; the noise is a quarter second longer."""
    n = int(round(cfg.duration * cfg.sample_rate))
    clean = speech_proxy(cfg, n, rng)
    noise = make_noise(cfg, n + cfg.sample_rate // 4, rng)
    return AudioBuffer(clean, cfg.sample_rate), AudioBuffer(noise, cfg.sample_rate)


def synth_scene(cfg: SceneConfig, rng: np.random.Generator) -> Mixture:
    """One speech-in-noise mixture; deterministic given the generator state."""
    clean, noise = scene_sources(cfg, rng)
    lo, hi = cfg.snr_range
    snr = lo if lo == hi else float(rng.uniform(lo, hi))
    return mix_at_snr(clean, noise, snr, rng)


def synth_scenes(cfg: SceneConfig, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [synth_scene(cfg, rng) for _ in range(count)]
