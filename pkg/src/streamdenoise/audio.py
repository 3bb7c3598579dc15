"""Audio containers, WAV I/O, SNR-controlled mixing and the SI-SDR metric."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

SI_SDR_CAP_DB = 100.0

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavError(Exception):
    """Base class for WAV reading/writing failures."""


class WavFileMissing(WavError, FileNotFoundError):
    pass


class UnsupportedCodec(WavError):
    pass


class TruncatedChunk(WavError):
    pass


class SnrUndefined(ValueError):
    """Raised when one side of a mixture has zero power."""


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio samples must be finite")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def power(self) -> float:
        return mean_power(self.samples)


@dataclass
class Mixture:
    mixed: AudioBuffer
    clean: AudioBuffer
    noise_gain: float
    snr_db: float

    @property
    def noise(self) -> AudioBuffer:
        return AudioBuffer(self.mixed.samples - self.clean.samples, self.mixed.sample_rate)


def mean_power(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return 0.0
    return float(np.mean(x * x))


# --------------------------------------------------------------------------- WAV


def _read_chunks(data: bytes, path):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedCodec(f"{path}: not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos < len(data):
        if pos + 8 > len(data):
            raise TruncatedChunk(f"{path}: chunk header cut at byte {pos}")
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise TruncatedChunk(
                f"{path}: chunk {cid!r} declares {size} bytes, only {len(body)} present")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def read_wav(path) -> AudioBuffer:
    """Read a PCM16 or float32 WAV file, downmixing to mono by channel mean."""
    if not os.path.exists(path):
        raise WavFileMissing(f"{path}: no such file")
    with open(path, "rb") as fh:
        data = fh.read()
    chunks = _read_chunks(data, path)
    if b"fmt " not in chunks:
        raise TruncatedChunk(f"{path}: missing fmt chunk")
    if b"data" not in chunks:
        raise TruncatedChunk(f"{path}: missing data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise TruncatedChunk(f"{path}: fmt chunk too short ({len(fmt)} bytes)")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels < 1:
        raise UnsupportedCodec(f"{path}: zero channels")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedCodec(f"{path}: format tag {tag} with {bits} bits is not supported")

    raw = chunks[b"data"]
    frame_bytes = dtype.itemsize * channels
    if len(raw) % frame_bytes:
        raise TruncatedChunk(f"{path}: data chunk is not a whole number of frames")
    frames = np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(-1, channels) * scale
    samples = frames.mean(axis=1) if channels > 1 else frames[:, 0]
    return AudioBuffer(samples, rate)


def write_wav(path, buf: AudioBuffer) -> None:
    """Write a mono IEEE float-32 WAV file."""
    samples = np.asarray(buf.samples, dtype="<f4")
    if not np.all(np.isfinite(samples)):
        raise ValueError("refusing to write non-finite samples")
    payload = samples.tobytes()
    rate = buf.sample_rate
    fmt = struct.pack("<HHIIHH", _WAVE_FORMAT_IEEE_FLOAT, 1, rate, rate * 4, 4, 32)
    # float formats carry a cbSize field and a fact chunk
    fmt += struct.pack("<H", 0)
    fact = struct.pack("<I", samples.size)
    body = (b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"fact" + struct.pack("<I", len(fact)) + fact
            + b"data" + struct.pack("<I", len(payload)) + payload)
    try:
        with open(path, "wb") as fh:
            fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise WavError(f"{path}: cannot write ({exc.strerror})") from exc


def write_wav_pcm16(path, buf: AudioBuffer, channels: int = 1) -> None:
    """PCM16 writer, mostly for producing fixtures readable by other tools."""
    pcm = np.clip(np.round(buf.samples * 32768.0), -32768, 32767).astype("<i2")
    if channels > 1:
        pcm = np.repeat(pcm[:, None], channels, axis=1)
    payload = pcm.tobytes()
    rate = buf.sample_rate
    fmt = struct.pack("<HHIIHH", _WAVE_FORMAT_PCM, channels, rate, rate * 2 * channels,
                      2 * channels, 16)
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


# ------------------------------------------------------------------- mixing


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float,
               rng: np.random.Generator) -> Mixture:
    """Cut a random noise segment and scale it so clean/noise power hits ``snr_db``."""
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rates differ: clean {clean.sample_rate}, noise {noise.sample_rate}")
    n = len(clean)
    if len(noise) < n:
        raise ValueError(f"noise ({len(noise)} samples) shorter than clean ({n})")
    offset = int(rng.integers(0, len(noise) - n + 1))
    segment = noise.samples[offset:offset + n]
    p_clean = mean_power(clean.samples)
    p_noise = mean_power(segment)
    if p_clean == 0.0:
        raise SnrUndefined("clean signal has zero power")
    if p_noise == 0.0:
        raise SnrUndefined("noise segment has zero power")
    gain = float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))
    mixed = clean.samples + gain * segment
    return Mixture(AudioBuffer(mixed, clean.sample_rate), clean, gain, float(snr_db))


def measured_snr(mix: Mixture) -> float:
    noise = mix.mixed.samples - mix.clean.samples
    return 10.0 * np.log10(mean_power(mix.clean.samples) / mean_power(noise))


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, clipped to +/-100 dB.

    Accepts AudioBuffers or plain arrays.
    """
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: reference {ref.shape}, estimate {est.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference has zero power")
    scale = float(np.dot(ref, est)) / ref_energy
    target = scale * ref
    residual = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if num == 0.0:
        return -SI_SDR_CAP_DB
    if den == 0.0:
        return SI_SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))
