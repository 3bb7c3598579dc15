"""Complex ideal ratio mask: ground truth, compression and application."""

from __future__ import annotations

import numpy as np

from ..dsp import Spectrogram

MASK_BOUND = 10.0      # K
MASK_STEEPNESS = 0.1   # C
POWER_FLOOR = 1e-8
_CLAMP_MARGIN = 1e-6


def compress(m, bound=MASK_BOUND, steepness=MASK_STEEPNESS):
    """K (1 - e^{-C m}) / (1 + e^{-C m}), i.e. K tanh(C m / 2); keeps |value| < K."""
    return bound * np.tanh(0.5 * steepness * np.asarray(m, dtype=np.float64))


def uncompress(c, bound=MASK_BOUND, steepness=MASK_STEEPNESS):
    """Inverse of :func:`compress`; values at or beyond the bound are clamped just inside."""
    c = np.asarray(c, dtype=np.float64)
    lim = bound - _CLAMP_MARGIN
    c = np.clip(c, -lim, lim)
    return -np.log((bound - c) / (bound + c)) / steepness


def raw_cirm(clean: np.ndarray, noisy: np.ndarray) -> np.ndarray:
    """S / Y with |Y|^2 floored."""
    denom = np.maximum(noisy.real ** 2 + noisy.imag ** 2, POWER_FLOOR)
    return clean * np.conj(noisy) / denom


def compute_cirm(clean: Spectrogram, noisy: Spectrogram) -> np.ndarray:
    """Compressed cIRM, shape (frames, 2, bins): channel 0 real, channel 1 imaginary."""
    if clean.frames.shape != noisy.frames.shape:
        raise ValueError(
            f"spectrogram shapes differ: clean {clean.frames.shape}, noisy {noisy.frames.shape}")
    m = raw_cirm(clean.frames, noisy.frames)
    return np.stack([compress(m.real), compress(m.imag)], axis=1)


def mask_to_complex(mask: np.ndarray) -> np.ndarray:
    """(…, 2, bins) compressed mask -> (…, bins) complex uncompressed mask."""
    mask = np.asarray(mask)
    return uncompress(mask[..., 0, :]) + 1j * uncompress(mask[..., 1, :])


def apply_mask(noisy_bins: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Uncompress ``mask`` (…, 2, bins) and multiply into complex ``noisy_bins`` (…, bins)."""
    noisy_bins = np.asarray(noisy_bins)
    mask = np.asarray(mask)
    if mask.shape[-2] != 2 or mask.shape[-1] != noisy_bins.shape[-1]:
        raise ValueError(f"mask shape {mask.shape} does not match {noisy_bins.shape[-1]} bins")
    return noisy_bins * mask_to_complex(mask)


IDENTITY_MASK_VALUE = float(compress(1.0))
