from __future__ import annotations

import numpy as np

from ..audio import AudioBuffer
from ..dsp import StftConfig, istft, stft
from .genome import Genome, GenomeError, LevelGene, validate_genome
from .io import load_model, save_model
from .mask import apply_mask, compress, compute_cirm, uncompress
from .network import (BinMismatch, NetworkInstance, build_network, count_macs,
                      predict_masks, stream_step)


def enhance(net: NetworkInstance, noisy: AudioBuffer, cfg: StftConfig = StftConfig()) -> AudioBuffer:
    """Offline denoising of a whole buffer (wet path only, zero delay).

    Samples past the last full analysis frame are zero.
    """
    spec = stft(noisy, cfg)
    masks = predict_masks(net, spec)
    spec.frames = apply_mask(spec.frames, masks)
    out = np.zeros(len(noisy))
    rec = istft(spec).samples
    out[:rec.size] = rec
    return AudioBuffer(out, noisy.sample_rate)


__all__ = [
    "Genome", "GenomeError", "LevelGene", "validate_genome", "load_model", "save_model",
    "apply_mask", "compress", "compute_cirm", "uncompress", "BinMismatch",
    "NetworkInstance", "build_network", "count_macs", "predict_masks", "stream_step",
    "enhance",
]
