"""Streaming denoiser with a delay-aligned dry path and latency bookkeeping.

Timeline: output sample ``n`` mixes input ``n - D`` (dry) with the
reconstructed sample ``n - D`` (wet), where ``D = window_len``. A wet sample
``m`` is final once no later frame overlaps it, i.e. after the frame that
starts past ``m`` has been seen; the fixed ``D`` covers that in all cases.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioBuffer
from .dsp import StftConfig, analyze_frame, synthesize_frame
from .model.mask import apply_mask
from .model.network import NetworkInstance, stream_step

DEFAULT_MIX_RATIO = 80
ENVELOPE_FLOOR = 1e-8
DEFAULT_STACK_MS = {"phone": 10.0, "streamer": 10.0, "wireless": 20.0}


class RingBuffer:
    """Fixed-capacity FIFO of float samples."""

    def __init__(self, capacity: int, fill: int = 0):
        self._buf = np.zeros(capacity)
        self._start = 0
        self._size = 0
        if fill:
            self.push(np.zeros(fill))

    @property
    def capacity(self) -> int:
        return self._buf.size

    def __len__(self):
        return self._size

    def push(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        if self._size + x.size > self.capacity:
            raise OverflowError(f"ring buffer overflow ({self._size} + {x.size} > {self.capacity})")
        idx = (self._start + self._size + np.arange(x.size)) % self.capacity
        self._buf[idx] = x
        self._size += x.size

    def pop(self, n: int) -> np.ndarray:
        if n > self._size:
            raise IndexError(f"cannot pop {n} samples, {self._size} buffered")
        idx = (self._start + np.arange(n)) % self.capacity
        out = self._buf[idx]
        self._start = (self._start + n) % self.capacity
        self._size -= n
        return out

    def latest(self, n: int) -> np.ndarray:
        """Most recent ``n`` samples, oldest first, without consuming them."""
        if n > self._size:
            raise IndexError(f"only {self._size} samples buffered")
        idx = (self._start + self._size - n + np.arange(n)) % self.capacity
        return self._buf[idx]

    def discard_to(self, n: int) -> None:
        """Drop the oldest samples so at most ``n`` remain."""
        if self._size > n:
            self.pop(self._size - n)


def _check_ratio(ratio) -> int:
    if isinstance(ratio, bool) or int(ratio) != ratio or not 0 <= ratio <= 100:
        raise ValueError(f"mix ratio must be an integer in 0..100, got {ratio!r}")
    return int(ratio)


class StreamingDenoiser:
    """Push samples in, get the same number of samples out.

    ``net=None`` forces an identity mask, which turns the wet path into
    plain analysis/resynthesis.
    """

    def __init__(self, net: NetworkInstance | None, cfg: StftConfig = StftConfig(),
                 mix_ratio: int = DEFAULT_MIX_RATIO, dtype=np.float32):
        self.config = cfg
        self.net = None if net is None else net.astype(dtype)
        self.mix_ratio = _check_ratio(mix_ratio)
        self.reset()

    @property
    def delay(self) -> int:
        return self.config.window_len

    def reset(self) -> None:
        cfg = self.config
        W, hop = cfg.window_len, cfg.hop
        self._history = RingBuffer(2 * W)
        self._dry = RingBuffer(2 * W, fill=W)
        self._wet = RingBuffer(2 * W + hop, fill=W)
        self._acc = np.zeros(W)
        self._env = np.zeros(W)
        self._window = cfg.window
        self._n = 0
        self._next_end = W
        if self.net is not None:
            self.net.reset()

    def set_mix_ratio(self, ratio: int) -> None:
        self.mix_ratio = _check_ratio(ratio)

    def push_samples(self, chunk) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=np.float64).reshape(-1)
        out = np.empty(chunk.size)
        pos = 0
        while pos < chunk.size:
            take = min(self._next_end - self._n, chunk.size - pos)
            seg = chunk[pos:pos + take]
            self._history.push(seg)
            self._history.discard_to(self.config.window_len)
            self._dry.push(seg)
            dry = self._dry.pop(take)
            wet = self._wet.pop(take)
            a = self.mix_ratio / 100.0
            out[pos:pos + take] = (1.0 - a) * dry + a * wet
            self._n += take
            pos += take
            if self._n == self._next_end:
                self._process_frame()
                self._next_end += self.config.hop
        return out

    def _process_frame(self) -> None:
        cfg = self.config
        frame = analyze_frame(self._history.latest(cfg.window_len), cfg, self._window)
        if self.net is not None:
            frame = apply_mask(frame, stream_step(self.net, frame))
        self._acc += synthesize_frame(frame, cfg, self._window)
        self._env += self._window ** 2
        hop = cfg.hop
        self._wet.push(self._acc[:hop] / np.maximum(self._env[:hop], ENVELOPE_FLOOR))
        self._acc = np.concatenate([self._acc[hop:], np.zeros(hop)])
        self._env = np.concatenate([self._env[hop:], np.zeros(hop)])

    def process(self, buf: AudioBuffer, chunk: int = 4096, flush: bool = True) -> AudioBuffer:
        """Run a whole buffer through the stream.

        With ``flush`` the input is followed by ``delay`` zeros so the last
        input samples reach the output (output is ``delay`` samples longer).
        """
        if buf.sample_rate != self.config.sample_rate:
            raise ValueError(f"sample rate {buf.sample_rate} differs from the "
                             f"stream's {self.config.sample_rate}")
        x = buf.samples
        if flush:
            x = np.concatenate([x, np.zeros(self.delay)])
        parts = [self.push_samples(x[i:i + chunk]) for i in range(0, x.size, chunk)]
        return AudioBuffer(np.concatenate(parts) if parts else np.zeros(0), buf.sample_rate)


# ---------------------------------------------------------------- latency


@dataclass
class LatencyBudget:
    algorithmic_ms: float
    measured_compute_ms: float
    modeled_stack_ms: dict = field(default_factory=dict)

    @property
    def total_ms(self) -> float:
        return self.algorithmic_ms + self.measured_compute_ms + sum(self.modeled_stack_ms.values())

    def rows(self) -> list:
        rows = [("algorithmic", self.algorithmic_ms), ("compute", self.measured_compute_ms)]
        rows += [(k, float(v)) for k, v in self.modeled_stack_ms.items()]
        return rows + [("total", self.total_ms)]

    def to_text(self) -> str:
        rows = self.rows()
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {ms:8.2f} ms" for name, ms in rows) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "ms"])
            for name, ms in self.rows():
                w.writerow([name, f"{ms:.4f}"])


def latency_report(stream, bench, stack_model: dict | None = None) -> LatencyBudget:
    """Static delay budget: window + measured compute + external stages.

    ``stream`` may be a StreamingDenoiser or a StftConfig; ``bench`` is a
    LatencyStats (its median is used).
    """
    cfg = getattr(stream, "config", stream)
    stack = dict(DEFAULT_STACK_MS if stack_model is None else stack_model)
    return LatencyBudget(1e3 * cfg.window_len / cfg.sample_rate, bench.median_us / 1e3, stack)
