"""Mask-approximation training with momentum SGD, plus quality evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..audio import Mixture, si_sdr
from ..dsp import StftConfig, stft
from ..model import enhance
from ..model.mask import compute_cirm
from ..model.network import NetworkInstance, normalise_features
from ..tensor import Tape, Tensor

MOMENTUM = 0.9


class TrainingDiverged(RuntimeError):
    def __init__(self, step, loss):
        super().__init__(f"loss became {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class HyperParams:
    learning_rate: float = 0.05
    batch_frames: int = 48
    steps: int = 200
    batch_size: int = 4

    def __post_init__(self):
        if not 1e-6 <= self.learning_rate <= 1.0 and self.learning_rate != 0.0:
            raise ValueError(f"learning_rate {self.learning_rate} outside [1e-6, 1]")
        if self.batch_frames < 1 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_frames, batch_size must be >= 1 and steps >= 0")


@dataclass
class PreparedScene:
    features: np.ndarray  # (T, 2, bins)
    target: np.ndarray    # (T, 2, bins) compressed cIRM
    mixture: Mixture


def prepare_scene(mix: Mixture, n_bins: int = 512, cfg: StftConfig = StftConfig()) -> PreparedScene:
    noisy = stft(mix.mixed, cfg)
    clean = stft(mix.clean, cfg)
    feats, _ = normalise_features(noisy.frames, n_bins)
    target = compute_cirm(clean, noisy)[:, :, :n_bins]
    return PreparedScene(feats, target, mix)


def prepare(scenes, n_bins=512, cfg=StftConfig()) -> list:
    return [s if isinstance(s, PreparedScene) else prepare_scene(s, n_bins, cfg) for s in scenes]


@dataclass
class TraceRow:
    step: int
    loss: float
    learning_rate: float


@dataclass
class TrainResult:
    net: NetworkInstance
    trace: list = field(default_factory=list)
    velocity: dict = field(default_factory=dict)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.trace])


def sample_batch(prepared, hp: HyperParams, rng: np.random.Generator):
    """Random windows of ``batch_frames`` frames -> features/targets (T, B, 2, bins)."""
    feats, targets = [], []
    for _ in range(hp.batch_size):
        sc = prepared[int(rng.integers(len(prepared)))]
        n = sc.features.shape[0]
        width = min(hp.batch_frames, n)
        start = int(rng.integers(0, n - width + 1))
        feats.append(sc.features[start:start + width])
        targets.append(sc.target[start:start + width])
    width = min(f.shape[0] for f in feats)
    return (np.stack([f[:width] for f in feats], axis=1),
            np.stack([t[:width] for t in targets], axis=1))


def batch_loss(net: NetworkInstance, features, target) -> Tensor:
    pred, _ = net.forward(features)
    return T.mse(pred, Tensor(target))


def loss_and_grads(net: NetworkInstance, features, target):
    for p in net.params.values():
        p.requires_grad = True
    try:
        with Tape() as tape:
            loss = batch_loss(net, features, target)
        grads = tape.backward(loss)
    finally:
        for p in net.params.values():
            p.requires_grad = False
    return float(loss.data), {k: grads[p] for k, p in net.params.items()}


def train_sgd(net: NetworkInstance, scenes, hp: HyperParams, rng: np.random.Generator,
              velocity: dict | None = None, stft_cfg: StftConfig = StftConfig(),
              step_offset: int = 0) -> TrainResult:
    """Train a copy of ``net`` on compressed-cIRM MSE with momentum SGD.

    ``scenes`` may hold Mixtures or PreparedScenes. ``velocity`` carries
    momentum buffers across calls (PBT rounds).
    """
    if not scenes:
        raise ValueError("no training scenes")
    prepared = prepare(scenes, net.n_bins, stft_cfg)
    net = net.copy()
    velocity = {k: v.copy() for k, v in (velocity or {}).items()}
    trace = []
    for step in range(hp.steps):
        feats, target = sample_batch(prepared, hp, rng)
        loss, grads = loss_and_grads(net, feats, target)
        if not np.isfinite(loss):
            raise TrainingDiverged(step + step_offset, loss)
        for k, p in net.params.items():
            v = velocity.get(k)
            v = grads[k].copy() if v is None else MOMENTUM * v + grads[k]
            velocity[k] = v
            p.data = p.data - hp.learning_rate * v
        trace.append(TraceRow(step + step_offset, loss, hp.learning_rate))
    return TrainResult(net, trace, velocity)


def write_trace_csv(path, trace, member: int = 0, event: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "member", "loss", "learning_rate", "event"])
        for r in trace:
            w.writerow([r.step, member, f"{r.loss:.10g}", f"{r.learning_rate:.10g}", event])


# ------------------------------------------------------------------ quality


def scene_improvement(net: NetworkInstance, mix: Mixture, cfg: StftConfig = StftConfig()) -> float:
    """SI-SDR(enhanced) - SI-SDR(noisy) over the interior reconstructed region."""
    out = enhance(net, mix.mixed, cfg)
    region = cfg.interior(len(mix.mixed))
    ref = mix.clean.samples[region]
    return si_sdr(ref, out.samples[region]) - si_sdr(ref, mix.mixed.samples[region])


def evaluate_quality(net: NetworkInstance, scenes, cfg: StftConfig = StftConfig()) -> float:
    """Mean SI-SDR improvement (dB) over ``scenes``."""
    mixes = [s.mixture if isinstance(s, PreparedScene) else s for s in scenes]
    return float(np.mean([scene_improvement(net, m, cfg) for m in mixes]))
