"""Iterative structured magnitude pruning with fine-tuning between steps.

Channel layout reminders: encoder/bottleneck-conv/stride-1 decoder weights are
``(out, in, k)``; stride-2 decoder (transposed) weights are ``(in, out, k)``;
the recurrent input matrix is ``(in, gates*hidden)`` and decoder inputs are
the concatenation ``[upstream, skip]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model.network import GATES, NetworkInstance
from .tensor import Tensor
from .train.sgd import HyperParams, evaluate_quality, prepare, train_sgd


class PruneError(ValueError):
    pass


@dataclass(frozen=True)
class PruneSchedule:
    fraction_per_step: float = 0.05
    finetune_steps: int = 50
    passes: int = 3
    quality_floor_db: float = float("-inf")
    target_mac_reduction: float | None = None
    learning_rate: float = 0.05
    batch_frames: int = 48
    batch_size: int = 4

    def __post_init__(self):
        if not 0.0 < self.fraction_per_step <= 0.25:
            raise ValueError(f"fraction_per_step {self.fraction_per_step} outside (0, 0.25]")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.finetune_steps < 0:
            raise ValueError("finetune_steps must be >= 0")

    def channels_to_remove(self, width: int) -> int:
        return max(1, math.ceil(self.fraction_per_step * width - 1e-12))


@dataclass
class PruneStep:
    pass_index: int
    layer: str
    removed: int
    macs_before: int
    macs_after: int
    quality_db: float
    reverted: bool = False


@dataclass
class PruneReport:
    baseline_macs: int
    baseline_quality_db: float
    steps: list = field(default_factory=list)

    @property
    def final_macs(self) -> int:
        kept = [s.macs_after for s in self.steps]
        return kept[-1] if kept else self.baseline_macs

    @property
    def final_quality_db(self) -> float:
        kept = [s.quality_db for s in self.steps if not s.reverted]
        return kept[-1] if kept else self.baseline_quality_db

    @property
    def mac_reduction(self) -> float:
        return 1.0 - self.final_macs / self.baseline_macs

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pass", "layer", "removed", "macs_before", "macs_after",
                        "quality_db", "reverted"])
            for s in self.steps:
                w.writerow([s.pass_index, s.layer, s.removed, s.macs_before, s.macs_after,
                            f"{s.quality_db:.6f}", int(s.reverted)])
            w.writerow(["total", "", "", self.baseline_macs, self.final_macs,
                        f"{self.final_quality_db:.6f}", ""])


# ------------------------------------------------------- structural editing


def _out_axis(net, layer):
    """(weight name, output axis) of the tensor producing ``layer``'s channels."""
    if layer.startswith("dec") and net.genome.levels[int(layer[3:])].stride == 2:
        return f"{layer}.w", 1
    return f"{layer}.w", 0


def _in_axis(net, layer):
    if layer.startswith("dec") and net.genome.levels[int(layer[3:])].stride == 2:
        return 0
    return 1


def _unit_columns(net, units):
    """Columns of the stacked gate matrices belonging to hidden ``units``."""
    g = GATES[net.genome.bottleneck]
    return np.concatenate([np.asarray(units) + gate * net.hidden for gate in range(g)])


def channel_saliency(net: NetworkInstance, layer: str) -> np.ndarray:
    """L1 norm of the weights (and bias) producing each output channel."""
    p = {k: v.data for k, v in net.params.items()}
    if layer == "head":
        raise PruneError("the output head is protected")
    if layer == "bottleneck" and net.genome.bottleneck != "conv":
        h, g = net.hidden, GATES[net.genome.bottleneck]
        per_col = (np.abs(p["bottleneck.W"]).sum(axis=0) + np.abs(p["bottleneck.U"]).sum(axis=0)
                   + np.abs(p["bottleneck.b"]))
        return per_col.reshape(g, h).sum(axis=0)
    name, axis = _out_axis(net, layer)
    w = np.moveaxis(p[name], axis, 0)
    return np.abs(w).reshape(w.shape[0], -1).sum(axis=1) + np.abs(p[f"{layer}.b"])


def _consumers(net, layer):
    """(param name, input axis, offset) for every place ``layer``'s output is read."""
    L = net.n_levels
    if layer.startswith("enc"):
        i = int(layer[3:])
        if i + 1 < L:
            out = [(f"enc{i + 1}.w", 1, 0)]
        elif net.genome.bottleneck == "conv":
            out = [("bottleneck.w", 1, 0)]
        else:
            out = [("bottleneck.W", 0, 0)]
        if net.genome.levels[i].skip:
            up, _ = net.dec_inputs(i)
            out.append((f"dec{i}.w", _in_axis(net, f"dec{i}"), up))
        return out
    if layer == "bottleneck":
        return [(f"dec{L - 1}.w", _in_axis(net, f"dec{L - 1}"), 0)]
    i = int(layer[3:])
    if i == 0:
        return [("head.w", 1, 0)]
    return [(f"dec{i - 1}.w", _in_axis(net, f"dec{i - 1}"), 0)]


def prune_channels(net: NetworkInstance, layer: str, k: int) -> NetworkInstance:
    """Remove the ``k`` lowest-saliency output channels of ``layer`` and their readers."""
    if layer == "head":
        raise PruneError("the output head is protected")
    if layer not in net.layer_ids():
        raise PruneError(f"unknown layer {layer!r}")
    width = net.layer_width(layer)
    if k < 0:
        raise PruneError("k must be non-negative")
    if width - k < 1:
        raise PruneError(f"{layer}: cannot prune {k} of {width} channels (at least 1 must remain)")
    out = net.copy()
    if k == 0:
        return out

    order = np.argsort(channel_saliency(net, layer), kind="stable")
    drop = np.sort(order[:k])
    keep = np.setdiff1d(np.arange(width), drop)
    p = {name: t.data for name, t in out.params.items()}

    for name, axis, offset in _consumers(net, layer):
        p[name] = np.delete(p[name], drop + offset, axis=axis)

    if layer == "bottleneck" and net.genome.bottleneck != "conv":
        cols = _unit_columns(net, drop)
        p["bottleneck.W"] = np.delete(p["bottleneck.W"], cols, axis=1)
        p["bottleneck.b"] = np.delete(p["bottleneck.b"], cols)
        p["bottleneck.U"] = np.delete(np.delete(p["bottleneck.U"], cols, axis=1), drop, axis=0)
    else:
        name, axis = _out_axis(net, layer)
        p[name] = np.take(p[name], keep, axis=axis)
        p[f"{layer}.b"] = p[f"{layer}.b"][keep]

    if layer == "bottleneck":
        out.hidden = width - k
    elif layer.startswith("enc"):
        out.enc_widths[int(layer[3:])] = width - k
    else:
        out.dec_widths[int(layer[3:])] = width - k
    out.params = {name: Tensor(np.ascontiguousarray(v)) for name, v in p.items()}
    return out


# ------------------------------------------------------------------ loop


def prune_loop(net: NetworkInstance, schedule: PruneSchedule, scenes, val_scenes,
               rng: np.random.Generator, log=None):
    """Prune output side first, fine-tune after every step, stop at target or floor.

    A step that takes quality below the floor is undone and ends the loop.
    Returns ``(pruned_net, report)``.
    """
    prepared = prepare(scenes)
    baseline_q = evaluate_quality(net, val_scenes)
    report = PruneReport(net.macs_per_frame, baseline_q)
    hp = HyperParams(schedule.learning_rate, schedule.batch_frames, schedule.finetune_steps,
                     schedule.batch_size)
    for pass_index in range(schedule.passes):
        for layer in net.layer_ids():
            width = net.layer_width(layer)
            k = schedule.channels_to_remove(width)
            if width - k < 1:
                continue
            before = net.macs_per_frame
            cand = prune_channels(net, layer, k)
            if schedule.finetune_steps:
                cand = train_sgd(cand, prepared, hp, rng).net
            q = evaluate_quality(cand, val_scenes)
            if q < schedule.quality_floor_db:
                report.steps.append(PruneStep(pass_index, layer, k, before, before, q, True))
                if log:
                    log(f"pass {pass_index} {layer}: quality {q:.2f} dB below floor, reverted")
                return net, report
            net = cand
            report.steps.append(PruneStep(pass_index, layer, k, before, net.macs_per_frame, q))
            if log:
                log(f"pass {pass_index} {layer}: -{k} ch, macs {before} -> "
                    f"{net.macs_per_frame}, quality {q:.2f} dB")
            if (schedule.target_mac_reduction is not None
                    and report.mac_reduction >= schedule.target_mac_reduction):
                return net, report
    return net, report
