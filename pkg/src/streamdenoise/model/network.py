"""Instantiated U-Net denoiser: offline (batched) forward and single-frame streaming.

Layout conventions
------------------
Features are ``(T, B, 2, F)``: frames, sequences, real/imag channel, bins.
Convolutions run along frequency only, so the only temporal memory is the
recurrent bottleneck (a GRU or LSTM shared across bottleneck bins) and the
running input-level normaliser. Both are strictly causal.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..dsp import Spectrogram
from ..tensor import Tensor
from .genome import Genome, bins_per_level, validate_genome
from .mask import IDENTITY_MASK_VALUE, MASK_BOUND

NETWORK_BINS = 512
NORM_SMOOTHING = 0.99
NORM_FLOOR = 1e-10
HEAD_INIT_SCALE = 0.1


class BinMismatch(ValueError):
    pass


# ------------------------------------------------------------------ features


def normalise_features(frames: np.ndarray, n_bins: int, power=None):
    """Real/imag features scaled by a running RMS gain.

    ``frames`` is complex ``(T, >=n_bins)``; returns ``((T, 2, n_bins), power)``
    where ``power`` is the smoother state after the last frame.
    """
    frames = frames[:, :n_bins]
    frame_power = np.mean(frames.real ** 2 + frames.imag ** 2, axis=1)
    gains = np.empty(frames.shape[0])
    for t, p in enumerate(frame_power):
        power = p if power is None else NORM_SMOOTHING * power + (1.0 - NORM_SMOOTHING) * p
        gains[t] = 1.0 / np.sqrt(power + NORM_FLOOR)
    feats = np.stack([frames.real, frames.imag], axis=1) * gains[:, None, None]
    return feats, power


# ------------------------------------------------------------------- cells


def gru_step(gx, h, U, hidden):
    gh = T.matmul(h, U)
    z = T.sigmoid(T.add(T.slice_(gx, 1, 0, hidden), T.slice_(gh, 1, 0, hidden)))
    r = T.sigmoid(T.add(T.slice_(gx, 1, hidden, 2 * hidden), T.slice_(gh, 1, hidden, 2 * hidden)))
    n = T.tanh(T.add(T.slice_(gx, 1, 2 * hidden, 3 * hidden),
                     T.mul(r, T.slice_(gh, 1, 2 * hidden, 3 * hidden))))
    return T.add(n, T.mul(z, T.sub(h, n)))


def lstm_step(gx, h, c, U, hidden):
    g = T.add(gx, T.matmul(h, U))
    i = T.sigmoid(T.slice_(g, 1, 0, hidden))
    f = T.sigmoid(T.slice_(g, 1, hidden, 2 * hidden))
    cand = T.tanh(T.slice_(g, 1, 2 * hidden, 3 * hidden))
    o = T.sigmoid(T.slice_(g, 1, 3 * hidden, 4 * hidden))
    c = T.add(T.mul(f, c), T.mul(i, cand))
    return T.mul(o, T.tanh(c)), c


GATES = {"gru": 3, "lstm": 4}


# ------------------------------------------------------------- MAC formulas


def conv_macs(out_positions, c_out, c_in, kernel):
    return out_positions * c_out * c_in * kernel


def linear_macs(n_in, n_out):
    return n_in * n_out


def gru_macs(hidden, n_in):
    return 3 * hidden * (hidden + n_in)


def lstm_macs(hidden, n_in):
    return 4 * hidden * (hidden + n_in)


# ------------------------------------------------------------------ network


@dataclass
class NetworkInstance:
    genome: Genome
    n_bins: int
    enc_widths: list
    hidden: int
    dec_widths: list
    params: dict
    stream_state: dict = field(default_factory=dict)

    # -- topology -----------------------------------------------------------

    @property
    def n_levels(self) -> int:
        return self.genome.n_levels

    @property
    def bins(self) -> list:
        return bins_per_level(self.genome, self.n_bins)

    @property
    def macs_per_frame(self) -> int:
        return count_macs(self)

    def dec_inputs(self, level: int) -> tuple:
        """(upstream channels, skip channels) entering decoder ``level``."""
        up = self.hidden if level == self.n_levels - 1 else self.dec_widths[level + 1]
        skip = self.enc_widths[level] if self.genome.levels[level].skip else 0
        return up, skip

    def layer_ids(self) -> list:
        """Prunable layers from the output side to the input side."""
        L = self.n_levels
        return ([f"dec{i}" for i in range(L)] + ["bottleneck"]
                + [f"enc{i}" for i in reversed(range(L))])

    def layer_width(self, layer: str) -> int:
        if layer == "bottleneck":
            return self.hidden
        if layer.startswith("enc"):
            return self.enc_widths[int(layer[3:])]
        if layer.startswith("dec"):
            return self.dec_widths[int(layer[3:])]
        if layer == "head":
            return 2
        raise KeyError(layer)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "NetworkInstance":
        params = {k: Tensor(v.data.copy()) for k, v in self.params.items()}
        return NetworkInstance(self.genome, self.n_bins, list(self.enc_widths), self.hidden,
                               list(self.dec_widths), params)

    def astype(self, dtype) -> "NetworkInstance":
        net = self.copy()
        for k, v in net.params.items():
            net.params[k] = Tensor(v.data.astype(dtype))
        return net

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def reset(self) -> None:
        self.stream_state = {}

    def weights_equal(self, other: "NetworkInstance") -> bool:
        return (self.params.keys() == other.params.keys()
                and all(np.array_equal(self.params[k].data, other.params[k].data)
                        for k in self.params))

    # -- forward ------------------------------------------------------------

    def _act(self, x):
        return T.relu(x) if self.genome.activation == "relu" else T.tanh(x)

    def initial_state(self, batch: int):
        if self.genome.bottleneck == "conv":
            return None
        n = batch * self.bins[-1]
        zeros = np.zeros((n, self.hidden), dtype=self.dtype)
        if self.genome.bottleneck == "gru":
            return Tensor(zeros)
        return (Tensor(zeros), Tensor(zeros.copy()))

    def forward(self, features, state=None):
        """Compressed masks ``(T, B, 2, F)`` for features ``(T, B, 2, F)``.

        Returns ``(mask, final_recurrent_state)``.
        """
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.ndim != 4 or x.shape[2] != 2 or x.shape[3] != self.n_bins:
            raise BinMismatch(
                f"expected features (T, B, 2, {self.n_bins}), got {tuple(x.shape)}")
        n_t, n_b = x.shape[0], x.shape[1]
        p = self.params
        h = T.reshape(x, (n_t * n_b, 2, self.n_bins))
        skips = []
        for i, lv in enumerate(self.genome.levels):
            h = T.conv1d(h, p[f"enc{i}.w"], stride=lv.stride, padding=lv.kernel // 2)
            h = self._act(T.bias_add(h, p[f"enc{i}.b"]))
            skips.append(h)

        h, state = self._bottleneck(h, n_t, n_b, state)

        for i in reversed(range(self.n_levels)):
            lv = self.genome.levels[i]
            if lv.skip:
                h = T.concat([h, skips[i]], axis=1)
            if lv.stride == 2:
                h = T.conv_transpose1d(h, p[f"dec{i}.w"], stride=2, padding=lv.kernel // 2)
            else:
                h = T.conv1d(h, p[f"dec{i}.w"], stride=1, padding=lv.kernel // 2)
            h = self._act(T.bias_add(h, p[f"dec{i}.b"]))

        h = T.bias_add(T.conv1d(h, p["head.w"]), p["head.b"])
        # K tanh(z / K): unit slope at the origin keeps head curvature O(1) for SGD
        mask = T.scale(T.tanh(T.scale(h, 1.0 / MASK_BOUND)), MASK_BOUND)
        return T.reshape(mask, (n_t, n_b, 2, self.n_bins)), state

    def _bottleneck(self, h, n_t, n_b, state):
        p = self.params
        kind = self.genome.bottleneck
        if kind == "conv":
            h = T.conv1d(h, p["bottleneck.w"], stride=1, padding=1)
            return self._act(T.bias_add(h, p["bottleneck.b"])), None

        c, f = h.shape[1], h.shape[2]
        hid = self.hidden
        seq = T.reshape(T.transpose(T.reshape(h, (n_t, n_b, c, f)), (0, 1, 3, 2)),
                        (n_t * n_b * f, c))
        gx = T.bias_add(T.matmul(seq, p["bottleneck.W"]), p["bottleneck.b"])
        steps = T.split(T.reshape(gx, (n_t, n_b * f, GATES[kind] * hid)), axis=0)
        if state is None:
            state = self.initial_state(n_b)
        outs = []
        if kind == "gru":
            hs = state
            for g in steps:
                hs = gru_step(g, hs, p["bottleneck.U"], hid)
                outs.append(hs)
            state = hs
        else:
            hs, cs = state
            for g in steps:
                hs, cs = lstm_step(g, hs, cs, p["bottleneck.U"], hid)
                outs.append(hs)
            state = (hs, cs)
        y = T.reshape(T.stack(outs, axis=0), (n_t, n_b, f, hid))
        y = T.reshape(T.transpose(y, (0, 1, 3, 2)), (n_t * n_b, hid, f))
        return y, state


# ------------------------------------------------------------------ builder


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_network(genome: Genome, rng: np.random.Generator,
                  n_bins: int = NETWORK_BINS) -> NetworkInstance:
    """Instantiate ``genome`` with fan-in scaled uniform weights and zero biases.

    The head bias starts at the compressed identity mask and the head
    weights are shrunk, so an untrained network roughly passes its input through.
    """
    validate_genome(genome, n_bins)
    enc = [lv.channels for lv in genome.levels]
    net = NetworkInstance(genome, n_bins, enc, genome.hidden, list(enc), {})
    net.params = init_params(net, rng)
    return net


def init_params(net: NetworkInstance, rng: np.random.Generator) -> dict:
    params = {}
    c_in = 2
    for i, lv in enumerate(net.genome.levels):
        c_out = net.enc_widths[i]
        params[f"enc{i}.w"] = _uniform(rng, (c_out, c_in, lv.kernel), c_in * lv.kernel)
        params[f"enc{i}.b"] = np.zeros(c_out)
        c_in = c_out
    kind, hid = net.genome.bottleneck, net.hidden
    if kind == "conv":
        params["bottleneck.w"] = _uniform(rng, (hid, c_in, 3), c_in * 3)
        params["bottleneck.b"] = np.zeros(hid)
    else:
        g = GATES[kind]
        params["bottleneck.W"] = _uniform(rng, (c_in, g * hid), hid)
        params["bottleneck.U"] = _uniform(rng, (hid, g * hid), hid)
        params["bottleneck.b"] = np.zeros(g * hid)
    for i in reversed(range(net.n_levels)):
        lv = net.genome.levels[i]
        up, skip = net.dec_inputs(i)
        ci, co = up + skip, net.dec_widths[i]
        shape = (ci, co, lv.kernel) if lv.stride == 2 else (co, ci, lv.kernel)
        params[f"dec{i}.w"] = _uniform(rng, shape, ci * lv.kernel)
        params[f"dec{i}.b"] = np.zeros(co)
    params["head.w"] = HEAD_INIT_SCALE * _uniform(rng, (2, net.dec_widths[0], 1), net.dec_widths[0])
    params["head.b"] = np.array([MASK_BOUND * np.arctanh(IDENTITY_MASK_VALUE / MASK_BOUND), 0.0])
    return {k: Tensor(v) for k, v in params.items()}


def count_macs(net: NetworkInstance) -> int:
    """Multiply-accumulates per frame."""
    bins = net.bins
    total = 0
    c_in = 2
    for i, lv in enumerate(net.genome.levels):
        total += conv_macs(bins[i + 1], net.enc_widths[i], c_in, lv.kernel)
        c_in = net.enc_widths[i]
    f_b = bins[-1]
    kind = net.genome.bottleneck
    if kind == "conv":
        total += conv_macs(f_b, net.hidden, c_in, 3)
    elif kind == "gru":
        total += f_b * gru_macs(net.hidden, c_in)
    else:
        total += f_b * lstm_macs(net.hidden, c_in)
    for i, lv in enumerate(net.genome.levels):
        up, skip = net.dec_inputs(i)
        # transposed conv: every input position touches k outputs
        positions = bins[i + 1] if lv.stride == 2 else bins[i]
        total += conv_macs(positions, net.dec_widths[i], up + skip, lv.kernel)
    total += conv_macs(bins[0], 2, net.dec_widths[0], 1)
    return int(total)


# ---------------------------------------------------------------- streaming


def _split_frame(net, frame):
    frame = np.asarray(frame)
    if frame.ndim != 1 or frame.shape[0] not in (net.n_bins, net.n_bins + 1):
        raise BinMismatch(
            f"frame has {frame.shape} bins, network expects {net.n_bins} (+1 Nyquist)")
    return frame


def _pad_nyquist(mask: np.ndarray, n_total: int, n_bins: int) -> np.ndarray:
    if n_total == n_bins:
        return mask
    extra = np.zeros(mask.shape[:-1] + (n_total - n_bins,), dtype=mask.dtype)
    extra[..., 0, :] = IDENTITY_MASK_VALUE
    return np.concatenate([mask, extra], axis=-1)


def stream_step(net: NetworkInstance, frame: np.ndarray) -> np.ndarray:
    """Advance the network by one complex noisy frame; returns the compressed mask (2, bins).

    A frame with one extra (Nyquist) bin gets an identity mask for that bin.
    """
    frame = _split_frame(net, frame)
    st = net.stream_state
    feats, st["power"] = normalise_features(frame[None, :], net.n_bins, st.get("power"))
    x = feats.astype(net.dtype)[:, None]
    mask, st["rnn"] = net.forward(x, st.get("rnn"))
    return _pad_nyquist(mask.data[0, 0], frame.shape[0], net.n_bins)


def predict_masks(net: NetworkInstance, noisy: Spectrogram) -> np.ndarray:
    """Offline forward over a whole spectrogram; same recursion as streaming."""
    frames = noisy.frames
    if frames.shape[1] not in (net.n_bins, net.n_bins + 1):
        raise BinMismatch(f"spectrogram has {frames.shape[1]} bins, network expects {net.n_bins}")
    feats, _ = normalise_features(frames, net.n_bins)
    mask, _ = net.forward(feats.astype(net.dtype)[:, None])
    return _pad_nyquist(mask.data[:, 0], frames.shape[1], net.n_bins)


def clone_with_params(net: NetworkInstance, params: dict) -> NetworkInstance:
    out = copy.copy(net)
    out.params = params
    out.stream_state = {}
    return out
