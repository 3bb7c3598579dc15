import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_genome
from streamdenoise.audio import si_sdr
from streamdenoise.dsp import StftConfig, istft, stft
from streamdenoise.model import (BinMismatch, Genome, GenomeError, LevelGene, apply_mask,
                                 build_network, compress, compute_cirm, count_macs, enhance,
                                 load_model, predict_masks, save_model, stream_step, uncompress,
                                 validate_genome)
from streamdenoise.model.genome import parse_genome_text
from streamdenoise.model.io import ModelFileError, model_bytes, parse_model
from streamdenoise.model.mask import MASK_BOUND, raw_cirm
from streamdenoise.model.network import (conv_macs, gru_macs, linear_macs, lstm_macs,
                                         normalise_features)
from streamdenoise.train import SceneConfig, synth_scenes

K, C = 10.0, 0.1
RNG = np.random.default_rng


def _c_ref(m):
    return K * (1 - np.exp(-C * m)) / (1 + np.exp(-C * m))


# ------------------------------------------------------------------- mask


def test_identity_cirm_compresses_to_formula_value():
    spec = stft(synth_scenes(SceneConfig(), 1, 0)[0].mixed)
    cm = compute_cirm(spec, spec)
    raw = raw_cirm(spec.frames, spec.frames)
    assert np.allclose(raw, 1.0)
    assert np.allclose(cm[:, 0], _c_ref(1.0), atol=1e-12)
    assert np.allclose(cm[:, 1], 0.0, atol=1e-12)
    assert _c_ref(1.0) == pytest.approx(0.49958, abs=1e-5)


def test_zero_clean_gives_zero_mask():
    spec = stft(synth_scenes(SceneConfig(), 1, 0)[0].mixed)
    zero = type(spec)(np.zeros_like(spec.frames), spec.config)
    assert not compute_cirm(zero, spec).any()


def test_compress_inverse_example_and_shape_error():
    assert uncompress(compress(3.7)) == pytest.approx(3.7, abs=1e-9)
    a = stft(synth_scenes(SceneConfig(), 1, 0)[0].mixed)
    b = type(a)(a.frames[:-1], a.config)
    with pytest.raises(ValueError):
        compute_cirm(a, b)


@settings(max_examples=100, deadline=None)
@given(c=st.floats(-9.999, 9.999))
def test_compress_uncompress_inverse(c):
    m = uncompress(c)
    assert compress(m) == pytest.approx(c, abs=1e-9)
    assert _c_ref(m) == pytest.approx(c, abs=1e-9)


def test_uncompress_clamps_at_bound():
    assert np.isfinite(uncompress(np.array([K, -K, 2 * K]))).all()


def test_apply_mask_identity_and_zero():
    y = RNG(0).standard_normal(513) + 1j * RNG(1).standard_normal(513)
    ident = np.stack([np.full(513, compress(1.0)), np.zeros(513)])
    assert np.allclose(apply_mask(y, ident), y, atol=1e-6)
    assert not apply_mask(y, np.zeros((2, 513))).any()
    with pytest.raises(ValueError):
        apply_mask(y, np.zeros((2, 512)))


@pytest.mark.parametrize("kind", ["white", "pink", "babble"])
def test_oracle_mask_ceiling(kind):
    cfg = SceneConfig(noise_kind=kind, snr_range=(0.0, 0.0))
    for mix in synth_scenes(cfg, 2, 7):
        Y, S = stft(mix.mixed), stft(mix.clean)
        est = istft(type(Y)(apply_mask(Y.frames, compute_cirm(S, Y)), Y.config)).samples
        region = StftConfig().interior(len(mix.mixed))
        assert si_sdr(mix.clean.samples[region], est[region]) >= 30.0


# ------------------------------------------------------------------ genome


def test_stride_two_rejects_odd_bins():
    g = Genome((LevelGene(8, 3, 2, True),), "conv", 8)
    with pytest.raises(GenomeError):
        validate_genome(g, 513)
    with pytest.raises(GenomeError):
        build_network(g, RNG(0), n_bins=513)
    validate_genome(g, 512)


@pytest.mark.parametrize("bad", [
    Genome((), "gru", 16),
    Genome((LevelGene(3),), "gru", 16),
    Genome((LevelGene(8, 4),), "gru", 16),
    Genome((LevelGene(8),), "rnn", 16),
    Genome((LevelGene(8),), "gru", 200),
    Genome((LevelGene(8),), "gru", 16, "gelu"),
    Genome(tuple(LevelGene(8) for _ in range(5)), "gru", 16),
])
def test_genome_bounds(bad):
    with pytest.raises(GenomeError):
        validate_genome(bad, 512)


def test_genome_text_round_trip():
    g = Genome((LevelGene(8, 5, 1, False), LevelGene(16, 3, 2, True)), "lstm", 32, "tanh")
    assert parse_genome_text(g.describe()) == g
    assert Genome.from_dict(g.to_dict()) == g


# ---------------------------------------------------------------- network


def test_minimal_conv_network_smoke():
    g = Genome((LevelGene(4, 3, 1, False),), "conv", 8)
    net = build_network(g, RNG(0))
    feats = RNG(1).standard_normal((5, 1, 2, 512))
    mask, _ = net.forward(feats)
    assert np.isfinite(mask.data).all()
    assert np.abs(mask.data).max() < MASK_BOUND


def test_same_seed_same_weights():
    g = tiny_genome("lstm")
    assert build_network(g, RNG(3)).weights_equal(build_network(g, RNG(3)))
    assert not build_network(g, RNG(3)).weights_equal(build_network(g, RNG(4)))


def _frames(n, seed):
    r = RNG(seed)
    return r.standard_normal((n, 513)) + 1j * r.standard_normal((n, 513))


@pytest.mark.parametrize("kind", ["gru", "lstm", "conv"])
def test_causality_probe(kind):
    net = build_network(tiny_genome(kind), RNG(0))
    a, b, c = _frames(3, 1)
    out_ab = [stream_step(net, a), stream_step(net, b)]
    net.reset()
    out_ac = [stream_step(net, a), stream_step(net, c)]
    assert np.array_equal(out_ab[0], out_ac[0])
    assert not np.array_equal(out_ab[1], out_ac[1])


@pytest.mark.parametrize("kind", ["gru", "lstm"])
def test_offline_outputs_ignore_future_frames(kind):
    net = build_network(tiny_genome(kind), RNG(0))
    f = _frames(12, 2)
    g = f.copy()
    g[7:] = _frames(5, 3)
    from streamdenoise.dsp import Spectrogram
    m1 = predict_masks(net, Spectrogram(f))
    m2 = predict_masks(net, Spectrogram(g))
    assert np.array_equal(m1[:7], m2[:7])
    assert not np.array_equal(m1[7:], m2[7:])


def test_zero_stream_bounded():
    net = build_network(tiny_genome(), RNG(0))
    for _ in range(5):
        out = stream_step(net, np.zeros(513, complex))
        assert np.isfinite(out).all() and np.abs(out).max() < MASK_BOUND


@pytest.mark.parametrize("kind", ["gru", "lstm", "conv"])
def test_streaming_equals_offline(kind):
    g = Genome((LevelGene(6, 5, 2, True), LevelGene(8, 3, 1, False)), kind, 12, "tanh")
    net = build_network(g, RNG(5))
    from streamdenoise.dsp import Spectrogram
    frames = _frames(20, 9) * 0.1
    offline = predict_masks(net, Spectrogram(frames))
    streamed = np.stack([stream_step(net, f) for f in frames])
    assert np.max(np.abs(offline - streamed)) <= 1e-5


def test_nyquist_bin_gets_identity_mask():
    net = build_network(tiny_genome(), RNG(0))
    out = stream_step(net, _frames(1, 0)[0])
    assert out.shape == (2, 513)
    assert out[0, 512] == pytest.approx(compress(1.0)) and out[1, 512] == 0.0


def test_bin_mismatch():
    net = build_network(tiny_genome(), RNG(0))
    with pytest.raises(BinMismatch):
        stream_step(net, np.zeros(300, complex))
    with pytest.raises(BinMismatch):
        net.forward(np.zeros((2, 1, 2, 256)))


def test_feature_normaliser_recursion():
    frames = _frames(4, 0)[:, :512]
    feats, power = normalise_features(frames, 512)
    p = np.mean(np.abs(frames) ** 2, axis=1)
    r = p[0]
    for t in range(4):
        if t:
            r = 0.99 * r + 0.01 * p[t]
        assert np.allclose(feats[t, 0], frames[t].real / np.sqrt(r + 1e-10))
    assert power == pytest.approx(r)


# -------------------------------------------------------------------- MACs


def test_mac_formula_examples():
    assert linear_macs(4, 3) == 12
    assert conv_macs(8, 4, 2, 3) == 192
    assert gru_macs(16, 8) == 1152
    assert lstm_macs(16, 8) == 4 * 16 * 24


def test_count_macs_hand_computed():
    # 512 bins -> enc0 stride 2 (256) -> GRU over 256 bins -> dec0 transposed -> head
    g = Genome((LevelGene(4, 3, 2, True),), "gru", 8)
    net = build_network(g, RNG(0))
    enc = 256 * 4 * 2 * 3
    gru = 256 * 3 * 8 * (8 + 4)
    dec = 256 * 4 * (8 + 4) * 3
    head = 512 * 2 * 4
    assert count_macs(net) == enc + gru + dec + head == net.macs_per_frame


def test_count_macs_grows_with_channels():
    small = build_network(Genome((LevelGene(8),), "conv", 8), RNG(0))
    big = build_network(Genome((LevelGene(16),), "conv", 8), RNG(0))
    assert big.macs_per_frame > small.macs_per_frame


# ---------------------------------------------------------------- model io


@pytest.mark.parametrize("kind", ["gru", "lstm", "conv"])
def test_model_file_round_trip(tmp_path, kind):
    g = Genome((LevelGene(6, 5, 2, True), LevelGene(8, 3, 1, False)), kind, 12, "tanh")
    net = build_network(g, RNG(1)).astype(np.float32)
    save_model(tmp_path / "m.adnz", net)
    back = load_model(tmp_path / "m.adnz")
    assert back.genome == g
    assert back.weights_equal(net)
    assert model_bytes(back) == model_bytes(net)
    assert (tmp_path / "m.adnz").read_bytes()[:4] == b"ADNZ"


def test_model_file_errors():
    net = build_network(tiny_genome(), RNG(0))
    blob = model_bytes(net)
    with pytest.raises(ModelFileError):
        parse_model(blob[:-3])
    with pytest.raises(ModelFileError):
        parse_model(b"XXXX" + blob[4:])
    with pytest.raises(ModelFileError):
        parse_model(blob + b"\0")


def test_enhance_keeps_length():
    mix = synth_scenes(SceneConfig(), 1, 0)[0]
    out = enhance(build_network(tiny_genome(), RNG(0)), mix.mixed)
    assert len(out) == len(mix.mixed)


# ------------------------------------------------------------------- cells


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def _rowvec(h, U, j):
    return sum(h[i] * U[i][j] for i in range(len(h)))


def test_gru_cell_three_neuron_hand_calculation():
    from streamdenoise.model.network import gru_step
    from streamdenoise.tensor import Tensor
    H = 3
    gx = [0.1, -0.2, 0.3, 0.5, -0.1, 0.0, 0.2, 0.4, -0.3]
    h = [0.5, -0.25, 0.1]
    U = [[0.1 * ((i + 2 * j) % 5 - 2) for j in range(3 * H)] for i in range(H)]
    out = gru_step(Tensor(np.array([gx])), Tensor(np.array([h])), Tensor(np.array(U)), H).data[0]
    for k in range(H):
        z = _sig(gx[k] + _rowvec(h, U, k))
        r = _sig(gx[H + k] + _rowvec(h, U, H + k))
        n = math.tanh(gx[2 * H + k] + r * _rowvec(h, U, 2 * H + k))
        assert out[k] == pytest.approx((1 - z) * n + z * h[k], abs=1e-14)


def test_lstm_cell_three_neuron_hand_calculation():
    from streamdenoise.model.network import lstm_step
    from streamdenoise.tensor import Tensor
    H = 3
    gx = [0.1, -0.2, 0.3, 0.5, -0.1, 0.0, 0.2, 0.4, -0.3, 0.6, -0.5, 0.05]
    h = [0.5, -0.25, 0.1]
    c = [0.2, 0.0, -0.4]
    U = [[0.1 * ((3 * i + j) % 7 - 3) for j in range(4 * H)] for i in range(H)]
    h_new, c_new = lstm_step(Tensor(np.array([gx])), Tensor(np.array([h])),
                             Tensor(np.array([c])), Tensor(np.array(U)), H)
    for k in range(H):
        pre = [gx[q * H + k] + _rowvec(h, U, q * H + k) for q in range(4)]
        i, f, g, o = _sig(pre[0]), _sig(pre[1]), math.tanh(pre[2]), _sig(pre[3])
        cc = f * c[k] + i * g
        assert c_new.data[0, k] == pytest.approx(cc, abs=1e-14)
        assert h_new.data[0, k] == pytest.approx(o * math.tanh(cc), abs=1e-14)
