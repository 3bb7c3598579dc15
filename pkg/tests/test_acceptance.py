"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import math
import time

import numpy as np
import pytest

from conftest import DESK_GENOME, record
from streamdenoise.audio import AudioBuffer, si_sdr
from streamdenoise.dsp import StftConfig, istft, stft
from streamdenoise.eval import (PsychometricListener, StaircaseConfig, measure_srt_improvement,
                                paired_t_test, pearson_r, preference_search, run_staircase)
from streamdenoise.model import apply_mask, build_network, compute_cirm
from streamdenoise.prune import PruneSchedule, prune_loop
from streamdenoise.runtime import StreamingDenoiser, latency_report
from streamdenoise.search import (GenomeSpace, LatencyReplay, SearchConfig, evolve,
                                  measure_latency, sample_genome)
from streamdenoise.tensor import grad_check
from streamdenoise.train import SceneConfig, evaluate_quality, synth_scenes
from test_tensor import PRIMITIVES

RNG = np.random.default_rng
CFG = StftConfig()
HOP_US = 1e6 * CFG.hop / CFG.sample_rate


def test_01_stft_round_trip():
    worst, slowest = -np.inf, 0.0
    for seed in range(5):
        x = RNG(seed).standard_normal(3 * 22050)
        t0 = time.perf_counter()
        y = istft(stft(AudioBuffer(x, 22050), CFG)).samples
        slowest = max(slowest, time.perf_counter() - t0)
        r = CFG.interior(x.size)
        e = x[r] - y[r]
        worst = max(worst, 10 * np.log10(np.sum(e ** 2) / np.sum(x[r] ** 2)))
    ok = worst <= -60 and slowest < 1.0
    record(1, "STFT round trip", ok, f"worst {worst:.1f} dB, slowest {slowest:.3f} s")
    assert ok


def test_02_autodiff_finite_differences():
    worst = {name: max(grad_check(*PRIMITIVES[name](RNG(seed)), eps=1e-6) for seed in range(10))
             for name in PRIMITIVES}
    name = max(worst, key=worst.get)
    ok = worst[name] <= 1e-5
    record(2, "autodiff finite differences", ok,
           f"{len(worst)} primitives x 10 seeds, worst {worst[name]:.1e} ({name})")
    assert ok


def test_03_oracle_mask_ceiling():
    scores = []
    for kind in ("white", "pink", "babble"):
        for mix in synth_scenes(SceneConfig(noise_kind=kind, snr_range=(0.0, 0.0)), 3, 40):
            Y, S = stft(mix.mixed), stft(mix.clean)
            est = istft(type(Y)(apply_mask(Y.frames, compute_cirm(S, Y)), Y.config)).samples
            r = CFG.interior(len(mix.mixed))
            scores.append(si_sdr(mix.clean.samples[r], est[r]))
    ok = min(scores) >= 30.0
    record(3, "oracle-mask ceiling", ok, f"min SI-SDR {min(scores):.1f} dB over {len(scores)} scenes")
    assert ok


def test_04_mixing_law(desk_model):
    net = desk_model["net"]
    x = RNG(4).uniform(-0.5, 0.5, 6000)
    W = CFG.window_len

    def run(ratio, chunk=4096):
        s = StreamingDenoiser(net, mix_ratio=ratio)
        return np.concatenate([s.push_samples(x[i:i + chunk]) for i in range(0, x.size, chunk)])

    dry, wet = run(0), run(100)
    delay_ok = np.array_equal(dry[W:], x[:-W]) and not dry[:W].any()
    affine_err = max(np.max(np.abs(run(a) - (dry + a / 100 * (wet - dry)))) for a in (1, 50, 80))
    chunks = [run(80, c) for c in (1, 7, 132, 4096)]
    chunk_ok = all(np.array_equal(c, chunks[0]) for c in chunks[1:])
    ok = delay_ok and affine_err <= 1e-14 and chunk_ok
    record(4, "mixing law", ok, f"delay exact {delay_ok}, affine error {affine_err:.1e}, "
           f"chunking invariant {chunk_ok}")
    assert ok


def test_05_desk_training(desk_model):
    net = desk_model["net"]
    n_params = net.param_count()
    q, sec = desk_model["quality"], desk_model["seconds"]
    ok = n_params <= 100_000 and q >= 3.0 and sec <= 15 * 60
    record(5, "desk training", ok, f"{n_params} params, {q:.2f} dB improvement in {sec:.0f} s")
    assert ok


@pytest.fixture(scope="module")
def search_task():
    cfg = SceneConfig(snr_range=(0.0, 0.0), duration=1.0)
    return synth_scenes(cfg, 8, 1), synth_scenes(cfg, 2, 2)


@pytest.mark.slow
def test_06_search(search_task):
    replay = LatencyReplay()
    t0 = time.perf_counter()
    res = evolve(SearchConfig(population=8, generations=10, seed=0), *search_task, latency=replay)
    minutes = (time.perf_counter() - t0) / 60
    budget = SearchConfig().budget_us
    feasible = (res.best.feasible and res.best.latency.median_us <= budget
                and all(r.record.feasible == (r.record.latency.median_us <= budget)
                        for r in res.history))
    trace = res.best_quality_trace()
    monotone = all(b >= a for a, b in zip(trace, trace[1:]))

    # constraint pressure: a tight budget versus none, same seeds and shared latencies
    lat = [replay(g, build_network(g, RNG(0))).median_us
           for g in (sample_genome(GenomeSpace.desk(), RNG([99, i])) for i in range(20))]
    tight_us = float(np.percentile(lat, 60))
    small = dict(population=6, generations=3, train_steps_per_candidate=8, batch_frames=16,
                 batch_size=2)
    tight, free = [], []
    for seed in range(5):
        tight.append(evolve(SearchConfig(seed=seed, budget_us=tight_us, **small), *search_task,
                            latency=replay).best.macs)
        free.append(evolve(SearchConfig(seed=seed, budget_us=1e12, **small), *search_task,
                           latency=replay).best.macs)
    pressure = np.median(tight) <= np.median(free)
    ok = minutes <= 30 and feasible and monotone and pressure
    record(6, "architecture search", ok,
           f"8x10 in {minutes:.1f} min, best {res.best.quality:.2f} dB at "
           f"{res.best.latency.median_us:.0f} us, monotone {monotone}, median MACs tight "
           f"{np.median(tight):.0f} vs unconstrained {np.median(free):.0f}")
    assert ok


@pytest.fixture(scope="module")
def pruned(desk_model, white_scenes):
    base = desk_model["quality"]
    sched = PruneSchedule(fraction_per_step=0.05, finetune_steps=50, passes=6,
                          quality_floor_db=base - 1.0, target_mac_reduction=0.2)
    net, report = prune_loop(desk_model["net"], sched, white_scenes["train"],
                             white_scenes["val"], RNG(0))
    return net, report


@pytest.mark.slow
def test_07_pruning(desk_model, pruned, white_scenes):
    net, report = pruned
    loss = desk_model["quality"] - evaluate_quality(net, white_scenes["val"])
    ok = report.mac_reduction >= 0.2 and loss <= 1.0
    record(7, "pruning", ok, f"MACs {report.baseline_macs} -> {report.final_macs} "
           f"({100 * report.mac_reduction:.1f}% less), quality loss {loss:.2f} dB")
    assert ok


@pytest.mark.slow
def test_08_real_time(pruned):
    bench = measure_latency(pruned[0])
    measured = latency_report(CFG, bench)
    table = latency_report(CFG, type(bench)(6000.0, 6000.0, 200),
                           {"phone": 10.0, "streamer": 10.0, "wireless": 20.0})
    ok = bench.median_us <= HOP_US and table.total_ms == pytest.approx(71.0, abs=0.1)
    record(8, "real time", ok, f"median {bench.median_us:.0f} us per frame (hop {HOP_US:.0f} us), "
           f"component table {table.total_ms:.2f} ms, measured budget {measured.total_ms:.2f} ms")
    assert ok


def test_09_staircase_equilibria():
    lst = PsychometricListener(-7.0, 0.17)
    errors = {}
    for rule in ("1up1down", "2up1down"):
        cfg = StaircaseConfig(rule=rule)
        p_star = cfg.equilibrium_p_word()
        srt_star = lst.srt50 + math.log(p_star / (1 - p_star)) / (4 * lst.slope)
        mean = np.mean([run_staircase(lst, cfg, RNG([9, k])).srt_db for k in range(200)])
        errors[rule] = mean - srt_star
    ok = all(abs(e) <= 1.0 for e in errors.values())
    record(9, "staircase equilibria", ok,
           ", ".join(f"{r} bias {e:+.2f} dB" for r, e in errors.items()))
    assert ok


@pytest.mark.slow
def test_10_srt_analog(desk_model):
    lst = PsychometricListener(-7.0, 0.17)
    scenes = SceneConfig(noise_kind="white", duration=1.5)
    trained = measure_srt_improvement(desk_model["net"], lst, scenes, [0, 80], runs=20).row(80)
    control_net = build_network(DESK_GENOME, RNG(12345))
    control = measure_srt_improvement(control_net, lst, scenes, [0, 80], runs=20).row(80)
    ok = trained.mean_delta > 0 and trained.sign_p < 0.05 and control.mean_delta <= 0.2
    record(10, "SRT analog", ok, f"trained dSRT {trained.mean_delta:+.2f} dB (sign p "
           f"{trained.sign_p:.1e}), random control {control.mean_delta:+.2f} dB")
    assert ok


def test_11_preference_search():
    rng = RNG(11)
    grid = np.arange(0, 101, 5)
    misses = 0
    for _ in range(500):
        peak = int(rng.integers(grid.size))
        steps = rng.uniform(0.01, 5.0, grid.size)
        values = -np.abs(np.cumsum(steps) - np.cumsum(steps)[peak])
        values[peak] = 0.0
        misses += preference_search(lambda r: values[r // 5]) != grid[np.argmax(values)]
    ok = misses == 0
    record(11, "preference search", ok, f"{misses} misses over 500 unimodal oracles")
    assert ok


def test_12_statistics():
    t = paired_t_test([2.0, 4.0], [0.0, 0.0])
    zero = paired_t_test([1.0, -1.0], [0.0, 0.0])
    x = np.linspace(-3, 7, 11)
    r_pos, r_neg = pearson_r(x, 2 * x + 1), pearson_r(x, -3 * x + 2)
    ok = (abs(t.t - 3) < 1e-12 and t.df == 1 and zero.p == pytest.approx(1.0)
          and r_pos == 1.0 and r_neg == -1.0)
    record(12, "statistics", ok, f"t={t.t:g} df={t.df}, p(t=0)={zero.p:g}, r={r_pos:g}/{r_neg:g}")
    assert ok
