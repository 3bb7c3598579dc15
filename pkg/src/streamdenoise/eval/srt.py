"""SRT measurement through the denoiser with a simulated listener.

The listener hears, per trial, the SI-SDR of the processed scene at the
staircase's nominal SNR. Processing at mixing ratio ``a`` is
``(1 - a) * noisy + a * enhanced`` with the dry path time-aligned, which is
what the streaming denoiser emits after its fixed delay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from ..audio import si_sdr, mix_at_snr
from ..dsp import StftConfig
from ..model import enhance
from ..model.network import NetworkInstance
from ..train.scenes import SceneConfig, scene_sources
from .staircase import PsychometricListener, StaircaseConfig, run_staircase
from .stats import preference_search


class EffectiveSnr:
    """Memoised nominal SNR -> output SI-SDR map for one model and mixing ratio."""

    def __init__(self, net: NetworkInstance | None, ratio: int, sources, seed: int = 0,
                 cfg: StftConfig = StftConfig()):
        if not 0 <= ratio <= 100:
            raise ValueError(f"mix ratio {ratio} outside 0..100")
        self.net = net
        self.ratio = ratio
        self.sources = sources
        self.seed = seed
        self.cfg = cfg
        self.cache = {}

    def __call__(self, snr: float) -> float:
        key = round(float(snr), 9)
        if key not in self.cache:
            self.cache[key] = float(np.mean([self._one(c, n, i, key)
                                             for i, (c, n) in enumerate(self.sources)]))
        return self.cache[key]

    def _one(self, clean, noise, index, snr):
        # the same noise cut for every ratio and model keeps comparisons paired
        mix = mix_at_snr(clean, noise, snr, np.random.default_rng([self.seed, index]))
        region = self.cfg.interior(len(clean))
        noisy = mix.mixed.samples
        a = self.ratio / 100.0
        if a == 0.0 or self.net is None:
            out = noisy
        else:
            out = (1.0 - a) * noisy + a * enhance(self.net, mix.mixed, self.cfg).samples
        return si_sdr(clean.samples[region], out[region])


@dataclass
class RatioSrt:
    ratio: int
    srts: list
    deltas: list
    unconverged: int
    sign_p: float

    @property
    def mean_srt(self) -> float:
        return float(np.mean(self.srts))

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.deltas))


@dataclass
class SrtTable:
    rows: list = field(default_factory=list)

    def row(self, ratio: int) -> RatioSrt:
        for r in self.rows:
            if r.ratio == ratio:
                return r
        raise KeyError(ratio)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ratio", "mean_srt_db", "mean_delta_srt_db", "runs", "unconverged",
                        "sign_test_p"])
            for r in self.rows:
                w.writerow([r.ratio, f"{r.mean_srt:.4f}", f"{r.mean_delta:.4f}", len(r.srts),
                            r.unconverged, f"{r.sign_p:.6g}"])

    def to_text(self) -> str:
        lines = [f"{'ratio':>5}  {'SRT dB':>8}  {'dSRT dB':>8}  {'p(sign)':>8}  unconverged"]
        for r in self.rows:
            lines.append(f"{r.ratio:>5}  {r.mean_srt:8.3f}  {r.mean_delta:8.3f}  "
                         f"{r.sign_p:8.4f}  {r.unconverged}")
        return "\n".join(lines) + "\n"


def sign_test_p(deltas) -> float:
    """One-sided sign test for positive paired differences (zeros dropped)."""
    d = np.asarray(deltas)
    pos, n = int(np.sum(d > 0)), int(np.sum(d != 0))
    if n == 0:
        return 1.0
    return float(binomtest(pos, n, 0.5, alternative="greater").pvalue)


def make_sources(scene_cfg: SceneConfig, n_scenes: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [scene_sources(scene_cfg, rng) for _ in range(n_scenes)]


def measure_srt_improvement(model: NetworkInstance | None, listener: PsychometricListener,
                            scene_cfg: SceneConfig, mix_ratios, runs: int = 20, seed: int = 0,
                            stair_cfg: StaircaseConfig = StaircaseConfig(),
                            n_scenes: int = 2) -> SrtTable:
    """SRT per mixing ratio and its improvement over the unprocessed (0%) condition.

    Run ``k`` uses the same staircase seed for every ratio, so the per-run
    differences are paired and the 0% row is identically zero.
    """
    sources = make_sources(scene_cfg, n_scenes, seed)
    ratios = [int(r) for r in mix_ratios]
    all_ratios = [0] + [r for r in ratios if r != 0]
    srts = {}
    flags = {}
    for ratio in all_ratios:
        eff = EffectiveSnr(model, ratio, sources, seed)
        res = [run_staircase(listener, stair_cfg, np.random.default_rng([seed, k]), eff)
               for k in range(runs)]
        srts[ratio] = [r.srt_db for r in res]
        flags[ratio] = sum(not r.converged for r in res)
    table = SrtTable()
    base = np.asarray(srts[0])
    for ratio in ratios:
        deltas = list(base - np.asarray(srts[ratio]))
        table.rows.append(RatioSrt(ratio, srts[ratio], deltas, flags[ratio], sign_test_p(deltas)))
    return table


def preferred_ratio(model: NetworkInstance, scene_cfg: SceneConfig, snr: float,
                    step: int = 5, seed: int = 0, n_scenes: int = 2) -> int:
    """Mixing ratio maximising output SI-SDR at ``snr`` on the 5% grid."""
    sources = make_sources(scene_cfg, n_scenes, seed)
    return preference_search(lambda r: EffectiveSnr(model, r, sources, seed)(snr), step)
