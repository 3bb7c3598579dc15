"""Latency-constrained evolutionary architecture search.

Candidates get a short proxy training run, then are scored on held-out
quality and measured per-frame streaming time. Latency is a hard
constraint: any feasible candidate outranks every infeasible one.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .dsp import StftConfig
from .model import Genome, LevelGene, build_network, stream_step
from .model.genome import (ACTIVATIONS, BOTTLENECKS, KERNELS, STRIDES, GenomeError,
                           validate_genome)
from .model.network import NETWORK_BINS, NetworkInstance
from .train.sgd import HyperParams, evaluate_quality, prepare, train_sgd

DEFAULT_BUDGET_US = 1e6 * StftConfig().hop / StftConfig().sample_rate


class EmptySpace(ValueError):
    pass


class MutationExhausted(RuntimeError):
    pass


class BudgetInfeasible(RuntimeError):
    def __init__(self, fastest_us, budget_us):
        super().__init__(f"no candidate meets the {budget_us:.0f} us budget; "
                         f"fastest measured median was {fastest_us:.0f} us")
        self.fastest_us = fastest_us
        self.budget_us = budget_us


# ------------------------------------------------------------------ space


@dataclass(frozen=True)
class GenomeSpace:
    """Discrete choices for every gene."""
    n_levels: tuple = (1, 2, 3, 4)
    channels: tuple = tuple(range(4, 65))
    kernels: tuple = KERNELS
    strides: tuple = STRIDES
    skips: tuple = (True, False)
    bottlenecks: tuple = BOTTLENECKS
    hidden: tuple = tuple(range(8, 129))
    activations: tuple = ACTIVATIONS

    def __post_init__(self):
        for name in ("n_levels", "channels", "kernels", "strides", "skips",
                     "bottlenecks", "hidden", "activations"):
            if len(getattr(self, name)) == 0:
                raise EmptySpace(f"genome space has no choices for {name}")

    @classmethod
    def desk(cls) -> "GenomeSpace":
        """Small space that keeps proxy training affordable on one core."""
        return cls(n_levels=(1, 2, 3), channels=(4, 8, 12, 16, 24), kernels=(3, 5),
                   strides=(2,), bottlenecks=("gru", "lstm", "conv"), hidden=(8, 16, 24, 32),
                   activations=("relu", "tanh"))

    @classmethod
    def point(cls, g: Genome) -> "GenomeSpace":
        """Space containing exactly one genome (levels must share their genes)."""
        lv = g.levels[0]
        if any(x != lv for x in g.levels):
            raise ValueError("point space needs identical levels")
        return cls((g.n_levels,), (lv.channels,), (lv.kernel,), (lv.stride,), (lv.skip,),
                   (g.bottleneck,), (g.hidden,), (g.activation,))


def _pick(rng, choices):
    return choices[int(rng.integers(len(choices)))]


def _sample_level(space, rng):
    return LevelGene(int(_pick(rng, space.channels)), int(_pick(rng, space.kernels)),
                     int(_pick(rng, space.strides)), bool(_pick(rng, space.skips)))


def _is_valid(g: Genome, n_bins: int) -> bool:
    try:
        validate_genome(g, n_bins)
    except GenomeError:
        return False
    return True


def sample_genome(space: GenomeSpace, rng: np.random.Generator, n_bins: int = NETWORK_BINS,
                  max_tries: int = 100) -> Genome:
    for _ in range(max_tries):
        n = int(_pick(rng, space.n_levels))
        g = Genome(tuple(_sample_level(space, rng) for _ in range(n)),
                   str(_pick(rng, space.bottlenecks)), int(_pick(rng, space.hidden)),
                   str(_pick(rng, space.activations)))
        if _is_valid(g, n_bins):
            return g
    raise EmptySpace(f"no valid genome found in {max_tries} samples")


def mutate_genome(g: Genome, rng: np.random.Generator, space: GenomeSpace,
                  rate: float, n_bins: int = NETWORK_BINS, max_tries: int = 100) -> Genome:
    """Resample each gene independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mutation rate {rate} outside [0, 1]")
    for _ in range(max_tries):
        hit = lambda: rng.random() < rate  # noqa: E731
        levels = list(g.levels)
        if hit():
            n = int(_pick(rng, space.n_levels))
            levels = levels[:n] + [_sample_level(space, rng) for _ in range(n - len(levels))]
        new_levels = []
        for lv in levels:
            ch = int(_pick(rng, space.channels)) if hit() else lv.channels
            k = int(_pick(rng, space.kernels)) if hit() else lv.kernel
            s = int(_pick(rng, space.strides)) if hit() else lv.stride
            sk = bool(_pick(rng, space.skips)) if hit() else lv.skip
            new_levels.append(LevelGene(ch, k, s, sk))
        child = Genome(tuple(new_levels),
                       str(_pick(rng, space.bottlenecks)) if hit() else g.bottleneck,
                       int(_pick(rng, space.hidden)) if hit() else g.hidden,
                       str(_pick(rng, space.activations)) if hit() else g.activation)
        if _is_valid(child, n_bins):
            return child
    raise MutationExhausted(f"no valid offspring after {max_tries} attempts")


# ---------------------------------------------------------------- latency


@dataclass(frozen=True)
class LatencyStats:
    median_us: float
    p95_us: float
    n_frames: int

    def __post_init__(self):
        if self.median_us > self.p95_us:
            raise ValueError("median exceeds p95")


@dataclass(frozen=True)
class LatencyConfig:
    warmup: int = 50
    frames: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.warmup < 50 or self.frames < 200:
            raise ValueError("latency measurement needs >= 50 warmup and >= 200 timed frames")


@contextlib.contextmanager
def pinned_cpu():
    """Restrict the process to a single core for the duration (Linux only)."""
    if not hasattr(os, "sched_getaffinity"):
        yield
        return
    before = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {min(before)})
    except OSError:
        before = None
    try:
        yield
    finally:
        if before is not None:
            os.sched_setaffinity(0, before)


def measure_latency(net: NetworkInstance, cfg: LatencyConfig = LatencyConfig()) -> LatencyStats:
    """Wall-clock time per ``stream_step`` on a float32 copy of ``net``."""
    rng = np.random.default_rng(cfg.seed)
    n_bins = StftConfig().n_bins
    frames = (rng.standard_normal((cfg.warmup + cfg.frames, n_bins))
              + 1j * rng.standard_normal((cfg.warmup + cfg.frames, n_bins))).astype(np.complex64)
    run = net.astype(np.float32)
    run.reset()
    times = np.empty(cfg.frames)
    with pinned_cpu():
        for i in range(cfg.warmup):
            stream_step(run, frames[i])
        for i in range(cfg.frames):
            t0 = time.perf_counter_ns()
            stream_step(run, frames[cfg.warmup + i])
            times[i] = (time.perf_counter_ns() - t0) / 1e3
    return LatencyStats(float(np.median(times)), float(np.percentile(times, 95)), cfg.frames)


class LatencyReplay:
    """Measured latencies keyed by genome, optionally persisted to a JSON file.

    Keys already present are replayed, new ones are measured and recorded,
    which makes searches bit-reproducible once the file is populated.
    """

    def __init__(self, path=None, cfg: LatencyConfig = LatencyConfig()):
        self.path = path
        self.cfg = cfg
        self.table = {}
        if path is not None and os.path.exists(path):
            with open(path) as fh:
                self.table = json.load(fh)

    def __call__(self, genome: Genome, net: NetworkInstance) -> LatencyStats:
        key = genome.key()
        if key not in self.table:
            s = measure_latency(net, self.cfg)
            self.table[key] = {"median_us": s.median_us, "p95_us": s.p95_us,
                               "n_frames": s.n_frames}
        return LatencyStats(**self.table[key])

    def save(self) -> None:
        if self.path is not None:
            with open(self.path, "w") as fh:
                json.dump(self.table, fh, indent=1, sort_keys=True)


# ----------------------------------------------------------------- evolve


@dataclass(frozen=True)
class SearchConfig:
    population: int = 8
    generations: int = 10
    mutation_rate: float = 0.2
    budget_us: float = DEFAULT_BUDGET_US
    train_steps_per_candidate: int = 80
    learning_rate: float = 0.1
    batch_frames: int = 32
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError(f"population {self.population} is below the minimum of 4")
        if not self.budget_us > 0:
            raise ValueError("budget_us must be positive")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")


@dataclass
class FitnessRecord:
    genome: Genome
    quality: float
    latency: LatencyStats
    feasible: bool
    macs: int

    def rank_key(self):
        # feasible first, then quality; sorts ascending so negate
        return (not self.feasible, -self.quality)


@dataclass
class HistoryRow:
    generation: int
    candidate: int
    record: FitnessRecord


@dataclass
class GenerationSummary:
    generation: int
    best_quality: float
    mean_quality: float
    feasible_fraction: float


@dataclass
class SearchResult:
    best: FitnessRecord
    history: list = field(default_factory=list)
    generations: list = field(default_factory=list)

    def best_quality_trace(self) -> list:
        return [g.best_quality for g in self.generations]


def _candidate_seed(seed: int, genome: Genome) -> int:
    return (seed * 1_000_003 + zlib.crc32(genome.key().encode())) % (2**32)


def evaluate_candidate(genome: Genome, cfg: SearchConfig, train_scenes, val_scenes,
                       latency) -> FitnessRecord:
    """Proxy-train ``genome`` and score it. Seeded by the genome, not by call order."""
    rng = np.random.default_rng(_candidate_seed(cfg.seed, genome))
    net = build_network(genome, rng)
    hp = HyperParams(cfg.learning_rate, cfg.batch_frames, cfg.train_steps_per_candidate,
                     cfg.batch_size)
    try:
        net = train_sgd(net, train_scenes, hp, rng).net
        quality = evaluate_quality(net, val_scenes)
    except (ArithmeticError, RuntimeError, ValueError):
        quality = float("-inf")
    if not np.isfinite(quality):
        quality = float("-inf")
    lat = latency(genome, net)
    return FitnessRecord(genome, float(quality), lat, lat.median_us <= cfg.budget_us,
                         net.macs_per_frame)


def _tournament(records, rng):
    a, b = rng.integers(len(records), size=2)
    return records[min(int(a), int(b), key=lambda i: (records[i].rank_key(), i))]


def evolve(cfg: SearchConfig, train_scenes, val_scenes, space: GenomeSpace | None = None,
           latency=None, log=None) -> SearchResult:
    """Mutation-only evolution with one feasible elite and size-2 tournaments."""
    space = space or GenomeSpace.desk()
    latency = latency or LatencyReplay()
    rng = np.random.default_rng(cfg.seed)
    train_scenes = prepare(train_scenes)
    cache = {}
    result = SearchResult(best=None)
    population = [sample_genome(space, rng) for _ in range(cfg.population)]
    best = None

    for gen in range(cfg.generations):
        records = []
        for i, g in enumerate(population):
            key = g.key()
            if key not in cache:
                cache[key] = evaluate_candidate(g, cfg, train_scenes, val_scenes, latency)
            rec = cache[key]
            records.append(rec)
            result.history.append(HistoryRow(gen, i, rec))
        feasible = [r for r in records if r.feasible]
        if best is None and not feasible:
            raise BudgetInfeasible(min(r.latency.median_us for r in records), cfg.budget_us)
        gen_best = min(feasible, key=FitnessRecord.rank_key) if feasible else None
        if gen_best is not None and (best is None or gen_best.quality > best.quality):
            best = gen_best
        qualities = [r.quality for r in records if np.isfinite(r.quality)]
        result.generations.append(GenerationSummary(
            gen, best.quality, float(np.mean(qualities)) if qualities else float("-inf"),
            len(feasible) / len(records)))
        if log is not None:
            log(f"generation {gen}: best {best.quality:.3f} dB, "
                f"feasible {len(feasible)}/{len(records)}")
        if gen == cfg.generations - 1:
            break
        children = [best.genome]
        while len(children) < cfg.population:
            parent = _tournament(records, rng)
            children.append(mutate_genome(parent.genome, rng, space, cfg.mutation_rate))
        population = children

    result.best = best
    if hasattr(latency, "save"):
        latency.save()
    return result


def write_history_csv(path, result: SearchResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "candidate", "quality_db", "median_us", "macs", "feasible"])
        for row in result.history:
            r = row.record
            w.writerow([row.generation, row.candidate, f"{r.quality:.6f}",
                        f"{r.latency.median_us:.3f}", r.macs, int(r.feasible)])


def write_best_genome(path, result: SearchResult) -> None:
    r = result.best
    with open(path, "w") as fh:
        fh.write(f"# quality_db: {r.quality:.4f}\n# median_us: {r.latency.median_us:.1f}\n"
                 f"# macs: {r.macs}\n")
        fh.write(r.genome.describe())
