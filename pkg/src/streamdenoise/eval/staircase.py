"""Simulated listeners and adaptive up/down SRT tracking."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import binom

RULES = ("1up1down", "2up1down")


@dataclass(frozen=True)
class PsychometricListener:
    """Logistic word intelligibility; ``slope`` is dp/dSNR at the midpoint."""
    srt50: float = -7.0
    slope: float = 0.17

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"slope must be positive, got {self.slope}")

    def p_word(self, snr):
        return 1.0 / (1.0 + np.exp(-4.0 * self.slope * (np.asarray(snr) - self.srt50)))

    def snr_for(self, p: float) -> float:
        """Inverse psychometric function."""
        return self.srt50 + np.log(p / (1.0 - p)) / (4.0 * self.slope)

    def words_correct(self, snr: float, n_words: int, rng: np.random.Generator) -> int:
        return listener_words_correct(self, snr, n_words, rng)


def listener_words_correct(listener, snr: float, n_words: int, rng: np.random.Generator) -> int:
    if n_words < 1:
        raise ValueError("n_words must be >= 1")
    return int(rng.binomial(n_words, float(listener.p_word(snr))))


@dataclass(frozen=True)
class StaircaseConfig:
    start_snr: float = 0.0
    steps: tuple = (4.0, 2.0, 1.0)
    shrink_at: tuple = (2, 4)         # total reversal counts at which the step shrinks
    final_reversals: int = 6
    max_trials: int = 200
    n_words: int = 5
    criterion: int = 4                # words needed for a "success"
    rule: str = "1up1down"

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"rule {self.rule!r} not in {RULES}")
        if len(self.shrink_at) != len(self.steps) - 1 or any(s <= 0 for s in self.steps):
            raise ValueError("steps must be positive with one shrink point between each")
        if not 1 <= self.criterion <= self.n_words:
            raise ValueError("criterion must lie in 1..n_words")

    def up_factor(self) -> int:
        return 2 if self.rule == "2up1down" else 1

    def target_success(self) -> float:
        """Sentence-level success probability at which the track is balanced."""
        u = self.up_factor()
        return u / (u + 1.0)

    def equilibrium_p_word(self) -> float:
        """Word probability p with P(Binomial(n_words, p) >= criterion) = target."""
        target = self.target_success()
        return brentq(lambda p: binom.sf(self.criterion - 1, self.n_words, p) - target,
                      1e-12, 1.0 - 1e-12, xtol=1e-14)


@dataclass
class Trial:
    snr: float
    words_correct: int
    step: float


@dataclass
class SrtResult:
    srt_db: float
    n_trials: int
    converged: bool
    reversals: int
    trials: list = field(default_factory=list)


def run_staircase(listener, cfg: StaircaseConfig, rng: np.random.Generator,
                  effective_snr=None) -> SrtResult:
    """Track the SNR giving the criterion success rate.

    Success (>= ``criterion`` words) lowers the SNR by one step; failure
    raises it by one step (``1up1down``) or two steps (``2up1down``).
    ``effective_snr`` maps the nominal SNR to what the listener hears.
    """
    snr = float(cfg.start_snr)
    reversals, final_reversals = 0, 0
    last_dir = 0
    trials = []
    levels = []
    while len(trials) < cfg.max_trials and final_reversals < cfg.final_reversals:
        level = sum(reversals >= s for s in cfg.shrink_at)
        step = cfg.steps[level]
        heard = snr if effective_snr is None else effective_snr(snr)
        words = listener.words_correct(heard, cfg.n_words, rng)
        trials.append(Trial(snr, words, step))
        levels.append(level)
        direction = -1 if words >= cfg.criterion else 1
        if last_dir and direction != last_dir:
            reversals += 1
            if level == len(cfg.steps) - 1:
                final_reversals += 1
        last_dir = direction
        snr += -step if direction < 0 else cfg.up_factor() * step
    final = [t.snr for t, lv in zip(trials, levels) if lv == len(cfg.steps) - 1]
    converged = final_reversals >= cfg.final_reversals
    srt = float(np.mean(final)) if final else float("nan")
    return SrtResult(srt, len(trials), converged, reversals, trials)


def write_trials_csv(path, result: SrtResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "snr_db", "words_correct", "step_db"])
        for i, t in enumerate(result.trials):
            w.writerow([i, f"{t.snr:.4f}", t.words_correct, f"{t.step:g}"])
