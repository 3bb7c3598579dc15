"""Population based training over learning rate, with a lineage log."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..model import Genome, build_network
from ..model.network import NetworkInstance
from .sgd import HyperParams, evaluate_quality, prepare, train_sgd


@dataclass(frozen=True)
class PbtConfig:
    population: int = 4
    rounds: int = 3
    steps_per_round: int = 50
    exploit_quantile: float = 0.25
    perturb_factors: tuple = (0.8, 1.25)
    initial_learning_rates: tuple = (0.1, 0.03, 0.01, 0.003)
    batch_frames: int = 48
    batch_size: int = 4

    def __post_init__(self):
        if self.population < 4:
            raise ValueError(f"population {self.population} is below the minimum of 4")
        if not 0.0 < self.exploit_quantile <= 0.25:
            raise ValueError(f"exploit_quantile {self.exploit_quantile} outside (0, 0.25]")
        if self.rounds < 1 or self.steps_per_round < 0:
            raise ValueError("rounds must be >= 1 and steps_per_round >= 0")
        if not self.initial_learning_rates or not self.perturb_factors:
            raise ValueError("initial_learning_rates and perturb_factors must be non-empty")

    @property
    def n_exploit(self) -> int:
        return max(1, int(np.floor(self.exploit_quantile * self.population)))


@dataclass
class LineageEvent:
    step: int
    member: int
    loss: float
    learning_rate: float
    event: str


@dataclass
class Member:
    net: NetworkInstance
    hp: HyperParams
    origin: int            # index of the initial member this one descends from
    velocity: dict = field(default_factory=dict)
    quality: float = float("-inf")
    loss: float = float("nan")


@dataclass
class PbtResult:
    best: NetworkInstance
    best_quality: float
    best_learning_rate: float
    members: list
    lineage: list
    round_best: list       # best-so-far validation quality after each round

    def origins(self) -> list:
        return [m.origin for m in self.members]


def pbt_run(genome: Genome, cfg: PbtConfig, scenes, rng: np.random.Generator,
            val_scenes=None, init_net: NetworkInstance | None = None) -> PbtResult:
    """Train a population that shares one initialisation but differs in learning rate.

    After each round the bottom ``n_exploit`` members (by validation quality)
    take weights, momentum and learning rate from a random top member, then
    rescale the learning rate by a random perturbation factor. Top members are
    never overwritten. The best network ever evaluated is kept as a snapshot,
    so ``round_best`` cannot decrease.
    """
    prepared = prepare(scenes)
    val = val_scenes if val_scenes is not None else scenes
    base = init_net if init_net is not None else build_network(genome, rng)
    lrs = cfg.initial_learning_rates
    members = [Member(base.copy(),
                      HyperParams(lrs[i % len(lrs)], cfg.batch_frames, cfg.steps_per_round,
                                  cfg.batch_size), origin=i)
               for i in range(cfg.population)]
    lineage = [LineageEvent(0, i, float("nan"), m.hp.learning_rate, "init")
               for i, m in enumerate(members)]
    best, best_q, best_lr, round_best = base.copy(), float("-inf"), lrs[0], []

    for r in range(cfg.rounds):
        step = (r + 1) * cfg.steps_per_round
        # per-member seeds are drawn up front so member order never affects results
        seeds = rng.integers(0, 2**63 - 1, size=cfg.population)
        for i, m in enumerate(members):
            res = train_sgd(m.net, prepared, m.hp, np.random.default_rng(int(seeds[i])),
                            velocity=m.velocity, step_offset=r * cfg.steps_per_round)
            m.net, m.velocity = res.net, res.velocity
            m.loss = float(res.losses[-1]) if len(res.losses) else float("nan")
            m.quality = evaluate_quality(m.net, val)
            lineage.append(LineageEvent(step, i, m.loss, m.hp.learning_rate,
                                        f"train quality={m.quality:.4f}"))

        order = sorted(range(cfg.population), key=lambda i: (-members[i].quality, i))
        top = order[:cfg.n_exploit]
        if members[top[0]].quality > best_q:
            best_q = members[top[0]].quality
            best = members[top[0]].net.copy()
            best_lr = members[top[0]].hp.learning_rate
        round_best.append(best_q)

        if r == cfg.rounds - 1:
            break
        for i in order[-cfg.n_exploit:]:
            src = members[top[int(rng.integers(len(top)))]]
            factor = float(cfg.perturb_factors[int(rng.integers(len(cfg.perturb_factors)))])
            lr = float(np.clip(src.hp.learning_rate * factor, 1e-6, 1.0))
            members[i] = Member(src.net.copy(),
                                HyperParams(lr, src.hp.batch_frames, src.hp.steps, src.hp.batch_size),
                                origin=src.origin,
                                velocity={k: v.copy() for k, v in src.velocity.items()},
                                quality=src.quality, loss=src.loss)
            j = members.index(src)
            lineage.append(LineageEvent(step, i, src.loss, src.hp.learning_rate, f"exploit from={j}"))
            lineage.append(LineageEvent(step, i, src.loss, lr, f"explore factor={factor:g}"))

    return PbtResult(best, best_q, best_lr, members, lineage, round_best)


def write_lineage_csv(path, lineage) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "member", "loss", "learning_rate", "event"])
        for e in lineage:
            w.writerow([e.step, e.member, f"{e.loss:.10g}", f"{e.learning_rate:.10g}", e.event])
