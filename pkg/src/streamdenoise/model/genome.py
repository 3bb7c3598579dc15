"""Searchable U-Net architecture description."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

LEVEL_RANGE = (1, 4)
CHANNEL_RANGE = (4, 64)
KERNELS = (3, 5)
STRIDES = (1, 2)
BOTTLENECKS = ("gru", "lstm", "conv")
HIDDEN_RANGE = (8, 128)
ACTIVATIONS = ("relu", "tanh")


class GenomeError(ValueError):
    pass


@dataclass(frozen=True)
class LevelGene:
    channels: int
    kernel: int = 3
    stride: int = 2
    skip: bool = True


@dataclass(frozen=True)
class Genome:
    levels: tuple
    bottleneck: str = "gru"
    hidden: int = 16
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(
            lv if isinstance(lv, LevelGene) else LevelGene(**lv) for lv in self.levels))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = [asdict(lv) for lv in self.levels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Genome":
        return cls(levels=tuple(LevelGene(**lv) for lv in d["levels"]),
                   bottleneck=d["bottleneck"], hidden=int(d["hidden"]),
                   activation=d["activation"])

    def key(self) -> str:
        """Canonical string, stable across processes (used for caching and seeding)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def describe(self) -> str:
        """Human-readable multi-line description."""
        lines = [f"levels: {self.n_levels}",
                 f"bottleneck: {self.bottleneck}",
                 f"hidden: {self.hidden}",
                 f"activation: {self.activation}"]
        for i, lv in enumerate(self.levels):
            lines.append(f"level {i}: channels={lv.channels} kernel={lv.kernel} "
                         f"stride={lv.stride} skip={'yes' if lv.skip else 'no'}")
        return "\n".join(lines) + "\n"


def bins_per_level(genome: Genome, n_bins: int) -> list:
    """Bin count entering each level plus the bottleneck resolution at the end."""
    sizes = [n_bins]
    for i, lv in enumerate(genome.levels):
        if sizes[-1] % lv.stride:
            raise GenomeError(
                f"level {i}: stride {lv.stride} does not divide {sizes[-1]} bins")
        sizes.append(sizes[-1] // lv.stride)
    return sizes


def validate_genome(genome: Genome, n_bins: int) -> None:
    lo, hi = LEVEL_RANGE
    if not lo <= genome.n_levels <= hi:
        raise GenomeError(f"n_levels {genome.n_levels} outside [{lo}, {hi}]")
    for i, lv in enumerate(genome.levels):
        if not CHANNEL_RANGE[0] <= lv.channels <= CHANNEL_RANGE[1]:
            raise GenomeError(f"level {i}: channels {lv.channels} outside {CHANNEL_RANGE}")
        if lv.kernel not in KERNELS:
            raise GenomeError(f"level {i}: kernel {lv.kernel} not in {KERNELS}")
        if lv.stride not in STRIDES:
            raise GenomeError(f"level {i}: stride {lv.stride} not in {STRIDES}")
    if genome.bottleneck not in BOTTLENECKS:
        raise GenomeError(f"bottleneck {genome.bottleneck!r} not in {BOTTLENECKS}")
    if not HIDDEN_RANGE[0] <= genome.hidden <= HIDDEN_RANGE[1]:
        raise GenomeError(f"hidden size {genome.hidden} outside {HIDDEN_RANGE}")
    if genome.activation not in ACTIVATIONS:
        raise GenomeError(f"activation {genome.activation!r} not in {ACTIVATIONS}")
    sizes = bins_per_level(genome, n_bins)
    if sizes[-1] < 1:
        raise GenomeError("bottleneck resolution collapsed to zero bins")


def parse_genome_text(text: str) -> Genome:
    """Inverse of :meth:`Genome.describe`."""
    fields, levels = {}, []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key.startswith("level "):
            kv = dict(item.split("=") for item in value.split())
            levels.append(LevelGene(int(kv["channels"]), int(kv["kernel"]),
                                    int(kv["stride"]), kv["skip"] == "yes"))
        else:
            fields[key] = value
    n = int(fields["levels"])
    if n != len(levels):
        raise GenomeError(f"description lists {len(levels)} levels, header says {n}")
    return Genome(tuple(levels), fields["bottleneck"], int(fields["hidden"]),
                  fields["activation"])
