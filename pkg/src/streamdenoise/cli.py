"""Command-line entry point.

Configs are YAML mappings; any key left out takes the default printed by
``streamdenoise <command> --help``. Every run echoes its resolved config.
Set ``STREAMDENOISE_THREADS`` to cap BLAS/OpenMP threads (default 1).
"""

from __future__ import annotations

import os

_threads = os.environ.get("STREAMDENOISE_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import copy  # noqa: E402
import csv  # noqa: E402
import sys  # noqa: E402
from dataclasses import fields  # noqa: E402

import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .audio import WavError, read_wav, write_wav  # noqa: E402
from .dsp import StftConfig  # noqa: E402
from .model import Genome, build_network, load_model, save_model  # noqa: E402
from .model.genome import GenomeError, validate_genome  # noqa: E402
from .model.network import NETWORK_BINS  # noqa: E402

PROG = "streamdenoise"


class ConfigError(ValueError):
    pass


_SCENES = {"noise_kind": "white", "snr_range": [0.0, 0.0], "duration": 2.0,
           "train_count": 16, "val_count": 6, "train_seed": 1, "val_seed": 2}

_GENOME = {"levels": [{"channels": 8, "kernel": 3, "stride": 2, "skip": True},
                      {"channels": 16, "kernel": 3, "stride": 2, "skip": True}],
           "bottleneck": "gru", "hidden": 24, "activation": "relu"}

DEFAULTS = {
    "train": {
        "seed": 0,
        "genome": _GENOME,
        "scenes": _SCENES,
        "hyper": {"learning_rate": 0.1, "batch_frames": 48, "steps": 400, "batch_size": 4},
        "pbt": {"enabled": False, "population": 4, "rounds": 3, "steps_per_round": 100,
                "exploit_quantile": 0.25, "perturb_factors": [0.8, 1.25],
                "initial_learning_rates": [0.1, 0.03, 0.01, 0.003]},
        "output": {"model": "model.adnz", "trace": "train_trace.csv"},
    },
    "search": {
        "seed": 0,
        "search": {"population": 8, "generations": 10, "mutation_rate": 0.2,
                   "budget_us": 5986.0, "train_steps_per_candidate": 80,
                   "learning_rate": 0.1, "batch_frames": 32, "batch_size": 4},
        "space": "desk",
        "scenes": dict(_SCENES, duration=1.0, train_count=8, val_count=2),
        "latency": {"warmup": 50, "frames": 200, "replay": None},
    },
    "prune": {
        "seed": 0,
        "schedule": {"fraction_per_step": 0.05, "finetune_steps": 50, "passes": 3,
                     "quality_floor_db": None, "target_mac_reduction": 0.2,
                     "learning_rate": 0.05, "batch_frames": 48, "batch_size": 4},
        "max_quality_loss_db": 1.0,
        "scenes": _SCENES,
        "report": "prune_report.csv",
    },
    "eval-srt": {
        "seed": 0,
        "listener": {"srt50": -7.0, "slope": 0.17},
        "staircase": {"start_snr": 0.0, "steps": [4.0, 2.0, 1.0], "shrink_at": [2, 4],
                      "final_reversals": 6, "max_trials": 200, "n_words": 5, "criterion": 4,
                      "rule": "1up1down"},
        "scenes": {"noise_kind": "white", "duration": 1.5},
        "mix_ratios": [0, 50, 80],
        "runs": 20,
        "n_scenes": 2,
        "preference_snr_db": None,
        "output": "srt_table.csv",
    },
}


# ----------------------------------------------------------------- config


def _merge(base, override, where="config"):
    if override is None:
        return base
    if not isinstance(base, dict):
        return override
    if not isinstance(override, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(override).__name__}")
    out = dict(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"{where}: unknown key {k!r}")
        out[k] = _merge(base[k], v, f"{where}.{k}")
    return out


def load_config(path, command: str) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return _merge(cfg, data)


def _build(cls, section: dict, where: str, **extra):
    """Instantiate a config dataclass, which validates its own invariants."""
    names = {f.name for f in fields(cls)}
    args = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items() if k in names}
    try:
        return cls(**args, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _genome(section: dict) -> Genome:
    try:
        g = Genome.from_dict(section)
        validate_genome(g, NETWORK_BINS)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"genome: malformed entry ({exc})") from exc
    return g


def _scene_cfg(section: dict):
    from .train.scenes import SceneConfig
    return _build(SceneConfig, section, "scenes")


def _echo(command: str, cfg: dict) -> None:
    print(f"# {PROG} {command}, seed {cfg.get('seed', 0)}")
    for line in yaml.safe_dump(cfg, sort_keys=True).splitlines():
        print(f"#   {line}")
    sys.stdout.flush()


def _scenes(section: dict):
    from .train.scenes import synth_scenes
    cfg = _scene_cfg(section)
    return (synth_scenes(cfg, int(section["train_count"]), int(section["train_seed"])),
            synth_scenes(cfg, int(section["val_count"]), int(section["val_seed"])))


# --------------------------------------------------------------- commands


def cmd_denoise(args) -> int:
    from .runtime import StreamingDenoiser
    _echo("denoise", {"seed": 0, "in": args.input, "out": args.out, "model": args.model,
                      "mix": args.mix, "chunk": args.chunk})
    net = load_model(args.model) if args.model else None
    buf = read_wav(args.input)
    stream = StreamingDenoiser(net, mix_ratio=args.mix)
    out = stream.process(buf, chunk=args.chunk)
    write_wav(args.out, out)
    print(f"wrote {len(out)} samples ({stream.delay} samples delay) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .train import (HyperParams, PbtConfig, evaluate_quality, pbt_run, train_sgd,
                        write_lineage_csv, write_trace_csv)
    cfg = load_config(args.config, "train")
    if args.out:
        cfg["output"]["model"] = args.out
    _echo("train", cfg)
    genome = _genome(cfg["genome"])
    hp = _build(HyperParams, cfg["hyper"], "hyper")
    train, val = _scenes(cfg["scenes"])
    rng = np.random.default_rng(cfg["seed"])
    if cfg["pbt"]["enabled"]:
        pcfg = _build(PbtConfig, cfg["pbt"], "pbt", batch_frames=hp.batch_frames,
                      batch_size=hp.batch_size)
        res = pbt_run(genome, pcfg, train, rng, val_scenes=val)
        net = res.best
        write_lineage_csv(cfg["output"]["trace"], res.lineage)
    else:
        net = build_network(genome, rng)
        res = train_sgd(net, train, hp, rng)
        net = res.net
        write_trace_csv(cfg["output"]["trace"], res.trace)
    save_model(cfg["output"]["model"], net)
    print(f"quality {evaluate_quality(net, val):.3f} dB, params {net.param_count()}, "
          f"macs/frame {net.macs_per_frame}")
    print(f"wrote {cfg['output']['model']} and {cfg['output']['trace']}")
    return 0


def cmd_search(args) -> int:
    from .search import (GenomeSpace, LatencyConfig, LatencyReplay, SearchConfig, evolve,
                         write_best_genome, write_history_csv)
    cfg = load_config(args.config, "search")
    _echo("search", cfg)
    scfg = _build(SearchConfig, cfg["search"], "search", seed=int(cfg["seed"]))
    space_cfg = cfg["space"]
    if space_cfg == "desk":
        space = GenomeSpace.desk()
    elif space_cfg == "full":
        space = GenomeSpace()
    elif isinstance(space_cfg, dict):
        space = _build(GenomeSpace, space_cfg, "space")
    else:
        raise ConfigError("space must be 'desk', 'full' or a mapping of choices")
    lat_cfg = _build(LatencyConfig, {k: v for k, v in cfg["latency"].items() if k != "replay"},
                     "latency")
    train, val = _scenes(cfg["scenes"])
    os.makedirs(args.out, exist_ok=True)
    replay = cfg["latency"]["replay"] or os.path.join(args.out, "latency_replay.json")
    result = evolve(scfg, train, val, space, LatencyReplay(replay, lat_cfg), log=print)
    write_history_csv(os.path.join(args.out, "history.csv"), result)
    write_best_genome(os.path.join(args.out, "best_genome.txt"), result)
    b = result.best
    print(f"best: quality {b.quality:.3f} dB, median {b.latency.median_us:.0f} us, macs {b.macs}")
    return 0


def cmd_prune(args) -> int:
    from .prune import PruneSchedule, prune_loop
    from .train import evaluate_quality
    cfg = load_config(args.config, "prune")
    _echo("prune", cfg)
    net = load_model(args.model)
    train, val = _scenes(cfg["scenes"])
    sched = dict(cfg["schedule"])
    if sched["quality_floor_db"] is None:
        loss = cfg["max_quality_loss_db"]
        sched["quality_floor_db"] = (evaluate_quality(net, val) - loss
                                     if loss is not None else float("-inf"))
    schedule = _build(PruneSchedule, sched, "schedule")
    pruned, report = prune_loop(net, schedule, train, val, np.random.default_rng(cfg["seed"]),
                                log=print)
    save_model(args.out, pruned)
    report.write_csv(cfg["report"])
    print(f"macs {report.baseline_macs} -> {report.final_macs} "
          f"({100 * report.mac_reduction:.1f}% less), quality {report.baseline_quality_db:.3f} "
          f"-> {report.final_quality_db:.3f} dB")
    return 0


def cmd_eval_srt(args) -> int:
    from .eval import PsychometricListener, StaircaseConfig, measure_srt_improvement, preferred_ratio
    cfg = load_config(args.config, "eval-srt")
    if args.out:
        cfg["output"] = args.out
    _echo("eval-srt", cfg)
    net = load_model(args.model)
    listener = _build(PsychometricListener, cfg["listener"], "listener")
    stair = _build(StaircaseConfig, cfg["staircase"], "staircase")
    scene_cfg = _scene_cfg(cfg["scenes"])
    ratios = [int(r) for r in cfg["mix_ratios"]]
    if cfg["preference_snr_db"] is not None:
        pref = preferred_ratio(net, scene_cfg, float(cfg["preference_snr_db"]),
                               seed=cfg["seed"], n_scenes=cfg["n_scenes"])
        print(f"preferred ratio: {pref}%")
        if pref not in ratios:
            ratios.append(pref)
    table = measure_srt_improvement(net, listener, scene_cfg, ratios, runs=int(cfg["runs"]),
                                    seed=int(cfg["seed"]), stair_cfg=stair,
                                    n_scenes=int(cfg["n_scenes"]))
    table.write_csv(cfg["output"])
    print(table.to_text(), end="")
    return 0


def cmd_bench(args) -> int:
    from .runtime import latency_report
    from .search import LatencyConfig, measure_latency
    _echo("bench", {"seed": args.seed, "model": args.model, "frames": args.frames,
                    "warmup": args.warmup, "stack": args.stack})
    net = load_model(args.model)
    stats = measure_latency(net, LatencyConfig(args.warmup, args.frames, args.seed))
    stack = {}
    for item in args.stack or []:
        name, _, ms = item.partition("=")
        try:
            stack[name] = float(ms)
        except ValueError as exc:
            raise ConfigError(f"--stack expects name=ms, got {item!r}") from exc
    budget = latency_report(StftConfig(), stats, stack if args.stack is not None else None)
    print(f"median {stats.median_us:.1f} us, p95 {stats.p95_us:.1f} us over {stats.n_frames} frames")
    print(budget.to_text(), end="")
    if args.csv:
        budget.write_csv(args.csv)
    return 0


def cmd_stats(args) -> int:
    from .eval import paired_t_test, pearson_r
    _echo("stats", {"seed": 0, "csv": args.csv, "test": args.test})
    x, y = read_pairs(args.csv)
    if args.test == "ttest":
        r = paired_t_test(x, y)
        print(f"t={r.t:.6g} df={r.df} p={r.p:.6g}")
    else:
        print(f"r={pearson_r(x, y):.6g} n={len(x)}")
    return 0


def read_pairs(path):
    """Two numeric columns; a non-numeric first row is taken as a header."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    out = []
    for i, row in enumerate(rows):
        try:
            a, b = (float(c) for c in row[:2])
        except ValueError:
            if i == 0:
                continue
            raise ConfigError(f"{path}: row {i + 1} is not numeric: {row}") from None
        if len(row) < 2:
            raise ConfigError(f"{path}: row {i + 1} needs two columns")
        out.append((a, b))
    if not out:
        raise ConfigError(f"{path}: no data rows")
    arr = np.array(out)
    return arr[:, 0], arr[:, 1]


# ------------------------------------------------------------------ parser


def _defaults_epilog(command: str) -> str:
    return "default config:\n" + yaml.safe_dump(DEFAULTS[command], sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=PROG, description="Streaming cIRM speech denoiser toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    raw = argparse.RawDescriptionHelpFormatter

    d = sub.add_parser("denoise", help="denoise a WAV file through the streaming pipeline")
    d.add_argument("--in", dest="input", required=True, help="input WAV (PCM16 or float32)")
    d.add_argument("--out", required=True, help="output float32 WAV")
    d.add_argument("--model", help="ADNZ model file (omit for an identity mask)")
    d.add_argument("--mix", type=int, default=80, help="mixing ratio 0..100 (default 80)")
    d.add_argument("--chunk", type=int, default=4096, help="push size in samples (default 4096)")
    d.set_defaults(func=cmd_denoise)

    for name, func, helptext in (("train", cmd_train, "train a model (SGD or PBT)"),
                                 ("search", cmd_search, "latency-constrained architecture search"),
                                 ("prune", cmd_prune, "iterative structured pruning"),
                                 ("eval-srt", cmd_eval_srt, "simulated SRT evaluation")):
        s = sub.add_parser(name, help=helptext, epilog=_defaults_epilog(name), formatter_class=raw)
        s.add_argument("--config", help="YAML config (omitted keys take the defaults below)")
        s.set_defaults(func=func)
        if name in ("prune", "eval-srt"):
            s.add_argument("--model", required=True, help="ADNZ model file")
        if name == "search":
            s.add_argument("--out", required=True, help="output directory")
        elif name == "prune":
            s.add_argument("--out", required=True, help="pruned model path")
        else:
            s.add_argument("--out", help="output path (overrides the config)")

    b = sub.add_parser("bench", help="per-frame latency and delay budget")
    b.add_argument("--model", required=True)
    b.add_argument("--frames", type=int, default=200, help="timed frames (default 200)")
    b.add_argument("--warmup", type=int, default=50, help="warmup frames (default 50)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--stack", nargs="*", metavar="NAME=MS",
                   help="external stages (default phone=10 streamer=10 wireless=20)")
    b.add_argument("--csv", help="write the budget as CSV")
    b.set_defaults(func=cmd_bench)

    st = sub.add_parser("stats", help="paired t-test or Pearson r on a two-column CSV")
    st.add_argument("--csv", required=True)
    st.add_argument("--test", choices=("ttest", "pearson"), required=True)
    st.set_defaults(func=cmd_stats)
    return p


MODULE_ERRORS = (ConfigError, GenomeError, WavError, ValueError, OSError, RuntimeError,
                 KeyError, ArithmeticError)


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MODULE_ERRORS as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
