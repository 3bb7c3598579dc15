import time

import numpy as np
import pytest

from streamdenoise.model import Genome, LevelGene, build_network
from streamdenoise.train import HyperParams, SceneConfig, evaluate_quality, prepare, synth_scenes, train_sgd

DESK_GENOME = Genome((LevelGene(8, 3, 2, True), LevelGene(16, 3, 2, True)), "gru", 24, "relu")
DESK_HP = HyperParams(learning_rate=0.1, batch_frames=48, steps=400, batch_size=4)


# acceptance outcomes, printed once at the end of the run
ACCEPTANCE = {}


def record(number, title, ok, detail):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: "
                                    f"{title} ({detail})")


def tiny_genome(bottleneck="gru", hidden=8, activation="relu"):
    return Genome((LevelGene(4, 3, 2, True),), bottleneck, hidden, activation)


@pytest.fixture(scope="session")
def white_scenes():
    cfg = SceneConfig(snr_range=(0.0, 0.0), duration=2.0)
    return {"train": prepare(synth_scenes(cfg, 16, 1)), "val": synth_scenes(cfg, 6, 2)}


@pytest.fixture(scope="session")
def desk_model(white_scenes):
    """The reference desk model, trained once per session."""
    t0 = time.perf_counter()
    net = build_network(DESK_GENOME, np.random.default_rng(0))
    res = train_sgd(net, white_scenes["train"], DESK_HP, np.random.default_rng(0))
    seconds = time.perf_counter() - t0
    quality = evaluate_quality(res.net, white_scenes["val"])
    return {"net": res.net, "result": res, "seconds": seconds, "quality": quality}
