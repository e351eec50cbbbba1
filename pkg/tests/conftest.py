import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from upliftrec import data, synth  # noqa: E402
from upliftrec.backend import TrainConfig  # noqa: E402
from upliftrec.causal import HyperParams  # noqa: E402
from upliftrec.pipeline import RunConfig  # noqa: E402


def write_world(directory, n_users=120, C=5, ipc=40, seed=0, policy="confounded:0.7", train_windows=3, test_windows=2, window_len=8):
    world = synth.make_world(n_users, C, ipc, seed)
    train, unbiased = synth.recommendation_dataset(world, synth.Policy.parse(policy), train_windows, test_windows, window_len, seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data.write_interactions(directory / "train.tsv", train, True)
    data.write_interactions(directory / "unbiased.tsv", unbiased, True)
    data.write_categories(directory / "categories.tsv", world.category_map())
    return world


def small_config(directory, **changes):
    directory = Path(directory)
    cfg = RunConfig(
        train_path=str(directory / "train.tsv"),
        unbiased_path=str(directory / "unbiased.tsv"),
        categories_path=str(directory / "categories.tsv"),
        treatment_categories="labels",
        has_position=True,
        hp=HyperParams(C=5, K=6, N=10, K_s=90, alpha=0.1),
        train=TrainConfig(d=16, epochs=8),
        policy="mtef",
        output_dir=str(directory / "run"),
    )
    return cfg.replace(**changes)


@pytest.fixture(scope="session")
def world_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    write_world(d)
    return d


ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, status: str, detail: str) -> str:
    line = f"criterion {number} {title}: {status} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
