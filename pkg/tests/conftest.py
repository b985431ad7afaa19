import os
import random
from pathlib import Path

import pytest

from fedchain import crypto, synthetic
from fedchain.config import RunConfig
from fedchain.orchestrator import Simulation

REAL_DATA_ENV = "FEDCHAIN_CMAPSS_DIR"


def real_data_dir(subset="FD001"):
    d = os.environ.get(REAL_DATA_ENV)
    if d and (Path(d) / f"train_{subset}.txt").exists():
        return Path(d)
    return None


@pytest.fixture(scope="session")
def fd001_dir(tmp_path_factory):
    """Real CMAPSS files when ``FEDCHAIN_CMAPSS_DIR`` points at them, else synthetic ones."""
    real = real_data_dir()
    if real is not None:
        return real
    return synthetic.write_subset(tmp_path_factory.mktemp("cmapss"), "FD001", seed=0)


@pytest.fixture(scope="session")
def data_source(fd001_dir):
    return "real" if real_data_dir() == fd001_dir else "synthetic"


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory):
    return synthetic.write_subset(tmp_path_factory.mktemp("small"), "FD001", seed=3, n_train=12, n_test=3)


@pytest.fixture(scope="session")
def keypair():
    return crypto.generate_keypair(1024, seed=2024)


@pytest.fixture
def rng():
    return random.Random(12345)


class RunCache:
    def __init__(self, factory):
        self.factory = factory
        self.runs = {}

    def get(self, cfg: RunConfig, write=True):
        key = repr(cfg)
        if key not in self.runs:
            sim = Simulation.setup(cfg)
            sim.run()
            out = self.factory.mktemp("run") if write else None
            if write:
                sim.write_outputs(out)
            self.runs[key] = (sim, out)
        return self.runs[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return RunCache(tmp_path_factory)


@pytest.fixture(scope="session")
def default_cfg(fd001_dir, tmp_path_factory):
    return RunConfig(data_dir=fd001_dir, output_dir=tmp_path_factory.mktemp("unused"))


@pytest.fixture(scope="session")
def small_cfg(small_dir, tmp_path_factory):
    return RunConfig(
        data_dir=small_dir, k=2, difficulty=8, rsa_bits=512,
        output_dir=tmp_path_factory.mktemp("unused_small"),
    ).with_overrides(rounds_max=3, epochs=5)


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    n, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.when == "call" or n not in _CRITERIA:
        _CRITERIA[n] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        terminalreporter.write_line(f"[{status}] {n:>2}. {title}" + (f" | {detail}" if detail else ""))
