import numpy as np
import pytest

from relu_unwrap import data as D
from relu_unwrap.trainer import TrainConfig, train
from relu_unwrap.unwrapper import unwrap


def _fit(ds, hidden, seed, epochs=150):
    tr, te, _ = D.split_and_scale(ds, D.SplitSpec(seed=seed))
    net = train(tr, TrainConfig(hidden_sizes=hidden, max_epochs=epochs, patience=min(50, epochs), seed=seed))
    return net, tr, te


@pytest.fixture(scope="session")
def reg_run():
    net, tr, te = _fit(D.gen_chirpwave(n=400, seed=1), [12, 12], seed=1)
    return net, tr, te, unwrap(net, tr)


@pytest.fixture(scope="session")
def clf_run():
    net, tr, te = _fit(D.gen_cocircles(n=600, seed=2), [16, 16, 16], seed=2, epochs=200)
    return net, tr, te, unwrap(net, tr)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; returns ``ok`` for asserting."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
