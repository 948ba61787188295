import numpy as np
import pytest
import torch

from stsccl.graph_data import GraphSpec, WindowBatch, ring_graph, synth_traffic


def tiny_graph(n=4, seed=0, chords=0):
    rng = np.random.default_rng(seed)
    a = ring_graph(n, seed, n_chords=chords)
    return GraphSpec.build(a, rng.uniform(0, 10, size=(n, 2)), rng.dirichlet(np.ones(6), size=n))


def random_batch(b=3, p=4, n=4, d=1, k=2, seed=0, flagged=False):
    rng = np.random.default_rng(seed)
    hist = rng.normal(size=(b, p, n, d))
    flag = np.full(b, flagged)
    return WindowBatch(history=hist, future=rng.normal(size=(b, k, n, d)),
                       day_lag=hist.copy() if flagged else rng.normal(size=hist.shape),
                       week_lag=hist.copy() if flagged else rng.normal(size=hist.shape),
                       anchors=np.arange(b), day_flag=flag, week_flag=flag.copy())


@pytest.fixture(autouse=True)
def _quiet_torch():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synthetic():
    return synth_traffic(12, 10, 30, seed=0)


ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
