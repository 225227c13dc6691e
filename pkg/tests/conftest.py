import contextlib
import random

import pytest

from risksea.txgraph import EdgeLog, TransactionRecord, build_neighbor_store

T0 = 1_700_000_000


def tx(ts, a, b, amount=1.0, asset="ETH"):
    return TransactionRecord(T0 + ts, a, b, amount, asset)


def edges_to_records(edges, start=1, repeat=1):
    """One transfer per (a, b) pair (``repeat`` times), timestamps increasing from ``start``."""
    out, t = [], start
    for a, b in edges:
        for _ in range(repeat):
            out.append(tx(t, a, b))
            t += 1
    return out


def random_graph(n, m, seed, prefix="n"):
    rng = random.Random(seed)
    nodes = [f"{prefix}{i:03d}" for i in range(n)]
    edges = []
    for _ in range(m):
        a, b = rng.sample(nodes, 2)
        edges.append((a, b))
    return nodes, edges


@pytest.fixture
def make_store(tmp_path):
    """Build a single-snapshot store from an edge list (or records)."""
    counter = [0]

    def _make(edges_or_records, k=200, partitions=4, cache_size=1024):
        counter[0] += 1
        root = tmp_path / f"g{counter[0]}"
        recs = edges_or_records
        if recs and not isinstance(recs[0], TransactionRecord):
            recs = edges_to_records(recs)
        log = EdgeLog(root / "log")
        log.ingest(recs)
        store = build_neighbor_store(log, 1, root / "store", k, partitions)
        store.cache_size = cache_size
        return store

    return _make


@pytest.fixture(scope="session")
def default_experiment(tmp_path_factory):
    """Lazily run the default synthetic experiment once per seed and keep the results."""
    from risksea.experiments import Settings, run_experiment
    from risksea.synthgen import SynthConfig, generate

    cache = {}

    def _run(seed):
        if seed not in cache:
            data = generate(SynthConfig(seed=seed))
            result = run_experiment(data, tmp_path_factory.mktemp(f"exp{seed}"), Settings.seeded(seed))
            cache[seed] = (data, result)
        return cache[seed]

    return _run


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``with criterion(n, detail_fn): ...`` records PASS if the block finishes, FAIL otherwise."""

    @contextlib.contextmanager
    def _record(number, describe):
        try:
            yield
        except BaseException:
            ACCEPTANCE[number] = (False, describe())
            print(f"criterion {number}: FAIL {describe()}")
            raise
        ACCEPTANCE[number] = (True, describe())
        print(f"criterion {number}: PASS {describe()}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
