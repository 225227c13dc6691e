import itertools
import random

import numpy as np
import pytest

from conftest import random_graph
from risksea.embedder import EmbeddingTable, write_embeddings
from risksea.propagator import (CoverageReport, propagate, propagate_all, sample_core_neighbors,
                                select_core_set)


def table(vectors: dict) -> EmbeddingTable:
    nodes = sorted(vectors)
    return EmbeddingTable(nodes, np.array([vectors[n] for n in nodes], dtype=np.float32), 1)


def test_core_set_selection():
    cands = [f"a{i}" for i in range(20)]
    assert select_core_set(cands, 20, 1).members == set(cands)
    assert len(select_core_set(cands, 0, 1)) == 0
    assert select_core_set(cands, 7, 3).members == select_core_set(reversed(cands), 7, 3).members
    assert select_core_set(cands, 7, 3).members != select_core_set(cands, 7, 4).members
    with pytest.raises(ValueError):
        select_core_set(cands, 21, 0)


def test_propagate_examples(make_store):
    store = make_store([("x", "c1"), ("y", "c1"), ("y", "c2"), ("z", "w")])
    core = table({"c1": [1, 0, 2], "c2": [3, 4, 0]})
    np.testing.assert_array_equal(propagate("x", core, store), [1, 0, 2])
    np.testing.assert_allclose(propagate("y", core, store, sample_n=5), [2, 2, 1])
    assert propagate("z", core, store) is None
    np.testing.assert_array_equal(propagate("c2", core, store), [3, 4, 0])
    with pytest.raises(ValueError):
        propagate("x", core, store, sample_n=0)


def test_full_core_covers_everything(make_store):
    nodes, edges = random_graph(30, 60, seed=1)
    store = make_store(edges)
    core = table({n: [i, 1.0] for i, n in enumerate(store.nodes())})
    out, cov = propagate_all(core, store)
    assert cov.fraction == 1.0 and out.equals(EmbeddingTable(core.nodes, core.vectors, store.snapshot_id))


def test_known_cut_coverage(make_store):
    # 40 core nodes in a ring, 120 satellites each tied to one core node, 40 nodes in a core-free ring
    core_nodes = [f"c{i:03d}" for i in range(40)]
    edges = [(core_nodes[i], core_nodes[(i + 1) % 40]) for i in range(40)]
    edges += [(f"s{i:03d}", core_nodes[i % 40]) for i in range(120)]
    far = [f"f{i:03d}" for i in range(40)]
    edges += [(far[i], far[(i + 1) % 40]) for i in range(40)]
    store = make_store(edges)
    core = table({n: [float(i)] for i, n in enumerate(core_nodes)})
    _, cov = propagate_all(core, store, seed=2)
    assert (cov.covered, cov.total) == (160, 200)
    assert cov.fraction == 0.8
    assert cov.to_json() == '{"covered": 160, "total": 200, "fraction": 0.8}'


def test_propagation_exhaustive_against_brute_force(make_store):
    nodes, edges = random_graph(300, 900, seed=3)
    store = make_store(edges)
    rng = np.random.default_rng(0)
    all_nodes = store.nodes()
    core_ids = set(random.Random(1).sample(all_nodes, 90))
    core = table({n: rng.normal(size=4) for n in core_ids})
    adj = {n: set() for n in all_nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    out, cov = propagate_all(core, store, sample_n=3, seed=9)
    covered = 0
    for n in all_nodes:
        got = out.get(n)
        hood = sorted(adj[n] & core_ids)
        if n in core_ids:
            np.testing.assert_array_equal(got, core.get(n))
        elif not hood:
            assert got is None
        else:
            picked = sample_core_neighbors(n, core, store, 3, 9)
            assert len(picked) == min(3, len(hood)) and set(picked) <= set(hood)
            mean = np.mean([core.get(m).astype(np.float64) for m in picked], axis=0)
            np.testing.assert_allclose(got, mean.astype(np.float32), rtol=0, atol=0)
            # independent check: the result is the mean of some subset of the right size
            subsets = itertools.combinations(hood, min(3, len(hood)))
            assert any(np.allclose(got, np.mean([core.get(m) for m in s], axis=0), atol=1e-6) for s in subsets)
            # and lies in the bounding box of the core neighbors
            stack = np.stack([core.get(m) for m in hood])
            assert np.all(got >= stack.min(axis=0) - 1e-6) and np.all(got <= stack.max(axis=0) + 1e-6)
        covered += got is not None
    assert cov == CoverageReport(covered, len(all_nodes))


def test_identical_core_neighborhoods_give_identical_vectors(make_store):
    store = make_store([("u", "c1"), ("u", "c2"), ("v", "c1"), ("v", "c2")])
    core = table({"c1": [0.0, 1.0], "c2": [2.0, 5.0]})
    np.testing.assert_array_equal(propagate("u", core, store), propagate("v", core, store))


def test_workers_do_not_change_output(make_store, tmp_path):
    nodes, edges = random_graph(400, 1200, seed=5)
    store = make_store(edges)
    rng = np.random.default_rng(1)
    core = table({n: rng.normal(size=3) for n in store.nodes()[::4]})
    paths = []
    for w in (1, 4):
        out, _ = propagate_all(core, store, seed=1, workers=w)
        paths.append(tmp_path / f"w{w}.txt")
        write_embeddings(paths[-1], out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
