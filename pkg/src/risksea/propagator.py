"""One-hop embedding propagation from a core set of trained addresses.

An address outside the core gets the element-wise mean of up to ``sample_n``
randomly chosen one-hop neighbors that belong to the core.  Addresses with no
core neighbor stay uncovered.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from risksea._io import split_chunks, stable_int
from risksea.embedder import EmbeddingTable
from risksea.txgraph import NeighborStore

DEFAULT_SAMPLE_N = 5


@dataclass(frozen=True)
class CoreSet:
    members: frozenset
    seed: int
    source_snapshot: int | None = None

    def __len__(self):
        return len(self.members)

    def __contains__(self, node):
        return node in self.members


@dataclass(frozen=True)
class CoverageReport:
    covered: int
    total: int

    @property
    def fraction(self) -> float:
        return self.covered / self.total if self.total else 0.0

    def to_json(self) -> str:
        return json.dumps({"covered": self.covered, "total": self.total, "fraction": self.fraction})


def select_core_set(candidates: Iterable[str], size: int, seed: int,
                    source_snapshot: int | None = None) -> CoreSet:
    """Uniform sample of ``size`` candidates without replacement."""
    pool = sorted(set(candidates))
    if size < 0 or size > len(pool):
        raise ValueError(f"core size {size} is outside [0, {len(pool)}]")
    rng = random.Random(stable_int(seed, "core"))
    return CoreSet(frozenset(rng.sample(pool, size)), seed, source_snapshot)


def core_neighbors(address: str, core: EmbeddingTable, store: NeighborStore) -> list[str]:
    return sorted(n for n, _ in store.neighbors(address) if n in core)


def sample_core_neighbors(address: str, core: EmbeddingTable, store: NeighborStore,
                          sample_n: int, seed: int) -> list[str]:
    hood = core_neighbors(address, core, store)
    k = min(sample_n, len(hood))
    return random.Random(stable_int(seed, "propagate", address)).sample(hood, k)


def propagate(address: str, core: EmbeddingTable, store: NeighborStore,
              sample_n: int = DEFAULT_SAMPLE_N, seed: int = 0) -> np.ndarray | None:
    """Propagated vector for ``address`` or ``None`` when it has no core neighbor.

    ``core`` must already be restricted to the core set.  Core members pass
    through unchanged.
    """
    if sample_n < 1:
        raise ValueError("sample_n must be >= 1")
    own = core.get(address)
    if own is not None:
        return own
    picked = sample_core_neighbors(address, core, store, sample_n, seed)
    if not picked:
        return None
    return np.stack([core.get(n) for n in picked]).astype(np.float64).mean(axis=0).astype(np.float32)


def _propagate_chunk(core, store, nodes, sample_n, seed):
    if isinstance(store, str):
        store = NeighborStore(store)
    out_nodes, out_vecs = [], []
    for node in nodes:
        v = propagate(node, core, store, sample_n, seed)
        if v is not None:
            out_nodes.append(node)
            out_vecs.append(v)
    return out_nodes, out_vecs


def propagate_all(core: EmbeddingTable, store: NeighborStore, sample_n: int = DEFAULT_SAMPLE_N,
                  seed: int = 0, workers: int = 1) -> tuple[EmbeddingTable, CoverageReport]:
    """Propagate to every node of ``store``; output does not depend on ``workers``."""
    nodes = store.nodes()
    chunks = split_chunks(nodes, workers)
    if workers <= 1 or len(chunks) <= 1:
        results = [_propagate_chunk(core, store, nodes, sample_n, seed)]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=len(chunks), mp_context=ctx) as pool:
            futures = [pool.submit(_propagate_chunk, core, str(store.root), c, sample_n, seed) for c in chunks]
            results = [f.result() for f in futures]
    covered = [n for ns, _ in results for n in ns]
    vecs = [v for _, vs in results for v in vs]
    matrix = np.stack(vecs) if vecs else np.zeros((0, core.dim), dtype=np.float32)
    return EmbeddingTable(covered, matrix, store.snapshot_id), CoverageReport(len(covered), len(nodes))
