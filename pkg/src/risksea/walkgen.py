"""Second-order (node2vec) biased random walks over a partitioned neighbor store.

Walk generation is split-apply-combine: source nodes are split into contiguous
chunks, each worker walks its chunk against its own read-only store handle, and
the results are merged by ``(source, walk_index)``.  Every walk draws from its own
RNG stream derived from ``(seed, source, walk_index)``, so the corpus does not
depend on the number of workers or on scheduling order.
"""

from __future__ import annotations

import gzip
import multiprocessing as mp
import os
import random
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path
from typing import Iterable

from risksea._io import atomic_open, split_chunks, stable_int
from risksea.txgraph import NeighborList, NeighborStore


@dataclass(frozen=True)
class WalkParams:
    num_walks: int = 10
    walk_length: int = 10
    p: float = 1.0
    q: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_walks < 1:
            raise ValueError("num_walks must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if not (self.p > 0 and self.q > 0):
            raise ValueError("p and q must be positive")


@dataclass
class WalkCorpus:
    """Walks sorted by ``(source, walk_index)``; ``walk[0]`` is the source."""

    walks: list[list[str]]
    peak_resident_lists: list[int] = field(default_factory=list, compare=False)

    def __len__(self):
        return len(self.walks)

    def __iter__(self):
        return iter(self.walks)

    def sources(self) -> set[str]:
        return {w[0] for w in self.walks}

    def nodes(self) -> set[str]:
        return {n for w in self.walks for n in w}


def transition_weights(prev: str | None, cur: str, store: NeighborStore,
                       p: float, q: float) -> list[tuple[str, float]]:
    """Unnormalized node2vec weights for leaving ``cur`` having arrived from ``prev``.

    A candidate equal to ``prev`` is scaled by ``1/p``, a candidate adjacent to
    ``prev`` (in ``prev``'s truncated list) keeps its count, anything else is
    scaled by ``1/q``.  Without ``prev`` the raw counts are returned.
    """
    cur_list = store.get(cur)
    if cur_list is None:
        return []
    if prev is None:
        return [(n, float(c)) for n, c in zip(cur_list.neighbors, cur_list.counts)]
    prev_list = store.get(prev)
    prev_ids = prev_list.ids if prev_list is not None else frozenset()
    return list(zip(cur_list.neighbors, _biased(cur_list, prev, prev_ids, p, q)))


def _biased(cur_list: NeighborList, prev: str, prev_ids: frozenset, p: float, q: float) -> list[float]:
    inv_p, inv_q = 1.0 / p, 1.0 / q
    out = []
    for n, c in zip(cur_list.neighbors, cur_list.counts):
        if n == prev:
            out.append(c * inv_p)
        elif n in prev_ids:
            out.append(float(c))
        else:
            out.append(c * inv_q)
    return out


def _pick(rng: random.Random, candidates: list[str], weights: Iterable[float]) -> str:
    cum = list(accumulate(weights))
    i = bisect_right(cum, rng.random() * cum[-1])
    return candidates[min(i, len(candidates) - 1)]


def next_node(rng: random.Random, prev: str | None, cur: str, store: NeighborStore,
              p: float, q: float) -> str | None:
    """Sample one step from ``cur``; ``None`` at a dead end."""
    cur_list = store.get(cur)
    if cur_list is None or not cur_list.neighbors:
        return None
    if prev is None:
        return _pick(rng, cur_list.neighbors, cur_list.counts)
    prev_list = store.get(prev)
    prev_ids = prev_list.ids if prev_list is not None else frozenset()
    return _pick(rng, cur_list.neighbors, _biased(cur_list, prev, prev_ids, p, q))


def walk_rng(seed: int, source: str, walk_index: int) -> random.Random:
    return random.Random(stable_int(seed, source, walk_index, bits=128))


def generate_walk(source: str, store: NeighborStore, params: WalkParams, walk_index: int) -> list[str]:
    """One walk of at most ``params.walk_length`` nodes starting at ``source``.

    The walk holds at most two neighbor lists at a time (current and previous
    node).  It ends early at a node with an empty list.
    """
    rng = walk_rng(params.seed, source, walk_index)
    walk = [source]
    cur_list = store.get(source)
    if cur_list is None:
        return walk
    prev_list: NeighborList | None = None
    inv_p, inv_q = 1.0 / params.p, 1.0 / params.q
    while len(walk) < params.walk_length and cur_list.neighbors:
        nbrs, counts = cur_list.neighbors, cur_list.counts
        if prev_list is None:
            nxt = _pick(rng, nbrs, counts)
        else:
            prev, prev_ids = prev_list.node, prev_list.ids
            weights = [c * inv_p if n == prev else (c if n in prev_ids else c * inv_q)
                       for n, c in zip(nbrs, counts)]
            nxt = _pick(rng, nbrs, weights)
        walk.append(nxt)
        # release the old previous list before loading the next one
        prev_list, cur_list = cur_list, None
        cur_list = store.get(nxt)
        if cur_list is None:
            break
    return walk


def _walk_chunk(store: NeighborStore | str, nodes: list[str], params: WalkParams,
                cache_size: int | None = None) -> tuple[list[list[str]], int]:
    if not isinstance(store, NeighborStore):
        store = NeighborStore(store, cache_size=cache_size if cache_size is not None else 1024)
    store.reset_stats()
    walks = []
    for node in nodes:
        for i in range(params.num_walks):
            walks.append(generate_walk(node, store, params, i))
    return walks, store.peak_resident_lists


def generate_walks_partitioned(nodes: Iterable[str] | None, store: NeighborStore, params: WalkParams,
                               workers: int = 1, cache_size: int | None = None) -> WalkCorpus:
    """Exactly ``num_walks`` walks per requested node (all store nodes if ``nodes`` is None).

    With ``workers > 1`` each chunk runs in a separate process that opens its own
    store handle with an LRU cache of ``cache_size`` lists.  The per-worker peak
    of resident neighbor lists is reported in ``peak_resident_lists``.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    sources = sorted(set(store.nodes() if nodes is None else nodes))
    if not sources:
        return WalkCorpus([], [])
    chunks = split_chunks(sources, workers)
    if workers == 1:
        target = store if cache_size is None else NeighborStore(store.root, cache_size=cache_size)
        results = [_walk_chunk(target, chunks[0], params)]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        cs = cache_size if cache_size is not None else store.cache_size
        with ProcessPoolExecutor(max_workers=len(chunks), mp_context=ctx) as pool:
            futures = [pool.submit(_walk_chunk, str(store.root), chunk, params, cs) for chunk in chunks]
            results = [f.result() for f in futures]
    walks: list[list[str]] = []
    for chunk_walks, _ in results:
        walks.extend(chunk_walks)
    # chunks are contiguous in source order and walks are emitted by walk index,
    # so a stable sort on the source restores (source, walk_index) order
    walks.sort(key=lambda w: w[0])
    return WalkCorpus(walks, [peak for _, peak in results])


def write_corpus(path: str | os.PathLike, corpus: WalkCorpus) -> None:
    """One walk per line, space separated; ``.gz`` suffix writes gzip."""
    path = Path(path)
    data = "".join(" ".join(w) + "\n" for w in corpus.walks).encode("utf-8")
    with atomic_open(path, "wb") as fh:
        if path.suffix == ".gz":
            # mtime=0 keeps the compressed bytes reproducible
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(data)
        else:
            fh.write(data)


def read_corpus(path: str | os.PathLike) -> WalkCorpus:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        walks = [line.split() for line in fh if line.strip()]
    return WalkCorpus(walks)
