"""Skip-gram with negative sampling over walk corpora, with warm-started increments.

``bootstrap_train`` fits a model on the first snapshot's walks.
``incremental_train`` grows the vocabulary with nodes from delta walks, starts
from the previous model's vectors and trains on the delta walks only.  Nodes that
do not occur in the delta walks are frozen: they still serve as negative samples
(so the sampling distribution stays unigram^0.75 over the cumulative
vocabulary) but their input and output vectors are never written.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from risksea import _sgns
from risksea._io import atomic_open, stable_int
from risksea.errors import DataError
from risksea.walkgen import WalkCorpus

MODES = ("deterministic", "parallel")


@dataclass(frozen=True)
class SgnsHyper:
    dim: int = 128
    window: int = 5
    negative: int = 5
    lr: float = 0.025
    min_lr: float = 0.0001
    epochs: int = 5
    seed: int = 0
    mode: str = "deterministic"

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.window < 1 or self.negative < 0 or self.epochs < 0:
            raise ValueError("window >= 1, negative >= 0 and epochs >= 0 are required")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def init_vector(address: str, dim: int, seed: int) -> np.ndarray:
    """Uniform in [-0.5/dim, 0.5/dim], keyed by (seed, address)."""
    rng = np.random.default_rng(stable_int(seed, "init", address))
    return rng.uniform(-0.5 / dim, 0.5 / dim, dim).astype(np.float32)


def noise_distribution(counts: np.ndarray, power: float = 0.75) -> np.ndarray:
    """Negative-sampling probabilities: counts**power, normalized."""
    w = np.asarray(counts, dtype=np.float64) ** power
    return w / w.sum()


def noise_table(counts: np.ndarray, power: float = 0.75) -> tuple[np.ndarray, np.ndarray]:
    return _sgns.build_alias(noise_distribution(counts, power))


class SgnsModel:
    """Vocabulary, frequency counts, input and output vectors."""

    def __init__(self, hyper: SgnsHyper, vocab: list[str], counts: np.ndarray,
                 w_in: np.ndarray, w_out: np.ndarray, snapshot_id: int):
        self.hyper = hyper
        self.vocab = list(vocab)
        self.index = {n: i for i, n in enumerate(self.vocab)}
        self.counts = np.asarray(counts, dtype=np.int64)
        self.w_in = w_in
        self.w_out = w_out
        self.snapshot_id = snapshot_id

    @property
    def dim(self) -> int:
        return self.w_in.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, node):
        return node in self.index

    def vector(self, node: str) -> np.ndarray | None:
        i = self.index.get(node)
        return None if i is None else self.w_in[i]

    def copy(self, snapshot_id: int | None = None) -> "SgnsModel":
        return SgnsModel(self.hyper, self.vocab, self.counts.copy(), self.w_in.copy(), self.w_out.copy(),
                         self.snapshot_id if snapshot_id is None else snapshot_id)

    def save(self, path: str | os.PathLike) -> None:
        with atomic_open(path, "wb") as fh:
            np.savez(fh, w_in=self.w_in, w_out=self.w_out, counts=self.counts,
                     vocab=np.array(self.vocab, dtype=object).astype(str),
                     meta=np.array(json.dumps({"hyper": asdict(self.hyper), "snapshot_id": self.snapshot_id})))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SgnsModel":
        if not Path(path).exists():
            raise DataError(f"model file not found: {path}")
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(SgnsHyper(**meta["hyper"]), [str(v) for v in z["vocab"]], z["counts"],
                       z["w_in"].copy(), z["w_out"].copy(), meta["snapshot_id"])


def _encode(corpus: WalkCorpus, index: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(w) for w in corpus.walks]
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = np.fromiter((index[n] for w in corpus.walks for n in w), dtype=np.int64, count=int(offsets[-1]))
    return flat, offsets


def _run(model: SgnsModel, flat: np.ndarray, offsets: np.ndarray, trainable: np.ndarray,
         hyper: SgnsHyper, seed: int) -> None:
    if hyper.epochs == 0 or len(flat) == 0:
        return
    kernel = _sgns.train_parallel if hyper.mode == "parallel" else _sgns.train_sequential
    prob, alias = noise_table(model.counts)
    kernel(model.w_in, model.w_out, flat, offsets, prob, alias, trainable,
           hyper.window, hyper.negative, hyper.lr, hyper.min_lr, hyper.epochs, seed)


def _train_seed(hyper: SgnsHyper, snapshot_id: int) -> int:
    return stable_int(hyper.seed, "train", snapshot_id) & 0x7FFF_FFFF_FFFF_FFFF


def bootstrap_train(corpus: WalkCorpus, hyper: SgnsHyper = SgnsHyper(), snapshot_id: int = 1) -> SgnsModel:
    """Static SGNS on the first snapshot's walks."""
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty walk corpus")
    freq: dict[str, int] = {}
    for w in corpus.walks:
        for n in w:
            freq[n] = freq.get(n, 0) + 1
    vocab = sorted(freq)
    d = hyper.dim
    w_in = np.stack([init_vector(n, d, hyper.seed) for n in vocab])
    w_out = np.zeros_like(w_in)
    model = SgnsModel(hyper, vocab, np.array([freq[n] for n in vocab]), w_in, w_out, snapshot_id)
    flat, offsets = _encode(corpus, model.index)
    _run(model, flat, offsets, np.ones(len(vocab), dtype=np.uint8), hyper, _train_seed(hyper, snapshot_id))
    return model


def incremental_train(prev: SgnsModel, delta: WalkCorpus, hyper: SgnsHyper | None = None,
                      snapshot_id: int | None = None) -> SgnsModel:
    """Warm-started SGNS on delta walks; ``prev`` is not modified.

    New nodes get fresh vectors, counts accumulate, and only nodes that occur in
    ``delta`` can change.
    """
    hyper = prev.hyper if hyper is None else hyper
    if hyper.dim != prev.dim:
        raise ValueError(f"dimension mismatch: model has {prev.dim}, hyper has {hyper.dim}")
    sid = prev.snapshot_id + 1 if snapshot_id is None else snapshot_id
    model = prev.copy(snapshot_id=sid)
    model.hyper = hyper
    if len(delta) == 0:
        return model

    freq: dict[str, int] = {}
    for w in delta.walks:
        for n in w:
            freq[n] = freq.get(n, 0) + 1
    new = sorted(n for n in freq if n not in model.index)
    if new:
        model.vocab.extend(new)
        model.index.update({n: len(model.index) + i for i, n in enumerate(new)})
        fresh = np.stack([init_vector(n, hyper.dim, hyper.seed) for n in new])
        model.w_in = np.concatenate([model.w_in, fresh])
        model.w_out = np.concatenate([model.w_out, np.zeros_like(fresh)])
        model.counts = np.concatenate([model.counts, np.zeros(len(new), dtype=np.int64)])
    for n, c in freq.items():
        model.counts[model.index[n]] += c

    trainable = np.zeros(len(model.vocab), dtype=np.uint8)
    trainable[[model.index[n] for n in freq]] = 1
    flat, offsets = _encode(delta, model.index)
    _run(model, flat, offsets, trainable, hyper, _train_seed(hyper, sid))
    return model


# -- gradient reference (double precision, plain numpy) ---------------------------

def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sgns_loss_and_grads(w_in: np.ndarray, w_out: np.ndarray, pairs, negatives):
    """Negative SGNS log-likelihood summed over ``pairs`` and its gradients.

    ``pairs`` holds ``(center, context)`` index pairs, ``negatives[i]`` the
    negative indices used with pair ``i``.
    """
    loss = 0.0
    g_in = np.zeros_like(w_in)
    g_out = np.zeros_like(w_out)
    for (c, o), negs in zip(pairs, negatives):
        u = w_in[c]
        s = u @ w_out[o]
        loss -= _log_sigmoid(s)
        coef = _sigmoid(s) - 1.0
        g_in[c] += coef * w_out[o]
        g_out[o] += coef * u
        for n in negs:
            s = u @ w_out[n]
            loss -= _log_sigmoid(-s)
            coef = _sigmoid(s)
            g_in[c] += coef * w_out[n]
            g_out[n] += coef * u
    return loss, g_in, g_out


# -- embedding tables ---------------------------------------------------------------

class EmbeddingTable:
    """Immutable node -> vector map; unknown nodes look up as ``None``."""

    def __init__(self, nodes: list[str], vectors: np.ndarray, snapshot_id: int):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != len(nodes):
            raise ValueError(f"need a ({len(nodes)}, d) matrix, got shape {vectors.shape}")
        order = sorted(range(len(nodes)), key=nodes.__getitem__)
        self.nodes = [nodes[i] for i in order]
        self.vectors = vectors[order]
        self.vectors.setflags(write=False)
        self.index = {n: i for i, n in enumerate(self.nodes)}
        self.snapshot_id = snapshot_id

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node):
        return node in self.index

    def get(self, node: str) -> np.ndarray | None:
        i = self.index.get(node)
        return None if i is None else self.vectors[i]

    def restrict(self, nodes) -> "EmbeddingTable":
        keep = [n for n in self.nodes if n in nodes]
        rows = np.array([self.index[n] for n in keep], dtype=np.int64)
        return EmbeddingTable(keep, self.vectors[rows], self.snapshot_id)

    def equals(self, other: "EmbeddingTable") -> bool:
        return (self.nodes == other.nodes and self.snapshot_id == other.snapshot_id
                and np.array_equal(self.vectors, other.vectors))


def export_embeddings(model: SgnsModel) -> EmbeddingTable:
    return EmbeddingTable(model.vocab, model.w_in.copy(), model.snapshot_id)


def write_embeddings(path: str | os.PathLike, table: EmbeddingTable) -> None:
    """Text format: ``d=<int> snapshot=<int> count=<int>`` then ``address v1 .. vd``."""
    with atomic_open(path) as fh:
        fh.write(f"d={table.dim} snapshot={table.snapshot_id} count={len(table)}\n")
        for node, vec in zip(table.nodes, table.vectors):
            fh.write(node + " " + " ".join("%.9g" % v for v in vec.tolist()) + "\n")


def read_embeddings(path: str | os.PathLike) -> EmbeddingTable:
    if not Path(path).exists():
        raise DataError(f"embedding file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            header = dict(item.split("=") for item in fh.readline().split())
            d, sid, count = int(header["d"]), int(header["snapshot"]), int(header["count"])
        except (ValueError, KeyError):
            raise DataError(f"{path}: bad embedding header") from None
        nodes, rows = [], []
        for line in fh:
            parts = line.split()
            if len(parts) != d + 1:
                raise DataError(f"{path}: expected {d} values for {parts[0] if parts else '?'}")
            nodes.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(nodes) != count:
        raise DataError(f"{path}: header says {count} rows, found {len(nodes)}")
    vectors = np.array(rows, dtype=np.float32).reshape(len(nodes), d)
    return EmbeddingTable(nodes, vectors, sid)
