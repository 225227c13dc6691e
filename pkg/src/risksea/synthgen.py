"""Seeded synthetic evolving transaction graphs with planted risky communities.

Epoch 1 is a stochastic block model over the initial communities.  Each later
epoch adds nodes to existing communities, brand-new communities, and a few new
links between existing nodes; new nodes draw their partners with the same block
probabilities.  Every edge carries one or more transfers whose amounts and
counts follow the sender's behavioral profile.

Two independent signals can be switched off: ``graph_signal`` (labels follow
communities, up to a ``label_purity`` share) and ``behavior_signal`` (risky
senders use a shifted amount and activity profile).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from risksea._io import atomic_write_text, stable_int
from risksea.errors import ConfigError
from risksea.riskmodel import RiskLabel, write_labels
from risksea.txgraph import NATIVE, TOKEN_PREFIX, TransactionRecord, write_edge_csv

_EPOCH_SECONDS = 30 * 86400


@dataclass(frozen=True)
class SynthConfig:
    n_communities: int = 40
    nodes_per_community: int = 100
    p_intra: float = 0.08
    p_inter: float = 0.0005
    risky_fraction: float = 0.3
    label_purity: float = 0.85
    epochs: int = 3
    node_growth: float = 0.05
    new_communities_per_epoch: int = 2
    edge_growth: float = 0.05
    tx_rate_benign: float = 1.0
    tx_rate_risky: float = 1.6
    amount_mu_benign: float = 3.0
    amount_mu_risky: float = 3.8
    amount_sigma: float = 1.0
    profile_spread: float = 0.8
    token_fraction: float = 0.3
    n_tokens: int = 20
    start_time: int = 1_600_000_000
    graph_signal: bool = True
    behavior_signal: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("p_intra", "p_inter", "risky_fraction", "label_purity", "token_fraction", "edge_growth"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.n_communities < 1 or self.nodes_per_community < 1:
            raise ConfigError("need at least one community with at least one node")
        if self.node_growth < 0 or self.new_communities_per_epoch < 0:
            raise ConfigError("growth rates must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SynthData:
    epochs: list[list[TransactionRecord]]
    labels: list[RiskLabel]
    communities: dict[str, int]
    config: SynthConfig

    def records(self):
        for batch in self.epochs:
            yield from batch


def _address(seed: int, idx: int) -> str:
    return "0x" + f"{stable_int(seed, 'addr', idx, bits=160):040x}"


class _Builder:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(stable_int(cfg.seed, "synth"))
        self.community: list[int] = []   # node -> community
        self.members: list[list[int]] = []  # community -> nodes
        self.profile: list[float] = []   # node -> behavioral latent
        self.risky_comm: np.ndarray = np.zeros(0, dtype=bool)
        self.node_risky: dict[int, bool] = {}
        self._addrs: list[str] = []

    def plan_communities(self):
        cfg = self.cfg
        total = cfg.n_communities + (cfg.epochs - 1) * cfg.new_communities_per_epoch
        n_risky = int(round(cfg.risky_fraction * total))
        flags = np.zeros(total, dtype=bool)
        flags[self.rng.choice(total, n_risky, replace=False)] = True
        self.risky_comm = flags
        self.members = [[] for _ in range(total)]

    def add_nodes(self, comm: int, count: int) -> list[int]:
        new = []
        for _ in range(count):
            idx = len(self.community)
            self.community.append(comm)
            self.members[comm].append(idx)
            new.append(idx)
        return new

    def assign_labels(self):
        cfg = self.cfg
        n = len(self.community)
        by_comm = np.array([self.risky_comm[c] for c in self.community], dtype=bool)
        if cfg.graph_signal:
            # swap a (1 - purity) share of risky-community members with as many
            # benign-community members, keeping the prevalence
            risky = by_comm.copy()
            n_swap = int(round((1.0 - cfg.label_purity) * by_comm.sum()))
            n_swap = min(n_swap, int((~by_comm).sum()))
            if n_swap:
                risky[self.rng.choice(np.flatnonzero(by_comm), n_swap, replace=False)] = False
                risky[self.rng.choice(np.flatnonzero(~by_comm), n_swap, replace=False)] = True
        else:
            # same prevalence, but scattered independently of community
            risky = np.zeros(n, dtype=bool)
            risky[self.rng.choice(n, int(by_comm.sum()), replace=False)] = True
        shift = (cfg.amount_mu_risky - cfg.amount_mu_benign) if cfg.behavior_signal else 0.0
        noise = self.rng.normal(0.0, cfg.profile_spread, n)
        self.profile = [cfg.amount_mu_benign + (shift if r else 0.0) + e for r, e in zip(risky, noise)]
        self.node_risky = {i: bool(r) for i, r in enumerate(risky)}

    def sample_row(self, node: int, candidates_intra: list[int], n_other: int, p_scale: float,
                   pool: list[int]) -> set[tuple[int, int]]:
        """SBM partners of one node: binomial counts then uniform picks."""
        cfg, rng = self.cfg, self.rng
        edges = set()
        intra = [c for c in candidates_intra if c != node]
        k_in = rng.binomial(len(intra), min(1.0, cfg.p_intra * p_scale)) if intra else 0
        for j in rng.choice(len(intra), k_in, replace=False) if k_in else []:
            edges.add(_pair(node, intra[j]))
        k_out = rng.binomial(n_other, min(1.0, cfg.p_inter * p_scale)) if n_other else 0
        comm = self.community[node]
        tries = 0
        while k_out > 0 and tries < 50 * (k_out + 1):
            tries += 1
            other = pool[int(rng.integers(0, len(pool)))]
            if self.community[other] != comm:
                edges.add(_pair(node, other))
                k_out -= 1
        return edges

    def ensure_connected(self, edges: set, nodes: list[int]) -> None:
        touched = {a for e in edges for a in e}
        for v in nodes:
            if v in touched:
                continue
            mates = [m for m in self.members[self.community[v]] if m != v]
            if not mates:
                continue
            edges.add(_pair(v, mates[int(self.rng.integers(0, len(mates)))]))
            touched.add(v)

    def transfers(self, edges: set, epoch: int) -> list[TransactionRecord]:
        cfg, rng = self.cfg, self.rng
        lo = cfg.start_time + (epoch - 1) * _EPOCH_SECONDS
        out = []
        for a, b in sorted(edges):
            rate_a = self._rate(a)
            rate_b = self._rate(b)
            n_tx = 1 + rng.poisson((rate_a + rate_b) / 2)
            for _ in range(n_tx):
                sender, receiver = (a, b) if rng.random() < rate_a / (rate_a + rate_b) else (b, a)
                amount = float(np.round(np.exp(rng.normal(self.profile[sender], cfg.amount_sigma)) * 1e6))
                ts = int(lo + rng.integers(1, _EPOCH_SECONDS))
                if rng.random() < cfg.token_fraction:
                    asset = f"{TOKEN_PREFIX}tok{int(rng.integers(0, cfg.n_tokens)):03d}"
                else:
                    asset = NATIVE
                out.append(TransactionRecord(ts, self.addr(sender), self.addr(receiver), amount, asset))
        out.sort(key=lambda r: (r.timestamp, r.from_addr, r.to_addr))
        return out

    def _rate(self, node: int) -> float:
        cfg = self.cfg
        risky = self.node_risky[node] and cfg.behavior_signal
        return cfg.tx_rate_risky if risky else cfg.tx_rate_benign

    def addr(self, node: int) -> str:
        while len(self._addrs) <= node:
            self._addrs.append(_address(self.cfg.seed, len(self._addrs)))
        return self._addrs[node]


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def generate(config: SynthConfig = SynthConfig()) -> SynthData:
    """Transfers per epoch plus ground-truth labels; deterministic under ``config.seed``."""
    cfg = config
    b = _Builder(cfg)
    b.plan_communities()

    # plan every node up front so labels and profiles are fixed before any edge
    epoch_nodes: list[list[int]] = []
    first = []
    for c in range(cfg.n_communities):
        first += b.add_nodes(c, cfg.nodes_per_community)
    epoch_nodes.append(first)
    next_comm = cfg.n_communities
    grow = int(round(cfg.node_growth * cfg.nodes_per_community))
    for _ in range(2, cfg.epochs + 1):
        new = []
        for c in range(next_comm):
            new += b.add_nodes(c, grow)
        for _ in range(cfg.new_communities_per_epoch):
            new += b.add_nodes(next_comm, cfg.nodes_per_community)
            next_comm += 1
        epoch_nodes.append(new)
    b.assign_labels()

    epochs = []
    alive: set[int] = set()
    for e, nodes in enumerate(epoch_nodes, start=1):
        alive_before = sorted(alive)
        alive.update(nodes)
        pool = sorted(alive)
        edges: set[tuple[int, int]] = set()
        node_set = set(nodes)
        for v in nodes:
            comm = b.community[v]
            intra = [m for m in b.members[comm] if m in alive]
            n_other = len(alive) - len(intra)
            # pairs among new nodes are drawn from both ends; halve to keep the block density
            for pair in b.sample_row(v, intra, n_other, 1.0, pool):
                other = pair[0] if pair[1] == v else pair[1]
                if other in node_set and b.rng.random() < 0.5:
                    continue
                if other in alive:
                    edges.add(pair)
        if e > 1 and cfg.edge_growth > 0:
            for v in alive_before:
                comm = b.community[v]
                intra = [m for m in b.members[comm] if m in alive and m not in node_set and m > v]
                n_other = max(0, (len(alive_before) - len(b.members[comm])) // 2)
                edges.update(b.sample_row(v, intra, n_other, cfg.edge_growth, alive_before))
        b.ensure_connected(edges, nodes)
        epochs.append(b.transfers(edges, e))

    n = len(b.community)
    if n == 0:
        raise ConfigError("configuration generates no nodes")
    labels = [RiskLabel(b.addr(i), int(b.node_risky[i]), "synth") for i in range(n)]
    labels.sort(key=lambda lab: lab.address)
    communities = {b.addr(i): b.community[i] for i in range(n)}
    return SynthData(epochs, labels, communities, cfg)


def write_synth(out_dir: str | os.PathLike, data: SynthData) -> list[Path]:
    """``epoch-NNN.csv`` per epoch, ``labels.csv``, ``communities.csv`` and ``synth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for e, batch in enumerate(data.epochs, start=1):
        p = out / f"epoch-{e:03d}.csv"
        write_edge_csv(p, batch)
        written.append(p)
    write_labels(out / "labels.csv", data.labels)
    comm_lines = "address,community\n" + "".join(f"{a},{c}\n" for a, c in sorted(data.communities.items()))
    atomic_write_text(out / "communities.csv", comm_lines)
    atomic_write_text(out / "synth.json", json.dumps(asdict(data.config), indent=1, sort_keys=True) + "\n")
    written += [out / "labels.csv", out / "communities.csv", out / "synth.json"]
    return written
