"""Transaction ingestion, cumulative graph snapshots and the partitioned neighbor store.

The edge log is append-only: snapshot ``t`` adds one batch of transactions and the
graph at ``t`` is the union of batches ``1..t``.  Neighbor stores are built per
snapshot and laid out as ``P`` partition files so a walker can read one node's
neighbor list without loading the rest of the graph.

Partition file line format (stable, fixtures depend on it)::

    node|neighbor:count,neighbor:count,...

Lists are sorted by interaction count descending, ties by neighbor address.
"""

from __future__ import annotations

import csv
import json
import os
import re
import threading
import weakref
import zlib
from collections import Counter, OrderedDict, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from risksea._io import atomic_open, atomic_write_text
from risksea.errors import DataError

NATIVE = "ETH"
TOKEN_PREFIX = "ERC20:"
CSV_HEADER = ("timestamp", "from", "to", "amount", "asset")

DEFAULT_TOP_K = 200
DEFAULT_PARTITIONS = 64

_ADDRESS_RE = re.compile(r"^[^\s|,:]+$")


def _check_address(value: str, name: str) -> str:
    if not value:
        raise ValueError(f"{name} is empty")
    if not _ADDRESS_RE.match(value):
        raise ValueError(f"{name} {value!r} contains whitespace or one of '|,:'")
    return value


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    """One directed value transfer.

    ``asset`` is ``"ETH"`` for the native asset or ``"ERC20:<token_id>"``.
    """

    timestamp: int
    from_addr: str
    to_addr: str
    amount: float
    asset: str = NATIVE

    def __post_init__(self):
        if not isinstance(self.timestamp, int) or self.timestamp <= 0:
            raise ValueError(f"timestamp must be a positive integer, got {self.timestamp!r}")
        _check_address(self.from_addr, "from address")
        _check_address(self.to_addr, "to address")
        amount = float(self.amount)
        if not amount >= 0 or amount == float("inf"):
            raise ValueError(f"amount must be finite and non-negative, got {self.amount!r}")
        if self.asset != NATIVE:
            if not self.asset.startswith(TOKEN_PREFIX) or len(self.asset) == len(TOKEN_PREFIX):
                raise ValueError(f"asset must be ETH or ERC20:<token_id>, got {self.asset!r}")
            _check_address(self.asset[len(TOKEN_PREFIX):], "token id")

    @property
    def is_native(self) -> bool:
        return self.asset == NATIVE

    @property
    def token_id(self) -> str | None:
        return None if self.is_native else self.asset[len(TOKEN_PREFIX):]

    def to_row(self) -> list[str]:
        return [str(self.timestamp), self.from_addr, self.to_addr, repr(float(self.amount)), self.asset]


def parse_record(row: Mapping[str, str] | TransactionRecord) -> TransactionRecord:
    """Build a record from a CSV row mapping; raises ``ValueError`` with the reason."""
    if isinstance(row, TransactionRecord):
        return row
    missing = [k for k in CSV_HEADER if row.get(k) in (None, "")]
    if missing:
        raise ValueError(f"missing field(s): {', '.join(missing)}")
    ts_text = row["timestamp"].strip()
    if not re.fullmatch(r"\d+", ts_text):
        raise ValueError(f"timestamp is not an integer: {ts_text!r}")
    try:
        amount = float(row["amount"])
    except ValueError:
        raise ValueError(f"amount is not a number: {row['amount']!r}") from None
    return TransactionRecord(
        timestamp=int(ts_text),
        from_addr=row["from"].strip(),
        to_addr=row["to"].strip(),
        amount=amount,
        asset=row["asset"].strip(),
    )


def read_edge_csv(path: str | os.PathLike) -> Iterator[TransactionRecord]:
    """Yield records from an edge-list CSV, raising on the first malformed row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, path)
        for row in reader:
            try:
                yield parse_record(row)
            except ValueError as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None


def write_edge_csv(path: str | os.PathLike, records: Iterable[TransactionRecord]) -> int:
    n = 0
    with atomic_open(path) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.to_row())
            n += 1
    return n


def _check_header(fieldnames, path) -> None:
    if fieldnames is None or tuple(f.strip() for f in fieldnames) != CSV_HEADER:
        raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}, got {fieldnames}")


@dataclass(frozen=True)
class GraphSnapshot:
    snapshot_id: int
    time_upper_bound: int
    node_count: int
    edge_count: int
    new_nodes: int = 0
    new_edges: int = 0


@dataclass
class IngestReport:
    snapshot_id: int
    new_nodes: int
    new_edges: int
    rejected: int
    rejections: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rejections"] = [list(r) for r in self.rejections]
        return d


class EdgeLog:
    """Append-only, snapshot-keyed transaction log rooted at a directory.

    Each snapshot's accepted records live in ``snapshot-NNNNNN.csv`` (edge-list
    CSV format, sorted by timestamp); ``snapshots.json`` holds the metadata.
    """

    META = "snapshots.json"

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def log_path(self, snapshot_id: int) -> Path:
        return self.root / f"snapshot-{snapshot_id:06d}.csv"

    def snapshots(self) -> list[GraphSnapshot]:
        meta = self.root / self.META
        if not meta.exists():
            return []
        return [GraphSnapshot(**d) for d in json.loads(meta.read_text())]

    def latest_id(self) -> int:
        snaps = self.snapshots()
        return snaps[-1].snapshot_id if snaps else 0

    def snapshot(self, snapshot_id: int) -> GraphSnapshot:
        for snap in self.snapshots():
            if snap.snapshot_id == snapshot_id:
                return snap
        raise DataError(f"edge log has no snapshot {snapshot_id} (root {self.root})")

    def records(self, snapshot_id: int) -> Iterator[TransactionRecord]:
        """Records added by snapshot ``snapshot_id`` alone."""
        self.snapshot(snapshot_id)
        path = self.log_path(snapshot_id)
        if not path.exists():
            raise DataError(f"edge log file for snapshot {snapshot_id} is missing: {path}")
        return read_edge_csv(path)

    def records_through(self, snapshot_id: int) -> Iterator[TransactionRecord]:
        """All records of the cumulative graph at ``snapshot_id``."""
        self.snapshot(snapshot_id)
        for sid in range(1, snapshot_id + 1):
            yield from self.records(sid)

    def ingest(self, records: Iterable[TransactionRecord | Mapping[str, str]],
               snapshot_id: int | None = None) -> IngestReport:
        """Append one batch as the next snapshot.

        Invalid rows are rejected with their 1-based position and never abort
        the batch.
        """
        return self._ingest(enumerate(records, start=1), snapshot_id)

    def ingest_csv(self, path: str | os.PathLike, snapshot_id: int | None = None) -> IngestReport:
        if not Path(path).exists():
            raise DataError(f"edge-list file not found: {path}")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            _check_header(header, path)

            def rows():
                for values in reader:
                    if len(values) != len(CSV_HEADER):
                        yield reader.line_num, f"expected {len(CSV_HEADER)} columns, got {len(values)}"
                    else:
                        yield reader.line_num, dict(zip(CSV_HEADER, values))

            return self._ingest(rows(), snapshot_id)

    def _ingest(self, numbered: Iterable[tuple[int, object]], snapshot_id: int | None) -> IngestReport:
        snaps = self.snapshots()
        latest = snaps[-1] if snaps else None
        expected = (latest.snapshot_id if latest else 0) + 1
        if snapshot_id is None:
            snapshot_id = expected
        if snapshot_id != expected:
            raise DataError(f"snapshot id must be {expected} (latest + 1), got {snapshot_id}")
        prev_bound = latest.time_upper_bound if latest else 0

        accepted: list[TransactionRecord] = []
        rejections: list[tuple[int, str]] = []
        for line_no, row in numbered:
            if isinstance(row, str):
                rejections.append((line_no, row))
                continue
            try:
                rec = parse_record(row)
            except ValueError as exc:
                rejections.append((line_no, str(exc)))
                continue
            if rec.timestamp <= prev_bound:
                rejections.append(
                    (line_no, f"timestamp {rec.timestamp} is not after previous snapshot bound {prev_bound}"))
                continue
            accepted.append(rec)
        accepted.sort(key=lambda r: r.timestamp)

        known: set[str] = set()
        if latest is not None:
            for rec in self.records_through(latest.snapshot_id):
                known.add(rec.from_addr)
                known.add(rec.to_addr)
        batch_nodes = {r.from_addr for r in accepted} | {r.to_addr for r in accepted}
        new_nodes = len(batch_nodes - known)

        self.root.mkdir(parents=True, exist_ok=True)
        write_edge_csv(self.log_path(snapshot_id), accepted)
        snap = GraphSnapshot(
            snapshot_id=snapshot_id,
            time_upper_bound=max([prev_bound] + [r.timestamp for r in accepted]),
            node_count=len(known) + new_nodes,
            edge_count=(latest.edge_count if latest else 0) + len(accepted),
            new_nodes=new_nodes,
            new_edges=len(accepted),
        )
        atomic_write_text(self.root / self.META,
                          json.dumps([asdict(s) for s in snaps + [snap]], indent=1) + "\n")
        return IngestReport(snapshot_id, new_nodes, len(accepted), len(rejections), rejections)


def interaction_counts(records: Iterable[TransactionRecord]) -> dict[str, Counter]:
    """Undirected pair counts before top-K truncation.

    Self-transfers make the node known but add no neighbor.
    """
    adj: dict[str, Counter] = defaultdict(Counter)
    for rec in records:
        a, b = rec.from_addr, rec.to_addr
        if a == b:
            adj.setdefault(a, Counter())
            continue
        adj[a][b] += 1
        adj[b][a] += 1
    return dict(adj)


def rank_neighbors(counts: Mapping[str, int], k: int) -> list[tuple[str, int]]:
    """Top-``k`` neighbors by count descending, ties broken by address ascending."""
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def partition_of(node: str, n_partitions: int) -> int:
    return zlib.crc32(node.encode("utf-8")) % n_partitions


def format_line(node: str, neighbors: Iterable[tuple[str, int]]) -> str:
    return node + "|" + ",".join(f"{n}:{c}" for n, c in neighbors) + "\n"


def parse_line(line: str) -> tuple[str, list[tuple[str, int]]]:
    node, _, rest = line.rstrip("\n").partition("|")
    out = []
    if rest:
        for item in rest.split(","):
            n, _, c = item.rpartition(":")
            out.append((n, int(c)))
    return node, out


def build_neighbor_store(log: EdgeLog, snapshot_id: int, out_dir: str | os.PathLike,
                         k: int = DEFAULT_TOP_K, n_partitions: int = DEFAULT_PARTITIONS) -> "NeighborStore":
    """Write the top-``k`` neighbor lists of snapshot ``snapshot_id`` as ``n_partitions`` files."""
    if k < 1 or n_partitions < 1:
        raise ValueError("K and P must be >= 1")
    snap = log.snapshot(snapshot_id)
    adj = interaction_counts(log.records_through(snapshot_id))

    parts: list[list[str]] = [[] for _ in range(n_partitions)]
    for node in adj:
        parts[partition_of(node, n_partitions)].append(node)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for pid, nodes in enumerate(parts):
        nodes.sort()
        offsets = []
        pos = 0
        with atomic_open(out_dir / _part_name(pid), "wb") as fh:
            for node in nodes:
                data = format_line(node, rank_neighbors(adj[node], k)).encode("utf-8")
                fh.write(data)
                offsets.append(f"{node} {pos} {len(data)}\n")
                pos += len(data)
        atomic_write_text(out_dir / _index_name(pid), "".join(offsets))
    meta = {"snapshot_id": snapshot_id, "top_k": k, "partitions": n_partitions,
            "node_count": len(adj), "time_upper_bound": snap.time_upper_bound}
    atomic_write_text(out_dir / "meta.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return NeighborStore(out_dir)


def _part_name(pid: int) -> str:
    return f"part-{pid:05d}.txt"


def _index_name(pid: int) -> str:
    return f"part-{pid:05d}.idx"


class NeighborList:
    """One node's truncated neighbor list as read from a partition file."""

    __slots__ = ("node", "neighbors", "counts", "_ids", "__weakref__")

    def __init__(self, node: str, pairs: list[tuple[str, int]]):
        self.node = node
        self.neighbors = [n for n, _ in pairs]
        self.counts = [c for _, c in pairs]
        self._ids = None

    @property
    def ids(self) -> frozenset:
        if self._ids is None:
            self._ids = frozenset(self.neighbors)
        return self._ids

    def pairs(self) -> list[tuple[str, int]]:
        return list(zip(self.neighbors, self.counts))

    def __len__(self):
        return len(self.neighbors)


class NeighborStore:
    """Read-only access to a built neighbor store.

    Lists are read on demand with one positioned read per node; only the
    per-partition offset indexes and a bounded LRU cache of lists stay in
    memory.  ``resident_lists`` / ``peak_resident_lists`` count live
    :class:`NeighborList` objects handed out by this store (cached or held by
    callers), which is how the walk memory contract is checked.
    """

    def __init__(self, root: str | os.PathLike, cache_size: int = 1024):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        if not meta_path.exists():
            raise DataError(f"no neighbor store at {self.root}")
        meta = json.loads(meta_path.read_text())
        self.snapshot_id: int = meta["snapshot_id"]
        self.top_k: int = meta["top_k"]
        self.n_partitions: int = meta["partitions"]
        self.node_count: int = meta["node_count"]
        self.cache_size = cache_size
        self._cache: OrderedDict[str, NeighborList] = OrderedDict()
        self._index: dict[int, dict[str, tuple[int, int]]] = {}
        self._fds: dict[int, int] = {}
        # reentrant: a list evicted under the lock may fire its finalizer there
        self._lock = threading.RLock()
        self.loads = 0
        self.resident_lists = 0
        self.peak_resident_lists = 0

    def __getstate__(self):
        return {"root": str(self.root), "cache_size": self.cache_size}

    def __setstate__(self, state):
        self.__init__(state["root"], state["cache_size"])

    def close(self) -> None:
        for fd in self._fds.values():
            os.close(fd)
        self._fds.clear()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def _partition_index(self, pid: int) -> dict[str, tuple[int, int]]:
        idx = self._index.get(pid)
        if idx is None:
            idx = {}
            with open(self.root / _index_name(pid), encoding="utf-8") as fh:
                for line in fh:
                    node, off, length = line.split()
                    idx[node] = (int(off), int(length))
            self._index[pid] = idx
        return idx

    def __contains__(self, node: str) -> bool:
        return node in self._partition_index(partition_of(node, self.n_partitions))

    def nodes(self) -> list[str]:
        """All nodes in the store, sorted."""
        out = []
        for pid in range(self.n_partitions):
            out.extend(self._partition_index(pid))
        out.sort()
        return out

    def _released(self) -> None:
        with self._lock:
            self.resident_lists -= 1

    def get(self, node: str) -> NeighborList | None:
        """Neighbor list of ``node`` or ``None`` if the node is not in the store."""
        with self._lock:
            hit = self._cache.get(node)
            if hit is not None:
                self._cache.move_to_end(node)
                return hit
        pid = partition_of(node, self.n_partitions)
        loc = self._partition_index(pid).get(node)
        if loc is None:
            return None
        fd = self._fds.get(pid)
        if fd is None:
            fd = self._fds[pid] = os.open(self.root / _part_name(pid), os.O_RDONLY)
        raw = os.pread(fd, loc[1], loc[0]).decode("utf-8")
        _, pairs = parse_line(raw)
        nl = NeighborList(node, pairs)
        with self._lock:
            self.loads += 1
            self.resident_lists += 1
            self.peak_resident_lists = max(self.peak_resident_lists, self.resident_lists)
            weakref.finalize(nl, self._released)
            if self.cache_size > 0:
                self._cache[node] = nl
                if len(self._cache) > self.cache_size:
                    self._cache.popitem(last=False)
        return nl

    def neighbors(self, node: str) -> list[tuple[str, int]]:
        """``(neighbor, interaction_count)`` pairs; empty if the node is unknown."""
        nl = self.get(node)
        return nl.pairs() if nl is not None else []

    def reset_stats(self) -> None:
        self.loads = 0
        self.peak_resident_lists = self.resident_lists


@dataclass(frozen=True)
class DeltaNodeSet:
    prev_id: int
    cur_id: int
    nodes: frozenset

    def sorted(self) -> list[str]:
        return sorted(self.nodes)


def compute_delta_nodes(log: EdgeLog, prev_id: int, cur_id: int) -> DeltaNodeSet:
    """Endpoints of transactions with timestamp in ``(bound(prev), bound(cur)]``."""
    if prev_id >= cur_id:
        raise ValueError(f"prev_id ({prev_id}) must be smaller than cur_id ({cur_id})")
    lo = log.snapshot(prev_id).time_upper_bound if prev_id > 0 else 0
    hi = log.snapshot(cur_id).time_upper_bound
    nodes = set()
    for sid in range(max(prev_id, 0) + 1, cur_id + 1):
        for rec in log.records(sid):
            if lo < rec.timestamp <= hi:
                nodes.add(rec.from_addr)
                nodes.add(rec.to_addr)
    return DeltaNodeSet(prev_id, cur_id, frozenset(nodes))


def write_delta(path: str | os.PathLike, delta: DeltaNodeSet) -> None:
    with atomic_open(path) as fh:
        fh.write(f"# delta {delta.prev_id} {delta.cur_id}\n")
        for node in delta.sorted():
            fh.write(node + "\n")


def read_delta(path: str | os.PathLike) -> DeltaNodeSet:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["#", "delta"]:
            raise DataError(f"{path}: not a delta node file")
        nodes = frozenset(line.strip() for line in fh if line.strip())
    return DeltaNodeSet(int(header[2]), int(header[3]), nodes)
