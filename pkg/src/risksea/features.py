"""Behavioral transaction features and model-input assembly.

Two buckets per address, one over native-asset transfers and one over token
transfers.  Statistics are exact: sums use ``math.fsum`` so the result does not
depend on record order.  Amounts stay in raw base units here; any log scaling
happens in the classifier pipeline.
"""

from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from risksea._io import atomic_open
from risksea.errors import DataError
from risksea.txgraph import TransactionRecord

SCHEMA_VERSION = "features/v1"

BEHAVIORAL_FIELDS = (
    "in_tx_count", "out_tx_count",
    "in_amount_sum", "out_amount_sum",
    "in_amount_mean", "out_amount_mean",
    "in_amount_max", "out_amount_max",
    "in_amount_std", "out_amount_std",
    "unique_senders", "unique_receivers",
    "active_days", "lifetime_seconds", "mean_inter_tx_gap_seconds",
    "in_out_count_ratio", "in_out_amount_ratio",
)
TOKEN_FIELDS = BEHAVIORAL_FIELDS + ("distinct_tokens",)
NATIVE, TOKEN = "native", "token"

_DAY = 86400


def bucket_fields(bucket: str) -> tuple[str, ...]:
    return BEHAVIORAL_FIELDS if bucket == NATIVE else TOKEN_FIELDS


def _in_bucket(rec: TransactionRecord, bucket: str) -> bool:
    return rec.is_native if bucket == NATIVE else not rec.is_native


def _amount_stats(amounts: list[float]) -> tuple[float, float, float, float]:
    if not amounts:
        return 0.0, 0.0, 0.0, 0.0
    total = math.fsum(amounts)
    mean = total / len(amounts)
    var = math.fsum((a - mean) ** 2 for a in amounts) / len(amounts)
    return total, mean, max(amounts), math.sqrt(var)


def extract_behavioral(address: str, records: Iterable[TransactionRecord], bucket: str = NATIVE) -> np.ndarray:
    """Fixed-order feature vector for one address and one bucket.

    Records not touching ``address`` or outside the bucket's asset class are
    ignored.  No matching records gives the zero vector.
    """
    if bucket not in (NATIVE, TOKEN):
        raise ValueError(f"bucket must be {NATIVE!r} or {TOKEN!r}")
    mine = [r for r in records if (r.from_addr == address or r.to_addr == address) and _in_bucket(r, bucket)]
    n_fields = len(bucket_fields(bucket))
    if not mine:
        return np.zeros(n_fields)

    incoming = [r for r in mine if r.to_addr == address]
    outgoing = [r for r in mine if r.from_addr == address]
    in_sum, in_mean, in_max, in_std = _amount_stats([float(r.amount) for r in incoming])
    out_sum, out_mean, out_max, out_std = _amount_stats([float(r.amount) for r in outgoing])
    times = sorted(r.timestamp for r in mine)
    lifetime = times[-1] - times[0]
    values = [
        len(incoming), len(outgoing),
        in_sum, out_sum,
        in_mean, out_mean,
        in_max, out_max,
        in_std, out_std,
        len({r.from_addr for r in incoming}), len({r.to_addr for r in outgoing}),
        len({t // _DAY for t in times}),
        lifetime,
        lifetime / (len(times) - 1) if len(times) > 1 else 0.0,
        (len(incoming) + 1) / (len(outgoing) + 1),
        (in_sum + 1) / (out_sum + 1),
    ]
    if bucket == TOKEN:
        values.append(len({r.token_id for r in mine}))
    return np.array(values, dtype=np.float64)


def extract_all(records: Iterable[TransactionRecord],
                addresses: Iterable[str] | None = None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """``address -> (native, token)`` vectors in one pass over the records."""
    by_addr: dict[str, list[TransactionRecord]] = defaultdict(list)
    for rec in records:
        by_addr[rec.from_addr].append(rec)
        if rec.to_addr != rec.from_addr:
            by_addr[rec.to_addr].append(rec)
    targets = sorted(by_addr) if addresses is None else sorted(set(addresses))
    out = {}
    for a in targets:
        recs = by_addr.get(a, [])
        out[a] = (extract_behavioral(a, recs, NATIVE), extract_behavioral(a, recs, TOKEN))
    return out


def feature_columns(dim: int) -> list[str]:
    return ([f"native_{f}" for f in BEHAVIORAL_FIELDS] + [f"token_{f}" for f in TOKEN_FIELDS]
            + [f"emb_{i}" for i in range(dim)] + ["emb_present"])


@dataclass
class AssembledRow:
    address: str
    values: np.ndarray
    label: int | None = None


def assemble(address: str, native: np.ndarray, token: np.ndarray, emb: np.ndarray | None,
             dim: int | None = None, label: int | None = None) -> AssembledRow:
    """``native || token || embedding || present-flag``; a missing embedding is zeros with flag 0."""
    native = np.asarray(native, dtype=np.float64)
    token = np.asarray(token, dtype=np.float64)
    if native.shape != (len(BEHAVIORAL_FIELDS),):
        raise ValueError(f"native vector must have {len(BEHAVIORAL_FIELDS)} entries, got {native.shape}")
    if token.shape != (len(TOKEN_FIELDS),):
        raise ValueError(f"token vector must have {len(TOKEN_FIELDS)} entries, got {token.shape}")
    if emb is None:
        if dim is None:
            raise ValueError("dim is required when the embedding is missing")
        tail = np.zeros(dim + 1)
    else:
        emb = np.asarray(emb)
        if emb.ndim != 1 or (dim is not None and emb.shape[0] != dim):
            raise ValueError(f"embedding must be a vector of length {dim}, got {emb.shape}")
        tail = np.concatenate([emb.astype(np.float64), [1.0]])
    return AssembledRow(address, np.concatenate([native, token, tail]), label)


@dataclass
class FeatureTable:
    addresses: list[str]
    matrix: np.ndarray
    columns: list[str]

    @property
    def dim(self) -> int:
        return sum(c.startswith("emb_") and c != "emb_present" for c in self.columns)

    def column_indices(self, feature_set: str) -> np.ndarray:
        """Columns for ``all``, ``behavioral`` or ``embedding`` (embedding plus present flag)."""
        if feature_set == "all":
            keep = range(len(self.columns))
        elif feature_set == "behavioral":
            keep = [i for i, c in enumerate(self.columns) if not c.startswith("emb_")]
        elif feature_set == "embedding":
            keep = [i for i, c in enumerate(self.columns) if c.startswith("emb_")]
        else:
            raise ValueError(f"unknown feature set {feature_set!r}")
        return np.asarray(list(keep), dtype=np.int64)

    def rows(self, addresses: Sequence[str]) -> np.ndarray:
        index = {a: i for i, a in enumerate(self.addresses)}
        missing = [a for a in addresses if a not in index]
        if missing:
            raise DataError(f"{len(missing)} address(es) have no feature row, e.g. {missing[0]}")
        return self.matrix[[index[a] for a in addresses]]


def build_feature_table(records: Iterable[TransactionRecord], embeddings, dim: int,
                        addresses: Iterable[str] | None = None) -> FeatureTable:
    """Assembled rows for ``addresses`` (default: every address in ``records``).

    ``embeddings`` is anything with ``get(address) -> vector | None``.
    """
    behav = extract_all(records, addresses)
    rows = [assemble(a, nat, tok, embeddings.get(a) if embeddings is not None else None, dim).values
            for a, (nat, tok) in behav.items()]
    matrix = np.stack(rows) if rows else np.zeros((0, len(feature_columns(dim))))
    return FeatureTable(list(behav), matrix, feature_columns(dim))


def write_features(path: str | os.PathLike, table: FeatureTable) -> None:
    """CSV whose first line is ``#features/v1 <column,...>``, then one row per address."""
    with atomic_open(path) as fh:
        fh.write(f"#{SCHEMA_VERSION} " + ",".join(["address"] + table.columns) + "\n")
        for a, row in zip(table.addresses, table.matrix):
            fh.write(a + "," + ",".join(repr(float(v)) for v in row) + "\n")


def read_features(path: str | os.PathLike) -> FeatureTable:
    if not Path(path).exists():
        raise DataError(f"feature file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        prefix = f"#{SCHEMA_VERSION} "
        if not header.startswith(prefix):
            raise DataError(f"{path}: expected schema {SCHEMA_VERSION}, got {header[:40]!r}")
        columns = header[len(prefix):].split(",")
        if columns[0] != "address" or columns[1:] != feature_columns(
                sum(c.startswith("emb_") and c != "emb_present" for c in columns)):
            raise DataError(f"{path}: column list does not match schema {SCHEMA_VERSION}")
        addresses, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(columns):
                raise DataError(f"{path}: row for {parts[0]} has {len(parts)} fields, expected {len(columns)}")
            addresses.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns) - 1)
    return FeatureTable(addresses, matrix, columns[1:])
