import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0
from risksea.embedder import EmbeddingTable
from risksea.errors import DataError
from risksea.features import (BEHAVIORAL_FIELDS, NATIVE, TOKEN, TOKEN_FIELDS, assemble, build_feature_table,
                              extract_all, extract_behavioral, feature_columns, read_features, write_features)
from risksea.txgraph import TransactionRecord

ME = "me"

record = st.builds(
    TransactionRecord,
    timestamp=st.integers(T0, T0 + 40 * 86400),
    from_addr=st.sampled_from([ME, "p1", "p2", "p3"]),
    to_addr=st.sampled_from([ME, "p1", "p2", "p4"]),
    amount=st.floats(0, 1e21, allow_nan=False, allow_infinity=False),
    asset=st.sampled_from(["ETH", "ERC20:t1", "ERC20:t2"]),
)


def oracle(address, records, bucket):
    """Straightforward recount of every field with the statistics module."""
    mine = [r for r in records if address in (r.from_addr, r.to_addr)
            and ((r.asset == "ETH") == (bucket == NATIVE))]
    names = BEHAVIORAL_FIELDS if bucket == NATIVE else TOKEN_FIELDS
    if not mine:
        return {n: 0.0 for n in names}
    ins = [r.amount for r in mine if r.to_addr == address]
    outs = [r.amount for r in mine if r.from_addr == address]
    ts = sorted(r.timestamp for r in mine)
    f = {
        "in_tx_count": len(ins), "out_tx_count": len(outs),
        "in_amount_sum": sum(ins), "out_amount_sum": sum(outs),
        "in_amount_mean": statistics.fmean(ins) if ins else 0.0,
        "out_amount_mean": statistics.fmean(outs) if outs else 0.0,
        "in_amount_max": max(ins, default=0.0), "out_amount_max": max(outs, default=0.0),
        "in_amount_std": statistics.pstdev(ins) if ins else 0.0,
        "out_amount_std": statistics.pstdev(outs) if outs else 0.0,
        "unique_senders": len({r.from_addr for r in mine if r.to_addr == address}),
        "unique_receivers": len({r.to_addr for r in mine if r.from_addr == address}),
        "active_days": len({t // 86400 for t in ts}),
        "lifetime_seconds": ts[-1] - ts[0],
        "mean_inter_tx_gap_seconds": statistics.fmean(np.diff(ts)) if len(ts) > 1 else 0.0,
        "in_out_count_ratio": (len(ins) + 1) / (len(outs) + 1),
        "in_out_amount_ratio": (sum(ins) + 1) / (sum(outs) + 1),
    }
    if bucket == TOKEN:
        f["distinct_tokens"] = len({r.asset for r in mine})
    return f


def test_empty_history_is_zero():
    assert not extract_behavioral(ME, [], NATIVE).any()
    assert extract_behavioral(ME, [], TOKEN).shape == (18,)


def test_single_incoming_transfer():
    v = dict(zip(BEHAVIORAL_FIELDS, extract_behavioral(ME, [TransactionRecord(T0, "x", ME, 5.0)], NATIVE)))
    assert (v["in_tx_count"], v["in_amount_sum"], v["in_amount_mean"], v["in_amount_std"]) == (1, 5, 5, 0)
    assert v["lifetime_seconds"] == 0 and v["out_tx_count"] == 0
    assert v["in_out_amount_ratio"] == 6.0


@settings(max_examples=60, deadline=None)
@given(st.lists(record, max_size=20), st.sampled_from([NATIVE, TOKEN]))
def test_matches_brute_force(records, bucket):
    got = dict(zip(BEHAVIORAL_FIELDS if bucket == NATIVE else TOKEN_FIELDS,
                   extract_behavioral(ME, records, bucket)))
    for name, expected in oracle(ME, records, bucket).items():
        assert got[name] == pytest.approx(expected, rel=1e-9, abs=1e-6), name


@settings(max_examples=60, deadline=None)
@given(st.lists(record, max_size=20), st.randoms(use_true_random=False))
def test_permutation_invariant(records, rnd):
    shuffled = list(records)
    rnd.shuffle(shuffled)
    for bucket in (NATIVE, TOKEN):
        assert np.array_equal(extract_behavioral(ME, records, bucket), extract_behavioral(ME, shuffled, bucket))


def _swap(rec):
    if ME not in (rec.from_addr, rec.to_addr):
        return rec
    return TransactionRecord(rec.timestamp, rec.to_addr, rec.from_addr, rec.amount, rec.asset)


@settings(max_examples=60, deadline=None)
@given(st.lists(record, max_size=20))
def test_direction_swap_swaps_in_out_pairs(records):
    a = dict(zip(TOKEN_FIELDS, extract_behavioral(ME, records, TOKEN)))
    b = dict(zip(TOKEN_FIELDS, extract_behavioral(ME, [_swap(r) for r in records], TOKEN)))
    for name in TOKEN_FIELDS:
        if name.startswith("in_") and not name.endswith("_ratio"):
            assert b[name] == a["out_" + name[3:]] and b["out_" + name[3:]] == a[name]
    assert b["unique_senders"] == a["unique_receivers"]
    if any(ME in (r.from_addr, r.to_addr) and r.asset != "ETH" for r in records):
        assert b["in_out_count_ratio"] == pytest.approx(1 / a["in_out_count_ratio"])
        assert b["in_out_amount_ratio"] == pytest.approx(1 / a["in_out_amount_ratio"])


@settings(max_examples=40, deadline=None)
@given(st.lists(record, max_size=20))
def test_outputs_finite(records):
    for bucket in (NATIVE, TOKEN):
        assert np.isfinite(extract_behavioral(ME, records, bucket)).all()


def test_extract_all_agrees_with_single_address():
    recs = [TransactionRecord(T0 + i, f"a{i % 3}", f"a{(i + 1) % 4}", float(i), "ETH" if i % 2 else "ERC20:t")
            for i in range(30)]
    both = extract_all(recs)
    for addr, (nat, tok) in both.items():
        assert np.array_equal(nat, extract_behavioral(addr, recs, NATIVE))
        assert np.array_equal(tok, extract_behavioral(addr, recs, TOKEN))


def test_assemble_layout():
    d = 4
    row = assemble("x", np.zeros(17), np.zeros(18), None, dim=d)
    assert len(row.values) == 17 + 18 + d + 1 and not row.values.any()
    emb = np.array([0.5, -1.0, 2.0, 3.0])
    row = assemble("x", np.ones(17), np.ones(18), emb, dim=d)
    assert np.array_equal(row.values[35:39], emb) and row.values[-1] == 1.0
    with pytest.raises(ValueError):
        assemble("x", np.zeros(16), np.zeros(18), emb)
    with pytest.raises(ValueError):
        assemble("x", np.zeros(17), np.zeros(18), emb, dim=3)
    assert len(feature_columns(d)) == 17 + 18 + d + 1


def test_feature_file_round_trip_and_schema(tmp_path):
    recs = [TransactionRecord(T0 + i, f"a{i % 3}", f"a{(i + 1) % 4}", 10.0 * i) for i in range(12)]
    emb = EmbeddingTable(["a0", "a2"], np.array([[1, 2], [3, 4]]), 1)
    t = build_feature_table(recs, emb, 2)
    write_features(tmp_path / "f.csv", t)
    assert (tmp_path / "f.csv").read_text().startswith("#features/v1 address,native_in_tx_count,")
    back = read_features(tmp_path / "f.csv")
    assert back.addresses == t.addresses and back.columns == t.columns
    assert np.array_equal(back.matrix, t.matrix)
    flags = dict(zip(t.addresses, t.matrix[:, -1]))
    assert flags == {"a0": 1.0, "a1": 0.0, "a2": 1.0, "a3": 0.0}
    assert len(t.column_indices("behavioral")) == 35 and len(t.column_indices("embedding")) == 3
    (tmp_path / "bad.csv").write_text("#features/v0 address,x\n")
    with pytest.raises(DataError):
        read_features(tmp_path / "bad.csv")
    with pytest.raises(DataError):
        t.rows(["nope"])
