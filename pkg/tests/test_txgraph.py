import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0, edges_to_records, random_graph, tx
from risksea.errors import DataError
from risksea.txgraph import (EdgeLog, NeighborStore, TransactionRecord, build_neighbor_store, compute_delta_nodes,
                             format_line, interaction_counts, parse_line, partition_of, read_delta, read_edge_csv,
                             write_delta, write_edge_csv)


def test_record_validation():
    with pytest.raises(ValueError):
        TransactionRecord(0, "a", "b", 1.0)
    with pytest.raises(ValueError):
        TransactionRecord(T0, "", "b", 1.0)
    with pytest.raises(ValueError):
        TransactionRecord(T0, "a", "b", -1.0)
    with pytest.raises(ValueError):
        TransactionRecord(T0, "a", "b", 1.0, "BTC")
    with pytest.raises(ValueError):
        TransactionRecord(T0, "a|x", "b", 1.0)
    rec = TransactionRecord(T0, "a", "b", 2.5, "ERC20:usdc")
    assert not rec.is_native and rec.token_id == "usdc"


def test_ingest_counts_three_rows(tmp_path):
    log = EdgeLog(tmp_path)
    rep = log.ingest([tx(1, "a", "b"), tx(2, "b", "c"), tx(3, "d", "e")])
    assert (rep.new_edges, rep.rejected) == (3, 0)
    assert rep.new_nodes == 5 <= 6
    rep2 = log.ingest([tx(4, "a", "z")])
    assert rep2.new_nodes == 1
    assert log.snapshot(2).node_count == 6


def test_ingest_rejects_bad_rows_without_aborting(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("timestamp,from,to,amount,asset\n"
                   f"{T0 + 1},a,b,5,ETH\n"
                   f"{T0 + 2},a,b,-3,ETH\n"
                   f"{T0 + 3},a,,1,ETH\n"
                   "notatime,a,b,1,ETH\n"
                   f"{T0 + 4},a,b,1\n"
                   f"{T0 + 5},c,d,1,ERC20:t1\n")
    log = EdgeLog(tmp_path / "log")
    rep = log.ingest_csv(src)
    assert rep.new_edges == 2
    assert rep.rejected == 4
    assert [line for line, _ in rep.rejections] == [3, 4, 5, 6]


def test_ingest_negative_amount_single_rejection(tmp_path):
    log = EdgeLog(tmp_path)
    rep = log.ingest([{"timestamp": str(T0), "from": "a", "to": "b", "amount": "-1", "asset": "ETH"}])
    assert rep.rejected == 1 and rep.new_edges == 0


def test_snapshot_id_must_be_next(tmp_path):
    log = EdgeLog(tmp_path)
    with pytest.raises(DataError):
        log.ingest([tx(1, "a", "b")], snapshot_id=2)
    log.ingest([tx(1, "a", "b")], snapshot_id=1)
    with pytest.raises(DataError):
        log.ingest([tx(2, "a", "b")], snapshot_id=1)


def test_rows_at_or_before_previous_bound_are_rejected(tmp_path):
    log = EdgeLog(tmp_path)
    log.ingest([tx(10, "a", "b")])
    rep = log.ingest([tx(10, "a", "c"), tx(11, "a", "d")])
    assert rep.rejected == 1 and rep.new_edges == 1


def test_snapshot_counts_non_decreasing(tmp_path):
    log = EdgeLog(tmp_path)
    log.ingest([tx(1, "a", "b"), tx(2, "b", "c")])
    log.ingest([])
    log.ingest([tx(5, "c", "d")])
    snaps = log.snapshots()
    for a, b in zip(snaps, snaps[1:]):
        assert b.time_upper_bound >= a.time_upper_bound
        assert b.node_count >= a.node_count and b.edge_count >= a.edge_count


def test_pair_twice_counts_two(tmp_path, make_store):
    store = make_store([tx(1, "a", "b"), tx(2, "b", "a")])
    assert store.neighbors("a") == [("b", 2)]
    assert store.neighbors("b") == [("a", 2)]


def test_star_truncated_to_k(make_store):
    rng = random.Random(3)
    recs, t = [], 1
    counts = {}
    for i in range(300):
        leaf = f"leaf{i:03d}"
        counts[leaf] = rng.randint(1, 6)
        for _ in range(counts[leaf]):
            recs.append(tx(t, "center", leaf))
            t += 1
    store = make_store(recs)
    lst = store.neighbors("center")
    assert len(lst) == 200
    expected = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:200]
    assert lst == expected


def test_single_neighbor_and_tie_break(make_store):
    store = make_store([tx(1, "x", "B"), tx(2, "x", "B"), tx(3, "x", "A"), tx(4, "A", "x"), tx(5, "y", "z")])
    assert store.neighbors("x") == [("A", 2), ("B", 2)]
    assert store.neighbors("y") == [("z", 1)]


def test_self_loop_registers_node_without_neighbor(make_store):
    store = make_store([tx(1, "s", "s"), tx(2, "a", "b")])
    assert "s" in store
    assert store.neighbors("s") == []


def test_missing_snapshot_named_in_error(tmp_path):
    log = EdgeLog(tmp_path / "log")
    with pytest.raises(DataError, match="snapshot 3"):
        build_neighbor_store(log, 3, tmp_path / "s")


def test_line_format_round_trip():
    line = format_line("n1", [("n2", 3), ("n3", 1)])
    assert line == "n1|n2:3,n3:1\n"
    assert parse_line(line) == ("n1", [("n2", 3), ("n3", 1)])
    assert parse_line("n4|\n") == ("n4", [])


def test_partition_files_layout_and_stability(tmp_path):
    nodes, edges = random_graph(60, 200, seed=1)
    log = EdgeLog(tmp_path / "log")
    log.ingest(edges_to_records(edges))
    s1 = build_neighbor_store(log, 1, tmp_path / "s1", 5, 7)
    s2 = build_neighbor_store(log, 1, tmp_path / "s2", 5, 7)
    parts = sorted(p.name for p in (tmp_path / "s1").glob("part-*.txt"))
    assert len(parts) == 7
    for name in parts:
        assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()
    for name in parts:
        pid = int(name[5:10])
        for line in (tmp_path / "s1" / name).read_text().splitlines():
            node, lst = parse_line(line)
            assert partition_of(node, 7) == pid
            assert len(lst) <= 5
            assert lst == sorted(lst, key=lambda kv: (-kv[1], kv[0]))
    assert s1.nodes() == s2.nodes() == sorted({n for e in edges for n in e})


def test_counts_match_degree_with_multiplicity(tmp_path):
    nodes, edges = random_graph(80, 3000, seed=2)
    recs = edges_to_records(edges)
    log = EdgeLog(tmp_path / "log")
    log.ingest(recs)
    store = build_neighbor_store(log, 1, tmp_path / "s", 10_000, 8)
    degree = Counter()
    for r in recs:
        degree[r.from_addr] += 1
        degree[r.to_addr] += 1
    for node in store.nodes():
        assert sum(c for _, c in store.neighbors(node)) == degree[node]


def test_delta_nodes_examples(tmp_path):
    log = EdgeLog(tmp_path)
    log.ingest([tx(1, "a", "b")])
    log.ingest([])
    log.ingest([tx(5, "c", "d")])
    assert compute_delta_nodes(log, 1, 2).nodes == frozenset()
    assert compute_delta_nodes(log, 2, 3).nodes == {"c", "d"}
    assert compute_delta_nodes(log, 0, 3).nodes == {"a", "b", "c", "d"}
    with pytest.raises(ValueError):
        compute_delta_nodes(log, 3, 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 60), st.integers(0, 9), st.integers(0, 9)), min_size=1, max_size=30),
       st.integers(1, 59))
def test_delta_nodes_equal_brute_force_scan(tmp_path_factory, txs, cut):
    root = tmp_path_factory.mktemp("delta")
    recs = [tx(t, f"a{x}", f"a{y}") for t, x, y in txs]
    log = EdgeLog(root)
    log.ingest([r for r in recs if r.timestamp <= T0 + cut])
    log.ingest([r for r in recs if r.timestamp > T0 + cut])
    lo, hi = log.snapshot(1).time_upper_bound, log.snapshot(2).time_upper_bound
    brute = {n for r in recs if lo < r.timestamp <= hi for n in (r.from_addr, r.to_addr)}
    delta = compute_delta_nodes(log, 1, 2)
    assert delta.nodes == brute
    # delta plus the previous nodes gives the current nodes
    before = {n for r in log.records_through(1) for n in (r.from_addr, r.to_addr)}
    after = {n for r in log.records_through(2) for n in (r.from_addr, r.to_addr)}
    assert before | delta.nodes == after


def test_delta_file_round_trip(tmp_path):
    log = EdgeLog(tmp_path / "log")
    log.ingest([tx(1, "a", "b")])
    log.ingest([tx(2, "b", "c")])
    d = compute_delta_nodes(log, 1, 2)
    write_delta(tmp_path / "d.txt", d)
    assert read_delta(tmp_path / "d.txt") == d


def test_edge_csv_round_trip(tmp_path):
    recs = [tx(1, "a", "b", 1e18), tx(2, "b", "c", 0.5, "ERC20:tok")]
    write_edge_csv(tmp_path / "e.csv", recs)
    assert list(read_edge_csv(tmp_path / "e.csv")) == recs


def test_store_reads_one_list_per_lookup(make_store):
    nodes, edges = random_graph(40, 120, seed=4)
    store = make_store(edges, cache_size=0)
    store.reset_stats()
    for n in store.nodes():
        store.get(n)
    assert store.loads == len(store.nodes())
    assert store.resident_lists == 0  # nothing held, nothing cached
    assert store.get("unknown") is None and store.neighbors("unknown") == []


def test_store_requires_meta(tmp_path):
    with pytest.raises(DataError):
        NeighborStore(tmp_path)
