import json

import pytest

from risksea.cli import main
from risksea.config import default_config_dict

TINY = {
    "synth": {"n_communities": 6, "nodes_per_community": 20, "epochs": 2, "new_communities_per_epoch": 1,
              "p_intra": 0.3, "p_inter": 0.01},
    "walk": {"num_walks": 2, "walk_length": 6},
    "sgns": {"dim": 8, "epochs": 1},
    "forest": {"n_trees": 10, "max_depth": 4},
    "store": {"partitions": 4},
}


def write_config(root, seed=0):
    cfg = default_config_dict(seed)
    for section, values in TINY.items():
        cfg[section].update(values)
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class Runner:
    def __init__(self, root, capsys):
        self.root = root
        self.capsys = capsys
        self.config = write_config(root)

    def __call__(self, *argv, code=0):
        argv = [str(a) for a in argv]
        if argv[0] != "init-config":
            argv += ["--config", str(self.config)]
        rc = main(argv)
        out, err = self.capsys.readouterr()
        assert rc == code, err
        return json.loads(out) if rc == 0 and out.strip() else err

    def path(self, name):
        return self.root / name


def run_pipeline(run):
    p = run.path
    run("synth", "--out", p("data"))
    run("ingest", p("data/epoch-001.csv"), p("data/epoch-002.csv"))
    for sid in (1, 2):
        run("snapshot", "--snapshot-id", sid)
    run("delta", "--cur", 2, "--out", p("delta2.txt"))
    run("walk", "--snapshot-id", 1, "--out", p("walks1.txt.gz"))
    run("train-embed", "--corpus", p("walks1.txt.gz"), "--out", p("m1.npz"), "--embeddings", p("e1.txt"))
    inc = run("increment-embed", "--model", p("m1.npz"), "--out", p("m2.npz"), "--embeddings", p("e2.txt"))
    run("propagate", "--model", p("m1.npz"), "--out", p("prop2.txt"))
    run("features", "--embeddings", p("e2.txt"), "--labels", p("data/labels.csv"), "--out", p("f.csv"))
    run("train-risk", "--features", p("f.csv"), "--labels", p("data/labels.csv"), "--out", p("forest.npz"))
    run("score", "--model", p("forest.npz"), "--features", p("f.csv"), "--out", p("scores.csv"))
    report = run("evaluate", "--scores", p("scores.csv"), "--labels", p("data/labels.csv"),
                 "--split", p("forest.npz.split.json"), "--out", p("report.json"))
    return inc, report


def test_full_pipeline(tmp_path, capsys):
    run = Runner(tmp_path, capsys)
    inc, report = run_pipeline(run)
    assert inc["snapshot_id"] == 2 and inc["delta_nodes"] > 0 and not inc["empty_delta"]
    assert 0 <= report["pr_auc"] <= 1
    for name in ("report.json", "report.pr.png", "prop2.txt.coverage.json", "scores.csv"):
        assert (tmp_path / name).exists(), name
    manifest = json.loads((tmp_path / "m2.npz.manifest.json").read_text())
    assert manifest["stage"] == "increment-embed"
    assert manifest["seeds"] == {"walk": 0, "sgns": 0}
    assert str(tmp_path / "m1.npz") in manifest["inputs"]
    assert str(tmp_path / "e2.txt") in manifest["outputs"]
    delta = (tmp_path / "delta2.txt").read_text().splitlines()
    assert delta[0] == "# delta 1 2" and len(delta) - 1 == inc["delta_nodes"]

    grid = json.dumps({"num_walks": [2], "walk_length": [4, 6], "p": [1.0], "q": [0.5, 2.0]})
    res = run("sweep", "--labels", tmp_path / "data/labels.csv", "--grid", grid, "--out", tmp_path / "sweep")
    assert res["configs"] == 4
    rows = (tmp_path / "sweep/sweep.csv").read_text().splitlines()
    assert rows[0] == "num_walks,walk_length,p,q,pr_auc" and len(rows) == 5
    assert len(res["figures"]) == 4


def test_rerun_is_byte_identical(tmp_path, capsys):
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        run_pipeline(Runner(tmp_path / sub, capsys))
    for name in ("walks1.txt.gz", "e1.txt", "e2.txt", "prop2.txt", "f.csv", "scores.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    reports = [json.loads((tmp_path / sub / "report.json").read_text()) for sub in ("a", "b")]
    for r in reports:
        r["extra"].pop("scores")  # the input path differs by directory
    assert reports[0] == reports[1]


def test_empty_delta_is_recorded(tmp_path, capsys):
    run = Runner(tmp_path, capsys)
    run_pipeline(run)
    (tmp_path / "empty.csv").write_text("timestamp,from,to,amount,asset\n")
    run("ingest", tmp_path / "empty.csv")
    run("snapshot", "--snapshot-id", 3)
    out = run("increment-embed", "--model", tmp_path / "m2.npz", "--out", tmp_path / "m3.npz",
              "--embeddings", tmp_path / "e3.txt")
    assert out["empty_delta"] and out["delta_nodes"] == 0
    notes = json.loads((tmp_path / "m3.npz.manifest.json").read_text())["notes"]
    assert notes["empty_delta"] is True and notes["delta_walks"] == 0
    body = lambda p: p.read_text().splitlines()[1:]
    assert body(tmp_path / "e3.txt") == body(tmp_path / "e2.txt")


def test_missing_seed_is_a_config_error(tmp_path, capsys):
    run = Runner(tmp_path, capsys)
    cfg = json.loads(run.config.read_text())
    del cfg["walk"]["seed"]
    run.config.write_text(json.dumps(cfg))
    err = run("synth", "--out", tmp_path / "data", code=2)
    lines = err.strip().splitlines()
    assert len(lines) == 1
    payload = json.loads(lines[0])
    assert payload["error"] == "config" and payload["stage"] == "synth" and "seed" in payload["message"]


def test_bad_arguments_exit_two(tmp_path, capsys):
    run = Runner(tmp_path, capsys)
    run("walk", "--no-such-flag", code=2)
    run("walk", "--out", tmp_path / "w.txt", "--workers", 0, code=2)


def test_data_errors_exit_three_and_clean_up(tmp_path, capsys):
    run = Runner(tmp_path, capsys)
    err = run("walk", "--out", tmp_path / "w.txt", code=3)
    assert json.loads(err)["error"] == "data"
    run("synth", "--out", tmp_path / "data")
    run("ingest", tmp_path / "data/epoch-001.csv")
    run("snapshot")
    # corpus written, then the embeddings output path is a directory: the stage fails mid-way
    run("walk", "--out", tmp_path / "w.txt")
    (tmp_path / "blocker").mkdir()
    err = run("train-embed", "--corpus", tmp_path / "w.txt", "--out", tmp_path / "m.npz",
              "--embeddings", tmp_path / "blocker", code=1)
    assert json.loads(err)["stage"] == "train-embed"
    assert not (tmp_path / "m.npz").exists() and not (tmp_path / "m.npz.manifest.json").exists()
    # a malformed input file is a data error too
    (tmp_path / "bad.csv").write_text("nope\n1,2\n")
    run("ingest", tmp_path / "bad.csv", code=3)
    assert (tmp_path / "work/edgelog").exists()
    run("delta", "--out", tmp_path / "d.txt")


def test_ingest_failure_keeps_snapshot_list(tmp_path, capsys):
    run = Runner(tmp_path, capsys)
    run("synth", "--out", tmp_path / "data")
    run("ingest", tmp_path / "data/epoch-001.csv")
    meta = next((tmp_path / "work").rglob("snapshots.json"))
    before = meta.read_bytes()
    run("ingest", tmp_path / "data/epoch-002.csv", tmp_path / "missing.csv", code=3)
    assert meta.read_bytes() == before
    run("ingest", tmp_path / "data/epoch-002.csv", "--snapshot-id", 2)


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "risksea" in capsys.readouterr().out
