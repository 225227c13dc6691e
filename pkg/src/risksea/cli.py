"""``risksea`` command line: one subcommand per pipeline stage.

Stages talk to each other only through files.  Each stage writes a
``<output>.manifest.json`` next to its primary output recording input and output
content hashes, the config sections it used and their seeds.  On failure the
stage's new outputs are removed and a one-line JSON error goes to stderr.

Exit codes: 0 ok, 1 unexpected error, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict
from pathlib import Path

from risksea import __version__
from risksea._io import atomic_open, atomic_write_text, sha256_file
from risksea.config import PipelineConfig, default_config_dict, load_config
from risksea.embedder import (SgnsModel, bootstrap_train, export_embeddings, incremental_train,
                              read_embeddings, write_embeddings)
from risksea.errors import ConfigError, DataError
from risksea.experiments import run_propagation, snapshot_walk_params, sweep
from risksea.features import build_feature_table, read_features, write_features
from risksea.plotting import plot_pr_curve, plot_sweep
from risksea.riskmodel import (ForestModel, evaluate, read_labels, read_scores, resolve_labels, score_batch,
                               stratified_split, train_forest, write_scores)
from risksea.synthgen import generate, write_synth
from risksea.txgraph import (EdgeLog, NeighborStore, build_neighbor_store, compute_delta_nodes, read_delta,
                             write_delta)
from risksea.walkgen import generate_walks_partitioned, read_corpus, write_corpus

log = logging.getLogger("risksea")


def hash_path(path: Path) -> str:
    """sha256 of a file, or of the sorted (relative name, file hash) list of a directory."""
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f"{f.relative_to(path).as_posix()}\0{sha256_file(f)}\n".encode())
        return h.hexdigest()
    return sha256_file(path)


class Stage:
    """Bookkeeping for one stage run: inputs, outputs, manifest and cleanup."""

    def __init__(self, name: str, cfg: PipelineConfig, sections: tuple[str, ...], workers: int):
        self.name = name
        self.cfg = cfg
        self.sections = sections
        self.workers = workers
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self._fresh: list[Path] = []
        self._undo: list = []
        self.notes: dict = {}

    def input(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise DataError(f"{self.name}: input not found: {path}")
        self.inputs[str(path)] = hash_path(path)
        return path

    def output(self, path: str | Path) -> Path:
        path = Path(path)
        if not path.exists():
            self._fresh.append(path)
        self.outputs.append(path)
        return path

    def on_failure(self, fn) -> None:
        self._undo.append(fn)

    def cleanup(self) -> None:
        for fn in reversed(self._undo):
            fn()
        for path in reversed(self._fresh):
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            else:
                with contextlib.suppress(FileNotFoundError):
                    path.unlink()

    def write_manifest(self) -> Path:
        full = self.cfg.to_dict()
        config = {s: full[s] for s in self.sections if s in full}
        seeds = {s: v["seed"] for s, v in config.items() if isinstance(v, dict) and "seed" in v}
        manifest = {
            "stage": self.name,
            "version": __version__,
            "inputs": self.inputs,
            "outputs": {str(p): hash_path(p) for p in self.outputs if p.exists()},
            "config": config,
            "seeds": seeds,
            "workers": self.workers,
            "notes": self.notes,
        }
        path = Path(f"{self.outputs[0]}.manifest.json")
        self._fresh.append(path)
        atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return path


def _edge_log(cfg: PipelineConfig, stage: Stage, must_exist: bool = True) -> EdgeLog:
    meta = cfg.paths.edge_log / EdgeLog.META
    if must_exist:
        stage.input(meta)
    return EdgeLog(cfg.paths.edge_log)


def _snapshot_id(edge_log: EdgeLog, requested: int | None) -> int:
    sid = edge_log.latest_id() if requested is None else requested
    if sid < 1:
        raise DataError("edge log has no snapshots; run ingest first")
    edge_log.snapshot(sid)
    return sid


def _store(cfg: PipelineConfig, stage: Stage, sid: int) -> NeighborStore:
    root = stage.input(cfg.paths.store(sid))
    return NeighborStore(root, cache_size=cfg.store.cache_size)


# -- stages -------------------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig, stage: Stage) -> dict:
    if cfg.synth is None:
        raise ConfigError("synth stage needs a 'synth' section with a seed")
    out = stage.output(args.out)
    data = generate(cfg.synth)
    write_synth(out, data)
    return {"epochs": [len(b) for b in data.epochs], "labels": len(data.labels), "out": str(out)}


def cmd_ingest(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage, must_exist=False)
    meta = edge_log.root / EdgeLog.META
    # several inputs form one stage: restore the earlier snapshot list if any fails
    saved = meta.read_text() if meta.exists() else None
    stage.on_failure(lambda: atomic_write_text(meta, saved) if saved is not None else meta.unlink(missing_ok=True))
    reports = []
    first = args.snapshot_id
    for i, src in enumerate(args.input):
        src = stage.input(src)
        sid = edge_log.latest_id() + 1
        if first is not None and sid != first + i:
            raise DataError(f"snapshot id must be {sid} (latest + 1), got {first + i}")
        stage.output(edge_log.log_path(sid))
        report = edge_log.ingest_csv(src, sid)
        reports.append(report.to_dict())
    stage.outputs.append(meta)
    stage.notes["reports"] = reports
    return {"reports": reports}


def cmd_snapshot(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage)
    sid = _snapshot_id(edge_log, args.snapshot_id)
    for p in (edge_log.log_path(i) for i in range(1, sid + 1)):
        stage.input(p)
    out = cfg.paths.store(sid)
    if out.exists():
        shutil.rmtree(out)
    stage.output(out)
    store = build_neighbor_store(edge_log, sid, out, cfg.store.top_k, cfg.store.partitions)
    return {"snapshot_id": sid, "nodes": store.node_count, "store": str(out)}


def cmd_delta(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage)
    cur = _snapshot_id(edge_log, args.cur)
    prev = cur - 1 if args.prev is None else args.prev
    for i in range(max(prev, 0) + 1, cur + 1):
        stage.input(edge_log.log_path(i))
    delta = compute_delta_nodes(edge_log, prev, cur)
    write_delta(stage.output(args.out), delta)
    stage.notes["delta_nodes"] = len(delta.nodes)
    return {"prev": prev, "cur": cur, "delta_nodes": len(delta.nodes)}


def cmd_walk(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage)
    sid = _snapshot_id(edge_log, args.snapshot_id)
    store = _store(cfg, stage, sid)
    sources = read_delta(stage.input(args.delta)).nodes if args.delta else None
    params = snapshot_walk_params(cfg.walk, sid)
    corpus = generate_walks_partitioned(sources, store, params, stage.workers, cfg.store.cache_size)
    write_corpus(stage.output(args.out), corpus)
    stage.notes.update(snapshot_id=sid, walks=len(corpus), peak_resident_lists=corpus.peak_resident_lists)
    return {"snapshot_id": sid, "walks": len(corpus), "out": str(args.out)}


def _save_model(model: SgnsModel, args, stage: Stage) -> None:
    model.save(stage.output(args.out))
    if args.embeddings:
        write_embeddings(stage.output(args.embeddings), export_embeddings(model))


def cmd_train_embed(args, cfg: PipelineConfig, stage: Stage) -> dict:
    corpus = read_corpus(stage.input(args.corpus))
    if len(corpus) == 0:
        raise DataError(f"{args.corpus}: walk corpus is empty")
    model = bootstrap_train(corpus, cfg.sgns, snapshot_id=args.snapshot_id)
    _save_model(model, args, stage)
    return {"snapshot_id": model.snapshot_id, "vocab": len(model), "out": str(args.out)}


def cmd_increment_embed(args, cfg: PipelineConfig, stage: Stage) -> dict:
    # order: delta nodes -> delta walks -> load model -> retrain -> save
    edge_log = _edge_log(cfg, stage)
    model_path = stage.input(args.model)
    prev_sid = SgnsModel.load(model_path).snapshot_id
    sid = _snapshot_id(edge_log, args.snapshot_id)
    if sid <= prev_sid:
        raise DataError(f"model is already at snapshot {prev_sid}; target snapshot {sid} is not newer")
    delta = compute_delta_nodes(edge_log, prev_sid, sid)
    store = _store(cfg, stage, sid)
    corpus = generate_walks_partitioned(delta.nodes, store, snapshot_walk_params(cfg.walk, sid),
                                        stage.workers, cfg.store.cache_size)
    prev = SgnsModel.load(model_path)
    model = incremental_train(prev, corpus, cfg.sgns, snapshot_id=sid)
    _save_model(model, args, stage)
    if args.corpus_out:
        write_corpus(stage.output(args.corpus_out), corpus)
    stage.notes.update(prev_snapshot=prev_sid, snapshot_id=sid, delta_nodes=len(delta.nodes),
                       delta_walks=len(corpus), empty_delta=not delta.nodes, new_nodes=len(model) - len(prev))
    return {"snapshot_id": sid, "delta_nodes": len(delta.nodes), "empty_delta": not delta.nodes,
            "vocab": len(model), "out": str(args.out)}


def cmd_propagate(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage)
    sid = _snapshot_id(edge_log, args.snapshot_id)
    model = SgnsModel.load(stage.input(args.model))
    store = _store(cfg, stage, sid)
    table, coverage = run_propagation(model, store, cfg.settings(stage.workers))
    write_embeddings(stage.output(args.out), table)
    atomic_write_text(stage.output(f"{args.out}.coverage.json"), coverage.to_json() + "\n")
    stage.notes["coverage"] = json.loads(coverage.to_json())
    return {"snapshot_id": sid, **json.loads(coverage.to_json()), "out": str(args.out)}


def _labels(path, stage: Stage) -> dict[str, int]:
    return resolve_labels(read_labels(stage.input(path)))


def cmd_features(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage)
    sid = _snapshot_id(edge_log, args.snapshot_id)
    for i in range(1, sid + 1):
        stage.input(edge_log.log_path(i))
    store = _store(cfg, stage, sid)
    emb = read_embeddings(stage.input(args.embeddings)) if args.embeddings else None
    dim = emb.dim if emb is not None else cfg.sgns.dim
    if args.labels:
        addresses = sorted(a for a in _labels(args.labels, stage) if a in store)
    else:
        addresses = store.nodes()
    table = build_feature_table(edge_log.records_through(sid), emb, dim, addresses)
    write_features(stage.output(args.out), table)
    return {"rows": len(table.addresses), "columns": len(table.columns), "out": str(args.out)}


def cmd_train_risk(args, cfg: PipelineConfig, stage: Stage) -> dict:
    table = read_features(stage.input(args.features))
    labels = _labels(args.labels, stage)
    labels = {a: labels[a] for a in table.addresses if a in labels}
    if not labels:
        raise DataError("no labeled address has a feature row")
    try:
        train, test = stratified_split(labels, cfg.split.test_fraction, cfg.split.seed)
        cols = table.column_indices(cfg.feature_set)
        model = train_forest(table.rows(train)[:, cols], [labels[a] for a in train], cfg.forest,
                             [table.columns[i] for i in cols], stage.workers)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    model.save(stage.output(args.out))
    split = {"feature_set": cfg.feature_set, "train": train, "test": test}
    atomic_write_text(stage.output(f"{args.out}.split.json"), json.dumps(split, indent=0) + "\n")
    stage.notes.update(n_train=len(train), n_test=len(test), feature_set=cfg.feature_set)
    return {"n_train": len(train), "n_test": len(test), "feature_set": cfg.feature_set, "out": str(args.out)}


def cmd_score(args, cfg: PipelineConfig, stage: Stage) -> dict:
    model = ForestModel.load(stage.input(args.model))
    table = read_features(stage.input(args.features))
    names = model.columns or []
    index = {c: i for i, c in enumerate(table.columns)}
    missing = [c for c in names if c not in index]
    if missing or not names:
        raise DataError(f"feature file lacks model column(s) {missing[:3]}")
    X = table.matrix[:, [index[c] for c in names]]
    write_scores(stage.output(args.out), table.addresses, score_batch(model, X))
    return {"scored": len(table.addresses), "out": str(args.out)}


def cmd_evaluate(args, cfg: PipelineConfig, stage: Stage) -> dict:
    scores = read_scores(stage.input(args.scores))
    labels = _labels(args.labels, stage)
    if args.split:
        wanted = json.loads(stage.input(args.split).read_text())["test"]
    else:
        wanted = sorted(scores)
    pairs = [(scores[a], labels[a]) for a in wanted if a in scores and a in labels]
    if not pairs:
        raise DataError("no address has both a score and a label")
    try:
        report = evaluate([s for s, _ in pairs], [y for _, y in pairs], cfg.threshold)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report.extra.update(n_evaluated=len(pairs), scores=str(args.scores))
    out = stage.output(args.out)
    report.write(out)
    png = stage.output(out.with_suffix(".pr.png"))
    plot_pr_curve(report.pr_curve, report.pr_auc, png)
    return {"precision": report.precision, "recall": report.recall, "f1": report.f1, "pr_auc": report.pr_auc,
            "out": str(out), "figure": str(png)}


def cmd_sweep(args, cfg: PipelineConfig, stage: Stage) -> dict:
    edge_log = _edge_log(cfg, stage)
    latest = _snapshot_id(edge_log, None)
    stores = [_store(cfg, stage, sid) for sid in range(1, latest + 1)]
    labels = _labels(args.labels, stage)
    grid = json.loads(args.grid) if args.grid else cfg.sweep_grid
    out = stage.output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(edge_log, stores, labels, grid, cfg.settings(stage.workers),
                 progress=lambda r: log.info("sweep r=%s l=%s p=%s q=%s pr_auc=%.4f",
                                             r.num_walks, r.walk_length, r.p, r.q, r.pr_auc))
    with atomic_open(out / "sweep.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["num_walks", "walk_length", "p", "q", "pr_auc"])
        for r in rows:
            w.writerow([r.num_walks, r.walk_length, r.p, r.q, repr(r.pr_auc)])
    figures = plot_sweep(rows, out)
    best = max(rows, key=lambda r: r.pr_auc)
    stage.notes["configs"] = len(rows)
    return {"configs": len(rows), "best": {k: v for k, v in asdict(best).items() if k != "pr_curve"},
            "csv": str(out / "sweep.csv"), "figures": [str(f) for f in figures]}


STAGES = {
    # name: (handler, config sections recorded in the manifest)
    "synth": (cmd_synth, ("synth",)),
    "ingest": (cmd_ingest, ("paths",)),
    "snapshot": (cmd_snapshot, ("paths", "store")),
    "delta": (cmd_delta, ("paths",)),
    "walk": (cmd_walk, ("paths", "store", "walk")),
    "train-embed": (cmd_train_embed, ("sgns",)),
    "increment-embed": (cmd_increment_embed, ("paths", "store", "walk", "sgns")),
    "propagate": (cmd_propagate, ("paths", "store", "propagation")),
    "features": (cmd_features, ("paths", "store")),
    "train-risk": (cmd_train_risk, ("forest", "split", "feature_set")),
    "score": (cmd_score, ()),
    "evaluate": (cmd_evaluate, ("threshold",)),
    "sweep": (cmd_sweep, ("paths", "store", "walk", "sgns", "forest", "split", "sweep")),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", "-c", required=True, help="pipeline config (JSON)")
    common.add_argument("--workers", type=int, default=1, help="intra-stage parallelism")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="risksea", description="Dynamic graph embeddings and risk scoring for transaction graphs.")
    parser.add_argument("--version", action="version", version=f"risksea {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    init = sub.add_parser("init-config", help="write a complete config with explicit seeds")
    init.add_argument("--out", required=True)
    init.add_argument("--seed", type=int, required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("synth", "generate a synthetic evolving graph with labels")
    p.add_argument("--out", required=True, help="output directory")

    p = add("ingest", "append edge CSVs to the edge log, one snapshot each")
    p.add_argument("input", nargs="+")
    p.add_argument("--snapshot-id", type=int, help="id of the first new snapshot (must be latest + 1)")

    p = add("snapshot", "build the partitioned neighbor store for a snapshot")
    p.add_argument("--snapshot-id", type=int)

    p = add("delta", "list delta nodes between two snapshots")
    p.add_argument("--prev", type=int, help="default: cur - 1")
    p.add_argument("--cur", type=int, help="default: latest")
    p.add_argument("--out", required=True)

    p = add("walk", "generate biased random walks")
    p.add_argument("--snapshot-id", type=int)
    p.add_argument("--delta", help="delta node file; walks start only from these nodes")
    p.add_argument("--out", required=True, help="corpus file (.gz for gzip)")

    p = add("train-embed", "bootstrap skip-gram training on a walk corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--snapshot-id", type=int, default=1)
    p.add_argument("--out", required=True, help="model file (.npz)")
    p.add_argument("--embeddings", help="also export the embedding table here")

    p = add("increment-embed", "delta walks plus warm-started retraining")
    p.add_argument("--model", required=True, help="previous model (.npz)")
    p.add_argument("--snapshot-id", type=int, help="target snapshot (default: latest)")
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--corpus-out", help="keep the delta walks here")

    p = add("propagate", "one-hop propagation from a core sample of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--snapshot-id", type=int)
    p.add_argument("--out", required=True)

    p = add("features", "assemble behavioral + embedding feature rows")
    p.add_argument("--snapshot-id", type=int)
    p.add_argument("--embeddings", help="embedding table; omitted means every row is flagged missing")
    p.add_argument("--labels", help="restrict rows to labeled addresses")
    p.add_argument("--out", required=True)

    p = add("train-risk", "train the random forest on the training split")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = add("score", "risk scores for every feature row")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", "precision/recall/F1 and PR curve")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", help="split file from train-risk; evaluates its test addresses")
    p.add_argument("--out", required=True, help="report JSON; the PR figure goes next to it")

    p = add("sweep", "walk hyperparameter grid scored by PR-AUC")
    p.add_argument("--labels", required=True)
    p.add_argument("--grid", help='JSON grid, e.g. {"num_walks":[3,6],"walk_length":[8],"p":[1],"q":[1]}')
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _fail(code: int, kind: str, message: str, stage: str | None) -> int:
    print(json.dumps({"error": kind, "stage": stage, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    stage_name = None
    stage = None
    try:
        args = build_parser().parse_args(argv)
        stage_name = args.command
        if args.command == "init-config":
            atomic_write_text(args.out, json.dumps(default_config_dict(args.seed), indent=1) + "\n")
            return 0
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = load_config(args.config, args.overrides)
        handler, sections = STAGES[args.command]
        stage = Stage(args.command, cfg, sections, args.workers)
        result = handler(args, cfg, stage)
        stage.write_manifest()
        print(json.dumps(result, sort_keys=True))
        return 0
    except ConfigError as exc:
        code, kind, msg = 2, "config", str(exc)
    except (DataError, FileNotFoundError) as exc:
        code, kind, msg = 3, "data", str(exc)
    except ValueError as exc:
        code, kind, msg = 3, "data", str(exc)
    except Exception as exc:  # noqa: BLE001 - reported as a one-line error
        code, kind, msg = 1, "internal", f"{type(exc).__name__}: {exc}"
    if stage is not None:
        stage.cleanup()
    return _fail(code, kind, msg.replace("\n", " "), stage_name)


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
