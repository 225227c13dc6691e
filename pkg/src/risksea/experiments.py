"""End-to-end runs shared by the CLI and the acceptance suite.

A run ingests epochs as snapshots, builds one neighbor store per snapshot,
trains dynamic embeddings (bootstrap then increments), builds the propagation
baseline from a core sample of the bootstrap embeddings, and scores held-out
addresses with forests trained on different feature families.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from risksea._io import stable_int
from risksea.embedder import (EmbeddingTable, SgnsHyper, SgnsModel, bootstrap_train, export_embeddings,
                              incremental_train)
from risksea.features import FeatureTable, build_feature_table
from risksea.propagator import CoverageReport, propagate_all, select_core_set
from risksea.riskmodel import EvalReport, ForestConfig, evaluate, resolve_labels, score_batch, \
    stratified_split, train_forest
from risksea.synthgen import SynthData
from risksea.txgraph import (DEFAULT_PARTITIONS, DEFAULT_TOP_K, DeltaNodeSet, EdgeLog, NeighborStore,
                             build_neighbor_store, compute_delta_nodes)
from risksea.walkgen import WalkCorpus, WalkParams, generate_walks_partitioned

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    walk: WalkParams = WalkParams()
    sgns: SgnsHyper = SgnsHyper()
    forest: ForestConfig = ForestConfig()
    top_k: int = DEFAULT_TOP_K
    partitions: int = DEFAULT_PARTITIONS
    cache_size: int = 16384
    sample_n: int = 5
    core_fraction: float = 0.3
    propagation_seed: int = 0
    test_fraction: float = 0.2
    split_seed: int = 0
    threshold: float = 0.5
    workers: int = 1

    @classmethod
    def seeded(cls, seed: int, **overrides) -> "Settings":
        base = cls(walk=WalkParams(seed=seed), sgns=SgnsHyper(seed=seed), forest=ForestConfig(seed=seed),
                   propagation_seed=seed, split_seed=seed)
        return replace(base, **overrides)


def snapshot_walk_params(params: WalkParams, snapshot_id: int) -> WalkParams:
    """Walk parameters with a per-snapshot seed so increments do not replay earlier streams."""
    return replace(params, seed=stable_int(params.seed, "walks", snapshot_id) & 0x7FFF_FFFF_FFFF_FFFF)


def ingest_epochs(data: SynthData, log_dir: str | Path) -> EdgeLog:
    edge_log = EdgeLog(log_dir)
    for batch in data.epochs:
        report = edge_log.ingest(batch)
        if report.rejected:
            raise ValueError(f"synthetic epoch rejected {report.rejected} rows: {report.rejections[:3]}")
    return edge_log


def build_stores(edge_log: EdgeLog, store_root: str | Path, settings: Settings) -> list[NeighborStore]:
    root = Path(store_root)
    return [build_neighbor_store(edge_log, s.snapshot_id, root / f"snapshot-{s.snapshot_id:06d}",
                                 settings.top_k, settings.partitions)
            for s in edge_log.snapshots()]


@dataclass
class DynamicRun:
    models: list[SgnsModel]
    deltas: list[DeltaNodeSet] = field(default_factory=list)
    corpora: list[WalkCorpus] = field(default_factory=list)

    @property
    def final(self) -> SgnsModel:
        return self.models[-1]


def run_dynamic(edge_log: EdgeLog, stores: Sequence[NeighborStore], settings: Settings,
                keep_corpora: bool = False,
                on_model: Callable[[SgnsModel], None] | None = None) -> DynamicRun:
    """Bootstrap on the first store, then one warm-started increment per later snapshot."""
    first = stores[0]
    corpus = generate_walks_partitioned(None, first, snapshot_walk_params(settings.walk, first.snapshot_id),
                                        settings.workers, settings.cache_size)
    model = bootstrap_train(corpus, settings.sgns, snapshot_id=first.snapshot_id)
    run = DynamicRun([model], [], [corpus] if keep_corpora else [])
    if on_model:
        on_model(model)
    for prev, store in zip(stores, stores[1:]):
        delta = compute_delta_nodes(edge_log, prev.snapshot_id, store.snapshot_id)
        walks = generate_walks_partitioned(delta.nodes, store,
                                           snapshot_walk_params(settings.walk, store.snapshot_id),
                                           settings.workers, settings.cache_size)
        model = incremental_train(model, walks, settings.sgns, snapshot_id=store.snapshot_id)
        log.info("snapshot %d: %d delta nodes, %d walks, vocab %d",
                 store.snapshot_id, len(delta.nodes), len(walks), len(model))
        run.models.append(model)
        run.deltas.append(delta)
        if keep_corpora:
            run.corpora.append(walks)
        if on_model:
            on_model(model)
    return run


def run_propagation(bootstrap: SgnsModel, store: NeighborStore,
                    settings: Settings) -> tuple[EmbeddingTable, CoverageReport]:
    """Core = random ``core_fraction`` of the bootstrap vocabulary, propagated over ``store``."""
    table = export_embeddings(bootstrap)
    size = int(round(settings.core_fraction * len(table)))
    core = select_core_set(table.nodes, size, settings.propagation_seed, bootstrap.snapshot_id)
    return propagate_all(table.restrict(core.members), store, settings.sample_n,
                         settings.propagation_seed, settings.workers)


def fit_and_evaluate(table: FeatureTable, labels: dict[str, int], train: Sequence[str], test: Sequence[str],
                     feature_set: str, settings: Settings) -> tuple[EvalReport, np.ndarray]:
    cols = table.column_indices(feature_set)
    names = [table.columns[i] for i in cols]
    X_train = table.rows(train)[:, cols]
    X_test = table.rows(test)[:, cols]
    model = train_forest(X_train, [labels[a] for a in train], settings.forest, names, settings.workers)
    scores = score_batch(model, X_test)
    report = evaluate(scores, [labels[a] for a in test], settings.threshold)
    report.extra.update({"feature_set": feature_set, "split_seed": settings.split_seed,
                         "n_train": len(train), "n_test": len(test)})
    return report, scores


@dataclass
class ExperimentResult:
    reports: dict[str, EvalReport]
    coverage: CoverageReport
    dynamic: DynamicRun

    def summary(self) -> dict[str, float]:
        out = {}
        for name, rep in self.reports.items():
            out[f"{name}.f1"] = rep.f1
            out[f"{name}.pr_auc"] = rep.pr_auc
        out["propagation.coverage"] = self.coverage.fraction
        return out


def run_experiment(data: SynthData, workdir: str | Path, settings: Settings,
                   keep_corpora: bool = False) -> ExperimentResult:
    """Feature-family ablation and dynamic-vs-propagated comparison on one dataset.

    Report keys: ``behavioral``, ``embedding`` (dynamic), ``combined``
    (behavioral + dynamic) and ``propagated`` (propagated embeddings only).
    """
    workdir = Path(workdir)
    edge_log = ingest_epochs(data, workdir / "edgelog")
    stores = build_stores(edge_log, workdir / "stores", settings)
    dyn = run_dynamic(edge_log, stores, settings, keep_corpora=keep_corpora)
    dynamic_table = export_embeddings(dyn.final)
    propagated, coverage = run_propagation(dyn.models[0], stores[-1], settings)

    labels = resolve_labels(data.labels)
    records = list(edge_log.records_through(stores[-1].snapshot_id))
    present = sorted(a for a in labels if a in stores[-1])
    labels = {a: labels[a] for a in present}
    train, test = stratified_split(labels, settings.test_fraction, settings.split_seed)
    dim = settings.sgns.dim
    dyn_features = build_feature_table(records, dynamic_table, dim, present)
    prop_features = build_feature_table(records, propagated, dim, present)

    reports = {}
    for name, table, fset in (("behavioral", dyn_features, "behavioral"),
                              ("embedding", dyn_features, "embedding"),
                              ("combined", dyn_features, "all"),
                              ("propagated", prop_features, "embedding")):
        reports[name], _ = fit_and_evaluate(table, labels, train, test, fset, settings)
    return ExperimentResult(reports, coverage, dyn)


# -- hyperparameter sweep -----------------------------------------------------------------

DEFAULT_SWEEP_GRID = {
    "num_walks": (3, 6, 9, 10),
    "walk_length": (4, 8, 10, 16),
    "p": (0.25, 0.5, 1.0, 2.0, 4.0),
    "q": (0.25, 0.5, 1.0, 2.0, 4.0),
}


@dataclass
class SweepRow:
    num_walks: int
    walk_length: int
    p: float
    q: float
    pr_auc: float
    pr_curve: list[list[float]]


def iter_grid(grid: dict[str, Iterable]) -> Iterable[dict]:
    keys = ("num_walks", "walk_length", "p", "q")
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, combo))


def sweep(edge_log: EdgeLog, stores: Sequence[NeighborStore], labels: dict[str, int], grid: dict[str, Iterable],
          settings: Settings, progress: Callable[[SweepRow], None] | None = None) -> list[SweepRow]:
    """Dynamic embeddings per walk configuration, scored by an embedding-only forest's PR-AUC."""
    present = sorted(a for a in labels if a in stores[-1])
    labels = {a: labels[a] for a in present}
    train, test = stratified_split(labels, settings.test_fraction, settings.split_seed)
    rows = []
    for cfg in iter_grid(grid):
        walk = replace(settings.walk, **cfg)
        run = run_dynamic(edge_log, stores, replace(settings, walk=walk))
        table = build_feature_table([], export_embeddings(run.final), settings.sgns.dim, present)
        report, _ = fit_and_evaluate(table, labels, train, test, "embedding", settings)
        row = SweepRow(walk.num_walks, walk.walk_length, walk.p, walk.q, report.pr_auc, report.pr_curve)
        rows.append(row)
        if progress:
            progress(row)
    return rows
