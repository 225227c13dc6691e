"""Risk labels, random forest soft classifier and precision/recall evaluation.

Each tree is grown with scikit-learn's CART (Gini impurity, sqrt-of-features per
split) on a bootstrap sample we draw ourselves, then flattened into plain arrays.
Scoring walks those arrays directly: a row's risk score is the mean over trees
of the positive fraction in the leaf it lands in.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.tree import DecisionTreeClassifier

from risksea._io import atomic_open, atomic_write_text, stable_int
from risksea.errors import DataError

LABEL_HEADER = ("address", "class", "source")


@dataclass(frozen=True)
class RiskLabel:
    address: str
    cls: int
    source: str = ""

    def __post_init__(self):
        if self.cls not in (0, 1):
            raise ValueError(f"risk class must be 0 or 1, got {self.cls!r}")


def resolve_labels(raw: Iterable[RiskLabel]) -> dict[str, int]:
    """One class per address; the high-risk class wins when sources disagree."""
    out: dict[str, int] = {}
    for lab in raw:
        out[lab.address] = max(out.get(lab.address, 0), lab.cls)
    return out


def read_labels(path: str | os.PathLike) -> list[RiskLabel]:
    if not Path(path).exists():
        raise DataError(f"label file not found: {path}")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LABEL_HEADER:
            raise DataError(f"{path}: expected header {','.join(LABEL_HEADER)}")
        for row in reader:
            try:
                out.append(RiskLabel(row["address"], int(row["class"]), row["source"] or ""))
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    return out


def write_labels(path: str | os.PathLike, labels: Iterable[RiskLabel]) -> None:
    with atomic_open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for lab in labels:
            w.writerow([lab.address, lab.cls, lab.source])


# -- forest ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 16
    min_samples_leaf: int = 5
    max_features: str = "sqrt"
    seed: int = 0


@dataclass
class Tree:
    """Flat binary tree; ``x[feature] <= threshold`` goes left, ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive-class fraction per node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.left[node] != -1
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.left[node] != -1
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def is_amount_column(name: str) -> bool:
    return "_amount_" in name and not name.endswith("_ratio")


@dataclass
class ForestModel:
    trees: list[Tree]
    config: ForestConfig
    n_features: int
    columns: list[str] | None = None
    log_columns: list[int] = field(default_factory=list)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=np.float64, ndmin=2)
        if X.shape[1] != self.n_features:
            raise ValueError(f"row has {X.shape[1]} features, model expects {self.n_features}")
        if self.log_columns:
            X[:, self.log_columns] = np.log1p(X[:, self.log_columns])
        return X

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = self.transform(X)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def save(self, path: str | os.PathLike) -> None:
        arrays = {}
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                arrays[f"t{i}_{name}"] = getattr(t, name)
        meta = {"config": asdict(self.config), "n_features": self.n_features, "columns": self.columns,
                "log_columns": self.log_columns, "n_trees": len(self.trees)}
        with atomic_open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ForestModel":
        if not Path(path).exists():
            raise DataError(f"forest file not found: {path}")
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            trees = [Tree(*(z[f"t{i}_{n}"] for n in ("feature", "threshold", "left", "right", "value")))
                     for i in range(meta["n_trees"])]
        return cls(trees, ForestConfig(**meta["config"]), meta["n_features"], meta["columns"], meta["log_columns"])


def _fit_tree(X: np.ndarray, y: np.ndarray, config: ForestConfig, index: int) -> Tree:
    rng = np.random.default_rng(stable_int(config.seed, "bootstrap", index))
    boot = rng.integers(0, len(X), len(X))
    clf = DecisionTreeClassifier(criterion="gini", max_depth=config.max_depth,
                                 min_samples_leaf=config.min_samples_leaf, max_features=config.max_features,
                                 random_state=stable_int(config.seed, "tree", index, bits=32) >> 1)
    clf.fit(X[boot], y[boot])
    t = clf.tree_
    counts = t.value[:, 0, :]
    classes = list(clf.classes_)
    if 1 in classes:
        value = counts[:, classes.index(1)] / counts.sum(axis=1)
    else:
        value = np.zeros(t.node_count)
    leaf = t.children_left == -1
    return Tree(
        feature=np.where(leaf, 0, t.feature).astype(np.int64),
        threshold=np.where(leaf, 0.0, t.threshold).astype(np.float64),
        left=t.children_left.astype(np.int64),
        right=t.children_right.astype(np.int64),
        value=value.astype(np.float64),
    )


def train_forest(X: np.ndarray, y: Sequence[int], config: ForestConfig = ForestConfig(),
                 columns: Sequence[str] | None = None, workers: int = 1) -> ForestModel:
    """Bagged Gini trees; deterministic for a given ``config.seed``.

    When ``columns`` is given, amount-denominated columns are log1p-scaled
    before fitting and again at scoring time.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("training data must contain both risk classes")
    log_cols = [i for i, c in enumerate(columns) if is_amount_column(c)] if columns is not None else []
    model = ForestModel([], config, X.shape[1], list(columns) if columns is not None else None, log_cols)
    Xt = model.transform(X)
    model.trees = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_fit_tree)(Xt, y, config, i) for i in range(config.n_trees))
    return model


def score(model: ForestModel, row: np.ndarray) -> float:
    """Risk score in [0, 1] for one assembled row."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ValueError("score expects a single row")
    return float(model.predict_proba(row[None, :])[0])


def score_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    return model.predict_proba(X)


def write_scores(path: str | os.PathLike, addresses: Sequence[str], scores: Sequence[float]) -> None:
    with atomic_open(path) as fh:
        fh.write("address,risk_score\n")
        for a, s in zip(addresses, scores):
            fh.write(f"{a},{float(s)!r}\n")


def read_scores(path: str | os.PathLike) -> dict[str, float]:
    if not Path(path).exists():
        raise DataError(f"score file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ("address", "risk_score"):
            raise DataError(f"{path}: expected header address,risk_score")
        return {row["address"]: float(row["risk_score"]) for row in reader}


# -- evaluation -------------------------------------------------------------------------

def _check_binary(labels: np.ndarray) -> None:
    if set(np.unique(labels)) != {0, 1}:
        raise ValueError("evaluation needs at least one positive and one negative label")


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(thresholds, recall, precision)`` at every distinct score, highest first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    _check_binary(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last]
    predicted = (np.arange(1, len(s) + 1))[last]
    return s[last], tp / y.sum(), tp / predicted


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-wise area under the PR curve: sum of (R_i - R_{i-1}) * P_i."""
    _, recall, precision = pr_curve(scores, labels)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    threshold: float
    pr_auc: float
    pr_curve: list[list[float]]
    n_positive: int
    n_negative: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def evaluate(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> EvalReport:
    """Precision/recall/F1 at ``threshold`` (score >= threshold is positive) plus the PR curve."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    _check_binary(y)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    _, rec, prec = pr_curve(s, y)
    return EvalReport(
        precision=precision, recall=recall, f1=f1, threshold=threshold,
        pr_auc=float(np.sum(np.diff(np.r_[0.0, rec]) * prec)),
        pr_curve=[[float(r), float(p)] for r, p in zip(rec, prec)],
        n_positive=int(y.sum()), n_negative=int(len(y) - y.sum()),
    )


def stratified_split(labels: dict[str, int], test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[list[str], list[str]]:
    """Seeded per-class split into ``(train, test)`` address lists."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(stable_int(seed, "split"))
    train, test = [], []
    for cls in (0, 1):
        members = sorted(a for a, c in labels.items() if c == cls)
        perm = rng.permutation(len(members))
        n_test = int(round(test_fraction * len(members)))
        test.extend(members[i] for i in perm[:n_test])
        train.extend(members[i] for i in perm[n_test:])
    return sorted(train), sorted(test)
