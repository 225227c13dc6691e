"""Pipeline configuration: one JSON file, sections per stage, explicit seeds.

Every stochastic section (``walk``, ``sgns``, ``propagation``, ``forest``,
``split`` and, when used, ``synth``) must carry its own ``seed``.  Paths are
resolved relative to the config file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from risksea.embedder import SgnsHyper
from risksea.errors import ConfigError
from risksea.experiments import DEFAULT_SWEEP_GRID, Settings
from risksea.riskmodel import ForestConfig
from risksea.synthgen import SynthConfig
from risksea.txgraph import DEFAULT_PARTITIONS, DEFAULT_TOP_K
from risksea.walkgen import WalkParams

SEEDED_SECTIONS = ("walk", "sgns", "propagation", "forest", "split")


@dataclass(frozen=True)
class Paths:
    workdir: Path
    edge_log: Path
    stores: Path

    def store(self, snapshot_id: int) -> Path:
        return self.stores / f"snapshot-{snapshot_id:06d}"


@dataclass(frozen=True)
class StoreConfig:
    top_k: int = DEFAULT_TOP_K
    partitions: int = DEFAULT_PARTITIONS
    cache_size: int = 16384


@dataclass(frozen=True)
class PropagationConfig:
    seed: int
    sample_n: int = 5
    core_fraction: float = 0.3


@dataclass(frozen=True)
class SplitConfig:
    seed: int
    test_fraction: float = 0.2


@dataclass
class PipelineConfig:
    paths: Paths
    walk: WalkParams
    sgns: SgnsHyper
    propagation: PropagationConfig
    forest: ForestConfig
    split: SplitConfig
    store: StoreConfig = StoreConfig()
    threshold: float = 0.5
    feature_set: str = "all"
    synth: SynthConfig | None = None
    sweep_grid: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SWEEP_GRID.items()})
    raw: dict = field(default_factory=dict, repr=False)

    def settings(self, workers: int = 1) -> Settings:
        return Settings(walk=self.walk, sgns=self.sgns, forest=self.forest, top_k=self.store.top_k,
                        partitions=self.store.partitions, cache_size=self.store.cache_size,
                        sample_n=self.propagation.sample_n, core_fraction=self.propagation.core_fraction,
                        propagation_seed=self.propagation.seed, test_fraction=self.split.test_fraction,
                        split_seed=self.split.seed, threshold=self.threshold, workers=workers)

    def to_dict(self) -> dict:
        out = {
            "paths": {k: str(v) for k, v in asdict(self.paths).items()},
            "walk": asdict(self.walk), "sgns": asdict(self.sgns), "propagation": asdict(self.propagation),
            "forest": asdict(self.forest), "split": asdict(self.split), "store": asdict(self.store),
            "threshold": self.threshold, "feature_set": self.feature_set, "sweep": self.sweep_grid,
        }
        if self.synth is not None:
            out["synth"] = asdict(self.synth)
        return out


def _section(cls, name: str, data: Any, seeded: bool):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    if seeded:
        seed = data.get("seed")
        if seed is None:
            raise ConfigError(f"{name}.seed is required")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"{name}.seed must be a non-negative integer, got {seed!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


TOP_LEVEL = {"paths", "walk", "sgns", "propagation", "forest", "split", "store", "threshold",
             "feature_set", "synth", "sweep"}


def parse_config(data: dict, base_dir: str | os.PathLike = ".") -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    base = Path(base_dir)
    p = data.get("paths") or {}
    extra = set(p) - {"workdir", "edge_log", "stores"}
    if extra:
        raise ConfigError(f"unknown key(s) in 'paths': {sorted(extra)}")
    workdir = base / p.get("workdir", "work")
    paths = Paths(workdir, base / p["edge_log"] if "edge_log" in p else workdir / "edgelog",
                  base / p["stores"] if "stores" in p else workdir / "stores")

    sections = {name: data.get(name) for name in SEEDED_SECTIONS}
    missing = [n for n, v in sections.items() if v is None]
    if missing:
        raise ConfigError(f"missing section(s) {missing}; each needs an explicit seed")
    threshold = data.get("threshold", 0.5)
    if not isinstance(threshold, (int, float)) or not 0 <= threshold <= 1:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold!r}")
    feature_set = data.get("feature_set", "all")
    if feature_set not in ("all", "behavioral", "embedding"):
        raise ConfigError(f"feature_set must be all, behavioral or embedding, got {feature_set!r}")
    synth = _section(SynthConfig, "synth", data["synth"], True) if data.get("synth") is not None else None
    cfg = PipelineConfig(
        paths=paths,
        walk=_section(WalkParams, "walk", sections["walk"], True),
        sgns=_section(SgnsHyper, "sgns", sections["sgns"], True),
        propagation=_section(PropagationConfig, "propagation", sections["propagation"], True),
        forest=_section(ForestConfig, "forest", sections["forest"], True),
        split=_section(SplitConfig, "split", sections["split"], True),
        store=_section(StoreConfig, "store", data.get("store"), False),
        threshold=float(threshold),
        feature_set=feature_set,
        synth=synth,
        raw=data,
    )
    if not 0 < cfg.split.test_fraction < 1:
        raise ConfigError("split.test_fraction must be in (0, 1)")
    if not 0 <= cfg.propagation.core_fraction <= 1 or cfg.propagation.sample_n < 1:
        raise ConfigError("propagation needs core_fraction in [0, 1] and sample_n >= 1")
    if "sweep" in data:
        grid = data["sweep"]
        keys = {"num_walks", "walk_length", "p", "q"}
        if not isinstance(grid, dict) or set(grid) != keys or not all(isinstance(v, list) and v
                                                                        for v in grid.values()):
            raise ConfigError("sweep must map num_walks, walk_length, p and q to non-empty lists")
        cfg.sweep_grid = grid
    return cfg


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {key!r}: {part!r} is not a section")
        node[parts[-1]] = parsed
    return data


def load_config(path: str | os.PathLike, overrides: list[str] | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(apply_overrides(data, overrides or []), path.parent)


def default_config_dict(seed: int = 0) -> dict:
    """A complete config with every seed set to ``seed``; used by ``risksea init-config``."""
    return {
        "paths": {"workdir": "work"},
        "walk": asdict(WalkParams(seed=seed)),
        "sgns": asdict(SgnsHyper(seed=seed)),
        "propagation": asdict(PropagationConfig(seed=seed)),
        "forest": asdict(ForestConfig(seed=seed)),
        "split": asdict(SplitConfig(seed=seed)),
        "store": asdict(StoreConfig()),
        "threshold": 0.5,
        "feature_set": "all",
        "synth": asdict(SynthConfig(seed=seed)),
    }
