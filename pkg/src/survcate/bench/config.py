"""Flat ``key = value`` benchmark configuration."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from survcate.dgp import known_dgp_ids
from survcate.learners import valid_estimator

_LIST_KEYS = ("dgp_ids", "estimators")


@dataclass(frozen=True)
class BenchConfig:
    dgp_ids: tuple
    estimators: tuple
    replicates: int = 100
    n_train: int = 5000
    n_test: int = 5000
    t0_override: float | None = None
    base_seed: int = 0
    output_path: str = "results.csv"
    workers: int = 1
    num_trees: int = 500
    record_timings: bool = False
    positivity_floor: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "dgp_ids", tuple(self.dgp_ids))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.dgp_ids:
            raise ValueError("at least one DGP id is required")
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        known = set(known_dgp_ids())
        for d in self.dgp_ids:
            if d not in known:
                raise ValueError(f"unknown DGP id {d!r}")
        for name in self.estimators:
            if not valid_estimator(name):
                raise ValueError(f"unknown estimator {name!r}")
        for key in ("dgp_ids", "estimators"):
            values = getattr(self, key)
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate entries in {key}")
        if self.replicates < 1 or self.n_train < 2 or self.n_test < 2:
            raise ValueError("replicates must be >= 1 and sample sizes >= 2")
        if self.workers < 1 or self.num_trees < 1:
            raise ValueError("workers and num_trees must be >= 1")
        if self.t0_override is not None and not self.t0_override > 0:
            raise ValueError("t0_override must be positive")
        if not 0 < self.positivity_floor < 1:
            raise ValueError("positivity_floor must lie in (0, 1)")

    def with_overrides(self, **kw) -> "BenchConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _convert(key, raw: str, kind):
    if key in _LIST_KEYS:
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if key == "t0_override":
        return None if raw.lower() in ("", "none") else float(raw)
    if kind == "bool" or kind is bool:
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_config(text: str) -> BenchConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment and lists are comma-separated."""
    types = {f.name: f.type for f in fields(BenchConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, types[key])
    return BenchConfig(**values)


def shipped_configs() -> list:
    root = resources.files("survcate.bench").joinpath("configs")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(path_or_name: str) -> BenchConfig:
    """Read a config file, or one of the shipped profiles by name (``desk``, ``paper``)."""
    path = Path(path_or_name)
    if path.is_file():
        return parse_config(path.read_text())
    if path_or_name in shipped_configs():
        text = resources.files("survcate.bench").joinpath(f"configs/{path_or_name}.cfg").read_text()
        return parse_config(text)
    raise FileNotFoundError(f"no config file or shipped profile named {path_or_name!r}")
