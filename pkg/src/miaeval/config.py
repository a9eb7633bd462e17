"""Experiment configuration: TOML file, schema validation, defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import tomli

from .features import METHODS, MethodConfig
from .splits import DEFAULT_MIN_EXAMPLES, FIXED_RANGES, SPLIT_METHODS

DEFAULT_SEEDS = (47103, 28103, 58320)
DEFAULT_FAILURE_BUDGET = 0.10
ADAPTER_ENDPOINT_ENV = "MIAEVAL_ADAPTER_ENDPOINT"

_TOP_LEVEL_KEYS = {
    "output_dir", "methods", "split_methods", "model_tags", "seeds",
    "min_examples", "length_ranges", "workers", "failure_budget",
    "adapter_endpoint", "freq_table", "corpora", "dumps", "method_config",
}
_CORPUS_KEYS = {"member", "nonmember"}
_METHOD_CONFIG_KEYS = {f for f in MethodConfig.__dataclass_fields__ if f != "method"}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: Path
    corpora: Mapping[str, tuple[Path, Path]]  # domain -> (member path, nonmember path)
    methods: tuple[str, ...]
    split_methods: tuple[str, ...]
    model_tags: tuple[str, ...]
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    min_examples: int = DEFAULT_MIN_EXAMPLES
    length_ranges: tuple[tuple[int, int], ...] = FIXED_RANGES
    workers: int = 1
    failure_budget: float = DEFAULT_FAILURE_BUDGET
    adapter_endpoint: str | None = None
    freq_table: Path | None = None
    dumps: Mapping[str, Path] = field(default_factory=dict)
    method_overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if not self.split_methods:
            raise ConfigError("split_methods must be non-empty")
        if not self.model_tags:
            raise ConfigError("model_tags must be non-empty")
        if not self.corpora:
            raise ConfigError("at least one [corpora.<domain>] table is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods: {unknown}")
        unknown = [s for s in self.split_methods if s not in SPLIT_METHODS]
        if unknown:
            raise ConfigError(f"unknown split methods: {unknown}")
        for lo, hi in self.length_ranges:
            if (lo, hi) not in FIXED_RANGES:
                raise ConfigError(f"length range ({lo}, {hi}) is not one of the fixed ranges")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not (0.0 <= self.failure_budget < 1.0):
            raise ConfigError("failure_budget must be in [0, 1)")
        for tag in self.model_tags:
            if self.adapter_endpoint is None and tag not in self.dumps:
                raise ConfigError(
                    f"model tag {tag!r} has no [dumps] directory and no adapter_endpoint")

    def method_config(self, method: str) -> MethodConfig:
        return MethodConfig(method=method, **dict(self.method_overrides))


def _expect(table: Mapping, key: str, typ, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required key {key!r}")
    value = table[key]
    if not isinstance(value, typ):
        raise ConfigError(f"{where}: key {key!r} has wrong type {type(value).__name__}")
    return value


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML experiment config; unknown keys are rejected."""
    path = Path(path)
    base = path.parent
    with open(path, "rb") as fh:
        raw = tomli.load(fh)

    unknown = sorted(set(raw) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {unknown}")

    corpora_raw = _expect(raw, "corpora", dict, str(path))
    corpora: dict[str, tuple[Path, Path]] = {}
    for domain, table in corpora_raw.items():
        if not isinstance(table, dict):
            raise ConfigError(f"{path}: [corpora.{domain}] must be a table")
        extra = sorted(set(table) - _CORPUS_KEYS)
        if extra:
            raise ConfigError(f"{path}: [corpora.{domain}]: unknown keys: {extra}")
        member = _expect(table, "member", str, f"[corpora.{domain}]")
        nonmember = _expect(table, "nonmember", str, f"[corpora.{domain}]")
        corpora[domain] = (base / member, base / nonmember)

    dumps_raw = raw.get("dumps", {})
    if not isinstance(dumps_raw, dict):
        raise ConfigError(f"{path}: [dumps] must be a table")
    dumps = {}
    for tag, d in dumps_raw.items():
        if not isinstance(d, str):
            raise ConfigError(f"{path}: [dumps].{tag} must be a path string")
        dumps[tag] = base / d

    overrides_raw = raw.get("method_config", {})
    if not isinstance(overrides_raw, dict):
        raise ConfigError(f"{path}: [method_config] must be a table")
    extra = sorted(set(overrides_raw) - _METHOD_CONFIG_KEYS)
    if extra:
        raise ConfigError(f"{path}: [method_config]: unknown keys: {extra}")

    length_ranges = raw.get("length_ranges")
    if length_ranges is not None:
        try:
            length_ranges = tuple((int(lo), int(hi)) for lo, hi in length_ranges)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: length_ranges must be [lo, hi] pairs") from exc

    endpoint = raw.get("adapter_endpoint") or os.environ.get(ADAPTER_ENDPOINT_ENV) or None
    freq_table = raw.get("freq_table")

    return ExperimentConfig(
        output_dir=base / _expect(raw, "output_dir", str, str(path)),
        corpora=corpora,
        methods=tuple(_expect(raw, "methods", list, str(path))),
        split_methods=tuple(_expect(raw, "split_methods", list, str(path))),
        model_tags=tuple(_expect(raw, "model_tags", list, str(path))),
        seeds=tuple(int(s) for s in raw.get("seeds", DEFAULT_SEEDS)),
        min_examples=int(raw.get("min_examples", DEFAULT_MIN_EXAMPLES)),
        length_ranges=length_ranges if length_ranges is not None else FIXED_RANGES,
        workers=int(raw.get("workers", 1)),
        failure_budget=float(raw.get("failure_budget", DEFAULT_FAILURE_BUDGET)),
        adapter_endpoint=endpoint,
        freq_table=(base / freq_table) if freq_table else None,
        dumps=dumps,
        method_overrides=dict(overrides_raw),
    )
