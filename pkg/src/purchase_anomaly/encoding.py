"""Target encoding of categorical columns against the order amount, and z-score normalization."""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import AMOUNT, Dataset, EmptyDatasetError

logger = logging.getLogger(__name__)


class EncodingStrategy(str, enum.Enum):
    COUNT = "Count"
    MEAN = "Mean"
    MEDIAN = "Median"
    MODE = "Mode"

    @classmethod
    def parse(cls, value: str | EncodingStrategy) -> EncodingStrategy:
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown encoding strategy {value!r}")


STRATEGY_ORDER = tuple(EncodingStrategy)


def _mode(values: list[float]) -> float:
    counts = Counter(values)
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def _statistic(strategy: EncodingStrategy, values: list[float]) -> float:
    if strategy is EncodingStrategy.COUNT:
        return float(len(values))
    if strategy is EncodingStrategy.MEAN:
        return float(np.mean(values))
    if strategy is EncodingStrategy.MEDIAN:
        return float(np.median(values))
    return _mode(values)


@dataclass(frozen=True)
class EncoderMap:
    strategy: EncodingStrategy
    target: str
    mapping: dict[str, dict[str, float]]
    # fallback for values unseen at fit time
    fallback: float

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.mapping)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "target": self.target,
            "fallback": self.fallback,
            "mapping": {col: dict(sorted(m.items())) for col, m in self.mapping.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> EncoderMap:
        return cls(
            strategy=EncodingStrategy.parse(data["strategy"]),
            target=data["target"],
            mapping={col: {k: float(v) for k, v in m.items()} for col, m in data["mapping"].items()},
            fallback=float(data["fallback"]),
        )

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def fit_target_encoding(d: Dataset, strategy: EncodingStrategy | str) -> EncoderMap:
    """Fit one lookup table per categorical column.

    Count maps a group to its row frequency; Mean and Median to the mean and
    median amount in the group (even-sized medians average the two middle
    values); Mode to the most frequent exact amount, ties to the smallest.
    """
    strategy = EncodingStrategy.parse(strategy)
    if len(d) == 0:
        raise EmptyDatasetError("cannot fit an encoding on an empty dataset")
    amounts = d.amounts()
    mapping: dict[str, dict[str, float]] = {}
    for col in d.schema.categorical:
        groups: dict[str, list[float]] = defaultdict(list)
        for key, amount in zip(d.column(col), amounts):
            groups[key].append(amount)
        mapping[col] = {key: _statistic(strategy, vals) for key, vals in groups.items()}
    fallback = 0.0 if strategy is EncodingStrategy.COUNT else _statistic(strategy, amounts)
    return EncoderMap(strategy, AMOUNT, mapping, fallback)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    feature_names: tuple[str, ...]
    row_ids: np.ndarray
    # column -> number of cells that fell back to the global statistic
    unseen: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {self.values.shape}")
        if self.values.shape != (len(self.row_ids), len(self.feature_names)):
            raise ValueError("values, row_ids and feature_names disagree in shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def take(self, positions: np.ndarray) -> FeatureMatrix:
        return FeatureMatrix(self.values[positions], self.feature_names, self.row_ids[positions])


def apply_encoding(d: Dataset, m: EncoderMap) -> FeatureMatrix:
    """Replace categorical cells with their encoded values; the amount passes through.

    Features follow the dataset schema order, one per column.
    """
    missing = [c for c in m.columns if c not in d.schema.names]
    if missing:
        raise ValueError(f"dataset lacks encoded columns {missing}")
    cols = []
    unseen: dict[str, int] = {}
    for name in d.schema.names:
        if name == m.target or name not in m.mapping:
            cols.append(np.array(d.amounts() if name == AMOUNT else d.column(name), dtype=float))
            continue
        table = m.mapping[name]
        raw = d.column(name)
        misses = sum(1 for v in raw if v not in table)
        if misses:
            unseen[name] = misses
            logger.warning("%s: %d unseen values mapped to %s fallback %g", name, misses, m.strategy.value, m.fallback)
        cols.append(np.array([table.get(v, m.fallback) for v in raw], dtype=float))
    values = np.column_stack(cols) if cols else np.empty((len(d), 0))
    row_ids = np.array([r.row_id for r in d.records], dtype=np.int64)
    return FeatureMatrix(values, d.schema.names, row_ids, unseen)


@dataclass(frozen=True)
class NormParams:
    mean: np.ndarray
    std: np.ndarray
    # features with no spread, mapped to all zeros
    constant: tuple[str, ...]


def gaussian_normalize(x: FeatureMatrix) -> tuple[FeatureMatrix, NormParams]:
    values = x.values
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    flat = np.ptp(values, axis=0) == 0 if len(values) else np.ones(x.n_features, dtype=bool)
    # subnormal spreads can underflow the std to zero; treat them as constant
    flat |= ~(std > 0)
    std = np.where(flat, 0.0, std)
    scale = np.where(flat, 1.0, std)
    out = np.where(flat, 0.0, (values - mean) / scale)
    constant = tuple(name for name, f in zip(x.feature_names, flat) if f)
    return FeatureMatrix(out, x.feature_names, x.row_ids), NormParams(mean, std, constant)
