"""Run configuration and seed derivation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .encoding import STRATEGY_ORDER, EncodingStrategy
from .explain import BACKGROUND_CAP
from .synthgen import AnomalySpec, GenConfig


def stage_seed(master: int, stage: str, index: int = 0) -> int:
    """63-bit seed from ``sha256("master/stage/index")``.

    Any stage can be re-run in isolation with the same randomness as inside a
    full run.
    """
    digest = hashlib.sha256(f"{master}/{stage}/{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class RunConfig:
    input_path: str | None = None
    generator: GenConfig | None = None
    anomalies: AnomalySpec | None = None
    strategies: tuple[str, ...] = tuple(s.value for s in STRATEGY_ORDER)
    k_min: int = 2
    k_max: int = 25
    silhouette_fraction: float = 0.10
    z_threshold: float = 2.5
    dbscan_eps: float = 1.0
    dbscan_min_neighbors: int = 3
    iforest_n_trees: int = 100
    iforest_sample_size: int = 256
    iforest_quantile: float = 0.99
    iforest_cap: int = 500
    cluster_min_fraction: float = 0.01
    segregate_univariate: bool = False
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    review_order: str = "iforest_desc"
    explain_top: int = 10
    explain_permutations: int = 1000
    background_fraction: float = 0.01
    background_cap: int = BACKGROUND_CAP
    seed: int = 0
    output_dir: str = "run"
    # None: take every non-mandatory header column as an extra categorical
    extra_columns: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        problems = []
        if self.input_path is None and self.generator is None:
            problems.append("either input_path or generator must be given")
        if self.input_path is not None and self.generator is not None:
            problems.append("input_path and generator are mutually exclusive")
        for s in self.strategies:
            try:
                EncodingStrategy.parse(s)
            except ValueError as exc:
                problems.append(str(exc))
        if not self.strategies:
            problems.append("at least one encoding strategy is required")
        if not 2 <= self.k_min <= self.k_max:
            problems.append(f"need 2 <= k_min <= k_max, got {self.k_min}..{self.k_max}")
        if not 0.0 < self.silhouette_fraction <= 1.0:
            problems.append("silhouette_fraction must lie in (0, 1]")
        if self.z_threshold <= 0:
            problems.append("z_threshold must be positive")
        if self.dbscan_eps <= 0 or self.dbscan_min_neighbors < 1:
            problems.append("dbscan_eps must be positive and dbscan_min_neighbors >= 1")
        if self.iforest_n_trees < 1 or self.iforest_sample_size < 2:
            problems.append("iforest_n_trees >= 1 and iforest_sample_size >= 2 required")
        if not 0.0 < self.iforest_quantile < 1.0:
            problems.append("iforest_quantile must lie in (0, 1)")
        if self.iforest_cap < 1:
            problems.append("iforest_cap must be >= 1")
        if not 0.0 <= self.cluster_min_fraction < 1.0:
            problems.append("cluster_min_fraction must lie in [0, 1)")
        if self.review_order not in ("silhouette_asc", "iforest_desc", "row_id"):
            problems.append(f"unknown review_order {self.review_order!r}")
        if self.explain_top < 0 or self.explain_permutations < 1:
            problems.append("explain_top >= 0 and explain_permutations >= 1 required")
        if not 0.0 < self.background_fraction <= 1.0 or self.background_cap < 1:
            problems.append("background_fraction in (0, 1] and background_cap >= 1 required")
        if problems:
            raise ValueError("invalid run configuration: " + "; ".join(problems))

    @property
    def strategy_list(self) -> list[EncodingStrategy]:
        return [EncodingStrategy.parse(s) for s in self.strategies]

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["strategies"] = list(self.strategies)
        out["extra_columns"] = None if self.extra_columns is None else list(self.extra_columns)
        if self.anomalies is not None:
            out["anomalies"]["multiplier_range"] = list(self.anomalies.multiplier_range)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {unknown}")
        if data.get("generator") is not None:
            data["generator"] = GenConfig(**data["generator"])
        if data.get("anomalies") is not None:
            spec = dict(data["anomalies"])
            if "multiplier_range" in spec:
                spec["multiplier_range"] = tuple(spec["multiplier_range"])
            data["anomalies"] = AnomalySpec(**spec)
        for key in ("strategies", "extra_columns"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write_json(self, path: str | Path, include_output_dir: bool = True) -> None:
        data = self.to_dict()
        if not include_output_dir:
            data.pop("output_dir")
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
