"""Combining anomaly flags into per-transaction priorities and review reports."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import ClusterModel, SilhouetteReport
from .ingest import Dataset

FLAG_NAMES = ("kmeans", "silhouette", "iforest", "univariate")
ORDERINGS = ("silhouette_asc", "iforest_desc", "row_id")


class CoverageError(ValueError):
    pass


def kmeans_anomaly_flags(m: ClusterModel, min_fraction: float = 0.01) -> np.ndarray:
    """Rows in clusters holding strictly less than ``min_fraction`` of all rows."""
    n = len(m.assignments)
    small = m.sizes < min_fraction * n
    return small[m.assignments]


def silhouette_anomaly_flags(r: SilhouetteReport) -> np.ndarray:
    covered = r.sample_positions is not None and np.array_equal(r.sample_positions, np.arange(len(r.values)))
    if r.sampled and not covered:
        raise CoverageError("sampled silhouette does not cover every row; flag from a full computation")
    return r.values < 0


@dataclass(frozen=True)
class AnomalyScorecard:
    row_id: int
    kmeans: bool
    silhouette: bool
    iforest: bool
    univariate: bool
    silhouette_value: float
    prediction: float

    @property
    def flags(self) -> tuple[bool, bool, bool, bool]:
        return (self.kmeans, self.silhouette, self.iforest, self.univariate)

    @property
    def priority(self) -> int:
        return sum(self.flags)


def build_scorecards(
    kmeans,
    silhouette,
    iforest,
    univariate,
    silhouette_values=None,
    predictions=None,
    row_ids=None,
) -> list[AnomalyScorecard]:
    vectors = [np.asarray(v, dtype=bool) for v in (kmeans, silhouette, iforest, univariate)]
    n = len(vectors[0])
    s_vals = np.zeros(n) if silhouette_values is None else np.asarray(silhouette_values, dtype=float)
    preds = np.zeros(n) if predictions is None else np.asarray(predictions, dtype=float)
    ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    if any(len(v) != n for v in (*vectors, s_vals, preds, ids)):
        raise ValueError("flag vectors and tie-break keys must all have the same length")
    k, s, f, u = (v.tolist() for v in vectors)
    return [
        AnomalyScorecard(int(ids[i]), k[i], s[i], f[i], u[i], float(s_vals[i]), float(preds[i]))
        for i in range(n)
    ]


def prioritise(cards: Sequence[AnomalyScorecard], order_within_priority: str = "iforest_desc") -> list[AnomalyScorecard]:
    """Descending priority, then the secondary key, then row id."""
    if order_within_priority == "silhouette_asc":
        key = lambda c: (-c.priority, c.silhouette_value, c.row_id)  # noqa: E731
    elif order_within_priority == "iforest_desc":
        key = lambda c: (-c.priority, -c.prediction, c.row_id)  # noqa: E731
    elif order_within_priority == "row_id":
        key = lambda c: (-c.priority, c.row_id)  # noqa: E731
    else:
        raise ValueError(f"unknown ordering {order_within_priority!r}; expected one of {ORDERINGS}")
    return sorted(cards, key=key)


@dataclass(frozen=True)
class PriorityGroup:
    priority: int
    flags: tuple[bool, bool, bool, bool]
    per_cluster: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.per_cluster)


@dataclass(frozen=True)
class PriorityGroupTable:
    groups: tuple[PriorityGroup, ...]
    n_clusters: int

    @property
    def totals(self) -> list[int]:
        return [g.total for g in self.groups]

    def cluster_sums(self) -> list[int]:
        return [sum(g.per_cluster[c] for g in self.groups) for c in range(self.n_clusters)]

    def write_csv(self, path: str | Path) -> None:
        yes_no = lambda b: "Yes" if b else "No"  # noqa: E731
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(
                ["priority", "kmeans_anomaly", "silhouette_anomaly", "iforest_anomaly", "univariate_anomaly"]
                + [f"cluster_{c}" for c in range(self.n_clusters)]
                + ["total"]
            )
            for g in self.groups:
                writer.writerow([g.priority, *map(yes_no, g.flags), *g.per_cluster, g.total])


def group_distribution(cards: Sequence[AnomalyScorecard], assignments, n_clusters: int | None = None) -> PriorityGroupTable:
    """Count rows per observed flag combination and cluster.

    Groups come out by descending priority, then by flag combination in
    lexicographic order with "No" before "Yes".
    """
    assignments = np.asarray(assignments)
    if len(assignments) != len(cards):
        raise ValueError("assignments and scorecards differ in length")
    k = int(assignments.max()) + 1 if n_clusters is None else n_clusters
    counts: Counter = Counter()
    for card, c in zip(cards, assignments.tolist()):
        counts[(card.flags, c)] += 1
    combos = sorted({flags for flags, _ in counts}, key=lambda f: (-sum(f), f))
    groups = tuple(
        PriorityGroup(sum(f), f, tuple(counts.get((f, c), 0) for c in range(k))) for f in combos
    )
    return PriorityGroupTable(groups, k)


def write_review_list(
    path: str | Path,
    ordered: Sequence[AnomalyScorecard],
    d: Dataset,
    assignments,
    limit: int | None = None,
) -> int:
    """Review CSV for specialists: scorecard columns followed by the original transaction.

    Returns the number of rows written.
    """
    by_id = {r.row_id: r for r in d.records}
    cluster = dict(zip((r.row_id for r in d.records), np.asarray(assignments).tolist()))
    rows = ordered if limit is None else ordered[:limit]
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["row_id", "priority", *(f"{f}_anomaly" for f in FLAG_NAMES), "silhouette", "prediction", "cluster"]
            + list(d.schema.names)
        )
        for card in rows:
            rec = by_id[card.row_id]
            writer.writerow(
                [card.row_id, card.priority, *(int(b) for b in card.flags)]
                + [repr(card.silhouette_value), repr(card.prediction), cluster[card.row_id]]
                + ["" if (v := rec.value(c)) is None else str(v) for c in d.schema.names]
            )
    return len(rows)
