"""Lloyd k-Means, elbow sweeps, silhouette validation and model selection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .encoding import STRATEGY_ORDER, EncodingStrategy, FeatureMatrix

logger = logging.getLogger(__name__)

STRONG, REASONABLE, WEAK = "strong", "reasonable", "weak"


class ClusteringError(ValueError):
    pass


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    sse: float
    seed: int
    iterations_run: int
    # SSE of (assignment, centroids) at the start of every Lloyd iteration
    sse_history: list[float] = field(default_factory=list)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distances, ``(n, k)``. No expansion trick, so coincident points give 0."""
    out = np.empty((len(x), len(centroids)))
    for j, c in enumerate(centroids):
        diff = x - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def compute_sse(x, centroids: np.ndarray, assignments: np.ndarray) -> float:
    x = _as_array(x)
    diff = x - centroids[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre drawn with probability proportional to D^2."""
    n = len(x)
    centres = [x[rng.integers(n)]]
    d2 = sq_distances(x, centres[0][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every remaining point coincides with a centre
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centres.append(x[idx])
        d2 = np.minimum(d2, sq_distances(x, x[idx][None, :])[:, 0])
    return np.array(centres, dtype=float)


def _update_centroids(
    x: np.ndarray, assign: np.ndarray, centroids: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Cluster means and the (possibly repaired) assignment.

    An empty cluster takes the point farthest from its own centroid.
    """
    assign = assign.copy()
    counts = np.bincount(assign, minlength=k)
    if (counts == 0).any():
        dist = np.einsum("ij,ij->i", x - centroids[assign], x - centroids[assign])
        for j in np.flatnonzero(counts == 0):
            movable = counts[assign] > 1
            cand = np.flatnonzero(movable)
            p = cand[np.argmax(dist[cand])]
            counts[assign[p]] -= 1
            assign[p] = j
            counts[j] = 1
            dist[p] = 0.0
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, assign, x)
    return sums / counts[:, None], assign


def kmeans_fit(x, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6) -> ClusterModel:
    """Lloyd iteration from k-means++ seeds.

    Stops at an assignment fixpoint, when no centroid moves more than ``tol``,
    or after ``max_iter`` updates. The returned assignments are always the
    nearest centroid (first index on ties) for the returned centroids.
    """
    x = _as_array(x)
    n = len(x)
    if k < 2:
        raise ClusteringError(f"k must be >= 2, got {k}")
    if k > n:
        raise ClusteringError(f"k={k} exceeds number of rows {n}")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(x, k, rng)
    assign = np.argmin(sq_distances(x, centroids), axis=1)
    history = [compute_sse(x, centroids, assign)]
    iterations = 0
    while iterations < max_iter:
        new_centroids, repaired = _update_centroids(x, assign, centroids, k)
        iterations += 1
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        new_assign = np.argmin(sq_distances(x, centroids), axis=1)
        history.append(compute_sse(x, centroids, new_assign))
        if np.array_equal(new_assign, repaired) or shift < tol:
            assign = new_assign
            break
        assign = new_assign
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assign,
        sse=history[-1],
        seed=seed,
        iterations_run=iterations,
        sse_history=history,
    )


@dataclass(frozen=True)
class ElbowCurve:
    points: tuple[tuple[int, float], ...]
    models: tuple[ClusterModel, ...] = ()

    def sse(self, k: int) -> float:
        return dict(self.points)[k]


def derive_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def elbow_sweep(x, k_min: int = 2, k_max: int = 25, seed: int = 0, **fit_kwargs) -> ElbowCurve:
    x = _as_array(x)
    if k_max > len(x):
        raise ClusteringError(f"k_max={k_max} exceeds number of rows {len(x)}")
    if k_min > k_max:
        raise ClusteringError(f"empty k range {k_min}..{k_max}")
    models = tuple(kmeans_fit(x, k, derive_seed(seed, k), **fit_kwargs) for k in range(k_min, k_max + 1))
    return ElbowCurve(tuple((m.k, m.sse) for m in models), models)


@dataclass(frozen=True)
class SilhouetteReport:
    values: np.ndarray
    overall: float
    sampled: bool = False
    # positions (into the scored matrix) of the sampled rows
    sample_positions: np.ndarray | None = None


def silhouette_full(x, assignments) -> SilhouetteReport:
    """Exact silhouette coefficients, O(n^2) distances computed in row blocks.

    s(i) = (b - a) / max(a, b); points alone in their cluster get 0.
    """
    x = _as_array(x)
    labels = np.asarray(assignments)
    uniq, dense = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise ClusteringError("silhouette needs at least two non-empty clusters")
    n, k = len(x), len(uniq)
    sizes = np.bincount(dense, minlength=k).astype(float)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), dense] = 1.0
    s = np.zeros(n)
    block = max(1, min(n, 4_000_000 // max(n, 1)))
    for start in range(0, n, block):
        stop = min(n, start + block)
        dist = cdist(x[start:stop], x)
        sums = dist @ onehot
        own = dense[start:stop]
        rows = np.arange(stop - start)
        own_size = sizes[own]
        with np.errstate(invalid="ignore", divide="ignore"):
            a = sums[rows, own] / (own_size - 1)
            means = sums / sizes
        means[rows, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = np.where(denom > 0, (b - a) / denom, 0.0)
        vals[own_size == 1] = 0.0
        s[start:stop] = vals
    return SilhouetteReport(s, float(s.mean()))


def stratified_sample(labels, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted positions: ``ceil(fraction * size)`` drawn without replacement from each label."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    labels = np.asarray(labels)
    picked = []
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        m = min(len(members), math.ceil(fraction * len(members)))
        picked.append(rng.choice(members, size=m, replace=False))
    return np.sort(np.concatenate(picked))


def silhouette_sampled(x, assignments, fraction: float = 0.10, seed: int = 0) -> SilhouetteReport:
    """Silhouette on a cluster-stratified sample; distances only within the sample."""
    x = _as_array(x)
    labels = np.asarray(assignments)
    if fraction == 1.0:
        full = silhouette_full(x, labels)
        return SilhouetteReport(full.values, full.overall, True, np.arange(len(labels)))
    pos = stratified_sample(labels, fraction, np.random.default_rng(seed))
    sub = silhouette_full(x[pos], labels[pos])
    return SilhouetteReport(sub.values, sub.overall, True, pos)


def structure_label(score: float) -> str:
    if score > 0.7:
        return STRONG
    if score > 0.5:
        return REASONABLE
    return WEAK


@dataclass(frozen=True)
class Candidate:
    strategy: EncodingStrategy
    k: int
    silhouette: float
    model: ClusterModel | None = None


@dataclass(frozen=True)
class Selection:
    strategy: EncodingStrategy
    k: int
    silhouette: float
    label: str
    model: ClusterModel | None


def select_model(candidates: Iterable[Candidate]) -> Selection:
    """Highest overall silhouette; ties go to the smaller k, then Count, Mean, Median, Mode."""
    cands = list(candidates)
    if not cands:
        raise ClusteringError("no (strategy, k) candidates to select from")
    rank = {s: i for i, s in enumerate(STRATEGY_ORDER)}
    best = min(cands, key=lambda c: (-c.silhouette, c.k, rank[EncodingStrategy.parse(c.strategy)]))
    return Selection(
        EncodingStrategy.parse(best.strategy), best.k, best.silhouette, structure_label(best.silhouette), best.model
    )


def write_series_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
