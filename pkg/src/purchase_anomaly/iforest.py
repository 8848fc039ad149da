"""Isolation Forest: random isolation trees, path lengths, normalized predictions and thresholding."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import digamma

from .encoding import FeatureMatrix

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649015329
LEAF = -1


class ForestError(ValueError):
    pass


def harmonic(i) -> np.ndarray:
    """H(i) = 1 + 1/2 + ... + 1/i, exact through the digamma identity; H(0) = 0."""
    i = np.asarray(i, dtype=float)
    return np.where(i > 0, digamma(i + 1.0) + EULER_GAMMA, 0.0)


def average_path_adjustment(m) -> np.ndarray:
    """c(m) = 2 H(m-1) - 2 (m-1)/m for m > 1, and 0 for m <= 1."""
    m = np.asarray(m, dtype=float)
    safe = np.maximum(m, 1.0)
    return np.where(m > 1, 2.0 * harmonic(safe - 1.0) - 2.0 * (safe - 1.0) / safe, 0.0)


@dataclass(frozen=True)
class IsolationTree:
    """Flat array tree. ``feature[i] == LEAF`` marks a leaf holding ``size[i]`` training points."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray
    height_limit: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_index(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        active = self.feature[node] != LEAF
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = x[r, self.feature[nd]] < self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] != LEAF
        return node

    def path_lengths(self, x: np.ndarray) -> np.ndarray:
        leaf = self.leaf_index(np.asarray(x, dtype=float))
        return self.depth[leaf] + average_path_adjustment(self.size[leaf])


def height_limit(sample_size: int) -> int:
    return max(0, math.ceil(math.log2(sample_size))) if sample_size > 1 else 0


def build_tree(sample: np.ndarray, rng: np.random.Generator, limit: int | None = None) -> IsolationTree:
    """Grow one isolation tree on ``sample``.

    A node splits on a feature drawn uniformly among those that vary at the
    node, at a threshold uniform strictly inside that feature's range. Growth
    stops at the height limit, at a single point, or when all rows coincide.
    """
    limit = height_limit(len(sample)) if limit is None else limit
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(d: int, n: int) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    stack = [(new_node(0, len(sample)), np.arange(len(sample)), 0)]
    while stack:
        node, idx, d = stack.pop()
        if d >= limit or len(idx) <= 1:
            continue
        part = sample[idx]
        lo, hi = part.min(axis=0), part.max(axis=0)
        varying = np.flatnonzero(hi > lo)
        if len(varying) == 0:
            continue
        f = int(varying[rng.integers(len(varying))])
        if np.nextafter(lo[f], hi[f]) >= hi[f]:
            # adjacent floats: no value lies strictly inside, split just below the max
            t = hi[f]
        else:
            t = rng.uniform(lo[f], hi[f])
            while not lo[f] < t < hi[f]:
                t = rng.uniform(lo[f], hi[f])
        mask = part[:, f] < t
        li = new_node(d + 1, int(mask.sum()))
        ri = new_node(d + 1, int((~mask).sum()))
        feature[node], threshold[node], left[node], right[node] = f, float(t), li, ri
        stack.append((ri, idx[~mask], d + 1))
        stack.append((li, idx[mask], d + 1))

    return IsolationTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
        np.array(depth, dtype=float),
        limit,
    )


def path_length(t: IsolationTree, row) -> float:
    """Edges to the terminating leaf plus c(leaf size)."""
    return float(t.path_lengths(np.asarray(row, dtype=float)[None, :])[0])


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[IsolationTree, ...]
    sample_size: int
    seed: int
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def total_path_length(self, x) -> np.ndarray:
        x = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ForestError(f"expected {self.n_features} features, got shape {x.shape}")
        total = np.zeros(len(x))
        for tree in self.trees:
            total += tree.path_lengths(x)
        return total

    def mean_path_length(self, x) -> np.ndarray:
        return self.total_path_length(x) / self.n_trees


def iforest_train(x, n_trees: int = 100, sample_size: int = 256, seed: int = 0) -> ForestModel:
    x = x.values if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=float)
    if x.ndim != 2 or len(x) < 2:
        raise ForestError("isolation forest needs at least 2 rows")
    if not np.all(np.isfinite(x)):
        raise ForestError("training matrix has non-finite values")
    psi = min(sample_size, len(x))
    children = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.choice(len(x), size=psi, replace=False) if psi < len(x) else np.arange(len(x))
        trees.append(build_tree(x[idx], rng, height_limit(psi)))
    return ForestModel(tuple(trees), psi, seed, x.shape[1])


@dataclass(frozen=True)
class ScoreTable:
    row_ids: np.ndarray
    total_path_length: np.ndarray
    mean_path_length: np.ndarray
    prediction: np.ndarray
    max_mean_path_length: float
    min_mean_path_length: float

    def write_csv(self, path: str | Path, flagged: np.ndarray | None = None) -> None:
        flagged = np.zeros(len(self.row_ids), dtype=bool) if flagged is None else flagged
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["row_id", "mean_path_length", "prediction", "flagged"])
            for r, m, p, f in zip(
                self.row_ids.tolist(), self.mean_path_length.tolist(), self.prediction.tolist(), flagged.tolist()
            ):
                writer.writerow([r, repr(m), repr(p), int(f)])


def normalize_prediction(mean_path: np.ndarray, max_len: float, min_len: float) -> np.ndarray:
    """(max - mean) / (max - min): 1 for the shortest mean path, 0 for the longest."""
    if max_len == min_len:
        return np.zeros_like(mean_path, dtype=float)
    return (max_len - mean_path) / (max_len - min_len)


def scores_from_path_lengths(total: np.ndarray, n_trees: int, row_ids=None) -> ScoreTable:
    total = np.asarray(total, dtype=float)
    mean = total / n_trees
    hi, lo = float(mean.max()), float(mean.min())
    if hi == lo:
        logger.warning("all mean path lengths are equal; predictions set to 0")
    row_ids = np.arange(len(total)) if row_ids is None else np.asarray(row_ids)
    return ScoreTable(row_ids, total, mean, normalize_prediction(mean, hi, lo), hi, lo)


def predict_scores(f: ForestModel, x) -> ScoreTable:
    row_ids = x.row_ids if isinstance(x, FeatureMatrix) else None
    return scores_from_path_lengths(f.total_path_length(x), f.n_trees, row_ids)


def iforest_threshold(s: ScoreTable | np.ndarray, quantile: float = 0.99, cap: int = 500) -> np.ndarray:
    """Flag predictions at or above the quantile, keeping at most ``cap`` rows.

    Over the cap, the highest predictions win and ties at the cut go to the
    earlier row.
    """
    pred = s.prediction if isinstance(s, ScoreTable) else np.asarray(s, dtype=float)
    if len(pred) == 0:
        raise ForestError("no scores to threshold")
    cut = np.quantile(pred, quantile)
    flags = pred >= cut
    if np.ptp(pred) == 0:
        logger.warning("degenerate score distribution: all %d predictions equal", len(pred))
    if flags.sum() > cap:
        row_ids = s.row_ids if isinstance(s, ScoreTable) else np.arange(len(pred))
        order = np.lexsort((row_ids, -pred))
        flags = np.zeros(len(pred), dtype=bool)
        flags[order[:cap]] = True
    return flags


_NODE_COLUMNS = ("tree", "feature", "threshold", "left", "right", "size", "depth")


def save_forest(f: ForestModel, directory: str | Path) -> None:
    """Write ``forest.npy`` (one node per row) and ``forest.json`` (metadata)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blocks = []
    for i, t in enumerate(f.trees):
        blocks.append(
            np.column_stack(
                [np.full(t.n_nodes, i), t.feature, t.threshold, t.left, t.right, t.size, t.depth]
            ).astype(float)
        )
    np.save(directory / "forest.npy", np.vstack(blocks))
    meta = {
        "columns": list(_NODE_COLUMNS),
        "sample_size": f.sample_size,
        "seed": f.seed,
        "n_features": f.n_features,
        "height_limits": [t.height_limit for t in f.trees],
    }
    (directory / "forest.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def load_forest(directory: str | Path) -> ForestModel:
    directory = Path(directory)
    nodes = np.load(directory / "forest.npy")
    meta = json.loads((directory / "forest.json").read_text(encoding="utf-8"))
    trees = []
    for i, limit in enumerate(meta["height_limits"]):
        block = nodes[nodes[:, 0] == i]
        trees.append(
            IsolationTree(
                block[:, 1].astype(np.int64),
                block[:, 2].copy(),
                block[:, 3].astype(np.int64),
                block[:, 4].astype(np.int64),
                block[:, 5].astype(np.int64),
                block[:, 6].copy(),
                int(limit),
            )
        )
    return ForestModel(tuple(trees), int(meta["sample_size"]), int(meta["seed"]), int(meta["n_features"]))
