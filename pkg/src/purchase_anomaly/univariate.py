"""Per-column outlier detectors (IQR, z-score, 1-D DBSCAN) and the row-level union flag."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import FeatureMatrix

logger = logging.getLogger(__name__)

DETECTORS = ("iqr", "zscore", "dbscan")


def iqr_flags(col, k: float = 1.5) -> np.ndarray:
    """Flag values outside ``[Q1 - k*IQR, Q3 + k*IQR]``.

    Quartiles use linear interpolation between order statistics. Columns
    with fewer than 4 values are left unflagged.
    """
    v = np.asarray(col, dtype=float)
    if len(v) < 4:
        logger.warning("iqr_flags: %d values is too few for quartiles; nothing flagged", len(v))
        return np.zeros(len(v), dtype=bool)
    q1, q3 = np.quantile(v, [0.25, 0.75])
    spread = q3 - q1
    return (v < q1 - k * spread) | (v > q3 + k * spread)


def zscore_flags(col, threshold: float = 2.5) -> np.ndarray:
    v = np.asarray(col, dtype=float)
    if len(v) == 0 or np.ptp(v) == 0:
        return np.zeros(len(v), dtype=bool)
    std = v.std()
    if std == 0:
        return np.zeros(len(v), dtype=bool)
    return np.abs(v - v.mean()) / std > threshold


def _window_bounds(s: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """For sorted ``s``, index range ``[lo, hi)`` of points with ``|s[j] - s[i]| <= eps``.

    Searchsorted on ``s +/- eps`` can be off by one ulp at the edges; the
    bounds are then nudged with the exact predicate so the result matches a
    pairwise comparison bit for bit.
    """
    n = len(s)
    idx = np.arange(n)
    lo = np.searchsorted(s, s - eps, side="left")
    hi = np.searchsorted(s, s + eps, side="right")
    while True:
        grow = (lo > 0) & (np.abs(s[np.maximum(lo - 1, 0)] - s) <= eps)
        shrink = (lo < idx) & (np.abs(s[np.minimum(lo, n - 1)] - s) > eps)
        if not (grow.any() or shrink.any()):
            break
        lo = lo - grow + shrink
    while True:
        grow = (hi < n) & (np.abs(s[np.minimum(hi, n - 1)] - s) <= eps)
        shrink = (hi > idx + 1) & (np.abs(s[np.maximum(hi - 1, 0)] - s) > eps)
        if not (grow.any() or shrink.any()):
            break
        hi = hi + grow - shrink
    return lo, hi


def dbscan1d_flags(col, eps: float = 1.0, min_neighbors: int = 3) -> np.ndarray:
    """DBSCAN noise labels for a single column.

    A core point has at least ``min_neighbors`` other points within ``eps``;
    a border point lies within ``eps`` of a core point. Everything else is
    noise and is flagged. Runs in O(n log n) via sorting.
    """
    v = np.asarray(col, dtype=float)
    n = len(v)
    if n == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(v, kind="stable")
    s = v[order]
    lo, hi = _window_bounds(s, eps)
    core = (hi - lo - 1) >= min_neighbors
    # a window contains a core point iff the core prefix count rises across it
    core_before = np.concatenate([[0], np.cumsum(core)])
    reachable = (core_before[hi] - core_before[lo]) > 0
    noise_sorted = ~reachable
    flags = np.empty(n, dtype=bool)
    flags[order] = noise_sorted
    return flags


@dataclass(frozen=True)
class UnivariateFlagTable:
    """Boolean ``(n_rows, n_features)`` flags per detector."""

    row_ids: np.ndarray
    feature_names: tuple[str, ...]
    flags: dict[str, np.ndarray]

    @property
    def union(self) -> np.ndarray:
        return univariate_union(self)

    def counts(self) -> dict[str, int]:
        union = self.union
        return {
            "univariate_outliers": int(union.sum()),
            "normal": int((~union).sum()),
            "total": len(union),
        }

    def write_csv(self, path: str | Path, only_flagged: bool = True) -> None:
        """Long format ``row_id,feature,detector,flagged``."""
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["row_id", "feature", "detector", "flagged"])
            for det in DETECTORS:
                table = self.flags[det]
                if only_flagged:
                    rows, cols = np.nonzero(table)
                else:
                    rows, cols = np.indices(table.shape).reshape(2, -1)
                for r, c in zip(rows.tolist(), cols.tolist()):
                    writer.writerow([int(self.row_ids[r]), self.feature_names[c], det, int(table[r, c])])


def detect_univariate(
    x: FeatureMatrix,
    z_threshold: float = 2.5,
    eps: float = 1.0,
    min_neighbors: int = 3,
) -> UnivariateFlagTable:
    """Run all detectors on every column of a normalized feature matrix."""
    shape = x.values.shape
    out = {det: np.zeros(shape, dtype=bool) for det in DETECTORS}
    for j in range(x.n_features):
        col = x.values[:, j]
        out["iqr"][:, j] = iqr_flags(col)
        out["zscore"][:, j] = zscore_flags(col, z_threshold)
        out["dbscan"][:, j] = dbscan1d_flags(col, eps, min_neighbors)
    return UnivariateFlagTable(x.row_ids, x.feature_names, out)


def univariate_union(flags: UnivariateFlagTable) -> np.ndarray:
    """Rows flagged by z-score or DBSCAN on at least one feature. IQR is not included."""
    return (flags.flags["zscore"] | flags.flags["dbscan"]).any(axis=1)
