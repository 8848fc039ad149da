"""Shapley-value attributions of the isolation-forest prediction.

The explained quantity is the normalized prediction (higher = more
anomalous) with its max/min path-length constants frozen from the scored
dataset. Features absent from a coalition take their values from background
rows, and the coalition value is the mean prediction over those hybrids.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .clustering import stratified_sample
from .encoding import FeatureMatrix
from .iforest import ForestModel, ScoreTable, normalize_prediction

MAX_EXACT_FEATURES = 12
BACKGROUND_CAP = 512


class ExplainError(ValueError):
    pass


class ForestScorer:
    """Callable mapping rows to normalized predictions with fixed max/min constants."""

    def __init__(self, forest: ForestModel, max_len: float, min_len: float) -> None:
        self.forest = forest
        self.max_len = max_len
        self.min_len = min_len

    @classmethod
    def from_scores(cls, forest: ForestModel, scores: ScoreTable) -> ForestScorer:
        return cls(forest, scores.max_mean_path_length, scores.min_mean_path_length)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return normalize_prediction(self.forest.mean_path_length(np.atleast_2d(x)), self.max_len, self.min_len)


@dataclass(frozen=True)
class AttributionVector:
    row_id: int
    feature_names: tuple[str, ...]
    values: np.ndarray
    baseline: float
    prediction: float
    mode: str
    # declared bound on |reconstructed - prediction|
    tolerance: float

    @property
    def reconstructed(self) -> float:
        return self.baseline + float(self.values.sum())

    @property
    def efficiency_gap(self) -> float:
        return abs(self.reconstructed - self.prediction)

    def to_dict(self) -> dict:
        return {
            "row_id": self.row_id,
            "mode": self.mode,
            "baseline": self.baseline,
            "prediction": self.prediction,
            "reconstructed": self.reconstructed,
            "tolerance": self.tolerance,
            "contributions": {n: float(v) for n, v in zip(self.feature_names, self.values)},
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _shapley_weights(d: int) -> np.ndarray:
    """w[s] = s! (d - s - 1)! / d! for coalition size s."""
    return np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])


def exact_shapley(score: Callable[[np.ndarray], np.ndarray], row: np.ndarray, background: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Enumerate all coalitions. Returns (attributions, baseline, prediction)."""
    d = len(row)
    masks = np.array(list(itertools.product([False, True], repeat=d)), dtype=bool)[:, ::-1]
    # coalition index = sum of 2**i over present features i
    hybrids = np.where(masks[:, None, :], row[None, None, :], background[None, :, :])
    values = score(hybrids.reshape(-1, d)).reshape(len(masks), len(background)).mean(axis=1)
    weights = _shapley_weights(d)
    sizes = masks.sum(axis=1)
    phi = np.zeros(d)
    for i in range(d):
        without = np.flatnonzero(~masks[:, i])
        phi[i] = np.sum(weights[sizes[without]] * (values[without + (1 << i)] - values[without]))
    return phi, float(values[0]), float(values[-1])


def sampled_shapley(
    score: Callable[[np.ndarray], np.ndarray],
    row: np.ndarray,
    background: np.ndarray,
    n_permutations: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float, float]:
    """Permutation sampling, one background row per permutation.

    Returns (attributions, baseline, prediction, declared tolerance). The
    efficiency gap equals the sampling error of the background mean, so the
    tolerance is four standard errors of that mean.
    """
    d = len(row)
    perms = np.array([rng.permutation(d) for _ in range(n_permutations)])
    refs = background[rng.integers(len(background), size=n_permutations)]
    # chain[p, j] takes features perms[p, :j] from the row and the rest from refs[p]
    rank = np.argsort(perms, axis=1)
    present = rank[:, None, :] < np.arange(d + 1)[None, :, None]
    chain = np.where(present, row[None, None, :], refs[:, None, :])
    values = score(chain.reshape(-1, d)).reshape(n_permutations, d + 1)
    marginal = np.diff(values, axis=1)
    phi = np.zeros(d)
    np.add.at(phi, perms.ravel(), marginal.ravel())
    phi /= n_permutations
    bg_scores = score(background)
    baseline = float(bg_scores.mean())
    tolerance = 4.0 * float(bg_scores.std()) / math.sqrt(n_permutations) + 1e-9
    return phi, baseline, float(score(row[None, :])[0]), tolerance


def shapley_attributions(
    f: ForestModel | ForestScorer | Callable[[np.ndarray], np.ndarray],
    row,
    background,
    mode: str = "sampled",
    n_permutations: int = 1000,
    seed: int = 0,
    row_id: int = -1,
    feature_names: Sequence[str] | None = None,
) -> AttributionVector:
    """Attribute ``score(row) - mean score(background)`` to the features.

    ``mode="exact"`` enumerates every coalition (at most 12 features);
    ``mode="sampled"`` averages marginal contributions over random
    permutations. A bare :class:`ForestModel` is scored with max/min taken
    over the background set.
    """
    bg = background.values if isinstance(background, FeatureMatrix) else np.asarray(background, dtype=float)
    if bg.ndim != 2 or len(bg) == 0:
        raise ExplainError("background set is empty")
    if feature_names is None and isinstance(background, FeatureMatrix):
        feature_names = background.feature_names
    row = np.asarray(row, dtype=float)
    d = len(row)
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(d))
    if isinstance(f, ForestModel):
        m = f.mean_path_length(np.vstack([bg, row]))
        f = ForestScorer(f, float(m.max()), float(m.min()))
    if mode == "exact":
        if d > MAX_EXACT_FEATURES:
            raise ExplainError(f"exact mode supports at most {MAX_EXACT_FEATURES} features, got {d}")
        phi, baseline, pred = exact_shapley(f, row, bg)
        tol = 1e-9
    elif mode == "sampled":
        phi, baseline, pred, tol = sampled_shapley(f, row, bg, n_permutations, np.random.default_rng(seed))
    else:
        raise ExplainError(f"unknown mode {mode!r}")
    return AttributionVector(row_id, names, phi, baseline, pred, mode, tol)


def top_contributors(a: AttributionVector, n: int = 3) -> list[tuple[str, float]]:
    order = np.argsort(-np.abs(a.values), kind="stable")
    return [(a.feature_names[i], float(a.values[i])) for i in order[:n]]


def choose_background(
    x: FeatureMatrix, labels, fraction: float = 0.01, cap: int = BACKGROUND_CAP, seed: int = 0
) -> FeatureMatrix:
    """Cluster-stratified sample of the scored rows, at most ``cap`` rows."""
    rng = np.random.default_rng(seed)
    pos = stratified_sample(labels, fraction, rng)
    if len(pos) > cap:
        pos = np.sort(rng.choice(pos, size=cap, replace=False))
    return x.take(pos)


def global_attribution_summary(attributions: Sequence[AttributionVector]) -> list[tuple[str, float]]:
    """Mean absolute attribution per feature, largest first."""
    if not attributions:
        raise ExplainError("no attributions to summarise")
    mags = np.mean([np.abs(a.values) for a in attributions], axis=0)
    order = np.argsort(-mags, kind="stable")
    names = attributions[0].feature_names
    return [(names[i], float(mags[i])) for i in order]


def explain_rows(
    scorer: ForestScorer,
    x: FeatureMatrix,
    positions: Sequence[int],
    background: FeatureMatrix,
    n_permutations: int = 1000,
    seed: int = 0,
) -> list[AttributionVector]:
    """Sampled attributions for several rows, one seed stream per row id."""
    out = []
    for p in positions:
        rid = int(x.row_ids[p])
        row_seed = int(np.random.SeedSequence([seed, rid]).generate_state(1)[0])
        out.append(
            shapley_attributions(
                scorer, x.values[p], background, "sampled", n_permutations, row_seed, rid, x.feature_names
            )
        )
    return out


def write_summary_csv(path: str | Path, summary: Sequence[tuple[str, float]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["feature", "mean_abs_attribution"])
        for name, value in summary:
            writer.writerow([name, repr(value)])
