"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the terminal summary at the end of the session.
"""

from __future__ import annotations

import csv
import json
import math
import time

import numpy as np
import pytest

import oracles
from conftest import blobs, chain_tree
from purchase_anomaly.clustering import elbow_sweep, kmeans_fit, silhouette_full, silhouette_sampled
from purchase_anomaly.config import RunConfig
from purchase_anomaly.encoding import apply_encoding, fit_target_encoding, gaussian_normalize
from purchase_anomaly.explain import ForestScorer, shapley_attributions
from purchase_anomaly.iforest import ForestModel, iforest_threshold, iforest_train, predict_scores, scores_from_path_lengths
from purchase_anomaly.pipeline import run_pipeline
from purchase_anomaly.synthgen import AnomalySpec, GenConfig, generate, read_ground_truth
from purchase_anomaly.univariate import dbscan1d_flags, iqr_flags, zscore_flags

POWER_CONFIG = dict(
    generator=GenConfig(n_records=20000),
    anomalies=AnomalySpec(rate_point=0.01, rate_contextual=0.0, multiplier_range=(10.0, 20.0)),
    seed=7,
)


@pytest.fixture(scope="session")
def power_run(tmp_path_factory):
    """The full default pipeline on 20000 generated rows with 1% inflated amounts."""
    out = tmp_path_factory.mktemp("acceptance") / "power"
    start = time.perf_counter()
    report = run_pipeline(RunConfig(output_dir=str(out), **POWER_CONFIG))
    return report, out, time.perf_counter() - start


def test_silhouette_oracle(criterion):
    rng = np.random.default_rng(20240101)
    worst, elapsed, sizes = 0.0, 0.0, []
    for trial in range(50):
        n = 500 if trial < 5 else int(rng.integers(20, 501))
        k = int(rng.integers(2, 9))
        d = int(rng.integers(1, 6))
        x = rng.normal(size=(n, d)) + rng.integers(0, 4, size=(n, 1)) * 3.0
        labels = rng.integers(0, k, size=n)
        labels[:k] = np.arange(k)  # every cluster non-empty
        if trial % 7 == 0:
            labels[k] = labels[k + 1] = 0  # and sometimes a singleton
            labels[n - 1] = k - 1
        start = time.perf_counter()
        got = silhouette_full(x, labels).values
        elapsed += time.perf_counter() - start
        ref = oracles.silhouette_bruteforce(x.tolist(), labels.tolist())
        worst = max(worst, float(np.max(np.abs(got - np.array(ref)))))
        sizes.append(n)
    ok = worst < 1e-9 and elapsed < 30.0
    criterion(
        "silhouette oracle",
        ok,
        f"50 datasets (n {min(sizes)}..{max(sizes)}, k 2..8), max |delta| = {worst:.2e} (< 1e-9), "
        f"implementation time {elapsed:.2f}s (< 30s)",
    )


def _dbscan_columns(rng):
    for trial in range(100):
        n = 2000 if trial < 10 else int(rng.integers(1, 2001))
        kind = trial % 4
        if kind == 0:
            col = rng.normal(scale=float(rng.uniform(0.3, 4.0)), size=n)
        elif kind == 1:
            # grid values put many pairs at exactly eps
            col = rng.integers(-40, 40, size=n) * 0.25
        elif kind == 2:
            col = rng.standard_cauchy(size=n)
        else:
            col = np.concatenate([rng.normal(size=n // 2), rng.uniform(-60, 60, size=n - n // 2)])
        yield col


def test_dbscan_oracle(criterion):
    rng = np.random.default_rng(7)
    mismatches, noise, cols = 0, 0, 0
    for col in _dbscan_columns(rng):
        got = dbscan1d_flags(col).tolist()
        ref = oracles.dbscan_noise_bruteforce(col.tolist()) if len(col) <= 300 else oracles.dbscan_noise_pairwise(col)
        mismatches += sum(a != b for a, b in zip(got, ref))
        noise += sum(ref)
        cols += 1
    criterion("dbscan oracle", mismatches == 0, f"{cols} columns (n <= 2000), {noise} noise points, {mismatches} mismatches")


def test_zscore_iqr_oracle(criterion):
    rng = np.random.default_rng(11)
    mismatches, degenerate, cols = 0, 0, 0
    for trial in range(100):
        kind = trial % 5
        n = int(rng.integers(1, 400))
        if kind == 0:
            col = np.full(n, float(rng.normal()))  # zero variance
            degenerate += 1
        elif kind == 1:
            n = int(rng.integers(1, 4))  # fewer than 4 values
            col = rng.normal(size=n)
            degenerate += 1
        elif kind == 2:
            col = rng.integers(0, 6, size=n).astype(float)
        elif kind == 3:
            col = rng.lognormal(sigma=1.5, size=n)
        else:
            col = rng.normal(size=n)
            col[: max(1, n // 50)] *= 8
        vals = col.tolist()
        mismatches += sum(a != b for a, b in zip(zscore_flags(col).tolist(), oracles.zscore_direct(vals)))
        mismatches += sum(a != b for a, b in zip(iqr_flags(col).tolist(), oracles.iqr_direct(vals)))
        cols += 1
    criterion(
        "z-score/IQR oracle",
        mismatches == 0,
        f"{cols} columns ({degenerate} zero-variance or n<4), {mismatches} mismatching flags",
    )


def test_kmeans_soundness(criterion):
    d = generate(GenConfig(n_records=5000, seed=3))
    x, _ = gaussian_normalize(apply_encoding(d, fit_target_encoding(d, "Mode")))
    curve = elbow_sweep(x, 2, 25, seed=0)
    increases, violations, fits = 0, 0, 0
    for m in curve.models:
        fits += 1
        increases += sum(b > a for a, b in zip(m.sse_history, m.sse_history[1:]))
        # nearest centroid by an independent distance computation
        dist = ((x.values[:, None, :] - m.centroids[None, :, :]) ** 2).sum(axis=2)
        own = dist[np.arange(x.n_rows), m.assignments]
        violations += int(np.sum(own > dist.min(axis=1)))
    criterion(
        "k-means soundness",
        increases == 0 and violations == 0,
        f"{fits} fits (k=2..25) on 5000x{x.n_features}: {increases} SSE increases across Lloyd iterations, "
        f"{violations} nearest-centroid violations",
    )


def test_iforest_formulas(criterion):
    rng = np.random.default_rng(5)
    n_rows, n_trees = 12, 100
    table = rng.uniform(1.0, 14.0, size=(n_rows, n_trees))
    table[3] = np.round(table[3])  # integer depths too
    forest = ForestModel(tuple(chain_tree(table[:, j].tolist()) for j in range(n_trees)), n_rows, 0, 1)
    s = predict_scores(forest, np.arange(float(n_rows))[:, None])
    totals = [math.fsum(table[i]) for i in range(n_rows)]
    means = [t / n_trees for t in totals]
    hi, lo = max(means), min(means)
    expected = [(hi - m) / (hi - lo) for m in means]
    err_mean = max(abs(a - b) for a, b in zip(s.mean_path_length, means))
    err_pred = max(abs(a - b) for a, b in zip(s.prediction, expected))
    # a table given directly as totals
    direct = scores_from_path_lengths(np.array([700.0, 200.0, 1000.0, 400.0]), 100)
    direct_ok = direct.mean_path_length.tolist() == [7.0, 2.0, 10.0, 4.0] and direct.prediction[3] == 0.75
    ok = err_mean < 1e-12 and err_pred < 1e-12 and direct_ok
    criterion(
        "iforest formulas",
        ok,
        f"hand-built 100-tree forest: max |mean error| {err_mean:.1e}, max |prediction error| {err_pred:.1e} "
        f"(< 1e-12); total 700/100 -> 7.0 and (10-4)/(10-2) = 0.75: {direct_ok}",
    )


def test_detection_power(power_run, criterion):
    report, out, elapsed = power_run
    truth = read_ground_truth(out / "data" / "ground_truth.csv")
    injected = set(truth.rows("point"))
    with open(out / "iforest" / "scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    flagged = {int(r["row_id"]) for r in rows if r["flagged"] == "1"}
    recall = len(flagged & injected) / len(injected)
    pred = {int(r["row_id"]): float(r["prediction"]) for r in rows}
    inj_median = float(np.median([pred[i] for i in injected]))
    all_median = float(np.median(list(pred.values())))
    ok = len(injected) == 200 and recall >= 0.05 and elapsed < 600 and len(flagged) <= 500
    criterion(
        "detection power",
        ok,
        f"recall {recall:.3f} of {len(injected)} injected rows in {len(flagged)} flagged (>= 0.05, random ~0.01); "
        f"median prediction injected {inj_median:.3f} vs all {all_median:.3f}; pipeline {elapsed:.0f}s (< 600s)",
    )


def _check_run_integrity(out):
    problems = []
    assignments = np.load(out / "model" / "assignments.npy")
    with open(out / "ensemble" / "priority_groups.csv") as fh:
        groups = list(csv.DictReader(fh))
    clusters = [c for c in groups[0] if c.startswith("cluster_")]
    n = len(assignments)
    if sum(int(g["total"]) for g in groups) != n:
        problems.append("group totals do not sum to dataset size")
    if [sum(int(g[c]) for g in groups) for c in clusters] != np.bincount(assignments, minlength=len(clusters)).tolist():
        problems.append("cluster columns do not sum to cluster populations")
    flag_cols = ("kmeans_anomaly", "silhouette_anomaly", "iforest_anomaly", "univariate_anomaly")
    for g in groups:
        if int(g["priority"]) != sum(g[c] == "Yes" for c in flag_cols):
            problems.append("group priority is not the flag count")
    with open(out / "ensemble" / "scorecards.csv") as fh:
        cards = list(csv.DictReader(fh))
    if len(cards) != n:
        problems.append("scorecards do not cover every row")
    bad = sum(int(c["priority"]) != sum(int(c[f]) for f in flag_cols) for c in cards)
    if bad:
        problems.append(f"{bad} scorecards with priority != popcount")
    return n, problems


def test_ensemble_integrity(power_run, tmp_path, criterion):
    _, out, _ = power_run
    small = RunConfig(
        generator=GenConfig(n_records=1500, n_vendors=60, n_requesters=20, seed=1),
        anomalies=AnomalySpec(rate_point=0.02, rate_contextual=0.01),
        k_max=8,
        explain_top=0,
        output_dir=str(tmp_path / "small"),
        seed=3,
    )
    run_pipeline(small)
    results = [_check_run_integrity(out), _check_run_integrity(tmp_path / "small")]
    problems = [p for _, ps in results for p in ps]
    criterion(
        "ensemble integrity",
        not problems,
        f"runs of {results[0][0]} and {results[1][0]} rows: group totals = rows, cluster columns = populations, "
        f"priority = popcount" + (f"; problems: {problems}" if problems else ""),
    )


def test_thresholding(criterion):
    rng = np.random.default_rng(2)
    counts = {}
    for n in (100000, 10000):
        totals = rng.permutation(n).astype(float) + 1000.0  # distinct path lengths -> distinct scores
        s = scores_from_path_lengths(totals, 100)
        assert len(np.unique(s.prediction)) == n
        counts[n] = int(iforest_threshold(s, 0.99, 500).sum())
    ok = counts == {100000: 500, 10000: 100}
    criterion("thresholding", ok, f"100000 distinct scores -> {counts[100000]} flagged (500); 10000 -> {counts[10000]} (100)")


def test_shapley(criterion):
    rng = np.random.default_rng(99)
    worst_gap, wins = 0.0, 0
    for trial in range(50):
        d = 3 + trial % 6  # 3..8 features
        x = rng.normal(size=(300, d))
        x[:5] += rng.uniform(3, 6, size=(5, d)) * (rng.random((5, d)) < 0.5)
        forest = iforest_train(x, 30, 64, seed=trial)
        scorer = ForestScorer.from_scores(forest, predict_scores(forest, x))
        background = x[rng.choice(300, size=32, replace=False)]
        row = x[int(rng.integers(0, 300))] if trial % 2 else x[trial % 5]
        exact = shapley_attributions(scorer, row, background, mode="exact")
        worst_gap = max(worst_gap, abs(exact.values.sum() - (exact.prediction - exact.baseline)))
        errs = []
        for m in (100, 1000):
            approx = shapley_attributions(scorer, row, background, "sampled", m, seed=1000 + trial)
            errs.append(float(np.linalg.norm(approx.values - exact.values)))
        wins += errs[1] < errs[0]
    ok = worst_gap < 1e-9 and wins >= 45
    criterion(
        "shapley efficiency",
        ok,
        f"exact mode max |sum - (prediction - baseline)| = {worst_gap:.1e} over 50 rows (d 3..8, < 1e-9); "
        f"sampled L2 error vs exact smaller at 1000 than 100 permutations in {wins}/50 trials (>= 45)",
    )


def test_determinism(power_run, tmp_path, criterion):
    report, out, _ = power_run
    again = run_pipeline(RunConfig(output_dir=str(tmp_path / "again"), **POWER_CONFIG))
    same_bytes = (out / "manifest.json").read_bytes() == (tmp_path / "again" / "manifest.json").read_bytes()
    ok = same_bytes and again.manifest == report.manifest
    criterion(
        "determinism",
        ok,
        f"two 20000-row runs with seed 7: manifests of {len(report.manifest)} files byte-identical = {same_bytes}",
    )


def test_sampled_silhouette_fidelity(criterion):
    x, _ = blobs(5000, [[0, 0], [6, 0], [3, 5]], 1.5, seed=4)
    labels = kmeans_fit(x, 3, seed=0).assignments
    full = silhouette_full(x, labels).overall
    diffs = [abs(silhouette_sampled(x, labels, 0.10, seed=s).overall - full) for s in range(20)]
    criterion(
        "sampled silhouette fidelity",
        max(diffs) < 0.05,
        f"5000-row 3-blob data, Sc_full {full:.4f}; max |Sc_sampled(10%) - Sc_full| over 20 seeds = {max(diffs):.4f} (< 0.05)",
    )
