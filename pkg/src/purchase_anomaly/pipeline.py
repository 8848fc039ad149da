"""End-to-end run: data -> encodings -> univariate -> k-Means sweep -> iForest -> ensemble -> explanations."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clustering, ensemble, explain, iforest, univariate
from .config import RunConfig, stage_seed
from .encoding import EncodingStrategy, FeatureMatrix, apply_encoding, fit_target_encoding, gaussian_normalize
from .ingest import Dataset, Schema, clean, load_transactions, profile, write_transactions
from .synthgen import generate, inject_anomalies

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
REPORT = "run_report.json"
FAILED = "FAILED"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunReport:
    output_dir: str
    timings: dict[str, float] = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    manifest: dict[str, str] = field(default_factory=dict)
    log: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class StrategyRun:
    strategy: EncodingStrategy
    dataset: Dataset
    features: FeatureMatrix
    union: np.ndarray
    curve: clustering.ElbowCurve
    silhouettes: dict[int, float]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path) -> dict[str, str]:
    """Hash every output file except the manifest, the timing report and failure markers."""
    skip = {MANIFEST, REPORT, FAILED}
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in skip)
    manifest = {p.relative_to(out).as_posix(): _sha256(p) for p in files}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(cfg: RunConfig, out: Path, report: RunReport) -> tuple[Dataset, object]:
    truth = None
    if cfg.input_path is not None:
        schema = None if cfg.extra_columns is None else Schema.with_extra(cfg.extra_columns)
        raw = load_transactions(cfg.input_path, schema)
    else:
        gen_cfg = dataclasses.replace(cfg.generator, seed=stage_seed(cfg.seed, "generate"))
        raw = generate(gen_cfg)
        if cfg.anomalies is not None:
            raw, truth = inject_anomalies(raw, cfg.anomalies, stage_seed(cfg.seed, "inject"))
        (out / "data").mkdir(parents=True, exist_ok=True)
        write_transactions(raw, out / "data" / "dataset.csv")
        if truth is not None:
            truth.write_csv(out / "data" / "ground_truth.csv")
    data, removed = clean(raw)
    report.counts["records_loaded"] = len(raw)
    report.counts["records_removed"] = removed
    report.counts["records"] = len(data)
    return data, truth


def _encode(d: Dataset, strategy: EncodingStrategy, out: Path | None, name: str) -> FeatureMatrix:
    enc = fit_target_encoding(d, strategy)
    if out is not None:
        (out / "encoders").mkdir(parents=True, exist_ok=True)
        enc.write_json(out / "encoders" / f"{name}.json")
    normalized, _ = gaussian_normalize(apply_encoding(d, enc))
    return normalized


def run_strategy(cfg: RunConfig, data: Dataset, strategy: EncodingStrategy, index: int, out: Path, report: RunReport) -> StrategyRun:
    x = _encode(data, strategy, out, strategy.value)
    flags = univariate.detect_univariate(x, cfg.z_threshold, cfg.dbscan_eps, cfg.dbscan_min_neighbors)
    (out / "univariate").mkdir(parents=True, exist_ok=True)
    flags.write_csv(out / "univariate" / f"{strategy.value}_flags.csv")
    union = flags.union
    report.counts.setdefault("univariate", {})[strategy.value] = flags.counts()

    model_data, model_x = data, x
    if cfg.segregate_univariate:
        kept = [r.row_id for r, u in zip(data.records, union.tolist()) if not u]
        model_data = data.subset(kept)
        model_x = _encode(model_data, strategy, out, f"{strategy.value}_segregated")
        msg = f"{strategy.value}: re-encoded after removing {int(union.sum())} univariate outliers"
        logger.info(msg)
        report.log.append(msg)

    curve = clustering.elbow_sweep(
        model_x,
        cfg.k_min,
        min(cfg.k_max, model_x.n_rows),
        stage_seed(cfg.seed, "kmeans", index),
        max_iter=cfg.kmeans_max_iter,
        tol=cfg.kmeans_tol,
    )
    sil = {}
    for m in curve.models:
        seed = stage_seed(cfg.seed, f"silhouette/{strategy.value}", m.k)
        sil[m.k] = clustering.silhouette_sampled(model_x, m.assignments, cfg.silhouette_fraction, seed).overall
    return StrategyRun(strategy, model_data, model_x, union, curve, sil)


@contextmanager
def _stage(name: str, report: RunReport, out: Path):
    start = time.perf_counter()
    try:
        yield
    except Exception as exc:
        (out / FAILED).write_text(f"stage: {name}\ncause: {exc!r}\n", encoding="utf-8")
        raise PipelineError(name, exc) from exc
    finally:
        report.timings[name] = round(time.perf_counter() - start, 3)
        logger.info("stage %s done in %.2fs", name, report.timings[name])


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Run every stage and write all artifacts under ``cfg.output_dir``.

    Identical configurations produce byte-identical files; ``manifest.json``
    lists their SHA-256 hashes. Wall-clock timings live only in
    ``run_report.json``.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILED).unlink(missing_ok=True)
    report = RunReport(str(out))
    # the output directory is left out so that runs into different directories hash alike
    cfg.write_json(out / "run_config.json", include_output_dir=False)

    with _stage("load", report, out):
        data, truth = load_dataset(cfg, out, report)

    with _stage("profile", report, out):
        prof = profile(data)
        prof.write_json(out / "profile.json")
        prof.write_csv(out / "profile.csv")

    runs: dict[EncodingStrategy, StrategyRun] = {}
    for index, strategy in enumerate(cfg.strategy_list):
        with _stage(f"encode+sweep:{strategy.value}", report, out):
            runs[strategy] = run_strategy(cfg, data, strategy, index, out, report)
    _write_json(out / "univariate_summary.json", report.counts["univariate"])

    with _stage("select", report, out):
        (out / "clustering").mkdir(exist_ok=True)
        clustering.write_series_csv(
            out / "clustering" / "elbow.csv",
            ["strategy", "k", "sse"],
            [(s.value, k, sse) for s, r in runs.items() for k, sse in r.curve.points],
        )
        clustering.write_series_csv(
            out / "clustering" / "silhouette.csv",
            ["strategy", "k", "silhouette"],
            [(s.value, k, v) for s, r in runs.items() for k, v in r.silhouettes.items()],
        )
        candidates = [
            clustering.Candidate(s, m.k, r.silhouettes[m.k], m) for s, r in runs.items() for m in r.curve.models
        ]
        chosen = clustering.select_model(candidates)
        report.selection = {
            "strategy": chosen.strategy.value,
            "k": chosen.k,
            "silhouette": chosen.silhouette,
            "label": chosen.label,
            "sse": chosen.model.sse,
        }
        _write_json(out / "clustering" / "selection.json", report.selection)

    sel = runs[chosen.strategy]
    x = sel.features
    model = chosen.model

    with _stage("silhouette_full", report, out):
        full_sil = clustering.silhouette_full(x, model.assignments)
        report.counts["silhouette_full"] = full_sil.overall

    with _stage("iforest", report, out):
        forest = iforest.iforest_train(
            x, cfg.iforest_n_trees, cfg.iforest_sample_size, stage_seed(cfg.seed, "iforest")
        )
        scores = iforest.predict_scores(forest, x)
        if_flags = iforest.iforest_threshold(scores, cfg.iforest_quantile, cfg.iforest_cap)
        (out / "iforest").mkdir(exist_ok=True)
        scores.write_csv(out / "iforest" / "scores.csv", if_flags)
        iforest.save_forest(forest, out / "model")
        np.save(out / "model" / "features.npy", x.values)
        np.save(out / "model" / "row_ids.npy", x.row_ids)
        _write_json(
            out / "model" / "scoring.json",
            {
                "feature_names": list(x.feature_names),
                "max_mean_path_length": scores.max_mean_path_length,
                "min_mean_path_length": scores.min_mean_path_length,
                "strategy": chosen.strategy.value,
            },
        )
        np.save(out / "model" / "assignments.npy", model.assignments)

    with _stage("ensemble", report, out):
        km_flags = ensemble.kmeans_anomaly_flags(model, cfg.cluster_min_fraction)
        sil_flags = ensemble.silhouette_anomaly_flags(full_sil)
        # with segregation the outliers are not part of the modeled set
        uni_flags = np.zeros(x.n_rows, dtype=bool) if cfg.segregate_univariate else sel.union
        cards = ensemble.build_scorecards(
            km_flags, sil_flags, if_flags, uni_flags, full_sil.values, scores.prediction, x.row_ids
        )
        ordered = ensemble.prioritise(cards, cfg.review_order)
        (out / "ensemble").mkdir(exist_ok=True)
        ensemble.write_review_list(out / "ensemble" / "scorecards.csv", ordered, sel.dataset, model.assignments)
        review = [c for c in ordered if c.priority > 0]
        ensemble.write_review_list(out / "ensemble" / "review_list.csv", review, sel.dataset, model.assignments)
        groups = ensemble.group_distribution(cards, model.assignments, model.k)
        groups.write_csv(out / "ensemble" / "priority_groups.csv")
        report.counts["flags"] = {
            "kmeans": int(km_flags.sum()),
            "silhouette": int(sil_flags.sum()),
            "iforest": int(if_flags.sum()),
            "univariate": int(uni_flags.sum()),
        }
        report.counts["priority_groups"] = [
            {"priority": g.priority, "flags": list(g.flags), "per_cluster": list(g.per_cluster), "total": g.total}
            for g in groups.groups
        ]
        report.counts["review_rows"] = len(review)
        if truth is not None:
            flagged_ids = set(x.row_ids[if_flags].tolist())
            injected = set(truth.rows("point"))
            report.counts["iforest_point_recall"] = (
                len(flagged_ids & injected) / len(injected) if injected else None
            )

    with _stage("explain", report, out):
        if cfg.explain_top > 0:
            explain_top(out, cfg.explain_top, cfg.explain_permutations, cfg.seed,
                        cfg.background_fraction, cfg.background_cap, ordered=ordered)

    report.manifest = write_manifest(out)
    _write_json(out / REPORT, report.to_dict())
    return report


def explain_top(
    run_dir: str | Path,
    top: int,
    n_permutations: int = 1000,
    seed: int = 0,
    background_fraction: float = 0.01,
    background_cap: int = explain.BACKGROUND_CAP,
    ordered=None,
    subdir: str = "explain",
) -> list[explain.AttributionVector]:
    """Attribute the iForest prediction of the ``top`` highest-priority rows of a run.

    Works from the persisted model files, so it can be re-run on a finished
    run directory.
    """
    run_dir = Path(run_dir)
    forest = iforest.load_forest(run_dir / "model")
    meta = json.loads((run_dir / "model" / "scoring.json").read_text(encoding="utf-8"))
    values = np.load(run_dir / "model" / "features.npy")
    row_ids = np.load(run_dir / "model" / "row_ids.npy")
    assignments = np.load(run_dir / "model" / "assignments.npy")
    x = FeatureMatrix(values, tuple(meta["feature_names"]), row_ids)
    if ordered is None:
        with (run_dir / "ensemble" / "scorecards.csv").open(newline="", encoding="utf-8") as handle:
            order_ids = [int(r["row_id"]) for r in csv.DictReader(handle)]
    else:
        order_ids = [c.row_id for c in ordered]
    position = {int(r): i for i, r in enumerate(row_ids.tolist())}
    targets = [position[r] for r in order_ids[:top]]

    scorer = explain.ForestScorer(forest, meta["max_mean_path_length"], meta["min_mean_path_length"])
    background = explain.choose_background(
        x, assignments, background_fraction, background_cap, stage_seed(seed, "background")
    )
    vectors = explain.explain_rows(scorer, x, targets, background, n_permutations, stage_seed(seed, "explain"))
    target_dir = run_dir / subdir
    target_dir.mkdir(parents=True, exist_ok=True)
    for v in vectors:
        v.write_json(target_dir / f"row_{v.row_id}.json")
    if vectors:
        explain.write_summary_csv(target_dir / "summary.csv", explain.global_attribution_summary(vectors))
    return vectors
