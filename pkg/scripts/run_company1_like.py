"""Full pipeline on a generated ledger with the vocabulary of the smaller source company.

Usage: python3 scripts/run_company1_like.py [--out DIR] [--seed N] [--rate-point R]
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging

from purchase_anomaly.config import RunConfig
from purchase_anomaly.pipeline import run_pipeline
from purchase_anomaly.synthgen import AnomalySpec, company1_like

log = logging.getLogger("purchase_anomaly.scripts")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/company1_like")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rate-point", type=float, default=0.01)
    ap.add_argument("--rate-contextual", type=float, default=0.005)
    ap.add_argument("--explain-top", type=int, default=10)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    cfg = RunConfig(
        generator=company1_like(args.seed),
        anomalies=AnomalySpec(rate_point=args.rate_point, rate_contextual=args.rate_contextual),
        explain_top=args.explain_top,
        seed=args.seed,
        output_dir=args.out,
    )
    report = run_pipeline(cfg)
    summary = {
        "selection": report.selection,
        "flags": report.counts["flags"],
        "review_rows": report.counts["review_rows"],
        "iforest_point_recall": report.counts.get("iforest_point_recall"),
        "timings_s": {k: round(v, 2) for k, v in report.timings.items()},
    }
    print(json.dumps(summary, indent=2))
    log.info("artifacts in %s", report.output_dir)


if __name__ == "__main__":
    main()
