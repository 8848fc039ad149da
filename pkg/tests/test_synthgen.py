from __future__ import annotations

import dataclasses
import logging

import pytest

from purchase_anomaly.ingest import clean, load_transactions, profile, write_transactions
from purchase_anomaly.synthgen import (
    CONTEXTUAL,
    GEN_SCHEMA,
    NONE,
    POINT,
    AnomalySpec,
    GenConfig,
    GenerationError,
    company1_like,
    generate,
    inject_anomalies,
    read_ground_truth,
)

SMALL = GenConfig(n_records=1000, n_vendors=10, n_requesters=8, n_buyers=3, n_approvers=5, seed=3)


@pytest.fixture(scope="module")
def company1():
    return generate(company1_like(seed=0))


def test_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_transactions(generate(SMALL), a)
    write_transactions(generate(SMALL), b)
    assert a.read_bytes() == b.read_bytes()


def test_other_seed_differs():
    assert generate(SMALL) != generate(dataclasses.replace(SMALL, seed=4))


def test_small_vocabulary_saturates():
    d = generate(SMALL)
    assert len(d) == 1000
    assert len(set(d.column("vendor_code"))) == 10
    assert len(set(d.column("requester_id"))) == 8
    assert len(set(d.column("buyer_id"))) == 3


def test_generated_schema_has_seventeen_columns():
    assert len(GEN_SCHEMA.names) == 17
    assert generate(SMALL).schema == GEN_SCHEMA


def test_generated_data_is_complete_and_reloads(tmp_path):
    d = generate(SMALL)
    assert clean(d)[1] == 0
    p = tmp_path / "g.csv"
    write_transactions(d, p)
    assert load_transactions(p, schema=None) == d


def test_amounts_positive():
    assert all(r.amount > 0 for r in generate(SMALL).records)


@pytest.mark.parametrize("field", ["n_records", "n_vendors", "n_requesters", "n_orgs"])
def test_zero_count_rejected(field):
    with pytest.raises(GenerationError):
        GenConfig(**{field: 0})


def test_company1_profile_matches_targets(company1):
    rep = profile(company1)
    assert rep.n_records == 27779
    assert rep.distinct["vendor_code"] == 988
    assert rep.distinct["requester_id"] == 122
    assert rep.distinct["buyer_id"] == 11
    assert rep.distinct["approver_id"] == 76
    assert rep.distinct["order_id"] == 6898
    assert rep.distinct["item_id"] == 25961
    assert rep.distinct["item_description"] == 17198
    assert rep.distinct["group_category"] == 3
    assert rep.distinct["material_category"] == 23


def test_requesters_favour_few_vendors(company1):
    by_req = {}
    for r in company1.records:
        by_req.setdefault(r.requester_id, set()).add(r.vendor_code)
    median = sorted(len(v) for v in by_req.values())[len(by_req) // 2]
    assert median < 988 / 4


def test_point_injection_count_and_ratio():
    d = generate(GenConfig(n_records=20000, seed=1))
    out, truth = inject_anomalies(d, AnomalySpec(rate_point=0.01), seed=9)
    pts = truth.rows(POINT)
    assert len(pts) == 200
    assert len(truth.labels) == len(d)
    for i in pts:
        ratio = out.records[i].amount / d.records[i].amount
        assert 10 <= ratio <= 20


def test_injection_only_touches_labelled_fields():
    d = generate(SMALL)
    out, truth = inject_anomalies(d, AnomalySpec(rate_point=0.03, rate_contextual=0.02), seed=2)
    assert len(truth.rows(POINT)) == 30 and len(truth.rows(CONTEXTUAL)) == 20
    assert not set(truth.rows(POINT)) & set(truth.rows(CONTEXTUAL))
    for before, after in zip(d.records, out.records):
        label = truth.labels[before.row_id]
        changed = {c for c in d.schema.names if before.value(c) != after.value(c)}
        if label == NONE:
            assert not changed
        elif label == POINT:
            assert changed == {"amount"}
        else:
            assert changed == {"vendor_code"}


def test_contextual_vendor_is_foreign():
    d = generate(GenConfig(n_records=3000, n_vendors=400, seed=5))
    out, truth = inject_anomalies(d, AnomalySpec(rate_point=0, rate_contextual=0.01), seed=1)
    assert not truth.notes
    seen_req, seen_mat = {}, {}
    for r in d.records:
        seen_req.setdefault(r.requester_id, set()).add(r.vendor_code)
        seen_mat.setdefault(r.material_category, set()).add(r.vendor_code)
    for i in truth.rows(CONTEXTUAL):
        rec = out.records[i]
        assert rec.vendor_code not in seen_req[rec.requester_id]
        assert rec.vendor_code not in seen_mat[rec.material_category]


def test_contextual_fallback_recorded():
    d = generate(GenConfig(n_records=500, n_vendors=2, n_requesters=2, seed=0))
    _, truth = inject_anomalies(d, AnomalySpec(rate_point=0, rate_contextual=0.01), seed=0)
    assert len(truth.rows(CONTEXTUAL)) == 5
    assert len(truth.notes) == 5


def test_zero_rates_identity():
    d = generate(SMALL)
    out, truth = inject_anomalies(d, AnomalySpec(rate_point=0.0), seed=0)
    assert out == d
    assert set(truth.labels.values()) == {NONE}


def test_zero_row_warning(caplog):
    d = generate(dataclasses.replace(SMALL, n_records=50))
    with caplog.at_level(logging.WARNING):
        _, truth = inject_anomalies(d, AnomalySpec(rate_point=0.01), seed=0)
    assert not truth.rows(POINT)
    assert "injects nothing" in caplog.text


@pytest.mark.parametrize(
    "kwargs", [{"rate_point": 0.06}, {"rate_contextual": -0.1}, {"multiplier_range": (1.0, 2.0)}, {"multiplier_range": (5, 3)}]
)
def test_anomaly_spec_validation(kwargs):
    with pytest.raises(GenerationError):
        AnomalySpec(**kwargs)


def test_ground_truth_round_trip(tmp_path):
    _, truth = inject_anomalies(generate(SMALL), AnomalySpec(rate_point=0.02), seed=0)
    truth.write_csv(tmp_path / "gt.csv")
    assert read_ground_truth(tmp_path / "gt.csv").labels == truth.labels
