"""Synthetic purchase datasets with labeled anomaly injection.

The generator reproduces the coarse shape of a corporate purchasing ledger:
orders made of one or more lines, each order owned by a requester (who sits in
one organisation and buys mostly from a small set of preferred vendors), item
catalogues nested in material categories, and heavy-tailed lognormal amounts.
Anomalies are injected afterwards so that detection can be scored against
known labels.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from .ingest import AMOUNT, CATEGORICAL, NUMERIC, Dataset, Schema, TransactionRecord

logger = logging.getLogger(__name__)

NONE, POINT, CONTEXTUAL = "none", "point", "contextual"
MAX_ANOMALY_RATE = 0.05

# Extra categorical columns: name -> entity they are derived from.
EXTRA_COLUMNS = (
    "plant",
    "cost_center",
    "purchasing_group",
    "payment_terms",
    "incoterm",
    "unit_of_measure",
)

GEN_SCHEMA = Schema(
    tuple(
        [
            ("order_id", CATEGORICAL),
            ("item_id", CATEGORICAL),
            ("group_category", CATEGORICAL),
            ("material_category", CATEGORICAL),
            ("item_description", CATEGORICAL),
            ("vendor_code", CATEGORICAL),
            ("requester_id", CATEGORICAL),
            ("buyer_id", CATEGORICAL),
            ("approver_id", CATEGORICAL),
            ("org_code", CATEGORICAL),
            (AMOUNT, NUMERIC),
        ]
        + [(c, CATEGORICAL) for c in EXTRA_COLUMNS]
    )
)


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    """Generator parameters.

    ``n_orders``, ``n_items`` and ``n_item_descriptions`` default to ratios
    seen in a mid-sized ledger when left as ``None``.
    """

    n_records: int = 20000
    n_vendors: int = 700
    n_requesters: int = 90
    n_buyers: int = 11
    n_approvers: int = 60
    n_group_categories: int = 3
    n_material_categories: int = 23
    n_orgs: int = 12
    n_orders: int | None = None
    n_items: int | None = None
    n_item_descriptions: int | None = None
    amount_mu: float = 7.0
    amount_sigma: float = 1.5
    # correlation of a line's log-amount with its item's reference price
    item_price_correlation: float = 0.8
    vendors_per_requester: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        counts = {
            "n_records": self.n_records,
            "n_vendors": self.n_vendors,
            "n_requesters": self.n_requesters,
            "n_buyers": self.n_buyers,
            "n_approvers": self.n_approvers,
            "n_group_categories": self.n_group_categories,
            "n_material_categories": self.n_material_categories,
            "n_orgs": self.n_orgs,
            "vendors_per_requester": self.vendors_per_requester,
        }
        for name in ("n_orders", "n_items", "n_item_descriptions"):
            if getattr(self, name) is not None:
                counts[name] = getattr(self, name)
        bad = [k for k, v in counts.items() if v < 1]
        if bad:
            raise GenerationError(f"counts must be >= 1: {bad}")
        if self.amount_sigma <= 0:
            raise GenerationError("amount_sigma must be positive")
        if not 0.0 <= self.item_price_correlation <= 1.0:
            raise GenerationError("item_price_correlation must lie in [0, 1]")

    @property
    def orders(self) -> int:
        if self.n_orders is not None:
            return min(self.n_orders, self.n_records)
        floor = max(self.n_requesters, self.n_buyers, self.n_approvers, self.n_group_categories)
        return min(self.n_records, max(self.n_records // 4, floor))

    @property
    def items(self) -> int:
        return self.n_items if self.n_items is not None else max(1, int(self.n_records * 0.9))

    @property
    def descriptions(self) -> int:
        if self.n_item_descriptions is not None:
            return self.n_item_descriptions
        return max(1, int(self.items * 0.65))


def company1_like(seed: int = 0) -> GenConfig:
    """Vocabulary sizes of the smaller of the two source ledgers."""
    return GenConfig(
        n_records=27779,
        n_orders=6898,
        n_items=25961,
        n_item_descriptions=17198,
        n_vendors=988,
        n_requesters=122,
        n_buyers=11,
        n_approvers=76,
        n_group_categories=3,
        n_material_categories=23,
        # total spend near 98.9 MEUR: exp(mu + sigma^2 / 2) * n ~ 3.56 kEUR * n
        amount_mu=7.05,
        amount_sigma=1.5,
        vendors_per_requester=24,
        seed=seed,
    )


def _cover(values: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Overwrite random positions so that every code in ``range(size)`` occurs."""
    n = len(values)
    if n < size:
        return values
    positions = rng.choice(n, size=size, replace=False)
    values = values.copy()
    values[positions] = rng.permutation(size)
    return values


def _cover_where(
    values: np.ndarray,
    size: int,
    eligible: list[np.ndarray],
    rng: np.random.Generator,
) -> np.ndarray:
    """Add missing codes while respecting a structural constraint.

    ``eligible[v]`` lists the positions allowed to carry code ``v``. Only
    positions whose current code occurs more than once are taken over, so no
    code that was already present disappears.
    """
    values = values.copy()
    counts = np.bincount(values, minlength=size)
    for v in np.flatnonzero(counts == 0):
        pos = eligible[v]
        pos = pos[counts[values[pos]] > 1]
        if len(pos) == 0:
            continue
        p = pos[rng.integers(len(pos))]
        counts[values[p]] -= 1
        values[p] = v
        counts[v] += 1
    return values


def _fmt(prefix: str, codes: np.ndarray, width: int) -> list[str]:
    return [f"{prefix}{c:0{width}d}" for c in codes.tolist()]


def generate(cfg: GenConfig) -> Dataset:
    """Draw a synthetic purchase ledger. Deterministic for a given ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_records
    n_orders = cfg.orders

    # order membership: every order gets at least one line, lines of an order are contiguous
    order_of_line = np.concatenate([np.arange(n_orders), rng.integers(0, n_orders, n - n_orders)])
    order_of_line.sort()

    # order-level attributes
    requester = _cover(rng.integers(0, cfg.n_requesters, n_orders), cfg.n_requesters, rng)
    buyer = _cover(rng.integers(0, cfg.n_buyers, n_orders), cfg.n_buyers, rng)
    approver = _cover(rng.integers(0, cfg.n_approvers, n_orders), cfg.n_approvers, rng)
    group = _cover(rng.integers(0, cfg.n_group_categories, n_orders), cfg.n_group_categories, rng)
    home_org = rng.integers(0, cfg.n_orgs, cfg.n_requesters)
    home_org[: min(cfg.n_orgs, cfg.n_requesters)] = np.arange(min(cfg.n_orgs, cfg.n_requesters))
    home_org = rng.permutation(home_org)

    line_requester = requester[order_of_line]
    line_group = group[order_of_line]

    # materials nest in groups: material m belongs to group m % n_groups
    n_mat = cfg.n_material_categories
    mats_by_group = [np.arange(g, n_mat, cfg.n_group_categories) for g in range(cfg.n_group_categories)]
    material = np.empty(n, dtype=np.int64)
    for g, mats in enumerate(mats_by_group):
        idx = np.flatnonzero(line_group == g)
        if len(mats) == 0:
            material[idx] = rng.integers(0, n_mat, len(idx))
        else:
            material[idx] = mats[rng.integers(0, len(mats), len(idx))]
    lines_by_group = [np.flatnonzero(line_group == g) for g in range(cfg.n_group_categories)]
    material = _cover_where(
        material, n_mat, [lines_by_group[m % cfg.n_group_categories] for m in range(n_mat)], rng
    )

    # items nest in materials: item i belongs to material i % n_mat
    n_items = cfg.items
    item = np.empty(n, dtype=np.int64)
    for m in range(n_mat):
        idx = np.flatnonzero(material == m)
        pool = np.arange(m, n_items, n_mat)
        if len(pool) == 0:
            pool = rng.integers(0, n_items, 1)
        item[idx] = pool[rng.integers(0, len(pool), len(idx))]
    lines_by_material = [np.flatnonzero(material == m) for m in range(n_mat)]
    item = _cover_where(item, n_items, [lines_by_material[i % n_mat] for i in range(n_items)], rng)
    description = item % cfg.descriptions

    # requester -> preferred vendors; vendor v is always preferred by requester v % n_req
    n_req = cfg.n_requesters
    k_pref = min(cfg.vendors_per_requester, cfg.n_vendors)
    prefs = []
    for r in range(n_req):
        owned = np.arange(r, cfg.n_vendors, n_req)
        extra = rng.choice(cfg.n_vendors, size=k_pref, replace=False)
        prefs.append(np.unique(np.concatenate([owned, extra])))
    vendor = np.empty(n, dtype=np.int64)
    for r in range(n_req):
        idx = np.flatnonzero(line_requester == r)
        if len(idx) == 0:
            continue
        pool = prefs[r]
        weights = 1.0 / np.arange(1, len(pool) + 1)
        weights = rng.permutation(weights / weights.sum())
        vendor[idx] = pool[rng.choice(len(pool), size=len(idx), p=weights)]
    lines_by_requester = [np.flatnonzero(line_requester == r) for r in range(n_req)]
    vendor = _cover_where(
        vendor, cfg.n_vendors, [lines_by_requester[v % n_req] for v in range(cfg.n_vendors)], rng
    )

    # lognormal amounts with an item-level component
    rho = cfg.item_price_correlation
    item_z = rng.standard_normal(n_items)
    line_z = rho * item_z[item] + math.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
    cents = np.maximum(np.rint(np.exp(cfg.amount_mu + cfg.amount_sigma * line_z) * 100), 1).astype(np.int64)

    n_plants = max(1, cfg.n_orgs // 2)
    columns = {
        "order_id": _fmt("PO", order_of_line, 7),
        "item_id": _fmt("IT", item, 7),
        "group_category": _fmt("G", line_group, 2),
        "material_category": _fmt("M", material, 3),
        "item_description": _fmt("DESC", description, 6),
        "vendor_code": _fmt("V", vendor, 5),
        "requester_id": _fmt("R", line_requester, 4),
        "buyer_id": _fmt("B", buyer[order_of_line], 3),
        "approver_id": _fmt("A", approver[order_of_line], 4),
        "org_code": _fmt("ORG", home_org[line_requester], 3),
        "plant": _fmt("PL", home_org[line_requester] % n_plants, 2),
        "cost_center": _fmt("CC", line_requester, 4),
        "purchasing_group": _fmt("PG", buyer[order_of_line], 3),
        "payment_terms": _fmt("PT", vendor % 4, 1),
        "incoterm": _fmt("INC", vendor % 5, 1),
        "unit_of_measure": _fmt("UOM", material % 6, 1),
    }
    amounts = [Decimal(int(c)).scaleb(-2) for c in cents.tolist()]

    records = []
    for i in range(n):
        extra = {c: columns[c][i] for c in EXTRA_COLUMNS}
        core = {c: columns[c][i] for c in columns if c not in extra}
        records.append(TransactionRecord(row_id=i, amount=amounts[i], extra=extra, **core))
    return Dataset(tuple(records), GEN_SCHEMA)


# -- anomaly injection -------------------------------------------------------


@dataclass(frozen=True)
class AnomalySpec:
    rate_point: float = 0.01
    rate_contextual: float = 0.0
    multiplier_range: tuple[float, float] = (10.0, 20.0)

    def __post_init__(self) -> None:
        for name in ("rate_point", "rate_contextual"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= MAX_ANOMALY_RATE:
                raise GenerationError(f"{name}={rate} outside [0, {MAX_ANOMALY_RATE}]")
        low, high = self.multiplier_range
        if not 1.0 < low <= high:
            raise GenerationError(f"multiplier_range must satisfy 1 < low <= high, got {self.multiplier_range}")


@dataclass
class GroundTruth:
    labels: dict[int, str]
    notes: list[str] = field(default_factory=list)

    def rows(self, label: str) -> list[int]:
        return [r for r, lab in self.labels.items() if lab == label]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["row_id", "label"])
            writer.writerows(sorted(self.labels.items()))


def read_ground_truth(path: str | Path) -> GroundTruth:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return GroundTruth({int(r["row_id"]): r["label"] for r in csv.DictReader(handle)})


def inject_anomalies(d: Dataset, spec: AnomalySpec, seed: int) -> tuple[Dataset, GroundTruth]:
    """Inject point and contextual anomalies into disjoint random rows.

    Point rows get ``amount *= m`` with ``m`` uniform in the multiplier range
    (rounded to 4 decimals, so the ratio is exact). Contextual rows get a
    vendor that never co-occurs with the row's requester nor its material
    category in ``d``; when no such vendor exists the rarest other vendor is
    used and a note is recorded.
    """
    rng = np.random.default_rng(seed)
    n = len(d)
    n_point = math.floor(spec.rate_point * n)
    n_ctx = math.floor(spec.rate_contextual * n)
    for name, rate, count in (("point", spec.rate_point, n_point), ("contextual", spec.rate_contextual, n_ctx)):
        if rate > 0 and count == 0:
            logger.warning("%s rate %.4f on %d rows injects nothing", name, rate, n)
    chosen = rng.choice(n, size=n_point + n_ctx, replace=False)
    point_idx = np.sort(chosen[:n_point])
    ctx_idx = np.sort(chosen[n_point:])

    records = list(d.records)
    labels = {r.row_id: NONE for r in records}
    notes: list[str] = []

    low, high = spec.multiplier_range
    for i in point_idx.tolist():
        mult = Decimal(str(round(float(rng.uniform(low, high)), 4)))
        mult = min(max(mult, Decimal(str(low))), Decimal(str(high)))
        records[i] = replace(records[i], amount=records[i].amount * mult)
        labels[records[i].row_id] = POINT

    if n_ctx:
        vendors = d.column("vendor_code")
        vendor_set = sorted(set(vendors))
        by_requester: dict[str, set] = {}
        by_material: dict[str, set] = {}
        frequency: dict[str, int] = {}
        for r, v in zip(d.records, vendors):
            by_requester.setdefault(r.requester_id, set()).add(v)
            by_material.setdefault(r.material_category, set()).add(v)
            frequency[v] = frequency.get(v, 0) + 1
        for i in ctx_idx.tolist():
            rec = records[i]
            seen = by_requester[rec.requester_id] | by_material[rec.material_category]
            candidates = [v for v in vendor_set if v not in seen]
            if candidates:
                new_vendor = candidates[rng.integers(len(candidates))]
            else:
                others = [v for v in vendor_set if v != rec.vendor_code] or vendor_set
                new_vendor = min(others, key=lambda v: (frequency[v], v))
                notes.append(f"row {rec.row_id}: no unseen vendor, used rarest vendor {new_vendor}")
            records[i] = replace(rec, vendor_code=new_vendor)
            labels[rec.row_id] = CONTEXTUAL

    return Dataset(tuple(records), d.schema), GroundTruth(labels, notes)
