"""Loading, cleaning and profiling of purchase-transaction CSV files."""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERIC = "numeric"

AMOUNT = "amount"

# Columns every schema must declare; anything else is carried in ``extra``.
CORE_COLUMNS: tuple[str, ...] = (
    "order_id",
    "item_id",
    "group_category",
    "material_category",
    "item_description",
    "vendor_code",
    "requester_id",
    "buyer_id",
    "approver_id",
    "org_code",
    AMOUNT,
)

NA_TOKENS = frozenset({"", "na", "null"})

_AMOUNT_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$")


class IngestError(ValueError):
    """Base class for data errors raised while reading or cleaning."""


class HeaderMismatchError(IngestError):
    pass


class AmountParseError(IngestError):
    def __init__(self, row: int, value: str) -> None:
        super().__init__(f"row {row}: cannot parse amount {value!r}")
        self.row = row
        self.value = value


class EmptyDatasetError(IngestError):
    pass


@dataclass(frozen=True)
class Schema:
    """Ordered column declaration: ``(name, kind)`` pairs."""

    columns: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        names = self.names
        missing = [c for c in CORE_COLUMNS if c not in names]
        if missing:
            raise ValueError(f"schema lacks mandatory columns: {missing}")
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")
        for name, kind in self.columns:
            if kind not in (CATEGORICAL, NUMERIC):
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")
            if name == AMOUNT and kind != NUMERIC:
                raise ValueError("amount column must be numeric")
            if name != AMOUNT and kind == NUMERIC:
                raise ValueError(f"column {name!r}: only the amount column may be numeric")

    @classmethod
    def with_extra(cls, extra: Iterable[str] = ()) -> Schema:
        cols = [(c, NUMERIC if c == AMOUNT else CATEGORICAL) for c in CORE_COLUMNS]
        cols.extend((c, CATEGORICAL) for c in extra)
        return cls(tuple(cols))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    @property
    def categorical(self) -> tuple[str, ...]:
        return tuple(name for name, kind in self.columns if kind == CATEGORICAL)

    @property
    def extra(self) -> tuple[str, ...]:
        return tuple(name for name in self.names if name not in CORE_COLUMNS)


DEFAULT_SCHEMA = Schema.with_extra()


@dataclass(frozen=True)
class TransactionRecord:
    """One purchase line. Missing cells are ``None``."""

    row_id: int
    order_id: str | None
    item_id: str | None
    group_category: str | None
    material_category: str | None
    item_description: str | None
    vendor_code: str | None
    requester_id: str | None
    buyer_id: str | None
    approver_id: str | None
    org_code: str | None
    amount: Decimal | None
    extra: dict[str, str | None] = field(default_factory=dict)

    def value(self, column: str):
        if column in CORE_COLUMNS:
            return getattr(self, column)
        return self.extra[column]

    def with_value(self, column: str, value) -> TransactionRecord:
        if column in CORE_COLUMNS:
            return replace(self, **{column: value})
        extra = dict(self.extra)
        extra[column] = value
        return replace(self, extra=extra)


@dataclass(frozen=True)
class Dataset:
    records: tuple[TransactionRecord, ...]
    schema: Schema = DEFAULT_SCHEMA

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list:
        if name not in self.schema.names:
            raise KeyError(name)
        return [r.value(name) for r in self.records]

    def amounts(self) -> list[float]:
        return [float(r.amount) for r in self.records]

    def subset(self, row_ids: Iterable[int], renumber: bool = False) -> Dataset:
        """Rows with the given row ids, in dataset order."""
        wanted = set(row_ids)
        rows = [r for r in self.records if r.row_id in wanted]
        if renumber:
            rows = [replace(r, row_id=i) for i, r in enumerate(rows)]
        return Dataset(tuple(rows), self.schema)


def is_missing(raw: str | None) -> bool:
    return raw is None or raw.strip().lower() in NA_TOKENS


def parse_amount(raw: str, row: int) -> Decimal:
    text = raw.strip()
    if not _AMOUNT_RE.match(text):
        raise AmountParseError(row, raw)
    return Decimal(text)


def _make_record(row_id: int, cells: dict[str, str], schema: Schema, row_number: int) -> TransactionRecord:
    values: dict[str, object] = {}
    for name in schema.names:
        raw = cells[name]
        if is_missing(raw):
            values[name] = None
        elif name == AMOUNT:
            values[name] = parse_amount(raw, row_number)
        else:
            values[name] = raw
    extra = {name: values.pop(name) for name in schema.extra}
    return TransactionRecord(row_id=row_id, extra=extra, **values)


def load_transactions(path: str | Path, schema: Schema | None = DEFAULT_SCHEMA) -> Dataset:
    """Read a transaction CSV into a :class:`Dataset`.

    The header must carry exactly the schema's columns (any order). With
    ``schema=None`` the mandatory columns are required and every other header
    column is carried as an extra categorical, in file order.

    Row ids are assigned in file order starting at 0. Missing cells are kept
    as ``None``; use :func:`clean` to drop incomplete rows. Amount parse
    errors name the 1-based data row (the header is not counted).
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatchError(f"{path}: empty file, no header") from None
        if schema is None:
            missing = [c for c in CORE_COLUMNS if c not in header]
            if missing:
                raise HeaderMismatchError(f"{path}: header lacks mandatory columns {missing}")
            schema = Schema.with_extra(c for c in header if c not in CORE_COLUMNS)
        expected = set(schema.names)
        if len(header) != len(set(header)) or set(header) != expected:
            missing = sorted(expected - set(header))
            unexpected = sorted(set(header) - expected)
            raise HeaderMismatchError(
                f"{path}: header does not match schema (missing={missing}, unexpected={unexpected})"
            )
        records = []
        for row_number, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(f"row {row_number}: expected {len(header)} fields, got {len(row)}")
            cells = dict(zip(header, row))
            records.append(_make_record(len(records), cells, schema, row_number))
    return Dataset(tuple(records), schema)


def write_transactions(d: Dataset, path: str | Path) -> None:
    """Write ``d`` as ingest-compatible CSV (schema column order)."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(d.schema.names)
        for r in d.records:
            writer.writerow("" if (v := r.value(c)) is None else str(v) for c in d.schema.names)


def clean(d: Dataset) -> tuple[Dataset, int]:
    """Drop rows with a missing value in any schema column.

    Surviving rows are renumbered so row ids stay contiguous from 0. Raises
    :class:`EmptyDatasetError` when nothing survives.
    """
    names = d.schema.names
    kept = tuple(
        replace(r, row_id=i)
        for i, r in enumerate(r for r in d.records if all(r.value(c) is not None for c in names))
    )
    removed = len(d.records) - len(kept)
    if not kept:
        raise EmptyDatasetError("all rows removed by cleaning")
    if removed:
        logger.info("clean: removed %d incomplete rows of %d", removed, len(d.records))
    return Dataset(kept, d.schema), removed


# -- profiling ---------------------------------------------------------------

ENTITIES = ("requester_id", "buyer_id", "approver_id")
MEASURES = ("order_id", "item_id", "vendor_code")

_TABLE_LABELS = {
    "order_id": "#Purchase Orders (OrderID)",
    "item_id": "#Items (ItemID)",
    "group_category": "#Group Categories",
    "material_category": "#Material Categories",
    "item_description": "#Unique Item descriptions",
    "vendor_code": "#Vendors",
    "requester_id": "#Requesters",
    "buyer_id": "#Buyers",
    "approver_id": "#Approvers",
}
_ENTITY_LABELS = {"requester_id": "Requester", "buyer_id": "Buyer", "approver_id": "Approver"}
_MEASURE_LABELS = {"order_id": "#OrderID", "item_id": "#ItemID", "vendor_code": "#VendorCode"}


@dataclass(frozen=True)
class EntityStat:
    min: int
    max: int
    mean: float


@dataclass(frozen=True)
class ProfileReport:
    n_records: int
    distinct: dict[str, int]
    # (entity column, measured column) -> distinct measured values per entity
    per_entity: dict[tuple[str, str], EntityStat]
    total_amount: Decimal

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "distinct": dict(self.distinct),
            "per_entity": {
                f"{measure}/{entity}": {"min": s.min, "max": s.max, "mean": s.mean}
                for (entity, measure), s in self.per_entity.items()
            },
            "total_amount": str(self.total_amount),
        }

    def table_rows(self) -> list[tuple[str, str]]:
        """Two-column rows in the layout of a source-dataset description table."""
        rows = [("#Records", str(self.n_records))]
        for col, label in _TABLE_LABELS.items():
            if col in self.distinct:
                rows.append((label, str(self.distinct[col])))
        for entity in ENTITIES:
            for measure in MEASURES:
                s = self.per_entity[(entity, measure)]
                rows.append(
                    (
                        f"Min/Max/Mean {_MEASURE_LABELS[measure]} / {_ENTITY_LABELS[entity]}",
                        f"{s.min}/{s.max}/{s.mean:.2f}",
                    )
                )
        rows.append(("Total Purchase Amount", str(self.total_amount)))
        return rows

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["figure", "value"])
            writer.writerows(self.table_rows())


def _entity_stat(groups: dict[str, set]) -> EntityStat:
    sizes = [len(v) for v in groups.values()]
    return EntityStat(min(sizes), max(sizes), sum(sizes) / len(sizes))


def profile(d: Dataset) -> ProfileReport:
    if not d.records:
        raise EmptyDatasetError("cannot profile an empty dataset")
    distinct = {c: len(set(d.column(c))) for c in d.schema.names if c != AMOUNT}
    per_entity: dict[tuple[str, str], EntityStat] = {}
    for entity in ENTITIES:
        keys = d.column(entity)
        for measure in MEASURES:
            groups: dict[str, set] = defaultdict(set)
            for k, v in zip(keys, d.column(measure)):
                groups[k].add(v)
            per_entity[(entity, measure)] = _entity_stat(groups)
    total = sum((r.amount for r in d.records), Decimal(0))
    return ProfileReport(len(d.records), distinct, per_entity, total)

