import sys
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from purchase_anomaly.iforest import LEAF, IsolationTree  # noqa: E402
from purchase_anomaly.ingest import Dataset, Schema, TransactionRecord  # noqa: E402

# (criterion, passed, detail) lines from the acceptance module, echoed at the end of the session
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion(capsys):
    """Record one acceptance line, print it immediately and fail the test when it did not pass."""

    def record(name: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_RESULTS.append((name, passed, detail))
        with capsys.disabled():
            print("\n" + line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def make_dataset(rows, extra_columns=()):
    """Build a dataset from dicts; unspecified core fields get filler values."""
    schema = Schema.with_extra(extra_columns)
    records = []
    for i, row in enumerate(rows):
        fields = {
            "order_id": f"O{i}",
            "item_id": f"I{i}",
            "group_category": "G",
            "material_category": "M",
            "item_description": "D",
            "vendor_code": "V",
            "requester_id": "R",
            "buyer_id": "B",
            "approver_id": "A",
            "org_code": "ORG",
        }
        fields.update({k: v for k, v in row.items() if k not in extra_columns and k != "amount"})
        amount = row.get("amount", 1)
        extra = {c: row.get(c, "x") for c in extra_columns}
        records.append(
            TransactionRecord(
                row_id=i, amount=None if amount is None else Decimal(str(amount)), extra=extra, **fields
            )
        )
    return Dataset(tuple(records), schema)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blobs(n, centers, spread, seed):
    r = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    labels = np.arange(n) % len(centers)
    return centers[labels] + r.normal(scale=spread, size=(n, centers.shape[1])), labels


def chain_tree(leaf_depths, leaf_sizes=None):
    """Hand-built tree over one feature: row value i lands in leaf i at the given depth.

    Layout: split i at node 2i (threshold i + 0.5), its left child leaf i at
    node 2i + 1, its right child the next split; the last leaf closes the chain.
    """
    n = len(leaf_depths)
    sizes = [1] * n if leaf_sizes is None else list(leaf_sizes)
    m = 2 * n - 1
    feature = np.full(m, LEAF, dtype=np.int64)
    threshold = np.zeros(m)
    left = np.full(m, LEAF, dtype=np.int64)
    right = np.full(m, LEAF, dtype=np.int64)
    size = np.zeros(m, dtype=np.int64)
    depth = np.zeros(m)
    for i in range(n - 1):
        feature[2 * i], threshold[2 * i] = 0, i + 0.5
        left[2 * i], right[2 * i] = 2 * i + 1, 2 * i + 2
    for i in range(n):
        leaf = 2 * i + 1 if i < n - 1 else m - 1
        size[leaf], depth[leaf] = sizes[i], leaf_depths[i]
    return IsolationTree(feature, threshold, left, right, size, depth, 64)
