from dataclasses import replace

import pytest

from wareorch.config import build_config
from wareorch.core import TaskId, TransactionRecord


def make_record(**changes) -> TransactionRecord:
    base = TransactionRecord(
        record_id=1,
        record_type="Task",
        task_id=TaskId("000000000000000042"),
        timestamp=100,
        priority="normal",
        location="A1-R2-B3",
        quantity=4,
        planned_minutes=12.0,
        deadline=160,
        language="EN",
        status_label="open",
        equipment="forklift",
        equipment_down=(False, False, False),
        arrival_burst=1,
    )
    return replace(base, **changes)


@pytest.fixture
def record():
    return make_record()


@pytest.fixture(scope="session")
def small_cfg():
    return build_config({"n_records": "1000", "field_count": "40", "seed": "3"}, env={})
