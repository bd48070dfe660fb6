import pytest
from hypothesis import given, strategies as st

from wareorch.core import (
    CORE_FIELD_COUNT,
    DEFER,
    EXPEDITE,
    REROUTE,
    ActionKind,
    ActionSpec,
    InvalidWorkerIndex,
    NonDigitCharacter,
    TaskId,
    WrongLength,
    check_action,
    enumerate_actions,
    parse_task_id,
    validate_record,
)

from conftest import make_record


def test_parse_task_id_examples():
    assert str(parse_task_id("000000000000000042")) == "000000000000000042"
    with pytest.raises(WrongLength):
        parse_task_id("42")
    with pytest.raises(NonDigitCharacter):
        parse_task_id("00000000000000004X")


@given(st.integers(min_value=0, max_value=10**18 - 1))
def test_task_id_int_roundtrip(n):
    tid = TaskId.from_int(n)
    assert len(str(tid)) == 18
    assert tid.as_int() == n
    assert parse_task_id(str(tid)) == tid


@given(st.text(alphabet="0123456789", min_size=0, max_size=30).filter(lambda s: len(s) != 18))
def test_wrong_length_always_rejected(s):
    with pytest.raises(WrongLength):
        parse_task_id(s)


def test_well_formed_record_is_ok(record):
    rep = validate_record(record)
    assert rep.ok and rep.violations == ()


def test_negative_quantity_reported():
    assert ("quantity", "non_negative") in validate_record(make_record(quantity=-5)).violations


def test_truth_flag_type_consistency():
    rep = validate_record(make_record(truth_disrupted=True, truth_disruption_type="None"))
    assert ("truth_disruption_type", "consistency") in rep.violations


def test_validate_collects_several_violations():
    rep = validate_record(make_record(quantity=-1, deadline=50, language="FR"))
    assert {("quantity", "non_negative"), ("deadline", "not_before_timestamp"), ("language", "enum")} <= set(rep.violations)


def test_equipment_must_match_record_type():
    rep = validate_record(make_record(equipment="scanner"))
    assert ("equipment", "consistency") in rep.violations


def test_total_field_count_counts_padding():
    assert make_record().total_field_count() == CORE_FIELD_COUNT
    assert make_record(extra_fields={"ext_001": 1.0, "ext_002": "a"}).total_field_count() == CORE_FIELD_COUNT + 2


@given(st.integers(min_value=1, max_value=32))
def test_action_partition_is_exhaustive(n):
    acts = enumerate_actions(n)
    assert len(acts) == n + 3
    for a in acts:
        assert a.is_remediation != a.is_standard
    assert [a for a in acts if a.is_remediation] == [REROUTE, EXPEDITE]
    assert acts[-1] == DEFER


def test_assign_worker_bounds():
    check_action(ActionSpec.assign(7), 8)
    with pytest.raises(InvalidWorkerIndex):
        check_action(ActionSpec.assign(8), 8)
    assert ActionSpec.assign(3).kind is ActionKind.ASSIGN_WORKER
