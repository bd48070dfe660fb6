"""Shared vocabulary: task ids, transaction records, scheduler actions, validation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

TASK_ID_LENGTH = 18

RECORD_TYPES = ("Task", "Inventory", "Order")
PRIORITIES = ("Low", "Normal", "High", "Urgent")
LANGUAGES = ("EN", "ES")
DISRUPTION_TYPES = ("None", "EquipmentDowntime", "OrderSurge")
EQUIPMENT = ("conveyor", "forklift", "scanner")

# each record family needs exactly one kind of equipment
REQUIRED_EQUIPMENT = {"Task": "forklift", "Inventory": "scanner", "Order": "conveyor"}

# count of observable core fields; extra_fields pad the schema beyond this
CORE_FIELD_COUNT = 14

_LOCATION_RE = re.compile(r"^A\d+-R\d+-B\d+$")


class DomainError(ValueError):
    """Base class for every validation-style error raised by the package."""

    code = "DomainError"


class WrongLength(DomainError):
    code = "WrongLength"


class NonDigitCharacter(DomainError):
    code = "NonDigitCharacter"


@dataclass(frozen=True)
class TaskId:
    digits: str

    def __post_init__(self):
        if len(self.digits) != TASK_ID_LENGTH:
            raise WrongLength(f"task id must have {TASK_ID_LENGTH} characters, got {len(self.digits)}")
        if not self.digits.isascii() or not self.digits.isdigit():
            raise NonDigitCharacter(f"task id contains a non-digit character: {self.digits!r}")

    def __str__(self) -> str:
        return self.digits

    def as_int(self) -> int:
        return int(self.digits)

    @classmethod
    def from_int(cls, value: int) -> "TaskId":
        return cls(f"{value:0{TASK_ID_LENGTH}d}")


def parse_task_id(text: str) -> TaskId:
    """Return a TaskId iff ``text`` is exactly 18 ASCII decimal digits."""
    return TaskId(text)


@dataclass(frozen=True)
class TransactionRecord:
    """One synthetic logistics-execution row.

    ``priority`` and ``status_label`` hold raw text tokens (English or
    Spanish); they are normalized during preprocessing. The ``truth_*`` fields
    are ground truth and must never reach a feature encoder.
    """

    record_id: int
    record_type: str
    task_id: TaskId
    timestamp: int
    priority: Optional[str]
    location: str
    quantity: int
    planned_minutes: float
    deadline: int
    language: str
    status_label: str
    equipment: str
    equipment_down: tuple[bool, bool, bool]
    arrival_burst: int
    extra_fields: dict[str, Any] = field(default_factory=dict)
    truth_disrupted: bool = False
    truth_disruption_type: str = "None"

    @property
    def location_zone(self) -> str:
        return self.location.split("-", 1)[0]

    def total_field_count(self) -> int:
        return CORE_FIELD_COUNT + len(self.extra_fields)


class ActionKind(str, Enum):
    ASSIGN_WORKER = "AssignWorker"
    REROUTE_TASK = "RerouteTask"
    EXPEDITE_TASK = "ExpediteTask"
    DEFER = "Defer"


REMEDIATION_KINDS = frozenset({ActionKind.REROUTE_TASK, ActionKind.EXPEDITE_TASK})
STANDARD_KINDS = frozenset({ActionKind.ASSIGN_WORKER, ActionKind.DEFER})


@dataclass(frozen=True)
class ActionSpec:
    kind: ActionKind
    worker_index: Optional[int] = None

    def __post_init__(self):
        if self.kind is ActionKind.ASSIGN_WORKER:
            if self.worker_index is None or self.worker_index < 0:
                raise DomainError("AssignWorker needs a non-negative worker_index")
        elif self.worker_index is not None:
            raise DomainError(f"{self.kind.value} takes no worker_index")

    @property
    def is_remediation(self) -> bool:
        return self.kind in REMEDIATION_KINDS

    @property
    def is_standard(self) -> bool:
        return self.kind in STANDARD_KINDS

    def __str__(self) -> str:
        if self.kind is ActionKind.ASSIGN_WORKER:
            return f"AssignWorker({self.worker_index})"
        return self.kind.value

    @classmethod
    def assign(cls, worker_index: int) -> "ActionSpec":
        return cls(ActionKind.ASSIGN_WORKER, worker_index)


REROUTE = ActionSpec(ActionKind.REROUTE_TASK)
EXPEDITE = ActionSpec(ActionKind.EXPEDITE_TASK)
DEFER = ActionSpec(ActionKind.DEFER)


def enumerate_actions(n_workers: int) -> list[ActionSpec]:
    """Fixed action ordering: AssignWorker(0..n-1), RerouteTask, ExpediteTask, Defer."""
    return [ActionSpec.assign(i) for i in range(n_workers)] + [REROUTE, EXPEDITE, DEFER]


def check_action(action: ActionSpec, n_workers: int) -> None:
    if action.kind is ActionKind.ASSIGN_WORKER and action.worker_index >= n_workers:
        raise InvalidWorkerIndex(f"worker {action.worker_index} >= worker count {n_workers}")


class InvalidWorkerIndex(DomainError):
    code = "InvalidWorkerIndex"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[tuple[str, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


# accepted raw priority tokens in either language
PRIORITY_TOKENS = frozenset({"low", "normal", "high", "urgent", "baja", "alta", "urgente"})


def validate_record(r: TransactionRecord) -> ValidationReport:
    """Report every invariant violation of ``r``. Never raises."""
    v: list[tuple[str, str]] = []
    if not isinstance(r.record_id, int) or not 0 <= r.record_id < 2**64:
        v.append(("record_id", "uint64"))
    if r.record_type not in RECORD_TYPES:
        v.append(("record_type", "enum"))
    try:
        TaskId(str(r.task_id))
    except DomainError:
        v.append(("task_id", "format"))
    if r.priority is not None and r.priority not in PRIORITY_TOKENS:
        v.append(("priority", "enum"))
    if not isinstance(r.location, str) or not _LOCATION_RE.match(r.location):
        v.append(("location", "format"))
    if r.quantity < 0:
        v.append(("quantity", "non_negative"))
    if not r.planned_minutes > 0:
        v.append(("planned_minutes", "positive"))
    if r.deadline < r.timestamp:
        v.append(("deadline", "not_before_timestamp"))
    if r.language not in LANGUAGES:
        v.append(("language", "enum"))
    if r.equipment not in EQUIPMENT:
        v.append(("equipment", "enum"))
    elif r.record_type in REQUIRED_EQUIPMENT and r.equipment != REQUIRED_EQUIPMENT[r.record_type]:
        v.append(("equipment", "consistency"))
    if len(r.equipment_down) != len(EQUIPMENT):
        v.append(("equipment_down", "arity"))
    if r.arrival_burst < 0:
        v.append(("arrival_burst", "non_negative"))
    if r.truth_disruption_type not in DISRUPTION_TYPES:
        v.append(("truth_disruption_type", "enum"))
    elif r.truth_disrupted != (r.truth_disruption_type != "None"):
        v.append(("truth_disruption_type", "consistency"))
    return ValidationReport(tuple(v))
