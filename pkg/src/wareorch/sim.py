"""Event-driven warehouse simulator.

A shift of transactions arrives over time; at every decision point the policy
acts on the head of the queue. Rewards are tracked internally in integer
hundredths so that rollouts compare exactly.

Dynamics
--------
* service = ceil(planned * worker_speed * jitter * m) + 5 if rerouted, where
  m = 2 for equipment downtime that was not rerouted, else 1.
* an order surge holds the task for 0.7 * planned minutes of extra queue
  wait; ExpediteTask halves whatever remains.
* a worker is reserved from assignment until completion.
* reward: +1 when an on-time task is assigned; -1 once per late task, paid
  at assignment or as soon as the deadline passes while it still waits;
  -0.01 per full 10 minutes of queue wait (at most -0.2 per task), accrued
  as the clock moves; -0.1 per remediation; -0.2 per assignment to a busy
  worker; 0 for Defer. Waiting out a deadline therefore never avoids its cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    EQUIPMENT,
    ActionKind,
    ActionSpec,
    DomainError,
    TransactionRecord,
    check_action,
    enumerate_actions,
)
from .datagen import stream
from .preprocess import EncodingContext, Observation, Preprocessed, StateVector, encode_state, EMBED_BUCKETS, EMBED_DIM

WORKER_SPEEDS = (0.9, 1.0, 1.1)

ON_TIME = 100
LATE = -100
REMEDIATION_COST = -10
INVALID_ASSIGN_COST = -20
WAIT_BLOCK_MINUTES = 10
WAIT_COST_PER_BLOCK = -1
MAX_WAIT_COST = -20
MAX_WAIT_BLOCKS = MAX_WAIT_COST // WAIT_COST_PER_BLOCK


class EmptySlice(DomainError):
    code = "EmptySlice"


class EmptyQueue(DomainError):
    code = "EmptyQueue"


class StateTooLarge(DomainError):
    code = "StateTooLarge"


@dataclass(frozen=True)
class ScenarioParams:
    n_workers: int = 8
    shift_size: int = 50
    scenario_seed: int = 0
    p99_planned: float = 45.0
    downtime_multiplier: float = 2.0
    reroute_minutes: int = 5
    surge_wait_factor: float = 0.7
    jitter: float = 0.03
    defer_positions: int = 3
    idle_defer_minutes: int = 5
    max_steps_per_task: int = 20

    def worker_speeds(self) -> tuple[float, ...]:
        rng = stream(self.scenario_seed, "worker_speeds")
        return tuple(float(WORKER_SPEEDS[i]) for i in rng.integers(0, len(WORKER_SPEEDS), self.n_workers))


@dataclass(frozen=True)
class TaskSpec:
    """One task as the simulator sees it: observation plus hidden truth."""

    obs: Observation
    arrival: int
    deadline: int
    truth_type: str = "None"

    @property
    def truth_disrupted(self) -> bool:
        return self.truth_type != "None"


def build_tasks(records: Sequence[TransactionRecord], indices: Sequence[int], pre: Preprocessed) -> list[TaskSpec]:
    """Tasks for a slice of the dataset, arrivals replaying the original gaps.

    Each record keeps the gap to its predecessor in the full dataset, so a
    sparse slice keeps the same arrival density as the whole corpus.
    """
    order = sorted(indices, key=lambda i: (records[i].timestamp, records[i].record_id))
    tasks, clock = [], 0
    for j, i in enumerate(order):
        if j > 0:
            clock += pre.inter_arrival[i]
        obs = pre.observations[i]
        tasks.append(TaskSpec(obs, clock, clock + obs.deadline_offset, records[i].truth_disruption_type))
    return tasks


def shifts(tasks: Sequence[TaskSpec], shift_size: int) -> list[list[TaskSpec]]:
    """Cut a task stream into shifts, re-basing each shift's clock at zero."""
    out = []
    for start in range(0, len(tasks), shift_size):
        chunk = tasks[start : start + shift_size]
        base = chunk[0].arrival
        out.append([replace(t, arrival=t.arrival - base, deadline=t.deadline - base) for t in chunk])
    return out


@dataclass(frozen=True)
class TaskOutcome:
    record_id: int
    task_id: str
    record_type: str
    arrival: int
    deadline: int
    completed_at: Optional[int]
    deadline_met: bool
    remediated: bool
    remediations: tuple[str, ...]
    wait_minutes: float
    truth_disrupted: bool
    truth_type: str
    priority: str
    quantity: int
    equipment_flag: bool
    arrival_burst: int
    priority_imputed: bool = False
    quantity_capped: bool = False
    truncated: bool = False

    @property
    def completion_minutes(self) -> Optional[int]:
        return None if self.completed_at is None else self.completed_at - self.arrival


@dataclass
class StepOutcome:
    reward: float
    done: bool
    info: list[TaskOutcome] = field(default_factory=list)
    reward_cents: int = 0
    elapsed: int = 0


@dataclass
class EpisodeLog:
    outcomes: list[TaskOutcome]
    total_reward: float
    total_simulated_minutes: int

    @property
    def completion_minutes(self) -> list[Optional[int]]:
        return [o.completion_minutes for o in self.outcomes]


class WarehouseState:
    """Mutable simulator state. ``step`` mutates in place; use ``clone`` to branch."""

    __slots__ = (
        "tasks",
        "params",
        "speeds",
        "jitter",
        "clock",
        "queue",
        "next_arrival",
        "busy_until",
        "assigned",
        "surge_wait",
        "rerouted",
        "expedited",
        "remediations",
        "decisions",
        "late_charged",
        "wait_blocks",
        "outcomes",
        "inventory_levels",
        "steps",
        "total_cents",
        "finished",
    )

    def clone(self) -> "WarehouseState":
        c = WarehouseState.__new__(WarehouseState)
        c.tasks = self.tasks
        c.params = self.params
        c.speeds = self.speeds
        c.jitter = self.jitter
        c.clock = self.clock
        c.queue = list(self.queue)
        c.next_arrival = self.next_arrival
        c.busy_until = list(self.busy_until)
        c.assigned = list(self.assigned)
        c.surge_wait = list(self.surge_wait)
        c.rerouted = list(self.rerouted)
        c.expedited = list(self.expedited)
        c.remediations = [list(r) for r in self.remediations]
        c.decisions = list(self.decisions)
        c.late_charged = list(self.late_charged)
        c.wait_blocks = list(self.wait_blocks)
        c.outcomes = list(self.outcomes)
        c.inventory_levels = dict(self.inventory_levels)
        c.steps = self.steps
        c.total_cents = self.total_cents
        c.finished = self.finished
        return c

    # -- observable views ---------------------------------------------------

    @property
    def done(self) -> bool:
        return self.finished

    @property
    def n_workers(self) -> int:
        return self.params.n_workers

    @property
    def head(self) -> int:
        if not self.queue:
            raise EmptyQueue("no task awaits a decision")
        return self.queue[0]

    @property
    def head_task(self) -> TaskSpec:
        return self.tasks[self.head]

    @property
    def task_queue(self) -> list[TaskSpec]:
        return [self.tasks[i] for i in self.queue]

    @property
    def workers(self) -> list[tuple[int, Optional[int]]]:
        return list(zip(self.busy_until, self.assigned))

    def idle_workers(self) -> list[int]:
        return [w for w, a in enumerate(self.assigned) if a is None]

    @property
    def equipment_flags(self) -> tuple[bool, bool, bool]:
        """Evidence flags for the head task; its own flag clears once rerouted."""
        if not self.queue:
            return (False, False, False)
        h = self.head
        flags = list(self.tasks[h].obs.equipment_down)
        if self.rerouted[h]:
            flags[EQUIPMENT.index(self.tasks[h].obs.equipment)] = False
        return tuple(flags)

    @property
    def arrivals_last_10min(self) -> int:
        """Recorded arrival burst of the head task; zero once expedited."""
        if not self.queue:
            return 0
        h = self.head
        return 0 if self.expedited[h] else self.tasks[h].obs.arrival_burst

    def own_flag(self) -> bool:
        return self.equipment_flags[EQUIPMENT.index(self.head_task.obs.equipment)]

    def head_remediated(self, kind: ActionKind) -> bool:
        h = self.head
        return self.rerouted[h] if kind is ActionKind.REROUTE_TASK else self.expedited[h]

    def legal_mask(self) -> np.ndarray:
        """Actions a learned policy may take: assignment only to the lowest idle
        worker, Reroute while the required equipment shows a fault (the flag
        clears once rerouted), Expedite once per task, Defer when it can
        reorder the queue."""
        n = self.n_workers
        mask = np.zeros(n + 3, dtype=bool)
        idle = self.idle_workers()
        if idle:
            mask[idle[0]] = True
        h = self.head
        # rerouting needs a reported fault on the equipment the task uses
        mask[n] = self.own_flag()
        mask[n + 1] = not self.expedited[h]
        # with an idle worker at hand, deferring a lone task only idles
        mask[n + 2] = len(self.queue) > 1 or not idle
        return mask

    # -- dynamics ------------------------------------------------------------

    def _release(self, t: int) -> None:
        for w, until in enumerate(self.busy_until):
            if self.assigned[w] is not None and until <= t:
                self.assigned[w] = None

    def _admit(self, t: int) -> None:
        while self.next_arrival < len(self.tasks) and self.tasks[self.next_arrival].arrival <= t:
            self.queue.append(self.next_arrival)
            self.next_arrival += 1

    def _charge_waiting(self, h: int) -> int:
        """Wait blocks and lateness accrued so far by task ``h`` and not yet paid."""
        task = self.tasks[h]
        cents = 0
        blocks = min((self.clock - task.arrival) // WAIT_BLOCK_MINUTES, MAX_WAIT_BLOCKS)
        if blocks > self.wait_blocks[h]:
            cents += WAIT_COST_PER_BLOCK * (blocks - self.wait_blocks[h])
            self.wait_blocks[h] = blocks
        if not self.late_charged[h] and self.clock >= task.deadline:
            cents += LATE
            self.late_charged[h] = True
        return cents

    def _advance_to(self, t: int) -> None:
        self.clock = max(self.clock, t)
        self._release(self.clock)
        self._admit(self.clock)

    def _next_event_time(self) -> Optional[int]:
        times = [u for u, a in zip(self.busy_until, self.assigned) if a is not None and u > self.clock]
        if self.next_arrival < len(self.tasks):
            times.append(self.tasks[self.next_arrival].arrival)
        return min(times) if times else None

    def _settle(self) -> None:
        """Advance the clock to the next decision point: a waiting task and an
        idle worker. When nothing is left, run out the busy workers and finish."""
        while True:
            if self.queue and None in self.assigned:
                return
            if self.queue or self.next_arrival < len(self.tasks):
                self._advance_to(self._next_event_time())
                continue
            busy = [u for u, a in zip(self.busy_until, self.assigned) if a is not None]
            if busy:
                self._advance_to(max(busy))
            self.finished = True
            return

    def _wait(self) -> None:
        t = self._next_event_time()
        self._advance_to(t if t is not None else self.clock + self.params.idle_defer_minutes)

    def _service_minutes(self, h: int, worker: int) -> int:
        task = self.tasks[h]
        mult = 1.0
        if task.truth_type == "EquipmentDowntime" and not self.rerouted[h]:
            mult = self.params.downtime_multiplier
        base = math.ceil(task.obs.planned_minutes * self.speeds[worker] * self.jitter[h] * mult - 1e-9)
        return base + (self.params.reroute_minutes if self.rerouted[h] else 0)

    def _outcome(self, h: int, completed_at: Optional[int], wait: float, truncated: bool = False) -> TaskOutcome:
        task = self.tasks[h]
        obs = task.obs
        return TaskOutcome(
            record_id=obs.record_id,
            task_id=str(obs.task_id),
            record_type=obs.record_type,
            arrival=task.arrival,
            deadline=task.deadline,
            completed_at=completed_at,
            deadline_met=completed_at is not None and completed_at <= task.deadline,
            remediated=bool(self.remediations[h]),
            remediations=tuple(self.remediations[h]),
            wait_minutes=wait,
            truth_disrupted=task.truth_disrupted,
            truth_type=task.truth_type,
            priority=obs.priority or "",
            quantity=obs.quantity,
            equipment_flag=bool(obs.equipment_down[EQUIPMENT.index(obs.equipment)]),
            arrival_burst=obs.arrival_burst,
            priority_imputed=obs.priority_imputed,
            quantity_capped=obs.quantity_capped,
            truncated=truncated,
        )

    def _assign(self, h: int, worker: int) -> tuple[int, TaskOutcome]:
        surge = math.ceil(self.surge_wait[h] - 1e-9)
        completed = self.clock + surge + self._service_minutes(h, worker)
        wait = float(self.clock - self.tasks[h].arrival + surge)
        self.busy_until[worker] = completed
        self.assigned[worker] = h
        self.queue.pop(0)
        obs = self.tasks[h].obs
        zone = obs.location.split("-", 1)[0]
        delta = obs.quantity if obs.record_type == "Inventory" else -obs.quantity if obs.record_type == "Order" else 0
        self.inventory_levels[zone] = max(self.inventory_levels.get(zone, 0) + delta, 0)
        outcome = self._outcome(h, completed, wait)
        cents = 0 if self.late_charged[h] else ON_TIME if outcome.deadline_met else LATE
        self.late_charged[h] = self.late_charged[h] or not outcome.deadline_met
        blocks = min(int(wait // WAIT_BLOCK_MINUTES), MAX_WAIT_BLOCKS)
        cents += WAIT_COST_PER_BLOCK * (blocks - self.wait_blocks[h])
        self.wait_blocks[h] = blocks
        return cents, outcome

    def _truncate(self) -> list[TaskOutcome]:
        left = list(self.queue) + list(range(self.next_arrival, len(self.tasks)))
        self.queue.clear()
        self.next_arrival = len(self.tasks)
        events = []
        for h in left:
            events.append(self._outcome(h, None, float(self.clock - self.tasks[h].arrival), truncated=True))
        self.finished = True
        return events

    def step(self, action: ActionSpec) -> StepOutcome:
        """Apply ``action`` to the head task in place."""
        if self.finished or not self.queue:
            raise EmptyQueue("step called with no task awaiting a decision")
        check_action(action, self.n_workers)
        h = self.queue[0]
        start = self.clock
        self.decisions[h] += 1
        self.steps += 1
        info: list[TaskOutcome] = []
        kind = action.kind
        if kind is ActionKind.ASSIGN_WORKER:
            w = action.worker_index
            if self.assigned[w] is None:
                cents, outcome = self._assign(h, w)
                info.append(outcome)
                self._settle()
            else:
                cents = INVALID_ASSIGN_COST
                self._wait()
                self._settle()
        elif kind is ActionKind.REROUTE_TASK:
            cents = REMEDIATION_COST
            self.rerouted[h] = True
            self.remediations[h].append(kind.value)
        elif kind is ActionKind.EXPEDITE_TASK:
            cents = REMEDIATION_COST
            self.surge_wait[h] /= 2.0
            self.expedited[h] = True
            self.remediations[h].append(kind.value)
        else:
            if len(self.queue) > 1:
                self.queue.pop(0)
                self.queue.insert(min(self.params.defer_positions, len(self.queue)), h)
            self._wait()
            self._settle()
            # the deferred task pays for the time it just spent waiting
            cents = self._charge_waiting(h)
        if not self.finished and self.steps >= self.params.max_steps_per_task * len(self.tasks):
            info.extend(self._truncate())
        self.outcomes.extend(info)
        self.total_cents += cents
        return StepOutcome(cents / 100.0, self.finished, info, cents, self.clock - start)

    def episode_log(self) -> EpisodeLog:
        return EpisodeLog(list(self.outcomes), self.total_cents / 100.0, self.clock)


def reset(tasks: Sequence[TaskSpec], params: ScenarioParams = ScenarioParams(), seed: int = 0) -> WarehouseState:
    if not tasks:
        raise EmptySlice("cannot start an episode without tasks")
    s = WarehouseState.__new__(WarehouseState)
    s.tasks = tuple(tasks)
    s.params = params
    s.speeds = params.worker_speeds()
    rng = stream(seed, "jitter")
    n = len(tasks)
    s.jitter = tuple(float(x) for x in rng.uniform(1 - params.jitter, 1 + params.jitter, n))
    s.clock = 0
    s.queue = []
    s.next_arrival = 0
    s.busy_until = [0] * params.n_workers
    s.assigned = [None] * params.n_workers
    s.surge_wait = [params.surge_wait_factor * t.obs.planned_minutes if t.truth_type == "OrderSurge" else 0.0 for t in tasks]
    s.rerouted = [False] * n
    s.expedited = [False] * n
    s.remediations = [[] for _ in range(n)]
    s.decisions = [0] * n
    s.late_charged = [False] * n
    s.wait_blocks = [0] * n
    s.outcomes = []
    s.inventory_levels = {}
    s.steps = 0
    s.total_cents = 0
    s.finished = False
    s._admit(0)
    s._settle()
    return s


def step(state: WarehouseState, action: ActionSpec) -> tuple[WarehouseState, StepOutcome]:
    """Pure variant of :meth:`WarehouseState.step`."""
    nxt = state.clone()
    out = nxt.step(action)
    return nxt, out


_ZERO_EMB = np.zeros((EMBED_BUCKETS, EMBED_DIM))


def observe(state: WarehouseState, emb: Optional[np.ndarray] = None) -> StateVector:
    task = state.head_task
    ctx = EncodingContext(
        equipment_flags=state.equipment_flags,
        queue_length=len(state.queue),
        arrivals_last_10min=state.arrivals_last_10min,
        minutes_to_deadline=task.deadline - state.clock,
        p99_planned=state.params.p99_planned,
    )
    return encode_state(task.obs, ctx, _ZERO_EMB if emb is None else emb)


def oracle_best_action(state: WarehouseState, horizon: int = 3) -> ActionSpec:
    """Exhaustive lookahead over all action sequences of length <= horizon.

    Rollouts reuse the episode's frozen noise, so the comparison is exact.
    Ties go to the sequence that comes first in action enumeration order.
    """
    if not state.queue or state.finished:
        raise EmptyQueue("oracle needs a pending decision")
    actions = enumerate_actions(state.n_workers)
    if len(actions) ** horizon > 100_000:
        raise StateTooLarge(f"{len(actions)}^{horizon} sequences exceed the 1e5 budget")

    def best(s: WarehouseState, depth: int) -> int:
        if depth == 0 or s.finished:
            return 0
        top = None
        for a in actions:
            c = s.clone()
            out = c.step(a)
            total = out.reward_cents + best(c, depth - 1)
            if top is None or total > top:
                top = total
        return top

    best_total, best_action = None, actions[0]
    for a in actions:
        c = state.clone()
        out = c.step(a)
        total = out.reward_cents + best(c, horizon - 1)
        if best_total is None or total > best_total:
            best_total, best_action = total, a
    return best_action


@dataclass(frozen=True)
class EnvObs:
    values: np.ndarray
    bucket: int
    mask: np.ndarray


class WarehouseEnv:
    """Adapter exposing one shift through the plain reset/step protocol used
    by the DQN trainer. Actions are indices into ``enumerate_actions``."""

    def __init__(self, tasks: Sequence[TaskSpec], params: ScenarioParams, seed: int):
        self.tasks = list(tasks)
        self.params = params
        self.seed = seed
        self.actions = enumerate_actions(params.n_workers)
        self.state: Optional[WarehouseState] = None

    def _obs(self) -> Optional[EnvObs]:
        if self.state.done:
            return None
        sv = observe(self.state)
        return EnvObs(sv.values, sv.bucket, self.state.legal_mask())

    def reset(self) -> Optional[EnvObs]:
        self.state = reset(self.tasks, self.params, self.seed)
        return self._obs()

    def step(self, action: int) -> tuple[Optional[EnvObs], float, bool, int]:
        out = self.state.step(self.actions[action])
        return self._obs(), out.reward, out.done, out.elapsed
