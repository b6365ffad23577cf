"""Frontend: single-queue dispatch, coding-group assembly and reconstruction.

The frontend is clock-agnostic. Every entry point takes an optional ``now``
(seconds, monotonic); real-time callers omit it, the discrete-event driver
passes virtual time. All state is guarded by one lock, so the object can be
shared by worker threads, a timer thread and the intake path.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .. import coder
from ..coder import CoefficientMatrix
from ..tensor import DTYPE, ShapeError
from .config import ServingConfig

log = logging.getLogger(__name__)

DEPLOYED = "deployed"
BACKUP = "backup"


def parity_role(row):
    return f"parity{row}"


class Mode(str, enum.Enum):
    PARM = "parm"
    EQUAL_RESOURCES = "equal_resources"
    DEFAULT_ONLY = "default_only"
    APPROX_BACKUP = "approx_backup"


class Slot(enum.Enum):
    EMPTY = "empty"
    ARRIVED = "arrived"
    RECONSTRUCTED = "reconstructed"
    DEFAULT = "default"
    PADDED = "padded"


class ResponseKind(str, enum.Enum):
    EXACT = "exact"
    RECONSTRUCTED = "reconstructed"
    DEFAULT = "default"


@dataclass
class QueryEnvelope:
    query_id: int
    group_id: int
    position: int
    parity: bool
    payload: np.ndarray
    deadline: float

    @property
    def row(self):
        """Parity row for parity envelopes (stored in ``position``)."""
        return self.position


@dataclass
class Response:
    query_id: int
    output: np.ndarray
    kind: ResponseKind
    submitted_at: float
    responded_at: float

    @property
    def latency_ms(self):
        return (self.responded_at - self.submitted_at) * 1000.0

    @property
    def approximate(self):
        return self.kind is not ResponseKind.EXACT


@dataclass
class _Query:
    query_id: int
    submitted_at: float
    deadline: float
    group: CodingGroupState | None = None
    position: int = 0
    answered: bool = False


@dataclass
class CodingGroupState:
    group_id: int
    k: int
    r: int
    created_at: float
    query_ids: list = field(default_factory=list)
    payloads: list = field(default_factory=list)
    slots: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    parity_outputs: dict = field(default_factory=dict)
    sealed: bool = False
    retired: bool = False
    decoded_count: int = 0

    def positions(self, *states):
        return [i for i, s in enumerate(self.slots) if s in states]


class Frontend:
    """Query intake, role-separated pull queues and the coding-group table.

    ``mode`` selects the serving policy:

    * ``parm``: originals plus encoded parity queries, decoding on unavailability,
      default prediction when a slot can neither arrive nor be rebuilt by its deadline.
    * ``equal_resources``: originals only, no deadlines.
    * ``default_only``: originals only, default prediction at the deadline.
    * ``approx_backup``: every query also goes to the backup queue; first answer wins.
    """

    def __init__(self, config: ServingConfig, input_shape, n_outputs, mode=Mode.PARM,
                 default_prediction=None, clock=time.monotonic, on_response=None):
        self.config = config
        self.mode = Mode(mode)
        self.input_shape = tuple(np.atleast_1d(input_shape).tolist())
        self.n_outputs = int(n_outputs)
        self.coeffs = CoefficientMatrix(config.k, config.r)
        if default_prediction is None:
            default_prediction = np.zeros(self.n_outputs, dtype=DTYPE)
        self.default_prediction = np.asarray(default_prediction, dtype=DTYPE)
        self.clock = clock
        self.on_response = on_response

        self._lock = threading.RLock()
        self._ready = threading.Condition(self._lock)
        self._ids = itertools.count(1)
        self._group_ids = itertools.count(1)
        roles = [DEPLOYED]
        if self.mode is Mode.PARM:
            roles += [parity_role(j) for j in range(config.r)]
        if self.mode is Mode.APPROX_BACKUP:
            roles.append(BACKUP)
        self._queues = {role: deque() for role in roles}
        self._queries: dict[int, _Query] = {}
        # envelope id -> (query or group, position, parity flag, role)
        self._envelopes: dict[int, tuple] = {}
        self._answered_envelopes: set[int] = set()
        self._open_group: CodingGroupState | None = None
        self._timers: list[tuple[float, int, str, int]] = []
        self._timer_seq = itertools.count()
        self._closed = False
        self.stats = Counter()

    @property
    def coding(self):
        return self.mode is Mode.PARM

    @property
    def uses_deadlines(self):
        return self.mode in (Mode.PARM, Mode.DEFAULT_ONLY)

    def _now(self, now):
        return self.clock() if now is None else now

    def _push_timer(self, when, kind, ident):
        heapq.heappush(self._timers, (when, next(self._timer_seq), kind, ident))

    def _enqueue(self, role, env):
        self._queues[role].append(env)
        self._ready.notify_all()

    # intake

    def submit(self, payload, now=None):
        """Accept a query, put it on the dispatch queue and into the open coding group."""
        payload = np.asarray(payload, dtype=DTYPE)
        if payload.shape != self.input_shape:
            raise ShapeError(f"query shape {payload.shape} does not match model input {self.input_shape}")
        with self._lock:
            if self._closed:
                raise RuntimeError("frontend is shut down")
            now = self._now(now)
            qid = next(self._ids)
            deadline = now + self.config.slo_ms / 1000.0
            q = _Query(qid, now, deadline)
            self._queries[qid] = q
            self.stats["submitted"] += 1
            env = QueryEnvelope(qid, 0, 0, False, payload, deadline)
            if self.coding:
                group = self._open_group
                if group is None:
                    group = self._open_group = CodingGroupState(
                        next(self._group_ids), self.config.k, self.config.r, now)
                    self._push_timer(now + self.config.group_timeout / 1000.0, "seal", group.group_id)
                q.group, q.position = group, len(group.query_ids)
                env.group_id, env.position = group.group_id, q.position
                group.query_ids.append(qid)
                group.payloads.append(payload)
                group.slots.append(Slot.EMPTY)
                group.outputs.append(None)
            # originals are dispatched before any encoding happens
            self._envelopes[qid] = (q, q.position, False, DEPLOYED)
            self._enqueue(DEPLOYED, env)
            if self.mode is Mode.APPROX_BACKUP:
                bid = next(self._ids)
                self._envelopes[bid] = (q, 0, False, BACKUP)
                self._enqueue(BACKUP, QueryEnvelope(bid, 0, 0, False, payload, deadline))
            if self.coding and len(self._open_group.query_ids) == self.config.k:
                self._seal(self._open_group, now)
            if self.uses_deadlines:
                self._push_timer(deadline, "deadline", qid)
            return qid

    def _seal(self, group, now):
        """Close a coding group, padding missing positions with zero queries, and emit its parity queries."""
        padded = self.config.k - len(group.query_ids)
        if padded:
            self.stats["padded_groups"] += 1
            zero = np.zeros(self.input_shape, dtype=DTYPE)
            for _ in range(padded):
                group.query_ids.append(None)
                group.payloads.append(zero)
                group.slots.append(Slot.PADDED)
                group.outputs.append(np.zeros(self.n_outputs, dtype=DTYPE))
        group.sealed = True
        self._open_group = None
        parity = coder.encode_sum(group.payloads)
        deadline = min(self._queries[q].deadline for q in group.query_ids if q is not None)
        for row in range(self.config.r):
            pid = next(self._ids)
            self._envelopes[pid] = (group, row, True, parity_role(row))
            self._enqueue(parity_role(row), QueryEnvelope(pid, group.group_id, row, True, parity, deadline))
            self.stats["parity_generated"] += 1

    # dispatch

    def pull(self, role=DEPLOYED, block=True, timeout=None):
        """Oldest pending envelope of ``role``'s queue.

        Blocks while the queue is empty unless ``block`` is false. Returns ``None``
        on timeout or once the frontend is shut down.
        """
        with self._lock:
            queue = self._queues[role]
            if block:
                deadline = None if timeout is None else time.monotonic() + timeout
                while not queue and not self._closed:
                    remaining = None if deadline is None else deadline - time.monotonic()
                    if remaining is not None and remaining <= 0:
                        return None
                    self._ready.wait(remaining)
            if self._closed or not queue:
                return None
            return queue.popleft()

    def pending(self, role=DEPLOYED):
        with self._lock:
            return len(self._queues[role])

    def shutdown(self):
        with self._lock:
            self._closed = True
            self._ready.notify_all()

    # results

    def _respond(self, q, output, kind, now):
        q.answered = True
        resp = Response(q.query_id, np.asarray(output, dtype=DTYPE), kind, q.submitted_at, now)
        self.stats[kind.value] += 1
        if self.on_response is not None:
            self.on_response(resp)
        return resp

    def on_result(self, envelope_id, output, now=None):
        """Handle a worker's output. Returns the client responses it produced."""
        with self._lock:
            now = self._now(now)
            entry = self._envelopes.get(envelope_id)
            if entry is None:
                log.warning("dropping result for unknown envelope %d", envelope_id)
                self.stats["unknown_dropped"] += 1
                return []
            if envelope_id in self._answered_envelopes:
                self.stats["duplicate_dropped"] += 1
                return []
            self._answered_envelopes.add(envelope_id)
            owner, position, is_parity, role = entry
            output = np.asarray(output, dtype=DTYPE)
            if output.shape != (self.n_outputs,):
                log.warning("dropping result %d with shape %s", envelope_id, output.shape)
                self.stats["malformed_dropped"] += 1
                return []

            if is_parity:
                group = owner
                if group.retired:
                    self.stats["parity_discarded"] += 1
                    return []
                group.parity_outputs[position] = output
                return self._maybe_reconstruct(group, now)

            q = owner
            if q.answered:
                self.stats["late_dropped"] += 1
                return []
            kind = ResponseKind.RECONSTRUCTED if role == BACKUP else ResponseKind.EXACT
            responses = [self._respond(q, output, kind, now)]
            if q.group is not None:
                q.group.slots[q.position] = Slot.ARRIVED
                q.group.outputs[q.position] = output
                responses += self._maybe_reconstruct(q.group, now)
            return responses

    def maybe_reconstruct(self, group, now=None):
        with self._lock:
            return self._maybe_reconstruct(group, self._now(now))

    def _retire(self, group):
        if not group.retired:
            if group.parity_outputs:
                self.stats["parity_discarded"] += len(group.parity_outputs)
            group.retired = True
            group.parity_outputs.clear()

    def _maybe_reconstruct(self, group, now):
        if group.retired or not group.sealed:
            return []
        empty = group.positions(Slot.EMPTY)
        if not empty:
            self._retire(group)
            return []
        # defaulted slots hold no usable value, so they count as unknowns too
        unknown = group.positions(Slot.EMPTY, Slot.DEFAULT)
        rows = sorted(group.parity_outputs)
        if len(unknown) > len(rows):
            return []
        expired = all(self._queries[group.query_ids[i]].deadline <= now for i in empty)
        if not (self.config.eager_decode or expired):
            return []

        known = [(i, group.outputs[i]) for i in range(group.k) if i not in unknown]
        used = rows[:len(unknown)]
        if used == [0]:
            idx, recon = coder.decode_single(group.parity_outputs[0], known)
            rebuilt = [(idx, recon)]
        else:
            rebuilt = coder.decode_multi([(j, group.parity_outputs[j]) for j in used], known, self.coeffs)
        group.decoded_count += 1
        self.stats["decode_calls"] += 1

        responses = []
        for idx, recon in rebuilt:
            if group.slots[idx] is Slot.EMPTY:
                group.slots[idx] = Slot.RECONSTRUCTED
                group.outputs[idx] = recon
                responses.append(self._respond(self._queries[group.query_ids[idx]], recon,
                                               ResponseKind.RECONSTRUCTED, now))
        self._retire(group)
        return responses

    # timers

    def next_timer(self):
        """Earliest time at which :meth:`poll` has work to do, or ``None``."""
        with self._lock:
            return self._timers[0][0] if self._timers else None

    def poll(self, now=None):
        """Seal timed-out groups and act on expired deadlines."""
        responses = []
        with self._lock:
            now = self._now(now)
            while self._timers and self._timers[0][0] <= now:
                _, _, kind, ident = heapq.heappop(self._timers)
                if kind == "seal":
                    group = self._open_group
                    if group is not None and group.group_id == ident:
                        self._seal(group, now)
                        responses += self._maybe_reconstruct(group, now)
                    continue
                q = self._queries[ident]
                if q.answered:
                    continue
                if q.group is not None:
                    responses += self._maybe_reconstruct(q.group, now)
                if not q.answered:
                    if q.group is not None:
                        q.group.slots[q.position] = Slot.DEFAULT
                    responses.append(self._respond(q, self.default_prediction, ResponseKind.DEFAULT, now))
                    if q.group is not None:
                        responses += self._maybe_reconstruct(q.group, now)
        return responses

    def unanswered(self):
        with self._lock:
            return [qid for qid, q in self._queries.items() if not q.answered]
