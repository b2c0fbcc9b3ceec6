"""Transaction coordination: planning, arrangement, execution, recovery.

One TaskManager owns many transactions.  Each transaction is driven entirely
on the event loop: quotes are collected per arrangement round and processed
in candidate order (so traces are deterministic on any transport), nodes
execute in topological order with per-node watchdogs, and failures walk the
recovery ladder: substitute the failed service, re-plan, or compensate and
abort.  A silent failure (no Failed before the watchdog) triggers the
cognitive fallback: a recognition service reports the actual situation, and
recovery continues from there.

Every envelope sent or received lands in the transaction's append-only
history; subscribers (the HTTP event stream) see one JSON-able object per
entry, including internal status changes.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum

from .. import entish, planner
from ..entish import AttributeAtom, ObjectRef, RelationAtom, TRUE
from ..frp import machine, messages
from ..ontology import (
    AddRelation,
    MapDelta,
    RelationInstance,
    RemoveRelation,
    SetAttribute,
    WorldMap,
)
from ..registry import ServiceRecord
from ..repository import VersionConflict
from ..sched import EventLoop


class TaskmanError(Exception):
    pass


class UnknownTransaction(TaskmanError):
    pass


class AlreadyTerminal(TaskmanError):
    pass


class TransactionStatus(str, Enum):
    PLANNING = "Planning"
    ARRANGING = "Arranging"
    EXECUTING = "Executing"
    RECOVERING = "Recovering"
    COMPENSATING = "Compensating"
    COMPLETED = "Completed"
    ABORTED = "Aborted"
    CANCELLED = "Cancelled"


TERMINAL = {TransactionStatus.COMPLETED, TransactionStatus.ABORTED, TransactionStatus.CANCELLED}


@dataclass(frozen=True)
class SelectionPolicy:
    price_weight: float = 1.0
    time_weight: float = 0.0

    def __post_init__(self):
        if self.price_weight < 0 or self.time_weight < 0:
            raise TaskmanError("selection weights must be nonnegative")
        if self.price_weight == 0 and self.time_weight == 0:
            raise TaskmanError("at least one selection weight must be positive")


@dataclass(frozen=True)
class RecoveryPolicy:
    max_replans: int = 1
    max_substitutions_per_node: int = 2
    cognitive_fallback: bool = True

    def __post_init__(self):
        if self.max_replans < 0 or self.max_substitutions_per_node < 0:
            raise TaskmanError("recovery counts must be nonnegative")


@dataclass
class TaskmanConfig:
    quote_timeout: float = 5.0
    heartbeat_timeout: float = 10.0
    plan_bound: int = 3
    policy: SelectionPolicy = field(default_factory=SelectionPolicy)
    recovery: RecoveryPolicy = field(default_factory=RecoveryPolicy)
    eager_arrangement: bool = True


def select_winner(quotes: list, policy: SelectionPolicy):
    """argmin of priceWeight*price + timeWeight*maxTime; ties go to lower id."""
    if not quotes:
        return None
    return min(
        quotes,
        key=lambda pair: (
            policy.price_weight * pair[1].price + policy.time_weight * pair[1].max_time,
            pair[0].service_id,
        ),
    )[0]


def situation_to_delta(situation, world: WorldMap) -> tuple[MapDelta, object]:
    """Translate a ground result situation into a delta plus its prior situation.

    `=`-comparisons become attribute writes; relation atoms supersede any
    relation with the same name and all-but-last arguments.  The prior
    situation (old values and displaced relations) is the compensation target.
    """
    entries = []
    prior_parts = []
    for atom in entish.atoms(situation):
        if isinstance(atom, AttributeAtom):
            if atom.comparator != "=":
                continue
            obj = world.object(atom.subject.object_id)
            prior = obj.get_attribute(atom.path)
            if prior == atom.value:
                continue
            entries.append(SetAttribute(atom.subject.object_id, atom.path, atom.value, prior))
            if prior is not None:
                prior_parts.append(AttributeAtom(atom.subject, atom.path, "=", prior))
        elif isinstance(atom, RelationAtom):
            if entish.variables(atom):
                continue
            args = tuple(t.object_id for t in atom.terms)
            rel = RelationInstance(atom.relation, args)
            if world.has_relation(rel):
                continue
            for existing in world.relations():
                if (
                    existing.name == rel.name
                    and len(existing.args) == len(rel.args)
                    and existing.args[:-1] == rel.args[:-1]
                    and existing.args[-1] != rel.args[-1]
                ):
                    entries.append(RemoveRelation(existing))
                    prior_parts.append(
                        RelationAtom(existing.name, tuple(ObjectRef(a) for a in existing.args))
                    )
            entries.append(AddRelation(rel))
    return MapDelta(tuple(entries)), entish.conjoin(prior_parts)


def _body_summary(body) -> str:
    if isinstance(body, messages.Arrange):
        return f"pre={entish.to_text(body.precondition)} eff={entish.to_text(body.effect)}"
    if isinstance(body, messages.Terms):
        return f"price={body.price} maxTime={body.max_time}"
    if isinstance(body, messages.Refuse):
        return body.reason
    if isinstance(body, messages.Execute):
        return f"pre={entish.to_text(body.precondition)}"
    if isinstance(body, messages.Completed):
        return entish.to_text(body.result_situation)
    if isinstance(body, messages.Failed):
        text = entish.to_text(body.failure_description) if body.failure_description else ""
        return f"{body.reason}: {text}".strip(": ")
    if isinstance(body, messages.Compensate):
        return entish.to_text(body.target_situation)
    if isinstance(body, messages.Compensated):
        return entish.to_text(body.result_situation)
    return ""


@dataclass
class HistoryEntry:
    seq: int
    timestamp: float
    direction: str  # sent | received | internal
    message_type: str
    session_id: str
    body_summary: str
    peer: str = ""
    envelope: object | None = None

    def to_doc(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "direction": self.direction,
            "messageType": self.message_type,
            "sessionId": self.session_id,
            "bodySummary": self.body_summary,
        }


@dataclass
class _SessionCtx:
    session: machine.Session
    node_id: str
    record: ServiceRecord
    peer: str


@dataclass
class _NodeRuntime:
    node: planner.PlanNode
    status: str = "pending"  # pending|arranging|arranged|executing|done|failed|stopped
    session_id: str | None = None
    record: ServiceRecord | None = None
    quoted_max_time: float = 0.0
    precondition_override: object | None = None
    excluded: set = field(default_factory=set)
    substitutions: int = 0
    prior_situation: object | None = None
    watchdog: object | None = None
    cognitive: bool = False


@dataclass
class _Round:
    purpose: str  # node | cognitive
    node_id: str
    candidates: list
    session_order: list = field(default_factory=list)
    replies: dict = field(default_factory=dict)  # sid -> envelope
    answered: set = field(default_factory=set)
    deadline: object | None = None
    closed: bool = False


class Transaction:
    def __init__(self, txn_id: str, task: planner.Task):
        self.id = txn_id
        self.task = task
        self.status = TransactionStatus.PLANNING
        self.reason = ""
        self.plan: planner.AbstractPlan | None = None
        self.nodes: dict[str, _NodeRuntime] = {}
        self.order: list[str] = []
        self.sessions: dict[str, _SessionCtx] = {}
        self.session_sequence: list[str] = []
        self.history: list[HistoryEntry] = []
        self.round: _Round | None = None
        self.replans = 0
        self.cancel_requested = False
        self.completing_version: int | None = None
        self.final_after_compensation: TransactionStatus | None = None
        self.pending_compensations: set = set()
        self.compensation_queue: list[str] = []
        self.subscribers: list = []

    def terminal(self) -> bool:
        return self.status in TERMINAL


class TaskManager:
    def __init__(self, loop: EventLoop, transport, registry, repository,
                 config: TaskmanConfig | None = None, address: str = "tm",
                 trace=None):
        self.loop = loop
        self.transport = transport
        self.registry = registry
        self.repository = repository
        self.config = config or TaskmanConfig()
        self.address = address
        self.trace = trace  # callable(HistoryEntry) for scenario logs
        self.transactions: dict[str, Transaction] = {}
        self._lock = threading.RLock()
        self._txn_counter = itertools.count(1)
        self._session_counter = itertools.count(1)
        self._mid_counter = itertools.count(1)
        transport.register(address, self.on_envelope)

    # --- public, thread-safe API -----------------------------------------------

    def submit_task(self, precondition_text: str | None, effect_text: str) -> str:
        """Create a transaction; planning and arrangement proceed on the loop."""
        precondition = entish.parse(precondition_text) if precondition_text else None
        effect = entish.parse(effect_text)
        task = planner.Task(precondition=precondition, effect=effect)
        with self._lock:
            txn = Transaction(f"t{next(self._txn_counter)}", task)
            self.transactions[txn.id] = txn
        self._status(txn, TransactionStatus.PLANNING)
        self.loop.post(self._start, txn)
        return txn.id

    def cancel(self, txn_id: str) -> None:
        txn = self._get(txn_id)
        with self._lock:
            if txn.terminal():
                raise AlreadyTerminal(txn_id)
            txn.cancel_requested = True
        self.loop.post(self._do_cancel, txn)

    def get_view(self, txn_id: str) -> dict:
        txn = self._get(txn_id)
        with self._lock:
            return {
                "transactionId": txn.id,
                "status": txn.status.value,
                "reason": txn.reason,
                "task": {
                    "precondition": entish.to_text(txn.task.precondition)
                    if txn.task.precondition is not None
                    else None,
                    "effect": entish.to_text(txn.task.effect),
                },
                "plan": txn.plan.to_doc() if txn.plan is not None else None,
                "participants": {
                    node_id: {
                        "serviceId": rt.record.service_id if rt.record else None,
                        "sessionId": rt.session_id,
                        "state": txn.sessions[rt.session_id].session.state.value
                        if rt.session_id in txn.sessions
                        else None,
                        "status": rt.status,
                    }
                    for node_id, rt in txn.nodes.items()
                },
                "completingVersion": txn.completing_version,
            }

    def list_views(self) -> list[dict]:
        with self._lock:
            ids = list(self.transactions)
        return [self.get_view(i) for i in ids]

    def subscribe_events(self, txn_id: str, from_seq: int = 0):
        """Past events after from_seq plus a live queue; call the closer when done."""
        import queue as _queue

        txn = self._get(txn_id)
        q: _queue.Queue = _queue.Queue()
        with self._lock:
            backlog = [e.to_doc() for e in txn.history if e.seq > from_seq]
            txn.subscribers.append(q)

        def close():
            with self._lock:
                if q in txn.subscribers:
                    txn.subscribers.remove(q)

        return backlog, q, close

    def history_of(self, txn_id: str) -> list[HistoryEntry]:
        txn = self._get(txn_id)
        with self._lock:
            return list(txn.history)

    def all_sessions_ended(self, txn_id: str) -> bool:
        txn = self._get(txn_id)
        with self._lock:
            return all(ctx.session.terminal for ctx in txn.sessions.values())

    def _get(self, txn_id: str) -> Transaction:
        with self._lock:
            if txn_id not in self.transactions:
                raise UnknownTransaction(txn_id)
            return self.transactions[txn_id]

    # --- history and events ---------------------------------------------------------

    def _record(self, txn: Transaction, direction: str, envelope=None,
                message_type: str = "", session_id: str = "", summary: str = "",
                peer: str = "") -> None:
        with self._lock:
            entry = HistoryEntry(
                seq=len(txn.history) + 1,
                timestamp=self.loop.now(),
                direction=direction,
                message_type=envelope.header.message_type.value if envelope else message_type,
                session_id=envelope.header.session_id if envelope else session_id,
                body_summary=_body_summary(envelope.body) if envelope else summary,
                peer=peer,
                envelope=envelope,
            )
            txn.history.append(entry)
            subscribers = list(txn.subscribers)
        if self.trace is not None and envelope is not None:
            self.trace(txn.id, entry)
        doc = entry.to_doc()
        for q in subscribers:
            q.put(doc)

    def _status(self, txn: Transaction, status: TransactionStatus, reason: str = "") -> None:
        with self._lock:
            txn.status = status
            if reason:
                txn.reason = reason
        self._record(
            txn,
            "internal",
            message_type="StatusChanged",
            summary=status.value + (f": {reason}" if reason else ""),
        )

    # --- messaging -----------------------------------------------------------------

    def _new_session(self, txn: Transaction, node_id: str, record: ServiceRecord) -> _SessionCtx:
        sid = f"{txn.id}-s{next(self._session_counter)}"
        ctx = _SessionCtx(
            session=machine.Session(machine.COORDINATOR, sid),
            node_id=node_id,
            record=record,
            peer=record.manager_address,
        )
        with self._lock:
            txn.sessions[sid] = ctx
            txn.session_sequence.append(sid)
        return ctx

    def _send(self, txn: Transaction, ctx: _SessionCtx, body) -> bool:
        envelope = messages.make_envelope(
            sender=self.address,
            recipient=ctx.peer,
            message_id=f"{self.address}:{next(self._mid_counter)}",
            session_id=ctx.session.session_id,
            body=body,
        )
        ctx.session.on_send(envelope)
        self._record(txn, "sent", envelope=envelope, peer=ctx.peer)
        try:
            self.transport.send(envelope)
            return True
        except Exception:
            return False

    def on_envelope(self, envelope) -> None:
        sid = envelope.header.session_id
        with self._lock:
            txn = None
            for candidate in self.transactions.values():
                if sid in candidate.sessions:
                    txn = candidate
                    break
        if txn is None:
            return
        ctx = txn.sessions[sid]
        if ctx.session.terminal:
            return  # stale traffic after End
        if envelope.header.message_id in ctx.session.seen_message_ids:
            return  # duplicate delivery is a no-op
        try:
            ctx.session.on_receive(envelope)
        except machine.ProtocolViolation:
            return
        body = envelope.body
        in_round = txn.round is not None and sid in txn.round.session_order and not txn.round.closed
        if in_round and isinstance(body, (messages.Terms, messages.Refuse)):
            txn.round.replies[sid] = envelope
            txn.round.answered.add(sid)
            if len(txn.round.answered) == len(txn.round.session_order):
                self._resolve_round(txn)
            return
        self._record(txn, "received", envelope=envelope, peer=envelope.header.sender)
        if isinstance(body, messages.Completed):
            self._on_completed(txn, ctx, body)
        elif isinstance(body, messages.Failed):
            self._on_failed(txn, ctx, body)
        elif isinstance(body, messages.Compensated):
            self._on_compensated(txn, ctx, body)

    # --- planning ---------------------------------------------------------------------

    @staticmethod
    def _situation_from_map(task: planner.Task, world: WorldMap):
        """Current relations of the goal's objects, as a planning precondition."""
        objects = set()
        for atom in entish.atoms(task.effect):
            if isinstance(atom, RelationAtom):
                objects.update(t.object_id for t in atom.terms if isinstance(t, ObjectRef))
            else:
                objects.add(atom.subject.object_id)
        parts = [
            RelationAtom(rel.name, tuple(ObjectRef(a) for a in rel.args))
            for rel in world.relations()
            if rel.args and rel.args[0] in objects
        ]
        return entish.conjoin(parts) if parts else None

    def _planning_task(self, txn: Transaction, world: WorldMap, prefer_map: bool) -> planner.Task:
        precondition = txn.task.precondition
        if prefer_map or precondition is None:
            derived = self._situation_from_map(txn.task, world)
            if derived is not None:
                precondition = derived
        return planner.Task(precondition=precondition, effect=txn.task.effect)

    def _start(self, txn: Transaction) -> None:
        if txn.terminal():
            return
        ontology, world, version = self.repository.get_snapshot()
        problems = entish.validate_formula(txn.task.effect, ontology, world)
        if txn.task.precondition is not None:
            problems += entish.validate_formula(txn.task.precondition, ontology, world)
        if problems:
            self._finish(txn, TransactionStatus.ABORTED, "MalformedFormula: " + "; ".join(problems))
            return
        if entish.find_bindings(txn.task.effect, world, ontology):
            txn.plan = planner.AbstractPlan((), (), 0.0, 0.0)
            txn.completing_version = version
            self._finish(txn, TransactionStatus.COMPLETED, "effect already holds")
            return
        available = self.registry.discover(None)
        plans = planner.plan(
            self._planning_task(txn, world, prefer_map=False),
            available,
            ontology,
            bound=self.config.plan_bound,
        )
        if not plans:
            self._finish(txn, TransactionStatus.ABORTED, "NoPlanFound")
            return
        self._adopt_plan(txn, plans[0])
        self._status(txn, TransactionStatus.ARRANGING)
        self._advance(txn)

    def _adopt_plan(self, txn: Transaction, plan_: planner.AbstractPlan) -> None:
        with self._lock:
            # Work already completed under an abandoned plan stays on the
            # books: if this transaction later aborts or is cancelled, those
            # nodes still get compensated.
            archived_nodes: dict[str, _NodeRuntime] = {}
            archived_order: list[str] = []
            for node_id in txn.order:
                rt = txn.nodes.get(node_id)
                if rt is not None and rt.status == "done" and not rt.cognitive:
                    archived_id = f"done{txn.replans}-{node_id}"
                    archived_nodes[archived_id] = rt
                    archived_order.append(archived_id)
            txn.plan = plan_
            txn.nodes = {
                **archived_nodes,
                **{n.node_id: _NodeRuntime(node=n) for n in plan_.nodes},
            }
            txn.order = archived_order + self._topological_order(plan_)

    @staticmethod
    def _topological_order(plan_: planner.AbstractPlan) -> list[str]:
        ids = [n.node_id for n in plan_.nodes]
        preds = {n: set() for n in ids}
        for e in plan_.edges:
            if e.producer in preds and e.consumer in preds:
                preds[e.consumer].add(e.producer)
        order = []
        remaining = set(ids)
        while remaining:
            ready = sorted(n for n in remaining if not (preds[n] & remaining))
            if not ready:
                order.extend(sorted(remaining))  # defensive: planner plans are acyclic
                break
            order.append(ready[0])
            remaining.remove(ready[0])
        return order

    # --- arrangement --------------------------------------------------------------------

    def _advance(self, txn: Transaction) -> None:
        """Arrange the next unarranged node, execute ready ones, or wrap up."""
        if txn.terminal():
            return
        if txn.cancel_requested:
            self._do_cancel(txn)
            return
        if txn.round is not None and not txn.round.closed:
            return  # a quote round is in flight
        if self.config.eager_arrangement:
            for node_id in txn.order:
                rt = txn.nodes[node_id]
                if rt.status == "pending":
                    self._begin_arrangement(txn, node_id)
                    return
        if txn.status == TransactionStatus.ARRANGING:
            self._status(txn, TransactionStatus.EXECUTING)
        self._launch_ready(txn)

    def _candidates(self, txn: Transaction, rt: _NodeRuntime) -> list[ServiceRecord]:
        records = self.registry.discover(None)
        return [
            r
            for r in records
            if r.service_type_name == rt.node.service_type_name and r.service_id not in rt.excluded
        ]

    def _begin_arrangement(self, txn: Transaction, node_id: str) -> None:
        rt = txn.nodes[node_id]
        candidates = self._candidates(txn, rt)
        if not candidates:
            self._status(txn, TransactionStatus.RECOVERING, "NoCandidates")
            self._recover_arrangement(txn, node_id)
            return
        rt.status = "arranging"
        precondition = rt.precondition_override or rt.node.bound_precondition()
        effect = rt.node.bound_effect()
        self._open_round(txn, _Round("node", node_id, candidates), precondition, effect)

    def _open_round(self, txn: Transaction, round_: _Round, precondition, effect) -> None:
        txn.round = round_
        for record in round_.candidates:
            ctx = self._new_session(txn, round_.node_id, record)
            round_.session_order.append(ctx.session.session_id)
            delivered = self._send(txn, ctx, messages.Arrange(precondition=precondition, effect=effect))
            if not delivered:
                round_.answered.add(ctx.session.session_id)
        round_.deadline = self.loop.call_later(self.config.quote_timeout, self._round_deadline, txn, round_)
        if len(round_.answered) == len(round_.session_order):
            self._resolve_round(txn)

    def _round_deadline(self, txn: Transaction, round_: _Round) -> None:
        if txn.round is round_ and not round_.closed:
            self._resolve_round(txn)

    def _resolve_round(self, txn: Transaction) -> None:
        round_ = txn.round
        if round_ is None or round_.closed:
            return
        round_.closed = True
        if round_.deadline is not None:
            round_.deadline.cancel()
        # Process buffered replies in candidate order: deterministic traces on
        # every transport.
        quotes = []
        for sid in round_.session_order:
            envelope = round_.replies.get(sid)
            if envelope is None:
                continue
            self._record(txn, "received", envelope=envelope, peer=envelope.header.sender)
            if isinstance(envelope.body, messages.Terms):
                quotes.append((txn.sessions[sid].record, envelope.body, sid))
        txn.round = None
        node_id = round_.node_id
        rt = txn.nodes.get(node_id)
        if txn.cancel_requested:
            for _, _, sid in quotes:
                self._send(txn, txn.sessions[sid], messages.Cancel())
            self._do_cancel(txn)
            return
        if not quotes:
            if round_.purpose == "cognitive":
                self._cognitive_failed(txn, node_id)
            else:
                self._status(txn, TransactionStatus.RECOVERING, "AllRefusedOrTimedOut")
                self._recover_arrangement(txn, node_id)
            return
        winner = select_winner([(record, terms) for record, terms, _ in quotes], self.config.policy)
        winner_sid = next(sid for record, _, sid in quotes if record is winner)
        winner_terms = next(terms for record, terms, _ in quotes if record is winner)
        self._send(txn, txn.sessions[winner_sid], messages.Accept())
        for record, _, sid in quotes:
            if sid != winner_sid:
                self._send(txn, txn.sessions[sid], messages.Cancel())
        if rt is not None:
            rt.session_id = winner_sid
            rt.record = winner
            rt.quoted_max_time = winner_terms.max_time
            rt.status = "arranged"
        if round_.purpose == "cognitive":
            self._execute_cognitive(txn, node_id)
        else:
            if txn.status == TransactionStatus.RECOVERING:
                self._status(txn, TransactionStatus.EXECUTING, "")
                self._execute_node(txn, node_id)
                return
            self._advance(txn)

    # --- execution ---------------------------------------------------------------------

    def _predecessors_done(self, txn: Transaction, node_id: str) -> bool:
        for e in txn.plan.edges:
            if e.consumer == node_id and e.producer in txn.nodes:
                if txn.nodes[e.producer].status != "done":
                    return False
        return True

    def _launch_ready(self, txn: Transaction) -> None:
        if txn.terminal() or txn.cancel_requested:
            return
        plan_nodes = [n for n in txn.order if not txn.nodes[n].cognitive]
        if all(txn.nodes[n].status == "done" for n in plan_nodes):
            self._complete(txn)
            return
        for node_id in plan_nodes:
            rt = txn.nodes[node_id]
            if rt.status == "pending" and not self.config.eager_arrangement:
                if self._predecessors_done(txn, node_id):
                    self._begin_arrangement(txn, node_id)
                    return
            if rt.status == "arranged" and self._predecessors_done(txn, node_id):
                self._execute_node(txn, node_id)

    def _ground_precondition(self, txn: Transaction, rt: _NodeRuntime):
        base = rt.precondition_override or rt.node.bound_precondition()
        if not entish.variables(base):
            return base
        ontology, world, _ = self.repository.get_snapshot()
        bindings = entish.find_bindings(base, world, ontology)
        if not bindings:
            return None
        return entish.substitute(base, bindings[0])

    def _execute_node(self, txn: Transaction, node_id: str) -> None:
        rt = txn.nodes[node_id]
        if rt.status != "arranged":
            return
        ground = self._ground_precondition(txn, rt)
        if ground is None:
            self._status(txn, TransactionStatus.RECOVERING, "precondition unsatisfied")
            self._recover_arrangement(txn, node_id)
            return
        rt.status = "executing"
        ctx = txn.sessions[rt.session_id]
        self._send(txn, ctx, messages.Execute(precondition=ground, inputs={}))
        deadline = rt.quoted_max_time + self.config.heartbeat_timeout
        rt.watchdog = self.loop.call_later(deadline, self._watchdog_fired, txn, node_id, rt.session_id)

    def _commit_situation(self, txn: Transaction, situation):
        """Commit a reported situation; returns the prior situation formula."""
        if situation is None:
            return None
        for _attempt in range(8):
            ontology, world, version = self.repository.get_snapshot()
            try:
                delta, prior = situation_to_delta(situation, world)
            except Exception:
                return None  # situations about unknown objects cannot be committed
            if not delta.entries:
                return prior
            try:
                self.repository.commit(delta, version)
                return prior
            except VersionConflict:
                continue
        return None

    def _on_completed(self, txn: Transaction, ctx: _SessionCtx, body: messages.Completed) -> None:
        rt = txn.nodes.get(ctx.node_id)
        if rt is None or rt.session_id != ctx.session.session_id:
            return
        if rt.status != "executing":
            return  # late result after a watchdog already recovered this node
        if rt.watchdog is not None:
            rt.watchdog.cancel()
        prior = self._commit_situation(txn, body.result_situation)
        if rt.cognitive:
            rt.status = "done"
            self._resume_after_recognition(txn, ctx.node_id, body.result_situation)
            return
        rt.status = "done"
        rt.prior_situation = prior
        if txn.cancel_requested:
            self._do_cancel(txn)
            return
        self._launch_ready(txn)

    def _complete(self, txn: Transaction) -> None:
        if txn.terminal():
            return
        ontology, world, version = self.repository.get_snapshot()
        if entish.find_bindings(txn.task.effect, world, ontology):
            txn.completing_version = version
            self._finish(txn, TransactionStatus.COMPLETED)
        else:
            # All nodes reported success yet the goal does not hold: re-plan.
            self._status(txn, TransactionStatus.RECOVERING, "goal not reached")
            self._replan_or_abort(txn)

    # --- failure handling -----------------------------------------------------------------

    def _on_failed(self, txn: Transaction, ctx: _SessionCtx, body: messages.Failed) -> None:
        rt = txn.nodes.get(ctx.node_id)
        if rt is None or rt.session_id != ctx.session.session_id:
            return
        if rt.status != "executing":
            return
        if rt.watchdog is not None:
            rt.watchdog.cancel()
        if rt.cognitive:
            self._cognitive_failed(txn, ctx.node_id)
            return
        rt.status = "failed"
        if rt.record is not None:
            rt.excluded.add(rt.record.service_id)
        situation = body.failure_description
        self._commit_situation(txn, situation)
        self._status(txn, TransactionStatus.RECOVERING, body.reason or "service failed")
        self._recover_execution(txn, ctx.node_id, situation)

    def _watchdog_fired(self, txn: Transaction, node_id: str, session_id: str) -> None:
        rt = txn.nodes.get(node_id)
        if rt is None or rt.session_id != session_id or txn.terminal():
            return
        if rt.status != "executing":
            return
        rt.status = "failed"
        if rt.record is not None:
            rt.excluded.add(rt.record.service_id)
        self._record(txn, "internal", message_type="Silence", session_id=session_id,
                     summary="no Completed/Failed before deadline")
        self._status(txn, TransactionStatus.RECOVERING, "participant silent")
        if self.config.recovery.cognitive_fallback:
            self._invoke_cognitive(txn, node_id)
        else:
            self._recover_execution(txn, node_id, None)

    def _recover_execution(self, txn: Transaction, node_id: str, situation) -> None:
        """Recovery ladder after an execution failure: substitute, re-plan, abort."""
        if txn.cancel_requested:
            self._do_cancel(txn)
            return
        rt = txn.nodes[node_id]
        if rt.substitutions < self.config.recovery.max_substitutions_per_node:
            candidates = self._candidates(txn, rt)
            if candidates:
                rt.substitutions += 1
                if situation is not None:
                    rt.precondition_override = situation
                rt.status = "arranging"
                self._open_round(
                    txn,
                    _Round("node", node_id, candidates),
                    rt.precondition_override or rt.node.bound_precondition(),
                    rt.node.bound_effect(),
                )
                return
        self._replan_or_abort(txn)

    def _recover_arrangement(self, txn: Transaction, node_id: str) -> None:
        # Arrangement failures re-plan directly: arranging again with the same
        # candidate pool would only repeat the refusals.
        self._replan_or_abort(txn)

    def _replan_or_abort(self, txn: Transaction) -> None:
        if txn.cancel_requested:
            self._do_cancel(txn)
            return
        if txn.replans >= self.config.recovery.max_replans:
            self._begin_compensation(txn, TransactionStatus.ABORTED, "RecoveryExhausted")
            return
        txn.replans += 1
        # Release arranged-but-unexecuted participants of the abandoned plan.
        for rt in txn.nodes.values():
            if rt.status == "arranged" and rt.session_id is not None:
                ctx = txn.sessions[rt.session_id]
                if ctx.session.state == machine.State.ARRANGED:
                    self._send(txn, ctx, messages.Cancel())
        ontology, world, _version = self.repository.get_snapshot()
        if entish.find_bindings(txn.task.effect, world, ontology):
            self._complete(txn)
            return
        available = self.registry.discover(None)
        # Re-plans start from the live situation: the stated precondition may
        # no longer hold after partial execution.
        plans = planner.plan(
            self._planning_task(txn, world, prefer_map=True),
            available,
            ontology,
            bound=self.config.plan_bound,
        )
        if not plans:
            self._begin_compensation(txn, TransactionStatus.ABORTED, "NoPlanFound")
            return
        self._adopt_plan(txn, plans[0])
        self._status(txn, TransactionStatus.ARRANGING, f"replan {txn.replans}")
        self._advance(txn)

    # --- cognitive fallback ------------------------------------------------------------------

    def _invoke_cognitive(self, txn: Transaction, failed_node_id: str) -> None:
        records = [r for r in self.registry.discover(None) if r.kind == "cognitive"]
        if not records:
            self._recover_execution(txn, failed_node_id, None)
            return
        cog_id = f"cog-{failed_node_id}-{txn.nodes[failed_node_id].substitutions}"
        rt = _NodeRuntime(node=txn.nodes[failed_node_id].node, cognitive=True)
        rt.status = "arranging"
        rt.precondition_override = TRUE
        rt.recover_target = failed_node_id  # type: ignore[attr-defined]
        with self._lock:
            txn.nodes[cog_id] = rt
        query = txn.nodes[failed_node_id].node.bound_effect()
        self._open_round(txn, _Round("cognitive", cog_id, records), TRUE, query)

    def _execute_cognitive(self, txn: Transaction, cog_id: str) -> None:
        rt = txn.nodes[cog_id]
        rt.status = "executing"
        ctx = txn.sessions[rt.session_id]
        self._send(txn, ctx, messages.Execute(precondition=TRUE, inputs={}))
        deadline = rt.quoted_max_time + self.config.heartbeat_timeout
        rt.watchdog = self.loop.call_later(deadline, self._cognitive_watchdog, txn, cog_id)

    def _cognitive_watchdog(self, txn: Transaction, cog_id: str) -> None:
        rt = txn.nodes.get(cog_id)
        if rt is None or rt.status != "executing" or txn.terminal():
            return
        self._cognitive_failed(txn, cog_id)

    def _cognitive_failed(self, txn: Transaction, cog_id: str) -> None:
        rt = txn.nodes.get(cog_id)
        target = getattr(rt, "recover_target", None) if rt is not None else None
        if rt is not None:
            rt.status = "failed"
        if target is not None:
            self._recover_execution(txn, target, None)
        else:
            self._replan_or_abort(txn)

    def _resume_after_recognition(self, txn: Transaction, cog_id: str, situation) -> None:
        target = getattr(txn.nodes[cog_id], "recover_target", None)
        if target is None:
            return
        self._recover_execution(txn, target, situation)

    # --- cancellation and compensation -----------------------------------------------------------

    def _do_cancel(self, txn: Transaction) -> None:
        if txn.terminal():
            return
        if txn.round is not None and not txn.round.closed:
            return  # the open round resolves first, then lands back here
        for sid in txn.session_sequence:
            ctx = txn.sessions[sid]
            if ctx.session.state == machine.State.QUOTED:
                self._send(txn, ctx, messages.Cancel())
            elif ctx.session.state == machine.State.ARRANGED:
                self._send(txn, ctx, messages.Cancel())
            elif ctx.session.state == machine.State.EXECUTING:
                self._send(txn, ctx, messages.Stop())
                rt = txn.nodes.get(ctx.node_id)
                if rt is not None and rt.status == "executing":
                    rt.status = "stopped"
                    if rt.watchdog is not None:
                        rt.watchdog.cancel()
        self._begin_compensation(txn, TransactionStatus.CANCELLED, "cancelled by client")

    def _begin_compensation(self, txn: Transaction, final: TransactionStatus, reason: str = "") -> None:
        if txn.terminal():
            return
        txn.final_after_compensation = final
        if reason:
            txn.reason = reason
        completed = [
            node_id
            for node_id in reversed(txn.order)
            if node_id in txn.nodes
            and not txn.nodes[node_id].cognitive
            and txn.nodes[node_id].status == "done"
            and txn.nodes[node_id].prior_situation is not None
            and txn.nodes[node_id].session_id is not None
            and txn.sessions[txn.nodes[node_id].session_id].session.state == machine.State.COMPLETED
        ]
        targets = [
            node_id
            for node_id in completed
            if entish.atoms(txn.nodes[node_id].prior_situation)
        ]
        if not targets:
            self._finish(txn, final, reason)
            return
        self._status(txn, TransactionStatus.COMPENSATING, reason)
        txn.compensation_queue = targets
        txn.pending_compensations = set()
        self._next_compensation(txn)

    def _next_compensation(self, txn: Transaction) -> None:
        if not txn.compensation_queue:
            self._finish(txn, txn.final_after_compensation or TransactionStatus.ABORTED, txn.reason)
            return
        node_id = txn.compensation_queue.pop(0)
        rt = txn.nodes[node_id]
        ctx = txn.sessions[rt.session_id]
        txn.pending_compensations.add(rt.session_id)
        self._send(txn, ctx, messages.Compensate(target_situation=rt.prior_situation))
        deadline = (rt.quoted_max_time or 30.0) + self.config.heartbeat_timeout
        self.loop.call_later(deadline, self._compensation_timeout, txn, rt.session_id)

    def _compensation_timeout(self, txn: Transaction, session_id: str) -> None:
        if session_id in txn.pending_compensations and not txn.terminal():
            txn.pending_compensations.discard(session_id)
            self._next_compensation(txn)

    def _on_compensated(self, txn: Transaction, ctx: _SessionCtx, body: messages.Compensated) -> None:
        if ctx.session.session_id not in txn.pending_compensations:
            return
        txn.pending_compensations.discard(ctx.session.session_id)
        self._commit_situation(txn, body.result_situation)
        self._next_compensation(txn)

    # --- completion ------------------------------------------------------------------------------

    def _finish(self, txn: Transaction, status: TransactionStatus, reason: str = "") -> None:
        if txn.terminal():
            return
        with self._lock:
            txn.reason = reason
        for rt in txn.nodes.values():
            if rt.watchdog is not None:
                rt.watchdog.cancel()
        for sid in txn.session_sequence:
            ctx = txn.sessions[sid]
            if not ctx.session.terminal and ctx.session.state != machine.State.IDLE:
                self._send(txn, ctx, messages.End())
        self._status(txn, status, reason)
