"""Discrete-event simulated environment hosting robot agents and their
Service Managers.

The world is generated from a repository snapshot: one sim entity per map
object, robots detected by the `Capabilities` annotation.  Robots are points
in continuous 3D moving at constant speed toward waypoints, with
instantaneous gripping inside `gripper_range`.  `step` integrates motion
piecewise-linearly, firing waypoint arrivals and scripted faults at their
exact times, so splitting dt never changes the outcome.

A Service Manager is the device-side protocol participant: it quotes on
Arrange, turns Execute into robot behaviors through a `RobotLink` (the only
surface between protocol code and the simulation), and reports Completed or
Failed with situation formulas.  A comm-lost robot's SM goes silent instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import entish
from .entish import AttributeAtom, ObjectRef, RelationAtom
from .frp import machine, messages
from .ontology import Ontology, RelationInstance, WorldMap
from .registry import ServiceRecord

GROUND_EPS = 1e-9
DEFAULT_OBSERVE_RANGE = 2.0


class SimError(Exception):
    pass


class InvalidWorld(SimError):
    pass


class OutOfGripperRange(SimError):
    pass


class ObjectMissing(SimError):
    pass


class UnknownObjectInQuery(SimError):
    pass


@dataclass
class SimEvent:
    time: float
    kind: str  # arrival | grip | release | fault | halt
    robot_id: str
    detail: dict = field(default_factory=dict)


@dataclass
class FaultSpec:
    kind: str  # driveFailure | commLoss
    target: str
    at_time: float | None = None
    region_center: tuple | None = None
    region_radius: float = 0.0
    fired: bool = False


@dataclass
class Waypoint:
    target: tuple
    stop_distance: float
    tag: str


@dataclass
class RobotAgent:
    object_id: str
    capabilities: list
    speed: float = 1.0
    gripper_range: float = 1.0
    position: tuple = (0.0, 0.0, 0.0)
    carried: str | None = None
    drive_ok: bool = True
    comm_ok: bool = True
    waypoint: Waypoint | None = None
    behavior: "Behavior | None" = None


def _dist(a: tuple, b: tuple) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _toward(origin: tuple, target: tuple, travel: float) -> tuple:
    total = _dist(origin, target)
    if total <= GROUND_EPS or travel >= total:
        return target
    f = travel / total
    return tuple(o + (t - o) * f for o, t in zip(origin, target))


class SimWorld:
    """Ground truth: object poses, relations, robots, and scripted faults."""

    def __init__(self, ontology: Ontology, snapshot: WorldMap, faults: list | None = None):
        self.ontology = ontology
        self.time = 0.0
        self.positions: dict[str, tuple | None] = {}
        self.relations: set[RelationInstance] = set()
        self.types: dict[str, str] = {}
        self.robots: dict[str, RobotAgent] = {}
        self.faults: list[FaultSpec] = list(faults or [])
        self.events: list[SimEvent] = []
        for obj_id in snapshot.ids():
            obj = snapshot.object(obj_id)
            self.types[obj_id] = obj.type_name
            x = obj.get_attribute(("PositionX",))
            if x is None:
                self.positions[obj_id] = None
            else:
                self.positions[obj_id] = (
                    float(x),
                    float(obj.get_attribute(("PositionY",)) or 0.0),
                    float(obj.get_attribute(("PositionZ",)) or 0.0),
                )
            caps = obj.get_attribute(("Capabilities",))
            if isinstance(caps, str) and caps.strip():
                self.robots[obj_id] = RobotAgent(
                    object_id=obj_id,
                    capabilities=[c.strip() for c in caps.split(",") if c.strip()],
                    position=self.positions[obj_id] or (0.0, 0.0, 0.0),
                )
        self.relations = set(snapshot.relations())

    # --- ground truth helpers --------------------------------------------------

    def has_object(self, object_id: str) -> bool:
        return object_id in self.positions

    def position_of(self, object_id: str) -> tuple:
        if object_id not in self.positions:
            raise ObjectMissing(object_id)
        robot = self.robots.get(object_id)
        if robot is not None:
            return robot.position
        carried_by = self.carrier_of(object_id)
        if carried_by is not None:
            return self.robots[carried_by].position
        pos = self.positions[object_id]
        if pos is None:
            raise ObjectMissing(f"{object_id} has no pose")
        return pos

    def carrier_of(self, object_id: str) -> str | None:
        for robot in self.robots.values():
            if robot.carried == object_id:
                return robot.object_id
        return None

    def on_relation_of(self, object_id: str) -> RelationInstance | None:
        for rel in self.relations:
            if rel.name == "isOn" and rel.args[0] == object_id:
                return rel
        return None

    def ground_situation(self, object_ids: list[str]):
        """Current situation of the named objects as a conjunction."""
        parts = []
        for obj_id in sorted(set(object_ids)):
            if obj_id not in self.positions:
                raise UnknownObjectInQuery(obj_id)
            rel = self.on_relation_of(obj_id)
            if rel is not None:
                parts.append(RelationAtom("isOn", (ObjectRef(rel.args[0]), ObjectRef(rel.args[1]))))
            pos = self.position_of(obj_id)
            for axis, value in zip("XYZ", pos):
                parts.append(AttributeAtom(ObjectRef(obj_id), (f"Position{axis}",), "=", round(value, 6)))
        return entish.conjoin(parts)

    def busy(self) -> bool:
        return any(r.behavior is not None for r in self.robots.values())

    def check_conservation(self) -> list[str]:
        problems = []
        carriers: dict[str, list[str]] = {}
        for robot in self.robots.values():
            if robot.carried is not None:
                carriers.setdefault(robot.carried, []).append(robot.object_id)
                if robot.carried not in self.positions:
                    problems.append(f"{robot.object_id} carries unknown {robot.carried}")
        for obj_id, held_by in carriers.items():
            if len(held_by) > 1:
                problems.append(f"{obj_id} carried by {held_by}")
        return problems

    # --- stepping ------------------------------------------------------------------

    def step(self, dt: float) -> list[SimEvent]:
        """Advance simulated time by dt, emitting events at their exact times."""
        if dt <= 0:
            raise SimError("dt must be positive")
        emitted: list[SimEvent] = []
        remaining = dt
        guard = 0
        while remaining > GROUND_EPS:
            guard += 1
            if guard > 10_000:
                raise SimError("runaway event cascade inside one step")
            horizon = remaining
            # Earliest waypoint arrival.
            for robot in self.robots.values():
                if robot.waypoint is None or not robot.drive_ok or robot.speed <= 0:
                    continue
                gap = _dist(robot.position, robot.waypoint.target) - robot.waypoint.stop_distance
                if gap <= GROUND_EPS:
                    horizon = 0.0
                    break
                horizon = min(horizon, gap / robot.speed)
            # Earliest fault trigger.
            for fault in self.faults:
                if fault.fired:
                    continue
                if fault.at_time is not None:
                    delta = fault.at_time - self.time
                    if delta <= GROUND_EPS:
                        horizon = 0.0
                    else:
                        horizon = min(horizon, delta)
                elif fault.region_center is not None:
                    robot = self.robots.get(fault.target)
                    if robot is None:
                        continue
                    crossing = self._region_crossing(robot, fault)
                    if crossing is not None:
                        if crossing <= GROUND_EPS:
                            horizon = 0.0
                        else:
                            horizon = min(horizon, crossing)
            horizon = max(horizon, 0.0)
            if horizon > 0:
                self._integrate(horizon)
                self.time += horizon
                remaining -= horizon
            emitted.extend(self._fire_due_events())
            if horizon == 0 and not self._anything_due():
                # Nothing due and nothing moved: consume the rest of the window.
                self._integrate(remaining)
                self.time += remaining
                remaining = 0.0
                emitted.extend(self._fire_due_events())
        self.events.extend(emitted)
        return emitted

    def _integrate(self, dt: float) -> None:
        for robot in self.robots.values():
            if robot.waypoint is None or not robot.drive_ok or robot.speed <= 0:
                continue
            gap = _dist(robot.position, robot.waypoint.target) - robot.waypoint.stop_distance
            if gap <= GROUND_EPS:
                continue
            robot.position = _toward(robot.position, robot.waypoint.target, min(robot.speed * dt, gap))

    def _anything_due(self) -> bool:
        for robot in self.robots.values():
            if robot.waypoint is not None and robot.drive_ok and robot.speed > 0:
                gap = _dist(robot.position, robot.waypoint.target) - robot.waypoint.stop_distance
                if gap <= GROUND_EPS:
                    return True
        for fault in self.faults:
            if fault.fired:
                continue
            if fault.at_time is not None and fault.at_time - self.time <= GROUND_EPS:
                return True
            if fault.region_center is not None:
                robot = self.robots.get(fault.target)
                if robot is not None and _dist(robot.position, fault.region_center) <= fault.region_radius:
                    return True
        return False

    def _region_crossing(self, robot: RobotAgent, fault: FaultSpec) -> float | None:
        if _dist(robot.position, fault.region_center) <= fault.region_radius:
            return 0.0
        if robot.waypoint is None or not robot.drive_ok or robot.speed <= 0:
            return None
        # Solve |p + v t - c|^2 = r^2 along the straight segment to the waypoint.
        target = robot.waypoint.target
        total = _dist(robot.position, target)
        if total <= GROUND_EPS:
            return None
        direction = tuple((t - p) / total for p, t in zip(robot.position, target))
        rel = tuple(p - c for p, c in zip(robot.position, fault.region_center))
        b = 2 * sum(d * r for d, r in zip(direction, rel))
        c = sum(r * r for r in rel) - fault.region_radius**2
        disc = b * b - 4 * c
        if disc < 0:
            return None
        root = (-b - math.sqrt(disc)) / 2
        if root < 0:
            return None
        gap = _dist(robot.position, target) - robot.waypoint.stop_distance
        if root > gap:
            return None  # stops before entering the region
        return root / robot.speed

    def _fire_due_events(self) -> list[SimEvent]:
        emitted: list[SimEvent] = []
        for fault in self.faults:
            if fault.fired:
                continue
            due = False
            if fault.at_time is not None and fault.at_time - self.time <= GROUND_EPS:
                due = True
            elif fault.region_center is not None:
                robot = self.robots.get(fault.target)
                due = robot is not None and _dist(robot.position, fault.region_center) <= fault.region_radius + GROUND_EPS
            if not due:
                continue
            fault.fired = True
            robot = self.robots.get(fault.target)
            if robot is None:
                continue
            if fault.kind == "driveFailure":
                robot.drive_ok = False
            elif fault.kind == "commLoss":
                robot.comm_ok = False
            event = SimEvent(self.time, "fault", robot.object_id, {"kind": fault.kind})
            emitted.append(event)
            if robot.behavior is not None:
                robot.behavior.on_fault(fault.kind)
        for robot in list(self.robots.values()):
            if robot.waypoint is None or not robot.drive_ok or robot.speed <= 0:
                continue
            gap = _dist(robot.position, robot.waypoint.target) - robot.waypoint.stop_distance
            if gap <= GROUND_EPS:
                tag = robot.waypoint.tag
                robot.waypoint = None
                event = SimEvent(self.time, "arrival", robot.object_id, {"tag": tag})
                emitted.append(event)
                if robot.behavior is not None:
                    robot.behavior.on_arrival(tag)
        return emitted

    # --- physical actions (behaviors only) --------------------------------------

    def grip(self, robot: RobotAgent, object_id: str) -> None:
        if object_id not in self.positions:
            raise ObjectMissing(object_id)
        if _dist(robot.position, self.position_of(object_id)) > robot.gripper_range + 1e-6:
            raise OutOfGripperRange(f"{object_id} beyond gripper range of {robot.object_id}")
        other = self.carrier_of(object_id)
        if other is not None and other != robot.object_id:
            raise SimError(f"{object_id} already carried by {other}")
        robot.carried = object_id
        self.relations = {
            r for r in self.relations if not (r.name == "isOn" and r.args[0] == object_id)
        }
        self.events.append(SimEvent(self.time, "grip", robot.object_id, {"object": object_id}))

    def release(self, robot: RobotAgent, on: str | None = None) -> None:
        if robot.carried is None:
            return
        object_id = robot.carried
        robot.carried = None
        if on is not None:
            self.positions[object_id] = self.position_of(on)
            self.relations.add(RelationInstance("isOn", (object_id, on)))
        else:
            self.positions[object_id] = robot.position
        self.events.append(
            SimEvent(self.time, "release", robot.object_id, {"object": object_id, "on": on})
        )


# --- behaviors ----------------------------------------------------------------------


@dataclass
class Outcome:
    status: str  # success | failed | stopped | silence
    situation: object | None = None  # Formula
    reason: str = ""


class Behavior:
    def on_arrival(self, tag: str) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def on_fault(self, kind: str) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def halt(self, *, intentional: bool) -> None:  # pragma: no cover - interface
        raise NotImplementedError


class TransferBehavior(Behavior):
    """approach -> grip -> carry -> place; drops the cargo where it is on failure."""

    def __init__(self, world: SimWorld, robot: RobotAgent, object_id: str,
                 destination, done):
        self.world = world
        self.robot = robot
        self.object_id = object_id
        self.destination = destination  # object id or coordinate tuple
        self.done = done
        self.finished = False
        robot.behavior = self
        if not world.has_object(object_id):
            self._finish(Outcome("failed", None, f"no such object {object_id}"))
            return
        if isinstance(destination, str) and not world.has_object(destination):
            self._finish(Outcome("failed", None, f"no such destination {destination}"))
            return
        if not robot.drive_ok:
            self._finish(Outcome("failed", world.ground_situation([object_id]), "drive failure"))
            return
        robot.waypoint = Waypoint(world.position_of(object_id), robot.gripper_range, "approach")

    def _dest_position(self) -> tuple:
        if isinstance(self.destination, str):
            return self.world.position_of(self.destination)
        return tuple(self.destination)

    def _finish(self, outcome: Outcome) -> None:
        if self.finished:
            return
        self.finished = True
        self.robot.behavior = None
        self.robot.waypoint = None
        self.done(outcome)

    def on_arrival(self, tag: str) -> None:
        if self.finished:
            return
        if tag == "approach":
            try:
                self.world.grip(self.robot, self.object_id)
                target = self._dest_position()
            except SimError as exc:
                self.world.release(self.robot, on=None)
                self._finish(Outcome("failed", None, str(exc)))
                return
            self.robot.waypoint = Waypoint(target, self.robot.gripper_range, "carry")
        elif tag == "carry":
            on = self.destination if isinstance(self.destination, str) else None
            self.world.release(self.robot, on=on)
            self._finish(Outcome("success", self.world.ground_situation([self.object_id])))

    def on_fault(self, kind: str) -> None:
        if self.finished:
            return
        if kind == "driveFailure":
            # Control and gripper still work: set the cargo down and report.
            self.world.release(self.robot, on=None)
            self._finish(
                Outcome("failed", self.world.ground_situation([self.object_id]), "drive failure")
            )
        elif kind == "commLoss":
            self.world.release(self.robot, on=None)
            self._finish(Outcome("silence", None, "communication lost"))

    def halt(self, *, intentional: bool) -> None:
        if self.finished:
            return
        self.world.release(self.robot, on=None)
        status = "stopped" if intentional else "failed"
        self._finish(Outcome(status, self.world.ground_situation([self.object_id]), "stopped"))


class RecognizeBehavior(Behavior):
    """Travel toward the queried objects, then report their ground situation."""

    def __init__(self, world: SimWorld, robot: RobotAgent, object_ids: list[str], done,
                 observe_range: float = DEFAULT_OBSERVE_RANGE):
        self.world = world
        self.robot = robot
        self.object_ids = sorted(set(object_ids))
        self.done = done
        self.finished = False
        robot.behavior = self
        for obj_id in self.object_ids:
            if not world.has_object(obj_id):
                self._finish(Outcome("failed", None, f"unknown object {obj_id}"))
                return
        if not self.object_ids:
            self._finish(Outcome("failed", None, "nothing to observe"))
            return
        centroid = tuple(
            sum(world.position_of(o)[i] for o in self.object_ids) / len(self.object_ids)
            for i in range(3)
        )
        if not robot.drive_ok:
            # A stationary observer still reports what it can see.
            self._finish(Outcome("success", world.ground_situation(self.object_ids)))
            return
        robot.waypoint = Waypoint(centroid, observe_range, "observe")

    def _finish(self, outcome: Outcome) -> None:
        if self.finished:
            return
        self.finished = True
        self.robot.behavior = None
        self.robot.waypoint = None
        self.done(outcome)

    def on_arrival(self, tag: str) -> None:
        if not self.finished and tag == "observe":
            self._finish(Outcome("success", self.world.ground_situation(self.object_ids)))

    def on_fault(self, kind: str) -> None:
        if self.finished:
            return
        if kind == "commLoss":
            self._finish(Outcome("silence", None, "communication lost"))
        else:
            self._finish(Outcome("success", self.world.ground_situation(self.object_ids)))

    def halt(self, *, intentional: bool) -> None:
        self._finish(Outcome("stopped", None, "stopped"))


def _run_to_outcome(world: SimWorld, start) -> Outcome:
    box: list[Outcome] = []
    start(box.append)
    guard = 0
    while not box:
        world.step(0.5)
        guard += 1
        if guard > 100_000:
            raise SimError("behavior did not terminate")
    return box[0]


def execute_transfer(world: SimWorld, robot_id: str, object_id: str, destination) -> Outcome:
    """Synchronous transfer: drives the clock until the behavior finishes."""
    robot = world.robots[robot_id]
    if "TransferObject" not in robot.capabilities:
        raise SimError(f"{robot_id} cannot TransferObject")
    if not world.has_object(object_id):
        raise ObjectMissing(object_id)
    return _run_to_outcome(
        world, lambda done: TransferBehavior(world, robot, object_id, destination, done)
    )


def execute_recognize(world: SimWorld, robot_id: str, query):
    """Synchronous recognition: returns the ground situation of the query's objects."""
    robot = world.robots[robot_id]
    if "Recognize" not in robot.capabilities:
        raise SimError(f"{robot_id} cannot Recognize")
    object_ids = _query_objects(query)
    for obj_id in object_ids:
        if not world.has_object(obj_id):
            raise UnknownObjectInQuery(obj_id)
    outcome = _run_to_outcome(
        world, lambda done: RecognizeBehavior(world, robot, object_ids, done)
    )
    if outcome.status != "success":
        raise SimError(f"recognition failed: {outcome.reason}")
    return outcome.situation


def _query_objects(query) -> list[str]:
    out = []
    for atom in entish.atoms(query):
        if isinstance(atom, RelationAtom):
            for term in atom.terms:
                if isinstance(term, ObjectRef) and term.object_id not in out:
                    out.append(term.object_id)
        else:
            if atom.subject.object_id not in out:
                out.append(atom.subject.object_id)
    return out


# --- robot link: the SM/robot boundary ------------------------------------------------


class RobotLink:
    """The only surface Service Managers may use to reach their robot."""

    def start_transfer(self, object_id, destination, done):  # pragma: no cover
        raise NotImplementedError

    def start_recognize(self, query, done):  # pragma: no cover
        raise NotImplementedError

    def stop_active(self) -> None:  # pragma: no cover
        raise NotImplementedError

    def observe(self, query):  # pragma: no cover
        raise NotImplementedError

    def operational(self) -> bool:  # pragma: no cover
        raise NotImplementedError


class LoopbackRobotLink(RobotLink):
    """In-process link used in tests and combined runs."""

    def __init__(self, world: SimWorld, robot_id: str):
        self.world = world
        self.robot = world.robots[robot_id]

    def start_transfer(self, object_id, destination, done):
        TransferBehavior(self.world, self.robot, object_id, destination, done)

    def start_recognize(self, query, done):
        RecognizeBehavior(self.world, self.robot, _query_objects(query), done)

    def stop_active(self) -> None:
        if self.robot.behavior is not None:
            self.robot.behavior.halt(intentional=True)

    def observe(self, query):
        return self.world.ground_situation(_query_objects(query))

    def operational(self) -> bool:
        return self.robot.drive_ok

    def comm_ok(self) -> bool:
        return self.robot.comm_ok


# --- service manager --------------------------------------------------------------------


@dataclass
class SmService:
    record: ServiceRecord
    price: float
    max_time: float
    refuse_arrange: bool = False


@dataclass
class _Engagement:
    session: machine.Session
    service: SmService
    peer: str = ""
    commitment: object | None = None  # Formula promised in Terms


class ServiceManager:
    """Participant-side endpoint for one robot's services."""

    def __init__(self, robot_id: str, link: RobotLink, services: list[SmService],
                 transport, identity: str | None = None):
        self.robot_id = robot_id
        self.link = link
        self.transport = transport
        self.identity = identity or f"sm:{robot_id}"
        self.services = {s.record.manager_address: s for s in services}
        self.engagements: dict[str, _Engagement] = {}
        self._mid = 0
        self._work_queue: list[tuple[str, object]] = []  # (session id, start fn)
        self._active_session: str | None = None
        for address in self.services:
            transport.register(address, self._make_handler(address))

    def _make_handler(self, address: str):
        return lambda envelope: self.on_envelope(address, envelope)

    def _next_mid(self) -> str:
        self._mid += 1
        return f"{self.identity}:{self._mid}"

    def _send(self, engagement: _Engagement, address: str, body) -> None:
        if not self._comm_ok():
            return  # comm loss mutes the device; the coordinator hears nothing
        envelope = messages.make_envelope(
            sender=address,
            recipient=engagement.peer,
            message_id=self._next_mid(),
            session_id=engagement.session.session_id,
            body=body,
        )
        engagement.session.on_send(envelope)
        self.transport.send(envelope)

    def _comm_ok(self) -> bool:
        comm = getattr(self.link, "comm_ok", None)
        return comm() if callable(comm) else True

    def on_envelope(self, address: str, envelope) -> None:
        # A comm-lost device may still hear the coordinator; it just cannot
        # answer (every _send is muted while comm is down).
        sid = envelope.header.session_id
        engagement = self.engagements.get(sid)
        if engagement is None:
            engagement = _Engagement(
                session=machine.Session(machine.PARTICIPANT, sid),
                service=self.services[address],
                peer=envelope.header.sender,
            )
            self.engagements[sid] = engagement
        engagement.peer = envelope.header.sender
        try:
            engagement.session.on_receive(envelope)
        except machine.ProtocolViolation:
            return  # out-of-protocol traffic is dropped
        body = envelope.body
        if isinstance(body, messages.Arrange):
            self._on_arrange(address, engagement, body)
        elif isinstance(body, messages.Execute):
            self._on_execute(address, engagement, body)
        elif isinstance(body, messages.Stop):
            self._on_stop(sid)
        elif isinstance(body, messages.Compensate):
            self._on_compensate(address, engagement, body)
        elif isinstance(body, messages.Cancel):
            pass
        elif isinstance(body, messages.End):
            pass

    def _busy(self) -> bool:
        robot = getattr(self.link, "robot", None)
        return robot is not None and robot.behavior is not None

    def _enqueue_work(self, session_id: str, start) -> None:
        """One behavior at a time per robot; later engagements wait their turn."""
        self._work_queue.append((session_id, start))
        self._pump_work()

    def _pump_work(self) -> None:
        if self._busy() or self._active_session is not None or not self._work_queue:
            return
        session_id, start = self._work_queue.pop(0)
        self._active_session = session_id
        start()

    def _work_done(self, session_id: str) -> None:
        if self._active_session == session_id:
            self._active_session = None
        self._pump_work()

    def _on_stop(self, session_id: str) -> None:
        self._work_queue = [(sid, fn) for sid, fn in self._work_queue if sid != session_id]
        if self._active_session == session_id:
            self.link.stop_active()
            self._active_session = None
            self._pump_work()

    def _on_arrange(self, address: str, engagement: _Engagement, body: messages.Arrange) -> None:
        service = engagement.service
        if service.refuse_arrange:
            self._send(engagement, address, messages.Refuse("declined"))
            return
        if service.record.kind == "physical" and not self.link.operational():
            self._send(engagement, address, messages.Refuse("drive out of order"))
            return
        if self._busy():
            self._send(engagement, address, messages.Refuse("busy"))
            return
        engagement.commitment = body.effect
        self._send(
            engagement,
            address,
            messages.Terms(commitment=body.effect, price=service.price, max_time=service.max_time),
        )

    def _on_execute(self, address: str, engagement: _Engagement, body: messages.Execute) -> None:
        service = engagement.service
        sid = engagement.session.session_id
        if service.record.kind == "cognitive":
            query = engagement.commitment if engagement.commitment is not None else body.precondition

            def done_recognize(outcome: Outcome):
                self._work_done(sid)
                if outcome.status == "success":
                    self._send(engagement, address, messages.Completed(outcome.situation))
                elif outcome.status != "silence":
                    self._send(engagement, address, messages.Failed(None, outcome.reason))

            self._enqueue_work(sid, lambda: self.link.start_recognize(query, done_recognize))
            return
        target = _transfer_goal(engagement.commitment)
        if target is None:
            self._send(engagement, address, messages.Failed(None, "uninterpretable commitment"))
            return
        object_id, destination = target

        def done_transfer(outcome: Outcome):
            self._work_done(sid)
            if outcome.status == "success":
                self._send(engagement, address, messages.Completed(outcome.situation))
            elif outcome.status == "failed":
                self._send(engagement, address, messages.Failed(outcome.situation, outcome.reason))
            # "stopped" answers a Stop; "silence" answers nothing at all.

        self._enqueue_work(sid, lambda: self.link.start_transfer(object_id, destination, done_transfer))

    def _on_compensate(self, address: str, engagement: _Engagement, body: messages.Compensate) -> None:
        sid = engagement.session.session_id
        target = _transfer_goal(body.target_situation)
        if target is not None and self.link.operational():
            object_id, destination = target

            def done(outcome: Outcome):
                self._work_done(sid)
                situation = outcome.situation
                if situation is None:
                    situation = self.link.observe(body.target_situation)
                self._send(engagement, address, messages.Compensated(situation))

            self._enqueue_work(sid, lambda: self.link.start_transfer(object_id, destination, done))
            return
        # Restoration is impossible (no pose goal, or the drive is gone):
        # report the continuation-feasible current situation instead.
        self._send(engagement, address, messages.Compensated(self.link.observe(body.target_situation)))

    @property
    def session_states(self) -> dict[str, machine.State]:
        return {sid: e.session.state for sid, e in self.engagements.items()}


def _transfer_goal(formula) -> tuple | None:
    """Extract (object, destination) from an isOn goal, or (object, coords)."""
    if formula is None:
        return None
    for atom in entish.atoms(formula):
        if isinstance(atom, RelationAtom) and atom.relation == "isOn":
            obj, dest = atom.terms
            if isinstance(obj, ObjectRef) and isinstance(dest, ObjectRef):
                return obj.object_id, dest.object_id
    coords: dict[str, dict[str, float]] = {}
    for atom in entish.atoms(formula):
        if isinstance(atom, AttributeAtom) and atom.comparator == "=" and len(atom.path) == 1:
            axis = atom.path[0]
            if axis in ("PositionX", "PositionY", "PositionZ") and isinstance(atom.value, float):
                coords.setdefault(atom.subject.object_id, {})[axis] = atom.value
    for object_id, axes in sorted(coords.items()):
        if len(axes) == 3:
            return object_id, (axes["PositionX"], axes["PositionY"], axes["PositionZ"])
    return None


def load_world(ontology: Ontology, snapshot: WorldMap, faults: list | None = None) -> SimWorld:
    """Build the simulation from a repository snapshot."""
    from .ontology import validate_object

    report = validate_object(snapshot.root, ontology, world=snapshot)
    if not report.ok:
        first = report.entries[0]
        raise InvalidWorld(f"{first.code}: {first.subject} {first.detail}".strip())
    return SimWorld(ontology, snapshot, faults=faults)
