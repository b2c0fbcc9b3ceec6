"""Wires registry, repository, task manager, simulation, and service managers
into one runnable system, from a single structured config file.

Combined runs keep every component on one deterministic event loop with
loopback transport; `serve` mode (see cli) hosts the same objects behind TCP
endpoints instead.  Environment variables override ports only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml

from . import entish
from .frp.transport import LoopbackHub, TcpEndpoint, connect_tcp
from .ontology import Ontology, WorldMap, load_world
from .registry import Registry, ServiceAttributes, ServiceRecord
from .repository import Repository
from .sched import EventLoop
from .simworld import FaultSpec, LoopbackRobotLink, ServiceManager, SimWorld, SmService, load_world as build_sim
from .taskman import RecoveryPolicy, SelectionPolicy, TaskManager, TaskmanConfig
from .taskman.core import HistoryEntry

DEFAULT_TICK = 0.5
DEFAULT_MAX_SIM_TIME = 100_000.0


class ConfigError(Exception):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    config["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return config


def _resolve_path(config: dict, path: str) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(config.get("_base_dir", "."), path)


class WorldDriver:
    """Keeps the simulation stepping on the loop while anything is in motion."""

    def __init__(self, loop: EventLoop, world: SimWorld, tick: float = DEFAULT_TICK):
        self.loop = loop
        self.world = world
        self.tick = tick
        self.running = False

    def ensure(self) -> None:
        if not self.running:
            self.running = True
            self.loop.call_later(self.tick, self._tick)

    def _pending_time_faults(self) -> bool:
        return any(not f.fired and f.at_time is not None for f in self.world.faults)

    def _tick(self) -> None:
        dt = self.loop.now() - self.world.time
        if dt > 0:
            self.world.step(dt)
        if self.world.busy() or self._pending_time_faults():
            self.loop.call_later(self.tick, self._tick)
        else:
            self.running = False


class NudgingRobotLink(LoopbackRobotLink):
    """Loopback link that wakes the world driver whenever a behavior starts."""

    def __init__(self, world: SimWorld, robot_id: str, driver: WorldDriver):
        super().__init__(world, robot_id)
        self.driver = driver

    def start_transfer(self, object_id, destination, done):
        super().start_transfer(object_id, destination, done)
        self.driver.ensure()

    def start_recognize(self, query, done):
        super().start_recognize(query, done)
        self.driver.ensure()


class SmTcpHost:
    """Many logical service-manager addresses behind one TCP endpoint.

    Incoming frames are dispatched by recipient onto the hosting loop; SM
    replies travel back over the connection their session arrived on.
    """

    def __init__(self, loop: EventLoop, host: str = "127.0.0.1", port: int = 0):
        self.loop = loop
        self._handlers: dict = {}
        self._session_reply: dict = {}
        self.endpoint = TcpEndpoint(host, port, self._on_frame).start()

    @property
    def address(self) -> str:
        return self.endpoint.address

    def register(self, address: str, handler) -> None:
        self._handlers[address] = handler

    def _on_frame(self, envelope, reply) -> None:
        self._session_reply[envelope.header.session_id] = reply
        handler = self._handlers.get(envelope.header.recipient)
        if handler is not None:
            self.loop.post(handler, envelope)

    def send(self, envelope) -> None:
        reply = self._session_reply.get(envelope.header.session_id)
        if reply is not None:
            reply(envelope)

    def stop(self) -> None:
        self.endpoint.stop()


class TmTcpTransport:
    """Coordinator-side transport: `host:port#logical` addresses connect out;
    whatever comes back on those connections lands on the coordinator's loop."""

    def __init__(self, loop: EventLoop):
        self.loop = loop
        self._handlers: dict = {}
        self._connections: dict = {}

    def register(self, address: str, handler) -> None:
        self._handlers[address] = handler

    def _incoming(self, envelope) -> None:
        handler = self._handlers.get(envelope.header.recipient)
        if handler is not None:
            self.loop.post(handler, envelope)

    def send(self, envelope) -> None:
        hostport = envelope.header.recipient.split("#", 1)[0]
        conn = self._connections.get(hostport)
        if conn is None:
            conn = connect_tcp(hostport, on_envelope=self._incoming)
            self._connections[hostport] = conn
        conn.send(envelope)

    def close(self) -> None:
        for conn in self._connections.values():
            conn.close()
        self._connections.clear()


class TraceLog:
    """Ordered envelope trace: one line per sent/received protocol message."""

    def __init__(self):
        self.entries: list[tuple[str, HistoryEntry]] = []

    def __call__(self, txn_id: str, entry: HistoryEntry) -> None:
        self.entries.append((txn_id, entry))

    def lines(self) -> list[str]:
        out = []
        for _txn_id, e in self.entries:
            out.append(f"{e.timestamp:.3f} {e.direction} {e.session_id} {e.message_type} {e.peer}")
        return out

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for line in self.lines():
                f.write(line + "\n")


def _service_record(robot_id: str, doc: dict) -> ServiceRecord:
    return ServiceRecord(
        service_id=doc["id"],
        service_type_name=doc["type"],
        kind=doc.get("kind", "physical"),
        precondition_template=entish.parse(doc.get("precondition", "true")),
        effect_template=entish.parse(doc.get("effect", "true")),
        attributes=ServiceAttributes(
            operation_range=float(doc.get("operation_range", 0.0)),
            cost=float(doc.get("cost", doc.get("price", 0.0))),
            average_time=float(doc.get("average_time", doc.get("max_time", 1.0))),
        ),
        manager_address=doc.get("manager_address", f"sm:{robot_id}:{doc['id']}"),
    )


def _faults_from_config(config: dict) -> list[FaultSpec]:
    out = []
    for doc in config.get("faults", []) or []:
        region = doc.get("region")
        out.append(
            FaultSpec(
                kind=doc["kind"],
                target=doc["target"],
                at_time=float(doc["at_time"]) if "at_time" in doc else None,
                region_center=tuple(region["center"]) if region else None,
                region_radius=float(region["radius"]) if region else 0.0,
            )
        )
    return out


def taskman_config(config: dict) -> TaskmanConfig:
    tm_doc = config.get("taskman", {}) or {}
    policy_doc = tm_doc.get("policy", {}) or {}
    recovery_doc = tm_doc.get("recovery", {}) or {}
    return TaskmanConfig(
        quote_timeout=float(tm_doc.get("quote_timeout", 5.0)),
        heartbeat_timeout=float(tm_doc.get("heartbeat_timeout", 10.0)),
        plan_bound=int(tm_doc.get("plan_bound", 3)),
        policy=SelectionPolicy(
            price_weight=float(policy_doc.get("price_weight", 1.0)),
            time_weight=float(policy_doc.get("time_weight", 0.0)),
        ),
        recovery=RecoveryPolicy(
            max_replans=int(recovery_doc.get("max_replans", 1)),
            max_substitutions_per_node=int(recovery_doc.get("max_substitutions_per_node", 2)),
            cognitive_fallback=bool(recovery_doc.get("cognitive_fallback", True)),
        ),
        eager_arrangement=bool(tm_doc.get("eager_arrangement", True)),
    )


@dataclass
class CombinedRuntime:
    loop: EventLoop
    hub: LoopbackHub
    ontology: Ontology
    repository: Repository
    registry: Registry
    world: SimWorld
    driver: WorldDriver
    managers: dict
    tm: TaskManager
    trace: TraceLog
    config: dict = field(default_factory=dict)

    def run_task(self, precondition: str | None, effect: str,
                 max_sim_time: float = DEFAULT_MAX_SIM_TIME) -> str:
        txn_id = self.tm.submit_task(precondition, effect)
        self.loop.run_until_idle(max_time=max_sim_time)
        return txn_id

    def final_map(self) -> WorldMap:
        return self.repository.get_snapshot()[1]


def build_runtime(config: dict) -> CombinedRuntime:
    world_path = config.get("world")
    if not world_path:
        raise ConfigError("config needs a `world` file")
    ontology, world_map = load_world(_resolve_path(config, world_path))
    loop = EventLoop()
    hub = LoopbackHub(loop)
    repository = Repository(ontology, world_map)
    registry = Registry(ontology)
    sim = build_sim(ontology, world_map, faults=_faults_from_config(config))
    tick = float((config.get("clock", {}) or {}).get("tick", DEFAULT_TICK))
    driver = WorldDriver(loop, sim, tick=tick)
    managers = {}
    for robot_id, robot_doc in (config.get("robots", {}) or {}).items():
        if robot_id not in sim.robots:
            raise ConfigError(f"robot {robot_id} is not in the world map")
        robot = sim.robots[robot_id]
        robot.speed = float(robot_doc.get("speed", robot.speed))
        robot.gripper_range = float(robot_doc.get("gripper_range", robot.gripper_range))
        services = []
        for service_doc in robot_doc.get("services", []) or []:
            record = _service_record(robot_id, service_doc)
            registry.publish(record)
            services.append(
                SmService(
                    record=record,
                    price=float(service_doc.get("price", 0.0)),
                    max_time=float(service_doc.get("max_time", 60.0)),
                    refuse_arrange=bool(
                        service_doc.get("refuse_arrange", robot_doc.get("refuse_arrange", False))
                    ),
                )
            )
        if services:
            link = NudgingRobotLink(sim, robot_id, driver)
            managers[robot_id] = ServiceManager(robot_id, link, services, hub)
    trace = TraceLog()
    tm = TaskManager(
        loop,
        hub,
        registry,
        repository,
        config=taskman_config(config),
        trace=trace,
    )
    if _faults_from_config(config):
        driver.ensure()
    return CombinedRuntime(
        loop=loop,
        hub=hub,
        ontology=ontology,
        repository=repository,
        registry=registry,
        world=sim,
        driver=driver,
        managers=managers,
        tm=tm,
        trace=trace,
        config=config,
    )
