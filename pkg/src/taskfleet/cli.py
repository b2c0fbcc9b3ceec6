"""Operator entry point.

    taskfleet run_scenario --scenario scenario1 [--config PATH] [--seed N]
                           [--trace-out PATH] [--map-out PATH]
    taskfleet serve COMPONENT --config PATH [--listen ADDR:PORT]
                           [--http ADDR:PORT] [--realtime FACTOR]

`run_scenario` launches every component in-process on the simulated clock,
runs the configured task to a terminal status, and writes the ordered message
trace plus the final map.  Exit codes: 0 success, 2 the transaction ended in
a status the scenario did not expect, 3 configuration error.

`serve` hosts a component (or `all`) behind TCP endpoints; `all` also serves
the task manager's HTTP API.  Environment variables TASKFLEET_LISTEN and
TASKFLEET_HTTP override the ports only.
"""

from __future__ import annotations

import argparse
import importlib.resources
import os
import signal
import sys
import threading

from .frp import messages
from .frp.transport import TcpEndpoint, connect_tcp
from .ontology import save_world
from .registry import ServiceRecord
from .repository import VersionConflict
from .runner import (
    ConfigError,
    DEFAULT_MAX_SIM_TIME,
    build_runtime,
    load_config,
)

EXIT_OK = 0
EXIT_UNEXPECTED_STATUS = 2
EXIT_CONFIG = 3

KNOWN_SCENARIOS = ("scenario1", "scenario1b")


def _scenario_config_path(name: str) -> str:
    resource = importlib.resources.files("taskfleet").joinpath("scenarios", f"{name}.yaml")
    return str(resource)


def run_scenario(args) -> int:
    if args.scenario not in KNOWN_SCENARIOS and not args.config:
        print(f"unknown scenario {args.scenario!r}: pass --config for custom runs", file=sys.stderr)
        return EXIT_CONFIG
    config_path = args.config or _scenario_config_path(args.scenario)
    try:
        config = load_config(config_path)
        config.setdefault("seed", args.seed)
        runtime = build_runtime(config)
    except (ConfigError, Exception) as exc:
        if isinstance(exc, (ConfigError, FileNotFoundError)):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    scenario = config.get("scenario", {}) or {}
    task = scenario.get("task", {}) or {}
    effect = task.get("effect")
    if not effect:
        print("config error: scenario.task.effect is required", file=sys.stderr)
        return EXIT_CONFIG
    max_sim_time = float(scenario.get("max_sim_time", DEFAULT_MAX_SIM_TIME))
    txn_id = runtime.run_task(task.get("precondition"), effect, max_sim_time=max_sim_time)
    view = runtime.tm.get_view(txn_id)
    if args.trace_out:
        runtime.trace.write(args.trace_out)
    map_out = args.map_out or (args.trace_out + ".map.yaml" if args.trace_out else None)
    if map_out:
        ontology, final_map, _ = runtime.repository.get_snapshot()
        save_world(map_out, ontology, final_map)
    expected = scenario.get("expect", "Completed")
    print(f"transaction {txn_id}: {view['status']}" + (f" ({view['reason']})" if view["reason"] else ""))
    if view["status"] != expected:
        return EXIT_UNEXPECTED_STATUS
    return EXIT_OK


# --- served components -------------------------------------------------------------


def _connect_with_patience(address: str, attempts: int = 20, delay: float = 0.25):
    import time as _time

    last: Exception | None = None
    for _ in range(attempts):
        try:
            return connect_tcp(address)
        except OSError as exc:
            last = exc
            _time.sleep(delay)
    raise ConfigError(f"cannot reach {address}: {last}")


class RegistryTcpClient:
    """Duck-typed Registry facade over the framed admin protocol."""

    def __init__(self, address: str, identity: str = "client"):
        self.address = address
        self.identity = identity
        self._conn = _connect_with_patience(address)
        self._lock = threading.Lock()
        self._mid = 0

    def _request(self, body):
        with self._lock:
            self._mid += 1
            reply = self._conn.request(
                messages.make_envelope(self.identity, self.address, f"{self.identity}:{self._mid}", "admin", body)
            )
        if not reply.body.ok:
            raise RuntimeError(reply.body.error)
        return reply.body.payload

    def publish(self, record: ServiceRecord) -> str:
        return self._request(messages.Publish(record.to_doc()))["registrationId"]

    def unpublish(self, service_id: str) -> None:
        self._request(messages.Unpublish(service_id))

    def discover(self, goal_effect=None, precondition=None):
        payload = self._request(messages.Discover(goal_effect, precondition))
        return [ServiceRecord.from_doc(doc) for doc in payload["records"]]

    def close(self):
        self._conn.close()


class RepositoryTcpClient:
    """Snapshot/commit facade over the framed admin protocol."""

    def __init__(self, address: str, identity: str = "client"):
        self.address = address
        self.identity = identity
        self._conn = _connect_with_patience(address)
        self._lock = threading.Lock()
        self._mid = 0

    def _request(self, body):
        with self._lock:
            self._mid += 1
            reply = self._conn.request(
                messages.make_envelope(self.identity, self.address, f"{self.identity}:{self._mid}", "admin", body)
            )
        if not reply.body.ok:
            if "VersionConflict" in reply.body.error:
                raise VersionConflict(reply.body.error)
            raise RuntimeError(reply.body.error)
        return reply.body.payload

    def get_snapshot(self):
        from .ontology import world_from_doc

        payload = self._request(messages.GetSnapshot())
        ontology, world = world_from_doc(payload["world"])
        return ontology, world, payload["version"]

    def commit(self, delta, expected_version: int) -> int:
        from .ontology import delta_to_doc

        return self._request(messages.Commit(delta_to_doc(delta), expected_version))["version"]

    def close(self):
        self._conn.close()


def _parse_listen(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bad listen address {value!r} (want HOST:PORT)")
    return host, int(port)


def serve(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    listen = os.environ.get("TASKFLEET_LISTEN", args.listen)
    try:
        if args.component == "registry":
            return _serve_registry(config, listen)
        if args.component == "repository":
            return _serve_repository(config, listen)
        if args.component == "simworld":
            if args.realtime <= 0:
                args.realtime = 0.02  # socket peers need a paced clock
            return _serve_simworld(config, listen, args)
        if args.component == "taskman":
            if args.realtime <= 0:
                args.realtime = 0.02
            return _serve_taskman(config, args)
        if args.component == "all":
            return _serve_all(config, args)
        print(f"unsupported component {args.component!r}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot listen on {listen}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _serve_registry(config: dict, listen: str) -> int:
    from .ontology import load_world as load_world_file
    from .registry import Registry
    from .runner import _resolve_path

    ontology = None
    if config.get("world"):
        ontology = load_world_file(_resolve_path(config, config["world"]))[0]
    registry = Registry(ontology, snapshot_path=(config.get("registry", {}) or {}).get("snapshot"))
    host, port = _parse_listen(listen)
    endpoint = TcpEndpoint(host, port, registry.handle_envelope).start()
    print(f"registry listening on {endpoint.address}", flush=True)
    _wait_forever(endpoint)
    return EXIT_OK


def _serve_repository(config: dict, listen: str) -> int:
    from .ontology import load_world as load_world_file
    from .repository import Repository
    from .runner import _resolve_path

    ontology, world = load_world_file(_resolve_path(config, config["world"]))
    repository = Repository(ontology, world, storage_dir=(config.get("repository", {}) or {}).get("storage"))
    host, port = _parse_listen(listen)
    endpoint = TcpEndpoint(host, port, repository.handle_envelope).start()
    print(f"repository listening on {endpoint.address}", flush=True)
    _wait_forever(endpoint)
    return EXIT_OK


def _peer_address(config: dict, component: str) -> str:
    section = config.get(component, {}) or {}
    address = section.get("address")
    if not address:
        raise ConfigError(f"config needs {component}.address for distributed serving")
    return address


def _serve_simworld(config: dict, listen: str, args) -> int:
    """Simulation plus its service managers, generated from the repository."""
    from .registry import ServiceRecord
    from .runner import (
        NudgingRobotLink,
        SmTcpHost,
        WorldDriver,
        _faults_from_config,
        _service_record,
    )
    from .sched import EventLoop
    from .simworld import ServiceManager, SmService, load_world as build_sim

    repository = RepositoryTcpClient(_peer_address(config, "repository"), identity="simworld")
    registry = RegistryTcpClient(_peer_address(config, "registry"), identity="simworld")
    ontology, world_map, _version = repository.get_snapshot()
    sim = build_sim(ontology, world_map, faults=_faults_from_config(config))
    loop = EventLoop()
    host_addr, port = _parse_listen(listen)
    host = SmTcpHost(loop, host_addr, port)
    driver = WorldDriver(loop, sim)
    managers = {}
    for robot_id, robot_doc in (config.get("robots", {}) or {}).items():
        robot = sim.robots[robot_id]
        robot.speed = float(robot_doc.get("speed", robot.speed))
        robot.gripper_range = float(robot_doc.get("gripper_range", robot.gripper_range))
        services = []
        for service_doc in robot_doc.get("services", []) or []:
            doc = dict(service_doc)
            doc["manager_address"] = f"{host.address}#sm:{robot_id}:{doc['id']}"
            record = _service_record(robot_id, doc)
            registry.publish(record)
            services.append(
                SmService(
                    record=record,
                    price=float(doc.get("price", 0.0)),
                    max_time=float(doc.get("max_time", 60.0)),
                    refuse_arrange=bool(doc.get("refuse_arrange", robot_doc.get("refuse_arrange", False))),
                )
            )
        if services:
            link = NudgingRobotLink(sim, robot_id, driver)
            managers[robot_id] = ServiceManager(robot_id, link, services, host)
    if sim.faults:
        driver.ensure()
    print(f"simworld listening on {host.address} ({len(managers)} service managers)", flush=True)
    stop = threading.Event()

    def shutdown(_sig, _frame):
        stop.set()
        loop.stop()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    loop.run(args.realtime)
    host.stop()
    return EXIT_OK


def _serve_taskman(config: dict, args) -> int:
    """Coordinator only: speaks the framed protocol outward, HTTP to clients."""
    import uvicorn

    from .runner import TmTcpTransport, taskman_config
    from .sched import EventLoop
    from .taskman import TaskManager
    from .taskman.api import create_app

    loop = EventLoop()
    transport = TmTcpTransport(loop)
    registry = RegistryTcpClient(_peer_address(config, "registry"), identity="tm")
    repository = RepositoryTcpClient(_peer_address(config, "repository"), identity="tm")
    tm = TaskManager(loop, transport, registry, repository, config=taskman_config(config))
    loop_thread = threading.Thread(target=loop.run, args=(args.realtime,), daemon=True)
    loop_thread.start()
    app = create_app(tm)
    http = os.environ.get("TASKFLEET_HTTP", args.http)
    host, port = _parse_listen(http)
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning"))

    def shutdown(_sig, _frame):
        server.should_exit = True

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    print(f"task manager HTTP on {host}:{port}", flush=True)
    server.run()
    for view in tm.list_views():
        if view["status"] not in ("Completed", "Aborted", "Cancelled"):
            try:
                tm.cancel(view["transactionId"])
            except Exception:
                pass
    loop.stop()
    transport.close()
    return EXIT_OK


def _serve_all(config: dict, args) -> int:
    """Combined system on one loop, HTTP API exposed for clients."""
    import uvicorn

    from .taskman.api import create_app

    runtime = build_runtime(config)
    factor = args.realtime
    loop_thread = threading.Thread(target=runtime.loop.run, args=(factor,), daemon=True)
    loop_thread.start()
    if runtime.world.faults:
        runtime.driver.ensure()
    app = create_app(runtime.tm)
    http = os.environ.get("TASKFLEET_HTTP", args.http)
    host, port = _parse_listen(http)
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning"))

    def shutdown(_sig, _frame):
        server.should_exit = True

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    print(f"task manager HTTP on {host}:{port}", flush=True)
    server.run()
    # Interrupt path: stop cleanly, cancelling live transactions so every
    # participant session still receives Stop/Cancel and End.
    for view in runtime.tm.list_views():
        if view["status"] not in ("Completed", "Aborted", "Cancelled"):
            try:
                runtime.tm.cancel(view["transactionId"])
            except Exception:
                pass
    runtime.loop.run_until_idle(max_time=runtime.loop.now() + 120)
    runtime.loop.stop()
    return EXIT_OK


def _wait_forever(endpoint) -> None:
    stop = threading.Event()

    def shutdown(_sig, _frame):
        stop.set()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    stop.wait()
    endpoint.stop()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskfleet", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run_scenario", help="run a canned or custom scenario to completion")
    run_p.add_argument("--scenario", default="custom", help="scenario1, scenario1b, or custom")
    run_p.add_argument("--config", default=None, help="config file (required for custom)")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--trace-out", default=None, help="write the ordered message trace here")
    run_p.add_argument("--map-out", default=None, help="write the final map here")
    run_p.set_defaults(func=run_scenario)

    serve_p = sub.add_parser("serve", help="serve one component or the combined system")
    serve_p.add_argument("component", choices=["registry", "repository", "simworld", "taskman", "all"])
    serve_p.add_argument("--config", required=True)
    serve_p.add_argument("--listen", default="127.0.0.1:7100")
    serve_p.add_argument("--http", default="127.0.0.1:8080")
    serve_p.add_argument("--realtime", type=float, default=0.0,
                         help="wall seconds per simulated second (0 = fast; "
                              "distributed taskman/simworld default to 0.02)")
    serve_p.set_defaults(func=serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
