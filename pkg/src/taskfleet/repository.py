"""Repository: holds the ontology and the current map, serves snapshots,
commits deltas with optimistic versioning, and streams committed deltas to
subscribers.

Commits are serialized internally; readers and subscribers never block them.
With a storage directory the repository persists a snapshot plus a delta log
and compacts the log above `COMPACTION_KEEP` entries, so replay from the last
snapshot always reproduces the live map.
"""

from __future__ import annotations

import json
import os
import queue
import threading

from .frp import messages
from .ontology import (
    MapDelta,
    Ontology,
    WorldMap,
    apply_delta,
    delta_from_doc,
    delta_to_doc,
    load_world,
    save_world,
    world_to_doc,
)

COMPACTION_KEEP = 10_000


class RepositoryError(Exception):
    pass


class NotLoaded(RepositoryError):
    pass


class VersionConflict(RepositoryError):
    pass


class VersionTooOld(RepositoryError):
    pass


class Subscription:
    """Gapless ordered stream of (version, MapDelta) events."""

    def __init__(self, repo: "Repository", backlog: list):
        self._repo = repo
        self._queue: queue.Queue = queue.Queue()
        for item in backlog:
            self._queue.put(item)
        self.active = True

    def _push(self, version: int, delta: MapDelta) -> None:
        self._queue.put((version, delta))

    def get(self, timeout: float | None = None) -> tuple[int, MapDelta]:
        return self._queue.get(timeout=timeout)

    def drain(self) -> list[tuple[int, MapDelta]]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out

    def close(self) -> None:
        self.active = False
        self._repo._unsubscribe(self)


class Repository:
    def __init__(self, ontology: Ontology | None = None, world: WorldMap | None = None,
                 storage_dir: str | None = None):
        self._lock = threading.RLock()
        self._ontology = ontology
        self._world = world
        self._storage_dir = storage_dir
        self._log: list[tuple[int, MapDelta]] = []
        self._log_base = world.version if world is not None else 0
        self._subscribers: list[Subscription] = []
        if storage_dir:
            os.makedirs(storage_dir, exist_ok=True)
            if world is not None:
                self._write_snapshot()
            else:
                self._recover()

    # --- persistence ----------------------------------------------------------

    def _snapshot_path(self) -> str:
        return os.path.join(self._storage_dir, "snapshot.yaml")

    def _log_path(self) -> str:
        return os.path.join(self._storage_dir, "deltas.jsonl")

    def _write_snapshot(self) -> None:
        save_world(self._snapshot_path(), self._ontology, self._world)
        with open(self._log_path(), "w", encoding="utf-8"):
            pass
        self._log_base = self._world.version

    def _recover(self) -> None:
        if not os.path.exists(self._snapshot_path()):
            raise NotLoaded(f"no snapshot under {self._storage_dir}")
        self._ontology, self._world = load_world(self._snapshot_path())
        self._log_base = self._world.version
        if os.path.exists(self._log_path()):
            with open(self._log_path(), "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    doc = json.loads(line)
                    delta = delta_from_doc(doc["delta"])
                    version = int(doc["version"])
                    self._log.append((version, delta))
                    self._log_base = min(self._log_base, version - 1)
                    if version > self._world.version:
                        # A compacted snapshot already contains the retained
                        # tail; replay only what the snapshot has not seen.
                        self._world = apply_delta(self._world, delta, self._ontology)
                        self._world.version = version

    def _append_log(self, version: int, delta: MapDelta) -> None:
        if not self._storage_dir:
            return
        with open(self._log_path(), "a", encoding="utf-8") as f:
            f.write(json.dumps({"version": version, "delta": delta_to_doc(delta)}) + "\n")
        if len(self._log) > COMPACTION_KEEP:
            self._log = self._log[-COMPACTION_KEEP:]
            self._log_base = self._log[0][0] - 1
            self._write_compacted()

    def _write_compacted(self) -> None:
        save_world(self._snapshot_path(), self._ontology, self._world)
        # Keep the retained tail so subscribers can still replay it.
        with open(self._log_path(), "w", encoding="utf-8") as f:
            for version, delta in self._log:
                f.write(json.dumps({"version": version, "delta": delta_to_doc(delta)}) + "\n")

    # --- operations -------------------------------------------------------------

    def load(self, ontology: Ontology, world: WorldMap) -> None:
        with self._lock:
            self._ontology = ontology
            self._world = world
            self._log = []
            self._log_base = world.version
            if self._storage_dir:
                self._write_snapshot()

    def get_snapshot(self) -> tuple[Ontology, WorldMap, int]:
        """Immutable consistent snapshot (the map is a private copy)."""
        with self._lock:
            if self._world is None or self._ontology is None:
                raise NotLoaded("repository has no world loaded")
            return self._ontology, self._world.copy(), self._world.version

    @property
    def version(self) -> int:
        with self._lock:
            if self._world is None:
                raise NotLoaded("repository has no world loaded")
            return self._world.version

    def commit(self, delta: MapDelta, expected_version: int) -> int:
        """Apply a delta if expected_version is current; notify subscribers."""
        with self._lock:
            if self._world is None:
                raise NotLoaded("repository has no world loaded")
            if expected_version != self._world.version:
                raise VersionConflict(
                    f"expected version {expected_version}, repository is at {self._world.version}"
                )
            new_world = apply_delta(self._world, delta, self._ontology)
            self._world = new_world
            version = new_world.version
            self._log.append((version, delta))
            self._append_log(version, delta)
            # Push while still holding the lock: racing commits must not let a
            # later delta overtake an earlier one in any subscriber's stream.
            for sub in self._subscribers:
                sub._push(version, delta)
        return version

    def subscribe(self, from_version: int) -> Subscription:
        """Deltas strictly after from_version, replayed then live, in order."""
        with self._lock:
            if self._world is None:
                raise NotLoaded("repository has no world loaded")
            if from_version < self._log_base:
                raise VersionTooOld(
                    f"deltas before version {self._log_base} have been compacted"
                )
            if from_version > self._world.version:
                raise RepositoryError(f"version {from_version} is in the future")
            backlog = [(v, d) for v, d in self._log if v > from_version]
            sub = Subscription(self, backlog)
            self._subscribers.append(sub)
            return sub

    def _unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def replay_log(self, initial: WorldMap) -> WorldMap:
        """Event-sourcing check: fold the retained log over an initial map."""
        with self._lock:
            log = list(self._log)
        current = initial
        for _version, delta in log:
            current = apply_delta(current, delta, self._ontology)
        return current

    # --- FRP-framed service plane -------------------------------------------------

    def handle_envelope(self, envelope, reply) -> None:
        header = envelope.header
        body = envelope.body

        def respond(ok: bool, error: str = "", payload: dict | None = None):
            reply(
                messages.make_envelope(
                    sender=header.recipient,
                    recipient=header.sender,
                    message_id=f"{header.recipient}:{header.message_id}",
                    session_id=header.session_id,
                    body=messages.Response(
                        in_reply_to=header.message_id, ok=ok, error=error, payload=payload or {}
                    ),
                )
            )

        try:
            if isinstance(body, messages.GetSnapshot):
                ontology, world, version = self.get_snapshot()
                respond(True, payload={"world": world_to_doc(ontology, world), "version": version})
            elif isinstance(body, messages.Commit):
                version = self.commit(delta_from_doc(body.delta), body.expected_version)
                respond(True, payload={"version": version})
            elif isinstance(body, messages.Subscribe):
                sub = self.subscribe(body.from_version)
                respond(True, payload={"subscribed": body.from_version})
                self._stream(sub, header, reply)
            else:
                respond(False, error=f"unsupported message {header.message_type.value}")
        except RepositoryError as exc:
            respond(False, error=f"{type(exc).__name__}: {exc}")

    def _stream(self, sub: Subscription, header, reply) -> None:
        def pump():
            seq = 0
            while sub.active:
                try:
                    version, delta = sub.get(timeout=0.5)
                except queue.Empty:
                    continue
                seq += 1
                try:
                    reply(
                        messages.make_envelope(
                            sender=header.recipient,
                            recipient=header.sender,
                            message_id=f"{header.recipient}:ev{seq}:{header.message_id}",
                            session_id=header.session_id,
                            body=messages.MapEvent(version=version, delta=delta_to_doc(delta)),
                        )
                    )
                except Exception:
                    sub.close()
                    return

        threading.Thread(target=pump, daemon=True).start()
