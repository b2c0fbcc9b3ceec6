"""Service registry: publication, removal, and discovery of service records.

Discovery is syntactic: a record matches a goal when at least one atom of its
effect template unifies (one-sided, variables in the template) with at least
one atom of the goal effect.  Semantic refinement is the planner's job.

The registry is safe for concurrent use from many connections and snapshots
itself to disk on every mutation so a restart keeps the published services.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

from . import entish
from .frp import messages
from .ontology import Ontology

SERVICE_KINDS = ("physical", "cognitive", "software")


class RegistryError(Exception):
    pass


class DuplicateServiceId(RegistryError):
    pass


class MalformedTemplate(RegistryError):
    pass


class MalformedFormula(RegistryError):
    pass


class UnknownService(RegistryError):
    pass


@dataclass(frozen=True)
class ServiceAttributes:
    operation_range: float = 0.0
    cost: float = 0.0
    average_time: float = 0.0


@dataclass(frozen=True)
class ServiceRecord:
    service_id: str
    service_type_name: str
    kind: str
    precondition_template: object  # Formula
    effect_template: object  # Formula
    attributes: ServiceAttributes = field(default_factory=ServiceAttributes)
    manager_address: str = ""

    def to_doc(self) -> dict:
        return {
            "serviceId": self.service_id,
            "serviceTypeName": self.service_type_name,
            "kind": self.kind,
            "precondition": entish.to_text(self.precondition_template),
            "effect": entish.to_text(self.effect_template),
            "attributes": {
                "operationRange": self.attributes.operation_range,
                "cost": self.attributes.cost,
                "averageTime": self.attributes.average_time,
            },
            "managerAddress": self.manager_address,
        }

    @staticmethod
    def from_doc(doc: dict) -> "ServiceRecord":
        attrs = doc.get("attributes", {})
        return ServiceRecord(
            service_id=doc["serviceId"],
            service_type_name=doc["serviceTypeName"],
            kind=doc["kind"],
            precondition_template=entish.parse(doc["precondition"]),
            effect_template=entish.parse(doc["effect"]),
            attributes=ServiceAttributes(
                operation_range=float(attrs.get("operationRange", 0.0)),
                cost=float(attrs.get("cost", 0.0)),
                average_time=float(attrs.get("averageTime", 0.0)),
            ),
            manager_address=doc.get("managerAddress", ""),
        )


def effect_matches(record: ServiceRecord, goal_effect) -> bool:
    goal_atoms = entish.atoms(goal_effect)
    for template_atom in entish.atoms(record.effect_template):
        for goal_atom in goal_atoms:
            if entish.unify_atoms(template_atom, goal_atom) is not None:
                return True
    return False


class Registry:
    def __init__(self, ontology: Ontology | None = None, snapshot_path: str | None = None):
        self._records: dict[str, ServiceRecord] = {}
        self._lock = threading.RLock()
        self._ontology = ontology
        self._snapshot_path = snapshot_path
        if snapshot_path and os.path.exists(snapshot_path):
            self._load_snapshot()

    def _load_snapshot(self) -> None:
        with open(self._snapshot_path, "r", encoding="utf-8") as f:
            docs = json.load(f)
        for doc in docs:
            record = ServiceRecord.from_doc(doc)
            self._records[record.service_id] = record

    def _persist(self) -> None:
        if not self._snapshot_path:
            return
        docs = [self._records[sid].to_doc() for sid in sorted(self._records)]
        tmp = self._snapshot_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(docs, f, indent=2)
        os.replace(tmp, self._snapshot_path)

    def _validate(self, record: ServiceRecord) -> None:
        if record.kind not in SERVICE_KINDS:
            raise MalformedTemplate(f"unknown service kind {record.kind!r}")
        attrs = record.attributes
        if attrs.operation_range < 0 or attrs.cost < 0 or attrs.average_time < 0:
            raise MalformedTemplate("service attributes must be nonnegative")
        if self._ontology is not None:
            for template in (record.precondition_template, record.effect_template):
                problems = entish.validate_formula(template, self._ontology)
                if problems:
                    raise MalformedTemplate("; ".join(problems))

    def publish(self, record: ServiceRecord) -> str:
        """Make a record discoverable immediately; returns the registration id."""
        self._validate(record)
        with self._lock:
            if record.service_id in self._records:
                raise DuplicateServiceId(record.service_id)
            self._records[record.service_id] = record
            self._persist()
            return record.service_id

    def unpublish(self, service_id: str) -> None:
        with self._lock:
            if service_id not in self._records:
                raise UnknownService(service_id)
            del self._records[service_id]
            self._persist()

    def discover(self, goal_effect=None, precondition=None) -> list[ServiceRecord]:
        """Records whose effect template matches the goal, ordered by service id.

        With no goal effect the whole catalogue is returned (the planner works
        from the full capability pool).
        """
        if goal_effect is not None and not entish.atoms(goal_effect) and not isinstance(
            goal_effect, entish.TrueFormula
        ):
            raise MalformedFormula(f"not a formula: {goal_effect!r}")
        with self._lock:
            records = [self._records[sid] for sid in sorted(self._records)]
        if goal_effect is None:
            return records
        return [r for r in records if effect_matches(r, goal_effect)]

    def get(self, service_id: str) -> ServiceRecord:
        with self._lock:
            if service_id not in self._records:
                raise UnknownService(service_id)
            return self._records[service_id]

    # --- FRP-framed service plane -------------------------------------------

    def handle_envelope(self, envelope, reply) -> None:
        """Serve Publish/Unpublish/Discover requests; reply with Response."""
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
                        in_reply_to=header.message_id,
                        ok=ok,
                        error=error,
                        payload=payload or {},
                    ),
                )
            )

        try:
            if isinstance(body, messages.Publish):
                service_id = self.publish(ServiceRecord.from_doc(body.record))
                respond(True, payload={"registrationId": service_id})
            elif isinstance(body, messages.Unpublish):
                self.unpublish(body.service_id)
                respond(True)
            elif isinstance(body, messages.Discover):
                records = self.discover(body.effect, body.precondition)
                respond(True, payload={"records": [r.to_doc() for r in records]})
            else:
                respond(False, error=f"unsupported message {header.message_type.value}")
        except RegistryError as exc:
            respond(False, error=f"{type(exc).__name__}: {exc}")
        except entish.FormulaError as exc:
            respond(False, error=f"MalformedFormula: {exc}")
