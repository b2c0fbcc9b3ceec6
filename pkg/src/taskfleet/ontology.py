"""Environment representation: type hierarchy, object instances, and map deltas.

The ontology is a single-inheritance tree rooted at ``Object`` with the two
built-in branches ``PhysicalObject`` (directly recognizable things, described
only by attributes) and ``AbstractObject`` (hierarchical composites such as
rooms and buildings, built from obligatory sub-objects and relations).

A ``WorldMap`` is one instance of the ontology: a tree of ``WorldObject``
nodes under an abstract root, plus relation instances.  Maps change only
through ``apply_delta``; every delta records prior values so it can be
inverted, which is what makes compensation computable without snapshots.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import yaml

ROOT_TYPE = "Object"
PHYSICAL_TYPE = "PhysicalObject"
ABSTRACT_TYPE = "AbstractObject"

DEFAULT_NUMERIC_TOLERANCE = 1e-3

# Attribute values are floats, text/enumeration tokens, or (for complex
# attributes) one level of named sub-values.
AttrValue = float | str | dict


class OntologyError(Exception):
    pass


class UnknownParent(OntologyError):
    pass


class DuplicateName(OntologyError):
    pass


class CycleDetected(OntologyError):
    pass


class ElementaryWithSubobjects(OntologyError):
    pass


class UnknownType(OntologyError):
    pass


class UnknownObject(OntologyError):
    pass


class TypeViolationAfterApply(OntologyError):
    pass


class WorldFormatError(OntologyError):
    pass


@dataclass(frozen=True)
class NumericRange:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise WorldFormatError(f"numeric range lower {self.lower} > upper {self.upper}")

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class AttributeDef:
    """One attribute of an object type.

    kind is one of ``numeric`` (float with a unit), ``text``, ``enumeration``
    (closed token set), or ``complex`` (one level of named sub-attributes).
    ``range`` optionally narrows numeric values to a closed interval;
    ``allowed`` narrows enumeration values to a subset.
    """

    name: str
    kind: str
    unit: str = ""
    values: tuple[str, ...] = ()
    subattributes: tuple["AttributeDef", ...] = ()
    range: NumericRange | None = None
    allowed: tuple[str, ...] = ()
    tolerance: float = DEFAULT_NUMERIC_TOLERANCE

    def __post_init__(self):
        if self.kind not in ("numeric", "text", "enumeration", "complex"):
            raise WorldFormatError(f"attribute {self.name}: unknown kind {self.kind!r}")
        if self.kind == "complex" and not self.subattributes:
            raise WorldFormatError(f"complex attribute {self.name} needs at least one sub-attribute")
        if self.kind == "complex":
            for sub in self.subattributes:
                if sub.kind == "complex":
                    raise WorldFormatError(f"attribute {self.name}: complex attributes nest one level only")
        if self.kind == "enumeration":
            if not self.values:
                raise WorldFormatError(f"enumeration attribute {self.name} needs values")
            if len(set(self.values)) != len(self.values):
                raise WorldFormatError(f"enumeration attribute {self.name} has duplicate values")
        if self.allowed and not set(self.allowed) <= set(self.values):
            raise WorldFormatError(f"attribute {self.name}: allowed subset not within declared values")


@dataclass(frozen=True)
class RelationDef:
    name: str
    arity: int
    arg_type_constraints: tuple[str, ...]

    def __post_init__(self):
        if self.arity < 1:
            raise WorldFormatError(f"relation {self.name}: arity must be positive")
        if len(self.arg_type_constraints) != self.arity:
            raise WorldFormatError(f"relation {self.name}: {self.arity} argument constraints required")


@dataclass(frozen=True)
class AttributeConstraint:
    """Per-type narrowing of an attribute: closed interval or enumeration subset."""

    attribute: str
    interval: NumericRange | None = None
    allowed: tuple[str, ...] = ()


@dataclass(frozen=True)
class RelationConstraint:
    """A relation that must hold among the type's obligatory sub-objects."""

    relation: str
    subobject_types: tuple[str, ...]


Constraint = AttributeConstraint | RelationConstraint


@dataclass(frozen=True)
class ObjectTypeDef:
    name: str
    parent: str
    attributes: tuple[AttributeDef, ...] = ()
    obligatory_subobject_types: tuple[str, ...] = ()
    constraints: tuple = ()


@dataclass(frozen=True)
class ReportEntry:
    code: str
    subject: str
    detail: str = ""


@dataclass
class ValidationReport:
    entries: list[ReportEntry] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.entries

    def add(self, code: str, subject: str, detail: str = "") -> None:
        self.entries.append(ReportEntry(code, subject, detail))

    def codes(self) -> list[str]:
        return [e.code for e in self.entries]


class Ontology:
    """Immutable-after-load registry of type, attribute, and relation definitions."""

    def __init__(self):
        self.types: dict[str, ObjectTypeDef] = {
            ROOT_TYPE: ObjectTypeDef(ROOT_TYPE, parent=""),
            PHYSICAL_TYPE: ObjectTypeDef(PHYSICAL_TYPE, parent=ROOT_TYPE),
            ABSTRACT_TYPE: ObjectTypeDef(ABSTRACT_TYPE, parent=ROOT_TYPE),
        }
        self.relations: dict[str, RelationDef] = {}

    def __eq__(self, other):
        return (
            isinstance(other, Ontology)
            and self.types == other.types
            and self.relations == other.relations
        )

    def define_relation(self, rel: RelationDef) -> "Ontology":
        if rel.name in self.relations:
            raise DuplicateName(f"relation {rel.name} already declared")
        for type_name in rel.arg_type_constraints:
            if type_name not in self.types:
                raise UnknownType(f"relation {rel.name}: argument type {type_name} not declared")
        self.relations[rel.name] = rel
        return self

    def define_type(self, d: ObjectTypeDef) -> "Ontology":
        if d.name in self.types:
            if d.name == d.parent:
                raise CycleDetected(f"type {d.name} cannot be its own parent")
            raise DuplicateName(f"type {d.name} already declared")
        if d.name == d.parent:
            raise CycleDetected(f"type {d.name} cannot be its own parent")
        if d.parent not in self.types:
            raise UnknownParent(f"parent type {d.parent} not declared")
        # Parent chain is acyclic by construction (parents must already exist),
        # but guard against a corrupted table anyway.
        seen = {d.name}
        cursor = d.parent
        while cursor:
            if cursor in seen:
                raise CycleDetected(f"type {d.name}: inheritance cycle through {cursor}")
            seen.add(cursor)
            cursor = self.types[cursor].parent
        physical = self._descends(d.parent, PHYSICAL_TYPE)
        abstract = self._descends(d.parent, ABSTRACT_TYPE)
        if physical and d.obligatory_subobject_types:
            raise ElementaryWithSubobjects(
                f"type {d.name} descends from {PHYSICAL_TYPE} and cannot require sub-objects"
            )
        if abstract and not d.obligatory_subobject_types:
            raise WorldFormatError(
                f"abstract type {d.name} needs at least one obligatory sub-object type"
            )
        for sub in d.obligatory_subobject_types:
            if sub not in self.types:
                raise UnknownType(f"type {d.name}: obligatory sub-object type {sub} not declared")
        for c in d.constraints:
            if isinstance(c, RelationConstraint) and c.relation not in self.relations:
                raise UnknownType(f"type {d.name}: constraint relation {c.relation} not declared")
        self.types[d.name] = d
        return self

    def _descends(self, name: str, ancestor: str) -> bool:
        cursor = name
        while cursor:
            if cursor == ancestor:
                return True
            cursor = self.types[cursor].parent
        return False

    def is_subtype(self, a: str, b: str) -> bool:
        """True iff b is on a's parent chain (reflexive)."""
        if a not in self.types:
            raise UnknownType(f"type {a} not declared")
        if b not in self.types:
            raise UnknownType(f"type {b} not declared")
        return self._descends(a, b)

    def ancestors(self, name: str) -> list[str]:
        if name not in self.types:
            raise UnknownType(f"type {name} not declared")
        chain = []
        cursor = name
        while cursor:
            chain.append(cursor)
            cursor = self.types[cursor].parent
        return chain

    def is_abstract(self, name: str) -> bool:
        return self.is_subtype(name, ABSTRACT_TYPE)

    def is_elementary(self, name: str) -> bool:
        return self.is_subtype(name, PHYSICAL_TYPE)

    def attributes_of(self, type_name: str) -> dict[str, AttributeDef]:
        """Attributes required along the whole type chain; nearest definition wins."""
        merged: dict[str, AttributeDef] = {}
        for ancestor in reversed(self.ancestors(type_name)):
            for attr in self.types[ancestor].attributes:
                merged[attr.name] = attr
        return merged

    def attribute_def(self, type_name: str, path: tuple[str, ...]) -> AttributeDef | None:
        attrs = self.attributes_of(type_name)
        head = attrs.get(path[0])
        if head is None:
            return None
        if len(path) == 1:
            return head
        if len(path) == 2 and head.kind == "complex":
            for sub in head.subattributes:
                if sub.name == path[1]:
                    return sub
        return None

    def declares_attribute(self, name: str) -> bool:
        for d in self.types.values():
            for attr in d.attributes:
                if attr.name == name:
                    return True
                for sub in attr.subattributes:
                    if sub.name == name:
                        return True
        return False

    def tolerance(self, type_name: str | None, path: tuple[str, ...]) -> float:
        """Comparison tolerance for a numeric attribute; a tight default otherwise."""
        if type_name is not None and type_name in self.types:
            d = self.attribute_def(type_name, path)
            if d is not None and d.kind == "numeric":
                return d.tolerance
        return 1e-9

    def constraints_of(self, type_name: str) -> list:
        out = []
        for ancestor in reversed(self.ancestors(type_name)):
            out.extend(self.types[ancestor].constraints)
        return out


@dataclass(frozen=True)
class RelationInstance:
    name: str
    args: tuple[str, ...]


@dataclass
class WorldObject:
    id: str
    type_name: str
    attribute_values: dict = field(default_factory=dict)
    subobjects: list = field(default_factory=list)
    relations: list = field(default_factory=list)

    def get_attribute(self, path: tuple[str, ...]):
        value = self.attribute_values
        for part in path:
            if not isinstance(value, dict) or part not in value:
                return None
            value = value[part]
        return value

    def set_attribute(self, path: tuple[str, ...], value) -> None:
        target = self.attribute_values
        for part in path[:-1]:
            target = target.setdefault(part, {})
        target[path[-1]] = value


class WorldMap:
    """A versioned environment instance: object tree plus relation set."""

    def __init__(self, root: WorldObject, version: int = 0):
        self.root = root
        self.version = version
        self._index: dict[str, WorldObject] = {}
        self._parents: dict[str, str | None] = {}
        self._reindex()

    def _reindex(self) -> None:
        self._index.clear()
        self._parents.clear()
        stack = [(self.root, None)]
        while stack:
            obj, parent = stack.pop()
            if obj.id in self._index:
                raise WorldFormatError(f"duplicate object id {obj.id}")
            self._index[obj.id] = obj
            self._parents[obj.id] = parent
            for sub in obj.subobjects:
                stack.append((sub, obj.id))
        for rel in self.relations():
            for arg in rel.args:
                if arg not in self._index:
                    raise WorldFormatError(f"relation {rel.name} references unknown object {arg}")

    def ids(self) -> list[str]:
        return sorted(self._index)

    def has_object(self, object_id: str) -> bool:
        return object_id in self._index

    def object(self, object_id: str) -> WorldObject:
        try:
            return self._index[object_id]
        except KeyError:
            raise UnknownObject(f"object {object_id} not in map") from None

    def parent_of(self, object_id: str) -> str | None:
        return self._parents[object_id]

    def relations(self) -> list[RelationInstance]:
        out = []
        for obj in self._index.values():
            out.extend(obj.relations)
        return sorted(out, key=lambda r: (r.name, r.args))

    def has_relation(self, rel: RelationInstance) -> bool:
        home = self._index.get(rel.args[0]) if rel.args else None
        if home is not None and rel in home.relations:
            return True
        return any(rel in obj.relations for obj in self._index.values())

    def copy(self) -> "WorldMap":
        return WorldMap(copy.deepcopy(self.root), self.version)

    def canonical(self) -> dict:
        """Structure-only snapshot (version excluded) for equality checks."""

        def obj_doc(o: WorldObject) -> dict:
            return {
                "id": o.id,
                "type": o.type_name,
                "attributes": copy.deepcopy(o.attribute_values),
                "subobjects": [obj_doc(s) for s in sorted(o.subobjects, key=lambda x: x.id)],
            }

        return {
            "tree": obj_doc(self.root),
            "relations": [[r.name, list(r.args)] for r in self.relations()],
        }

    def same_content(self, other: "WorldMap") -> bool:
        return self.canonical() == other.canonical()


# --- deltas -----------------------------------------------------------------


@dataclass(frozen=True)
class SetAttribute:
    object_id: str
    attribute: tuple[str, ...]
    value: object
    prior: object


@dataclass(frozen=True)
class AddRelation:
    relation: RelationInstance


@dataclass(frozen=True)
class RemoveRelation:
    relation: RelationInstance


@dataclass(frozen=True)
class AddObject:
    parent_id: str
    object_doc: dict


@dataclass(frozen=True)
class RemoveObject:
    parent_id: str
    object_doc: dict


@dataclass(frozen=True)
class MapDelta:
    entries: tuple = ()

    def __bool__(self):
        return bool(self.entries)


def invert_delta(delta: MapDelta) -> MapDelta:
    inverted = []
    for entry in reversed(delta.entries):
        if isinstance(entry, SetAttribute):
            inverted.append(SetAttribute(entry.object_id, entry.attribute, entry.prior, entry.value))
        elif isinstance(entry, AddRelation):
            inverted.append(RemoveRelation(entry.relation))
        elif isinstance(entry, RemoveRelation):
            inverted.append(AddRelation(entry.relation))
        elif isinstance(entry, AddObject):
            inverted.append(RemoveObject(entry.parent_id, entry.object_doc))
        elif isinstance(entry, RemoveObject):
            inverted.append(AddObject(entry.parent_id, entry.object_doc))
        else:
            raise WorldFormatError(f"unknown delta entry {entry!r}")
    return MapDelta(tuple(inverted))


def apply_delta(world: WorldMap, delta: MapDelta, ont: Ontology) -> WorldMap:
    """Produce a new map with the delta applied and the version bumped.

    Adds of already-present relations and removes of absent ones are no-ops;
    delta builders never emit them, which keeps apply/invert a roundtrip.
    """
    out = world.copy()
    for entry in delta.entries:
        if isinstance(entry, SetAttribute):
            out.object(entry.object_id).set_attribute(entry.attribute, entry.value)
        elif isinstance(entry, AddRelation):
            rel = entry.relation
            for arg in rel.args:
                if not out.has_object(arg):
                    raise UnknownObject(f"relation {rel.name} references unknown object {arg}")
            home = out.object(rel.args[0])
            if not out.has_relation(rel):
                home.relations.append(rel)
        elif isinstance(entry, RemoveRelation):
            rel = entry.relation
            for obj in [out.object(i) for i in out.ids()]:
                if rel in obj.relations:
                    obj.relations.remove(rel)
        elif isinstance(entry, AddObject):
            if not out.has_object(entry.parent_id):
                raise UnknownObject(f"parent {entry.parent_id} not in map")
            obj = object_from_doc(entry.object_doc)
            if out.has_object(obj.id):
                raise DuplicateName(f"object id {obj.id} already in map")
            out.object(entry.parent_id).subobjects.append(obj)
            out._reindex()
        elif isinstance(entry, RemoveObject):
            obj_id = entry.object_doc["id"]
            victim = out.object(obj_id)
            parent = out.object(entry.parent_id)
            if victim not in parent.subobjects:
                raise UnknownObject(f"object {obj_id} is not a sub-object of {entry.parent_id}")
            parent.subobjects.remove(victim)
            out._reindex()
        else:
            raise WorldFormatError(f"unknown delta entry {entry!r}")
    out.version = world.version + 1
    try:
        out._reindex()
    except WorldFormatError as exc:
        raise TypeViolationAfterApply(str(exc)) from exc
    report = validate_object(out.root, ont, world=out)
    if not report.ok:
        first = report.entries[0]
        raise TypeViolationAfterApply(f"{first.code}: {first.subject} {first.detail}".strip())
    return out


# --- validation ---------------------------------------------------------------


def _check_value(attr: AttributeDef, value) -> str | None:
    if attr.kind == "numeric":
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return f"expected number for {attr.name}"
        if attr.range is not None and not attr.range.contains(float(value)):
            return f"{attr.name}={value} outside [{attr.range.lower}, {attr.range.upper}]"
    elif attr.kind == "text":
        if not isinstance(value, str):
            return f"expected text for {attr.name}"
    elif attr.kind == "enumeration":
        if value not in attr.values:
            return f"{attr.name}={value!r} not in enumeration"
        if attr.allowed and value not in attr.allowed:
            return f"{attr.name}={value!r} not in allowed subset"
    elif attr.kind == "complex":
        if not isinstance(value, dict):
            return f"expected sub-attribute map for {attr.name}"
        for sub in attr.subattributes:
            if sub.name not in value:
                return f"{attr.name}.{sub.name} missing"
            problem = _check_value(sub, value[sub.name])
            if problem:
                return f"{attr.name}.{problem}"
        extras = set(value) - {s.name for s in attr.subattributes}
        if extras:
            return f"{attr.name} has undeclared sub-attributes {sorted(extras)}"
    return None


def validate_object(obj: WorldObject, ont: Ontology, world: WorldMap | None = None) -> ValidationReport:
    """Check an object (and its subtree) against its type chain.

    The top object's type must be declared; every other problem is a report
    entry rather than an exception.
    """
    if obj.type_name not in ont.types:
        raise UnknownType(f"type {obj.type_name} not declared")
    report = ValidationReport()
    _validate_into(obj, ont, world, report)
    return report


def _validate_into(obj: WorldObject, ont: Ontology, world: WorldMap | None, report: ValidationReport) -> None:
    if obj.type_name not in ont.types:
        report.add("UnknownType", obj.id, obj.type_name)
        return
    required = ont.attributes_of(obj.type_name)
    for name, attr in required.items():
        if name not in obj.attribute_values:
            report.add("MissingAttribute", obj.id, name)
            continue
        problem = _check_value(attr, obj.attribute_values[name])
        if problem:
            report.add("ConstraintViolated", obj.id, problem)
    for name in obj.attribute_values:
        if name not in required:
            report.add("UndeclaredAttribute", obj.id, name)
    subobject_types = {}
    for sub in obj.subobjects:
        subobject_types.setdefault(sub.type_name, []).append(sub.id)
    type_def_chain = ont.constraints_of(obj.type_name)
    obligatory = []
    for ancestor in ont.ancestors(obj.type_name):
        obligatory.extend(ont.types[ancestor].obligatory_subobject_types)
    for needed in obligatory:
        found = any(
            needed in ont.ancestors(sub.type_name) if sub.type_name in ont.types else False
            for sub in obj.subobjects
        )
        if not found:
            report.add("MissingSubobject", obj.id, needed)
    for c in type_def_chain:
        if isinstance(c, AttributeConstraint):
            path = tuple(c.attribute.split("."))
            value = obj.get_attribute(path)
            if value is None:
                report.add("MissingAttribute", obj.id, c.attribute)
            elif c.interval is not None:
                if not isinstance(value, (int, float)) or not c.interval.contains(float(value)):
                    report.add("ConstraintViolated", obj.id, f"{c.attribute}={value}")
            elif c.allowed and value not in c.allowed:
                report.add("ConstraintViolated", obj.id, f"{c.attribute}={value!r}")
        elif isinstance(c, RelationConstraint):
            if not _relation_constraint_holds(obj, c, ont):
                report.add("RelationConstraintViolated", obj.id, c.relation)
    for sub in obj.subobjects:
        _validate_into(sub, ont, world, report)


def _relation_constraint_holds(obj: WorldObject, c: RelationConstraint, ont: Ontology) -> bool:
    by_type: dict[str, list[str]] = {}
    for sub in obj.subobjects:
        if sub.type_name in ont.types:
            for ancestor in ont.ancestors(sub.type_name):
                by_type.setdefault(ancestor, []).append(sub.id)
    candidate_args = [by_type.get(t, []) for t in c.subobject_types]
    if any(not group for group in candidate_args):
        return False
    instances = {r for r in obj.relations if r.name == c.relation}
    for sub in obj.subobjects:
        instances.update(r for r in sub.relations if r.name == c.relation)

    def match(idx: int, chosen: list[str]) -> bool:
        if idx == len(candidate_args):
            return RelationInstance(c.relation, tuple(chosen)) in instances
        return any(match(idx + 1, chosen + [arg]) for arg in candidate_args[idx])

    return match(0, [])


# --- document (de)serialization ----------------------------------------------


def _attr_to_doc(attr: AttributeDef) -> dict:
    doc: dict = {"name": attr.name, "kind": attr.kind}
    if attr.unit:
        doc["unit"] = attr.unit
    if attr.kind == "numeric" and attr.tolerance != DEFAULT_NUMERIC_TOLERANCE:
        doc["tolerance"] = attr.tolerance
    if attr.values:
        doc["values"] = list(attr.values)
    if attr.allowed:
        doc["allowed"] = list(attr.allowed)
    if attr.range is not None:
        doc["min"] = attr.range.lower
        doc["max"] = attr.range.upper
    if attr.subattributes:
        doc["subattributes"] = [_attr_to_doc(s) for s in attr.subattributes]
    return doc


def _attr_from_doc(doc: dict) -> AttributeDef:
    rng = None
    if "min" in doc or "max" in doc:
        rng = NumericRange(float(doc["min"]), float(doc["max"]))
    return AttributeDef(
        name=doc["name"],
        kind=doc["kind"],
        unit=doc.get("unit", ""),
        values=tuple(doc.get("values", ())),
        subattributes=tuple(_attr_from_doc(s) for s in doc.get("subattributes", ())),
        range=rng,
        allowed=tuple(doc.get("allowed", ())),
        tolerance=float(doc.get("tolerance", DEFAULT_NUMERIC_TOLERANCE)),
    )


def _constraint_to_doc(c) -> dict:
    if isinstance(c, AttributeConstraint):
        doc = {"attribute": c.attribute}
        if c.interval is not None:
            doc["min"] = c.interval.lower
            doc["max"] = c.interval.upper
        if c.allowed:
            doc["allowed"] = list(c.allowed)
        return doc
    return {"relation": c.relation, "subobjects": list(c.subobject_types)}


def _constraint_from_doc(doc: dict):
    if "attribute" in doc:
        interval = None
        if "min" in doc or "max" in doc:
            interval = NumericRange(float(doc["min"]), float(doc["max"]))
        return AttributeConstraint(doc["attribute"], interval, tuple(doc.get("allowed", ())))
    return RelationConstraint(doc["relation"], tuple(doc["subobjects"]))


def object_to_doc(obj: WorldObject) -> dict:
    doc: dict = {"id": obj.id, "type": obj.type_name}
    if obj.attribute_values:
        doc["attributes"] = copy.deepcopy(obj.attribute_values)
    if obj.relations:
        doc["relations"] = [{"name": r.name, "args": list(r.args)} for r in obj.relations]
    if obj.subobjects:
        doc["subobjects"] = [object_to_doc(s) for s in obj.subobjects]
    return doc


def object_from_doc(doc: dict) -> WorldObject:
    return WorldObject(
        id=doc["id"],
        type_name=doc["type"],
        attribute_values=copy.deepcopy(doc.get("attributes", {})),
        subobjects=[object_from_doc(s) for s in doc.get("subobjects", [])],
        relations=[RelationInstance(r["name"], tuple(r["args"])) for r in doc.get("relations", [])],
    )


def delta_to_doc(delta: MapDelta) -> list[dict]:
    out = []
    for e in delta.entries:
        if isinstance(e, SetAttribute):
            out.append({
                "op": "set",
                "object": e.object_id,
                "attribute": ".".join(e.attribute),
                "value": e.value,
                "prior": e.prior,
            })
        elif isinstance(e, AddRelation):
            out.append({"op": "add_relation", "name": e.relation.name, "args": list(e.relation.args)})
        elif isinstance(e, RemoveRelation):
            out.append({"op": "remove_relation", "name": e.relation.name, "args": list(e.relation.args)})
        elif isinstance(e, AddObject):
            out.append({"op": "add_object", "parent": e.parent_id, "object": e.object_doc})
        elif isinstance(e, RemoveObject):
            out.append({"op": "remove_object", "parent": e.parent_id, "object": e.object_doc})
    return out


def delta_from_doc(doc: list[dict]) -> MapDelta:
    entries = []
    for e in doc:
        op = e["op"]
        if op == "set":
            entries.append(SetAttribute(e["object"], tuple(e["attribute"].split(".")), e["value"], e["prior"]))
        elif op == "add_relation":
            entries.append(AddRelation(RelationInstance(e["name"], tuple(e["args"]))))
        elif op == "remove_relation":
            entries.append(RemoveRelation(RelationInstance(e["name"], tuple(e["args"]))))
        elif op == "add_object":
            entries.append(AddObject(e["parent"], e["object"]))
        elif op == "remove_object":
            entries.append(RemoveObject(e["parent"], e["object"]))
        else:
            raise WorldFormatError(f"unknown delta op {op!r}")
    return MapDelta(tuple(entries))


# --- world files ---------------------------------------------------------------

# One human-editable YAML document holds the whole model: type definitions
# first, then the root object instance.  Relation instances are re-homed onto
# their first argument's object at load time so that saved maps are canonical.


def world_to_doc(ont: Ontology, world: WorldMap) -> dict:
    types = []
    for name in sorted(ont.types):
        if name in (ROOT_TYPE, PHYSICAL_TYPE, ABSTRACT_TYPE):
            continue
        d = ont.types[name]
        doc: dict = {"name": d.name, "parent": d.parent}
        if d.attributes:
            doc["attributes"] = [_attr_to_doc(a) for a in d.attributes]
        if d.obligatory_subobject_types:
            doc["obligatory_subobjects"] = list(d.obligatory_subobject_types)
        if d.constraints:
            doc["constraints"] = [_constraint_to_doc(c) for c in d.constraints]
        types.append(doc)
    relations = [
        {"name": r.name, "args": list(r.arg_type_constraints)}
        for r in sorted(ont.relations.values(), key=lambda r: r.name)
    ]
    return {
        "relations": relations,
        "types": types,
        "world": object_to_doc(world.root),
        "version": world.version,
    }


def world_from_doc(doc: dict) -> tuple[Ontology, WorldMap]:
    ont = Ontology()
    # Relations enter the table first (types may constrain on them); their
    # argument-type names are validated after the type tree is complete.
    for rdoc in doc.get("relations", []):
        args = tuple(rdoc["args"])
        rel = RelationDef(rdoc["name"], len(args), args)
        if rel.name in ont.relations:
            raise DuplicateName(f"relation {rel.name} already declared")
        ont.relations[rel.name] = rel
    pending = list(doc.get("types", []))
    # Types may reference each other; insert parents first.
    progress = True
    while pending and progress:
        progress = False
        remaining = []
        for tdoc in pending:
            if tdoc["parent"] in ont.types and all(
                s in ont.types for s in tdoc.get("obligatory_subobjects", [])
            ):
                ont.define_type(
                    ObjectTypeDef(
                        name=tdoc["name"],
                        parent=tdoc["parent"],
                        attributes=tuple(_attr_from_doc(a) for a in tdoc.get("attributes", [])),
                        obligatory_subobject_types=tuple(tdoc.get("obligatory_subobjects", ())),
                        constraints=tuple(_constraint_from_doc(c) for c in tdoc.get("constraints", [])),
                    )
                )
                progress = True
            else:
                remaining.append(tdoc)
        pending = remaining
    if pending:
        names = [t["name"] for t in pending]
        raise WorldFormatError(f"unresolvable type references: {names}")
    for rel in ont.relations.values():
        for type_name in rel.arg_type_constraints:
            if type_name not in ont.types:
                raise UnknownType(f"relation {rel.name}: argument type {type_name} not declared")
    root = object_from_doc(doc["world"])
    world = WorldMap(root, version=int(doc.get("version", 0)))
    _rehome_relations(world)
    return ont, world


def _rehome_relations(world: WorldMap) -> None:
    all_relations = world.relations()
    for obj_id in world.ids():
        world.object(obj_id).relations = []
    for rel in all_relations:
        world.object(rel.args[0]).relations.append(rel)
    world._reindex()


def load_world(path: str) -> tuple[Ontology, WorldMap]:
    with open(path, "r", encoding="utf-8") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict) or "world" not in doc:
        raise WorldFormatError(f"{path}: not a world document")
    return world_from_doc(doc)


def save_world(path: str, ont: Ontology, world: WorldMap) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(world_to_doc(ont, world), f, sort_keys=False)
