"""Abstract planning: DAGs of service-type invocations joined by causal links.

A task is a precondition (optional) and a goal effect.  The planner runs a
goal-regression causal-link search over atoms: open precondition atoms are
supported either by another node's effect atom, or by the task precondition,
using one-sided unification (variables live in the templates).  Variables
from the task precondition act as named constants, so a node arranged for
"Jar002 isOn ?Shelf" keeps the ?Shelf in its working precondition.

Atoms persist unless a later effect re-asserts the same subject with a
different right-hand side (relation: same arguments but the last; attribute:
same path under `=`), which is the frame rule used both here and by the
independent `check_plan` simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import entish
from .entish import AttributeAtom, ObjectRef, RelationAtom, TRUE, Variable
from .ontology import ValidationReport
from .registry import ServiceRecord

TASK_NODE = "task"
GOAL_NODE = "goal"
INIT = "__init__"
GOAL = "__goal__"

MAX_PLANS = 200


class MalformedTask(Exception):
    pass


@dataclass(frozen=True)
class Task:
    precondition: object | None  # Formula
    effect: object  # Formula

    def __post_init__(self):
        if self.effect is None:
            raise MalformedTask("a task needs an effect")


@dataclass(frozen=True)
class PlanNode:
    node_id: str
    service_type_name: str
    precondition_template: object  # Formula
    effect_template: object  # Formula
    binding: tuple  # sorted ((variable name, Term), ...)

    def binding_dict(self) -> dict:
        return dict(self.binding)

    def bound_precondition(self):
        return entish.substitute(self.precondition_template, self.binding_dict())

    def bound_effect(self):
        return entish.substitute(self.effect_template, self.binding_dict())


@dataclass(frozen=True)
class PlanEdge:
    producer: str  # node id, or "task" for the task precondition
    consumer: str  # node id, or "goal"
    atom_text: str


@dataclass(frozen=True)
class AbstractPlan:
    nodes: tuple
    edges: tuple
    estimated_cost: float
    estimated_time: float

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> PlanNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def to_doc(self) -> dict:
        return {
            "nodes": [
                {
                    "nodeId": n.node_id,
                    "serviceTypeName": n.service_type_name,
                    "precondition": entish.to_text(n.bound_precondition()),
                    "effect": entish.to_text(n.bound_effect()),
                    "binding": {
                        name: entish.term_to_text(term) for name, term in n.binding
                    },
                }
                for n in self.nodes
            ],
            "edges": [
                {"producer": e.producer, "consumer": e.consumer, "atom": e.atom_text}
                for e in self.edges
            ],
            "estimatedCost": self.estimated_cost,
            "estimatedTime": self.estimated_time,
        }

    def signature(self) -> tuple:
        descriptors = {}
        for n in self.nodes:
            descriptors[n.node_id] = (
                n.service_type_name,
                entish.to_text(n.bound_precondition()),
                entish.to_text(n.bound_effect()),
            )
        descriptors[TASK_NODE] = (TASK_NODE,)
        descriptors[GOAL_NODE] = (GOAL_NODE,)
        return (
            tuple(sorted(descriptors[n.node_id] for n in self.nodes)),
            tuple(sorted((descriptors[e.producer], descriptors[e.consumer], e.atom_text) for e in self.edges)),
        )


# --- planning terms and atoms ---------------------------------------------------


@dataclass(frozen=True)
class _Const:
    value: str


@dataclass(frozen=True)
class _Rigid:
    name: str  # task-precondition variable: a named constant during search


@dataclass(frozen=True)
class _PVar:
    owner: str
    name: str


@dataclass(frozen=True)
class _PRel:
    name: str
    args: tuple


@dataclass(frozen=True)
class _PAttr:
    subject: str
    path: tuple
    comparator: str
    value: object


def _resolve(term, bindings):
    while isinstance(term, _PVar) and term in bindings:
        term = bindings[term]
    return term


def _to_pterm(term, owner: str, rigid: set[str]):
    if isinstance(term, ObjectRef):
        return _Const(term.object_id)
    if term.name in rigid and owner == INIT:
        return _Rigid(term.name)
    return _PVar(owner, term.name)


def _to_patom(atom, owner: str, rigid: set[str]):
    if isinstance(atom, RelationAtom):
        return _PRel(atom.relation, tuple(_to_pterm(t, owner, rigid) for t in atom.terms))
    return _PAttr(atom.subject.object_id, atom.path, atom.comparator, atom.value)


def _from_pterm(term, bindings):
    term = _resolve(term, bindings)
    if isinstance(term, _Const):
        return ObjectRef(term.value)
    if isinstance(term, _Rigid):
        return Variable(term.name)
    return Variable(f"{term.owner}_{term.name}")


def _from_patom(atom, bindings):
    if isinstance(atom, _PRel):
        return RelationAtom(atom.name, tuple(_from_pterm(t, bindings) for t in atom.args))
    return AttributeAtom(ObjectRef(atom.subject), atom.path, atom.comparator, atom.value)


def _unify_patoms(a, b, bindings) -> dict | None:
    """Extend bindings so a equals b, or None.  Variables may sit on both sides."""
    if isinstance(a, _PAttr) or isinstance(b, _PAttr):
        if isinstance(a, _PAttr) and isinstance(b, _PAttr) and a == b:
            return bindings
        return None
    if a.name != b.name or len(a.args) != len(b.args):
        return None
    out = dict(bindings)
    for x, y in zip(a.args, b.args):
        x, y = _resolve(x, out), _resolve(y, out)
        if x == y:
            continue
        if isinstance(x, _PVar):
            out[x] = y
        elif isinstance(y, _PVar):
            out[y] = x
        else:
            return None
    return out


def _conflicts(effect, link_atom, bindings) -> bool:
    """Frame rule: same subject re-asserted with a different right-hand side."""
    if isinstance(effect, _PRel) and isinstance(link_atom, _PRel):
        if effect.name != link_atom.name or len(effect.args) != len(link_atom.args):
            return False
        head_e = [_resolve(t, bindings) for t in effect.args[:-1]]
        head_l = [_resolve(t, bindings) for t in link_atom.args[:-1]]
        for x, y in zip(head_e, head_l):
            if isinstance(x, _PVar) or isinstance(y, _PVar) or x != y:
                return False
        last_e = _resolve(effect.args[-1], bindings)
        last_l = _resolve(link_atom.args[-1], bindings)
        if isinstance(last_e, _PVar) or isinstance(last_l, _PVar):
            return False
        return last_e != last_l
    if isinstance(effect, _PAttr) and isinstance(link_atom, _PAttr):
        return (
            effect.subject == link_atom.subject
            and effect.path == link_atom.path
            and effect.comparator == "="
            and link_atom.comparator == "="
            and effect.value != link_atom.value
        )
    return False


@dataclass(frozen=True)
class _ServiceType:
    type_name: str
    precondition: object
    effect: object
    cost: float
    average_time: float
    pre_disjuncts: tuple  # tuple of atom tuples
    effect_atoms: tuple


def _service_types(available: list[ServiceRecord]) -> list[_ServiceType]:
    grouped: dict[str, list[ServiceRecord]] = {}
    for record in available:
        grouped.setdefault(record.service_type_name, []).append(record)
    out = []
    for type_name in sorted(grouped):
        records = sorted(grouped[type_name], key=lambda r: r.service_id)
        template = records[0]
        effect_dnf = entish.dnf(template.effect_template)
        if len(effect_dnf) != 1:
            continue  # disjunctive effects are not plannable
        effect_atoms = tuple(effect_dnf[0])
        if not effect_atoms:
            continue  # nothing this service asserts (e.g. cognitive templates)
        pre_disjuncts = tuple(tuple(d) for d in entish.dnf(template.precondition_template))
        out.append(
            _ServiceType(
                type_name=type_name,
                precondition=template.precondition_template,
                effect=template.effect_template,
                cost=min(r.attributes.cost for r in records),
                average_time=min(r.attributes.average_time for r in records),
                pre_disjuncts=pre_disjuncts,
                effect_atoms=effect_atoms,
            )
        )
    return out


@dataclass
class _Step:
    step_id: str
    service: _ServiceType
    pre_atoms: tuple
    eff_atoms: tuple


@dataclass
class _SearchState:
    steps: dict
    bindings: dict
    agenda: list  # (consumer step id, patom)
    links: list  # (producer, consumer, patom)
    orderings: set  # (before, after)
    order_edges: list  # extra orderings from threat resolution

    def clone(self) -> "_SearchState":
        return _SearchState(
            steps=dict(self.steps),
            bindings=dict(self.bindings),
            agenda=list(self.agenda),
            links=list(self.links),
            orderings=set(self.orderings),
            order_edges=list(self.order_edges),
        )

    def reaches(self, start: str, end: str) -> bool:
        if start == end:
            return True
        frontier = [start]
        seen = {start}
        while frontier:
            node = frontier.pop()
            for a, b in self.orderings:
                if a == node and b not in seen:
                    if b == end:
                        return True
                    seen.add(b)
                    frontier.append(b)
        return False

    def can_order(self, before: str, after: str) -> bool:
        return not self.reaches(after, before)


class _Planner:
    def __init__(self, services: list[_ServiceType], bound: int):
        self.services = services
        self.bound = bound
        self.solutions: list[_SearchState] = []

    def search(self, init_atoms: tuple, goal_atoms: tuple) -> list[_SearchState]:
        state = _SearchState(steps={}, bindings={}, agenda=[], links=[], orderings=set(), order_edges=[])
        state.steps[INIT] = _Step(INIT, None, (), init_atoms)
        state.steps[GOAL] = _Step(GOAL, None, goal_atoms, ())
        state.orderings.add((INIT, GOAL))
        state.agenda = [(GOAL, atom) for atom in goal_atoms]
        self.solutions = []
        self._dfs(state)
        return self.solutions

    def _dfs(self, state: _SearchState) -> None:
        if len(self.solutions) >= MAX_PLANS:
            return
        if not state.agenda:
            self.solutions.append(state)
            return
        consumer, open_atom = state.agenda[-1]
        base = state.clone()
        base.agenda.pop()
        # Support from an existing step's effects (the task precondition is
        # the INIT pseudo-step).
        for producer_id in sorted(base.steps):
            if producer_id in (GOAL, consumer):
                continue
            producer = base.steps[producer_id]
            if not base.can_order(producer_id, consumer):
                continue
            for eff in producer.eff_atoms:
                unified = _unify_patoms(eff, open_atom, base.bindings)
                if unified is None:
                    continue
                branch = base.clone()
                branch.bindings = unified
                self._commit_link(branch, producer_id, consumer, open_atom)
        # Support from a new step.
        real_steps = len(base.steps) - 2
        if real_steps < self.bound:
            for service in self.services:
                step_id = f"n{real_steps + 1}"
                eff_atoms = tuple(_to_patom(a, step_id, set()) for a in service.effect_atoms)
                for pre in service.pre_disjuncts:
                    for eff in eff_atoms:
                        unified = _unify_patoms(eff, open_atom, base.bindings)
                        if unified is None:
                            continue
                        branch = base.clone()
                        branch.bindings = unified
                        pre_atoms = tuple(_to_patom(a, step_id, set()) for a in pre)
                        branch.steps[step_id] = _Step(step_id, service, pre_atoms, eff_atoms)
                        branch.orderings.add((INIT, step_id))
                        branch.orderings.add((step_id, GOAL))
                        branch.agenda.extend((step_id, a) for a in pre_atoms)
                        self._commit_link(branch, step_id, consumer, open_atom)

    def _commit_link(self, state: _SearchState, producer: str, consumer: str, atom) -> None:
        state.links.append((producer, consumer, atom))
        if producer != consumer and state.reaches(consumer, producer):
            return  # ordering cycle
        state.orderings.add((producer, consumer))
        self._protect(state, self._find_threats(state))

    def _find_threats(self, state: _SearchState) -> list:
        out = []
        for producer, consumer, atom in state.links:
            for step_id, step in state.steps.items():
                if step_id in (producer, consumer, INIT, GOAL):
                    continue
                for eff in step.eff_atoms:
                    if _conflicts(eff, atom, state.bindings):
                        if state.reaches(step_id, producer) or state.reaches(consumer, step_id):
                            continue  # already ordered out of the link's span
                        out.append((step_id, producer, consumer))
        return out

    def _protect(self, state: _SearchState, threats: list) -> None:
        """Branch on demotion/promotion until no step sits inside a broken link."""
        if not threats:
            self._dfs(state)
            return
        step_id, producer, consumer = threats[0]
        rest = threats[1:]
        if state.reaches(step_id, producer) or state.reaches(consumer, step_id):
            self._protect(state, rest)
            return
        if state.can_order(step_id, producer):
            branch = state.clone()
            branch.orderings.add((step_id, producer))
            if (step_id, producer) not in branch.order_edges:
                branch.order_edges.append((step_id, producer))
            self._protect(branch, rest)
        if state.can_order(consumer, step_id):
            branch = state.clone()
            branch.orderings.add((consumer, step_id))
            if (consumer, step_id) not in branch.order_edges:
                branch.order_edges.append((consumer, step_id))
            self._protect(branch, rest)


def _extract_plan(state: _SearchState) -> AbstractPlan:
    nodes = []
    cost = 0.0
    time = 0.0
    for step_id in sorted(state.steps):
        if step_id in (INIT, GOAL):
            continue
        step = state.steps[step_id]
        template_vars = entish.variables(step.service.precondition) | entish.variables(step.service.effect)
        binding = {}
        for name in sorted(template_vars):
            term = _resolve(_PVar(step_id, name), state.bindings)
            # Unbound variables get their plan-wide canonical name so shared
            # existentials print identically in nodes and link atoms.
            binding[name] = _from_pterm(term, state.bindings)
        nodes.append(
            PlanNode(
                node_id=step_id,
                service_type_name=step.service.type_name,
                precondition_template=_owned_formula(step.pre_atoms),
                effect_template=step.service.effect,
                binding=tuple(sorted(binding.items())),
            )
        )
        cost += step.service.cost
        time += step.service.average_time
    edges = []
    for producer, consumer, atom in state.links:
        edges.append(
            PlanEdge(
                producer=TASK_NODE if producer == INIT else producer,
                consumer=GOAL_NODE if consumer == GOAL else consumer,
                atom_text=entish.to_text(_from_patom(atom, state.bindings)),
            )
        )
    for before, after in state.order_edges:
        edges.append(
            PlanEdge(
                producer=TASK_NODE if before == INIT else before,
                consumer=GOAL_NODE if after == GOAL else after,
                atom_text="",
            )
        )
    return AbstractPlan(
        nodes=tuple(nodes),
        edges=tuple(edges),
        estimated_cost=cost,
        estimated_time=time,
    )


def _owned_formula(patoms):
    """Chosen precondition disjunct as a formula over the template's variables."""
    out = []
    for a in patoms:
        if isinstance(a, _PRel):
            terms = []
            for t in a.args:
                if isinstance(t, _Const):
                    terms.append(ObjectRef(t.value))
                elif isinstance(t, _Rigid):
                    terms.append(Variable(t.name))
                else:
                    terms.append(Variable(t.name))
            out.append(RelationAtom(a.name, tuple(terms)))
        else:
            out.append(AttributeAtom(ObjectRef(a.subject), a.path, a.comparator, a.value))
    return entish.conjoin(out) if out else TRUE


DEFAULT_RANKING = ("cost", "time", "size")

_RANK_KEYS = {
    "cost": lambda p: p.estimated_cost,
    "time": lambda p: p.estimated_time,
    "size": lambda p: p.node_count,
}


def plan(task: Task, available: list[ServiceRecord], ont, bound: int,
         ranking: tuple = DEFAULT_RANKING) -> list[AbstractPlan]:
    """Ranked plans achieving the task effect, at most `bound` nodes each.

    Ranking is lexicographic over `ranking` (any order of "cost", "time",
    "size"); identical inputs always produce identical output.
    """
    if bound < 1:
        raise MalformedTask("bound must be at least 1")
    if task.effect is None:
        raise MalformedTask("a task needs an effect")
    if not ranking or any(key not in _RANK_KEYS for key in ranking):
        raise MalformedTask(f"ranking keys must be drawn from {sorted(_RANK_KEYS)}")
    goal_disjuncts = entish.dnf(task.effect)
    pre = task.precondition if task.precondition is not None else TRUE
    init_disjuncts = entish.dnf(pre)
    rigid = entish.variables(pre)
    services = _service_types(available)
    found: dict[tuple, AbstractPlan] = {}
    for init_atoms in init_disjuncts:
        init_patoms = tuple(_to_patom(a, INIT, rigid) for a in init_atoms)
        for goal_atoms in goal_disjuncts:
            goal_patoms = tuple(_to_patom(a, GOAL, set()) for a in goal_atoms)
            searcher = _Planner(services, bound)
            for solution in searcher.search(init_patoms, goal_patoms):
                extracted = _extract_plan(solution)
                key = extracted.signature()
                if key not in found:
                    found[key] = extracted
    ranked = sorted(
        found.values(),
        key=lambda p: tuple(_RANK_KEYS[key](p) for key in ranking) + (p.signature(),),
    )
    return ranked


# --- independent plan validation ---------------------------------------------------


def _match_atom(pattern, target, binding) -> dict | None:
    """Pattern atom against a state atom; state-side variables are constants."""
    if isinstance(pattern, AttributeAtom) or isinstance(target, AttributeAtom):
        if pattern == target:
            return binding
        return None
    if pattern.relation != target.relation or len(pattern.terms) != len(target.terms):
        return None
    out = dict(binding)
    for p, t in zip(pattern.terms, target.terms):
        if isinstance(p, Variable):
            bound = out.get(p.name)
            if bound is None:
                out[p.name] = t
            elif bound != t:
                return None
        else:
            if p != t:
                return None
    return out


def _match_all(patterns, state_atoms, binding) -> dict | None:
    if not patterns:
        return binding
    head, rest = patterns[0], patterns[1:]
    head = entish.substitute(head, {k: v for k, v in binding.items()})
    for target in state_atoms:
        extended = _match_atom(head, target, binding)
        if extended is not None:
            result = _match_all(rest, state_atoms, extended)
            if result is not None:
                return result
    return None


def _apply_effects(state_atoms: list, effects: list) -> list:
    out = list(state_atoms)
    for eff in effects:
        survivors = []
        for existing in out:
            if (
                isinstance(eff, RelationAtom)
                and isinstance(existing, RelationAtom)
                and eff.relation == existing.relation
                and len(eff.terms) == len(existing.terms)
                and eff.terms[:-1] == existing.terms[:-1]
                and eff.terms[-1] != existing.terms[-1]
            ):
                continue  # superseded
            if (
                isinstance(eff, AttributeAtom)
                and isinstance(existing, AttributeAtom)
                and eff.subject == existing.subject
                and eff.path == existing.path
                and eff.comparator == "="
                and existing.comparator == "="
                and eff.value != existing.value
            ):
                continue
            survivors.append(existing)
        if eff not in survivors:
            survivors.append(eff)
        out = survivors
    return out


def _topological_order(plan_: AbstractPlan, report: ValidationReport) -> list[str] | None:
    node_ids = [n.node_id for n in plan_.nodes]
    incoming = {n: set() for n in node_ids}
    for e in plan_.edges:
        if e.producer in incoming and e.consumer in incoming:
            incoming[e.consumer].add(e.producer)
    order = []
    remaining = set(node_ids)
    while remaining:
        ready = sorted(n for n in remaining if not (incoming[n] & remaining))
        if not ready:
            report.add("CycleDetected", ",".join(sorted(remaining)))
            return None
        node = ready[0]
        order.append(node)
        remaining.remove(node)
    return order


def check_plan(plan_: AbstractPlan, task: Task) -> ValidationReport:
    """Independent validity oracle: invariants plus a topological simulation."""
    report = ValidationReport()
    order = _topological_order(plan_, report)
    if order is None:
        return report
    linked: dict[str, list[str]] = {n.node_id: [] for n in plan_.nodes}
    for e in plan_.edges:
        if e.consumer in linked and e.atom_text:
            linked[e.consumer].append(e.atom_text)
    for node in plan_.nodes:
        for atom in entish.atoms(node.bound_precondition()):
            if entish.to_text(atom) not in linked[node.node_id]:
                report.add("UnlinkedPrecondition", node.node_id, entish.to_text(atom))
    pre = task.precondition if task.precondition is not None else TRUE
    goal_disjuncts = entish.dnf(task.effect)
    simulated_ok = False
    for init_atoms in entish.dnf(pre):
        state = list(init_atoms)
        failed = None
        for node_id in order:
            node = plan_.node(node_id)
            pre_atoms = entish.atoms(node.bound_precondition())
            theta = _match_all(pre_atoms, state, {})
            if theta is None:
                failed = node_id
                break
            effects = [
                entish.substitute(a, theta) for a in entish.atoms(node.bound_effect())
            ]
            state = _apply_effects(state, effects)
        if failed is not None:
            continue
        for goal_atoms in goal_disjuncts:
            if _match_all(list(goal_atoms), state, {}) is not None:
                simulated_ok = True
                break
        if simulated_ok:
            break
    if not simulated_ok:
        report.add("UnsupportedGoalAtom", GOAL_NODE, entish.to_text(task.effect))
    return report
