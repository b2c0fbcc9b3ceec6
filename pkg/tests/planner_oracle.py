"""Forward-search plan-existence oracle, independent of the regression planner.

Enumerates sequences of service applications (length <= max_nodes), tracking
an explicit atom state with the same frame rule (re-asserting a subject with
a different right-hand side supersedes).  Any DAG execution linearizes to a
sequence, so sequence reachability decides plan existence for small bounds.
"""

from __future__ import annotations

import itertools

from taskfleet import entish
from taskfleet.entish import AttributeAtom, ObjectRef, RelationAtom, TRUE, Variable


def _constants(atoms_list) -> set[str]:
    out = set()
    for atom in atoms_list:
        if isinstance(atom, RelationAtom):
            for t in atom.terms:
                if isinstance(t, ObjectRef):
                    out.add(t.object_id)
        else:
            out.add(atom.subject.object_id)
    return out


def _state_terms(atoms_list):
    """Every term appearing in the state (rigid variables included)."""
    out = []
    for atom in atoms_list:
        if isinstance(atom, RelationAtom):
            for t in atom.terms:
                if t not in out:
                    out.append(t)
        else:
            ref = ObjectRef(atom.subject.object_id)
            if ref not in out:
                out.append(ref)
    return out


def _match_one(pattern, target, binding):
    if isinstance(pattern, AttributeAtom) or isinstance(target, AttributeAtom):
        return dict(binding) if pattern == target else None
    if pattern.relation != target.relation or len(pattern.terms) != len(target.terms):
        return None
    out = dict(binding)
    for p, t in zip(pattern.terms, target.terms):
        if isinstance(p, Variable):
            if p.name in out and out[p.name] != t:
                return None
            out[p.name] = t
        elif p != t:
            return None
    return out


def _match_joint(patterns, state, binding):
    if not patterns:
        yield binding
        return
    head = entish.substitute(patterns[0], binding)
    for target in state:
        extended = _match_one(head, target, binding)
        if extended is not None:
            yield from _match_joint(patterns[1:], state, extended)


def _supersedes(new, old) -> bool:
    if isinstance(new, RelationAtom) and isinstance(old, RelationAtom):
        return (
            new.relation == old.relation
            and len(new.terms) == len(old.terms)
            and new.terms[:-1] == old.terms[:-1]
            and new.terms[-1] != old.terms[-1]
        )
    if isinstance(new, AttributeAtom) and isinstance(old, AttributeAtom):
        return (
            new.subject == old.subject
            and new.path == old.path
            and new.comparator == "="
            and old.comparator == "="
            and new.value != old.value
        )
    return False


def _apply(state, effects):
    out = [a for a in state if not any(_supersedes(e, a) for e in effects)]
    for e in effects:
        if e not in out:
            out.append(e)
    return out


def _entails(state, goal_atoms) -> bool:
    for _ in _match_joint(list(goal_atoms), state, {}):
        return True
    return False


def plan_exists(task, available, max_nodes: int) -> bool:
    """True iff some sequence of <= max_nodes service applications reaches the goal."""
    pre = task.precondition if task.precondition is not None else TRUE
    goal_disjuncts = entish.dnf(task.effect)
    templates = {}
    for record in available:
        templates.setdefault(record.service_type_name, record)
    services = []
    for name in sorted(templates):
        record = templates[name]
        effect_dnf = entish.dnf(record.effect_template)
        if len(effect_dnf) != 1 or not effect_dnf[0]:
            continue
        services.append((entish.dnf(record.precondition_template), effect_dnf[0], record))

    def goal_reached(state) -> bool:
        return any(_entails(state, g) for g in goal_disjuncts)

    def explore(state, depth) -> bool:
        if goal_reached(state):
            return True
        if depth == 0:
            return False
        universe = _state_terms(state)
        for atom_list in goal_disjuncts:
            for term in _state_terms(list(atom_list)):
                if term not in universe:
                    universe.append(term)
        for pre_disjuncts, effect_atoms, _record in services:
            for pre_atoms in pre_disjuncts:
                for theta in _match_joint(list(pre_atoms), state, {}):
                    free = set()
                    for eff in effect_atoms:
                        free |= {v for v in entish.variables(eff) if v not in theta}
                    for combo in itertools.product(universe, repeat=len(free)):
                        binding = dict(theta)
                        binding.update(zip(sorted(free), combo))
                        effects = [entish.substitute(e, binding) for e in effect_atoms]
                        if explore(_apply(state, effects), depth - 1):
                            return True
        return False

    for init_atoms in entish.dnf(pre):
        if explore(list(init_atoms), max_nodes):
            return True
    return False
