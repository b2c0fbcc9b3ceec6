"""Quantifier-free situation language for preconditions, effects, and commitments.

Grammar (AND binds tighter than OR; parentheses allowed):

    Formula := Disj
    Disj    := Conj ("OR" Conj)*
    Conj    := Atom ("AND" Atom)*
    Atom    := "true" | "(" Formula ")" | Term RelName Term
             | Ident "." AttrPath Cmp Literal
    Term    := Ident | "?" Ident
    Cmp     := "=" | "!=" | "<" | "<=" | ">" | ">=" (Unicode forms accepted)

Free variables read existentially: ``find_bindings`` returns exactly the
assignments of map object ids to variables under which the formula holds.
All values are immutable; every operation here is pure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ontology import Ontology, WorldMap


class FormulaError(Exception):
    pass


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, position: int, expected: str = ""):
        super().__init__(f"{message} at position {position}" + (f" (expected {expected})" if expected else ""))
        self.position = position
        self.expected = expected


class UnknownRelation(FormulaError):
    pass


class UnknownAttribute(FormulaError):
    pass


# --- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectRef:
    object_id: str


@dataclass(frozen=True)
class Variable:
    name: str

    def __post_init__(self):
        if not self.name:
            raise FormulaError("variable names must be nonempty")


Term = ObjectRef | Variable


@dataclass(frozen=True)
class TrueFormula:
    pass


@dataclass(frozen=True)
class RelationAtom:
    relation: str
    terms: tuple


@dataclass(frozen=True)
class AttributeAtom:
    subject: ObjectRef
    path: tuple[str, ...]
    comparator: str
    value: object


@dataclass(frozen=True)
class Conjunction:
    children: tuple


@dataclass(frozen=True)
class Disjunction:
    children: tuple


TRUE = TrueFormula()

Formula = TrueFormula | RelationAtom | AttributeAtom | Conjunction | Disjunction
Atom = RelationAtom | AttributeAtom

COMPARATORS = ("=", "!=", "<", "<=", ">", ">=")
_UNICODE_CMP = {"≠": "!=", "≤": "<=", "≥": ">="}


# --- tokenizer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<cmp><=|>=|!=|[=<>]|≠|≤|≥)
  | (?P<punct>[().?])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise FormulaSyntaxError(f"unexpected {tok.text!r}", tok.position, expected=text or kind)
        return self.advance()

    def parse(self):
        f = self.disjunction()
        tok = self.peek()
        if tok.kind != "eof":
            raise FormulaSyntaxError(f"trailing input {tok.text!r}", tok.position, expected="end of formula")
        return f

    def disjunction(self):
        children = [self.conjunction()]
        while self.peek().kind == "ident" and self.peek().text == "OR":
            self.advance()
            children.append(self.conjunction())
        if len(children) == 1:
            return children[0]
        return Disjunction(tuple(children))

    def conjunction(self):
        children = [self.atom()]
        while self.peek().kind == "ident" and self.peek().text == "AND":
            self.advance()
            children.append(self.atom())
        if len(children) == 1:
            return children[0]
        return Conjunction(tuple(children))

    def atom(self):
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            inner = self.disjunction()
            self.expect("punct", ")")
            return inner
        if tok.kind == "ident" and tok.text == "true":
            self.advance()
            return TRUE
        if tok.kind == "punct" and tok.text == "?":
            subject = self.term()
            return self.relation_atom(subject)
        if tok.kind == "ident":
            ident = self.advance()
            nxt = self.peek()
            if nxt.kind == "punct" and nxt.text == ".":
                return self.attribute_atom(ident)
            return self.relation_atom(ObjectRef(ident.text))
        raise FormulaSyntaxError(f"unexpected {tok.text!r}", tok.position, expected="atom")

    def term(self):
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "?":
            self.advance()
            name = self.expect("ident")
            return Variable(name.text)
        if tok.kind == "ident":
            return ObjectRef(self.advance().text)
        raise FormulaSyntaxError(f"unexpected {tok.text!r}", tok.position, expected="term")

    def relation_atom(self, first):
        rel = self.expect("ident")
        if rel.text in ("AND", "OR", "true"):
            raise FormulaSyntaxError(f"{rel.text!r} is reserved", rel.position, expected="relation name")
        second = self.term()
        return RelationAtom(rel.text, (first, second))

    def attribute_atom(self, subject_tok: _Token):
        path = []
        while self.peek().kind == "punct" and self.peek().text == ".":
            self.advance()
            path.append(self.expect("ident").text)
        cmp_tok = self.expect("cmp")
        op = _UNICODE_CMP.get(cmp_tok.text, cmp_tok.text)
        value = self.literal()
        return AttributeAtom(ObjectRef(subject_tok.text), tuple(path), op, value)

    def literal(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return float(tok.text)
        if tok.kind == "string":
            self.advance()
            return tok.text[1:-1].replace('\\"', '"').replace("\\\\", "\\")
        if tok.kind == "ident":
            self.advance()
            return tok.text
        raise FormulaSyntaxError(f"unexpected {tok.text!r}", tok.position, expected="literal")


def parse(text: str):
    """Parse canonical formula text into an AST."""
    if not isinstance(text, str):
        raise FormulaSyntaxError("formula must be text", 0)
    stripped = text.strip()
    if not stripped:
        raise FormulaSyntaxError("empty formula", 0, expected="atom")
    return _Parser(stripped).parse()


# --- printing -------------------------------------------------------------------

_BARE_TOKEN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _literal_text(value) -> str:
    if isinstance(value, bool):
        raise FormulaError("boolean literals are not part of the language")
    if isinstance(value, (int, float)):
        v = float(value)
        if v.is_integer():
            return str(int(v))
        return repr(v)
    if isinstance(value, str):
        if _BARE_TOKEN.match(value) and value not in ("AND", "OR", "true"):
            return value
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise FormulaError(f"unsupported literal {value!r}")


def _term_text(term) -> str:
    if isinstance(term, Variable):
        return f"?{term.name}"
    return term.object_id


def term_to_text(term) -> str:
    return _term_text(term)


def to_text(f) -> str:
    """Deterministic canonical syntax; parse(to_text(f)) is structurally f."""
    if isinstance(f, TrueFormula):
        return "true"
    if isinstance(f, RelationAtom):
        left, right = f.terms
        return f"{_term_text(left)} {f.relation} {_term_text(right)}"
    if isinstance(f, AttributeAtom):
        return f"{f.subject.object_id}.{'.'.join(f.path)} {f.comparator} {_literal_text(f.value)}"
    if isinstance(f, Conjunction):
        parts = [
            f"({to_text(c)})" if isinstance(c, (Conjunction, Disjunction)) else to_text(c)
            for c in f.children
        ]
        return " AND ".join(parts)
    if isinstance(f, Disjunction):
        parts = [
            f"({to_text(c)})" if isinstance(c, Disjunction) else to_text(c)
            for c in f.children
        ]
        return " OR ".join(parts)
    raise FormulaError(f"not a formula: {f!r}")


# --- structure helpers ------------------------------------------------------------


def variables(f) -> set[str]:
    if isinstance(f, RelationAtom):
        return {t.name for t in f.terms if isinstance(t, Variable)}
    if isinstance(f, (Conjunction, Disjunction)):
        out: set[str] = set()
        for c in f.children:
            out |= variables(c)
        return out
    return set()


def is_ground(f) -> bool:
    return not variables(f)


def atoms(f) -> list:
    """All relation/attribute atoms in the formula (True contributes none)."""
    if isinstance(f, (RelationAtom, AttributeAtom)):
        return [f]
    if isinstance(f, (Conjunction, Disjunction)):
        out = []
        for c in f.children:
            out.extend(atoms(c))
        return out
    return []


def _coerce_term(value):
    if isinstance(value, (ObjectRef, Variable)):
        return value
    if isinstance(value, str):
        return ObjectRef(value)
    raise FormulaError(f"cannot substitute {value!r} for a term")


def substitute(f, binding: dict):
    """Replace bound variables; unbound ones pass through.  Idempotent."""
    if isinstance(f, RelationAtom):
        terms = tuple(
            _coerce_term(binding[t.name]) if isinstance(t, Variable) and t.name in binding else t
            for t in f.terms
        )
        return RelationAtom(f.relation, terms)
    if isinstance(f, Conjunction):
        return Conjunction(tuple(substitute(c, binding) for c in f.children))
    if isinstance(f, Disjunction):
        return Disjunction(tuple(substitute(c, binding) for c in f.children))
    return f


def conjoin(parts: list) -> object:
    """Conjunction of parts with True and single-element simplification."""
    flat = [p for p in parts if not isinstance(p, TrueFormula)]
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return Conjunction(tuple(flat))


def dnf(f) -> list[list]:
    """Disjunctive normal form as a list of atom lists ([] means `true`)."""
    if isinstance(f, TrueFormula):
        return [[]]
    if isinstance(f, (RelationAtom, AttributeAtom)):
        return [[f]]
    if isinstance(f, Conjunction):
        combos: list[list] = [[]]
        for child in f.children:
            expanded = []
            for disjunct in dnf(child):
                for combo in combos:
                    expanded.append(combo + disjunct)
            combos = expanded
        return combos
    if isinstance(f, Disjunction):
        out = []
        for child in f.children:
            out.extend(dnf(child))
        return out
    raise FormulaError(f"not a formula: {f!r}")


# --- evaluation --------------------------------------------------------------------


def _compare(op: str, left, right, tolerance: float) -> bool:
    numeric = (
        isinstance(left, (int, float)) and not isinstance(left, bool)
        and isinstance(right, (int, float)) and not isinstance(right, bool)
    )
    if numeric:
        a, b = float(left), float(right)
        eq = abs(a - b) <= tolerance
        if op == "=":
            return eq
        if op == "!=":
            return not eq
        if op == "<":
            return a < b and not eq
        if op == "<=":
            return a <= b or eq
        if op == ">":
            return a > b and not eq
        if op == ">=":
            return a >= b or eq
        raise FormulaError(f"unknown comparator {op!r}")
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    return False  # ordering comparisons are numeric-only


def _check_names(f, ont: Ontology) -> None:
    for atom in atoms(f):
        if isinstance(atom, RelationAtom):
            if atom.relation not in ont.relations:
                raise UnknownRelation(f"relation {atom.relation} not declared")
        else:
            if not ont.declares_attribute(atom.path[0]):
                raise UnknownAttribute(f"attribute {atom.path[0]} not declared")


def _eval_attribute(atom: AttributeAtom, world: WorldMap, ont: Ontology) -> bool:
    if not world.has_object(atom.subject.object_id):
        return False
    obj = world.object(atom.subject.object_id)
    value = obj.get_attribute(atom.path)
    if value is None:
        return False
    tolerance = ont.tolerance(obj.type_name, atom.path)
    return _compare(atom.comparator, value, atom.value, tolerance)


def evaluate(f, world: WorldMap, ont: Ontology) -> bool:
    """Ground evaluation against a map (closed world: relations hold iff asserted)."""
    if isinstance(f, TrueFormula):
        return True
    if isinstance(f, RelationAtom):
        if variables(f):
            raise FormulaError(f"cannot evaluate open formula {to_text(f)}")
        from .ontology import RelationInstance

        args = tuple(t.object_id for t in f.terms)
        return world.has_relation(RelationInstance(f.relation, args))
    if isinstance(f, AttributeAtom):
        return _eval_attribute(f, world, ont)
    if isinstance(f, Conjunction):
        return all(evaluate(c, world, ont) for c in f.children)
    if isinstance(f, Disjunction):
        return any(evaluate(c, world, ont) for c in f.children)
    raise FormulaError(f"not a formula: {f!r}")


def _join(left: list[dict], right: list[dict]) -> list[dict]:
    out = []
    for a in left:
        for b in right:
            if all(a[k] == b[k] for k in a.keys() & b.keys()):
                merged = dict(a)
                merged.update(b)
                out.append(merged)
    return out


def _expand(partials: list[dict], vars_needed: set[str], universe: list[str]) -> list[dict]:
    out = partials
    for name in sorted(vars_needed):
        expanded = []
        for b in out:
            if name in b:
                expanded.append(b)
            else:
                for obj_id in universe:
                    extended = dict(b)
                    extended[name] = obj_id
                    expanded.append(extended)
        out = expanded
    return out


def _sat(f, world: WorldMap, ont: Ontology, universe: list[str]) -> list[dict]:
    if isinstance(f, TrueFormula):
        return [{}]
    if isinstance(f, AttributeAtom):
        return [{}] if _eval_attribute(f, world, ont) else []
    if isinstance(f, RelationAtom):
        out = []
        for rel in world.relations():
            if rel.name != f.relation or len(rel.args) != len(f.terms):
                continue
            binding: dict = {}
            ok = True
            for term, arg in zip(f.terms, rel.args):
                if isinstance(term, ObjectRef):
                    if term.object_id != arg:
                        ok = False
                        break
                else:
                    if binding.get(term.name, arg) != arg:
                        ok = False
                        break
                    binding[term.name] = arg
            if ok and binding not in out:
                out.append(binding)
        return out
    if isinstance(f, Conjunction):
        partials = [{}]
        for child in f.children:
            partials = _join(partials, _sat(child, world, ont, universe))
            if not partials:
                return []
        return partials
    if isinstance(f, Disjunction):
        all_vars = variables(f)
        merged: list[dict] = []
        for child in f.children:
            for b in _expand(_sat(child, world, ont, universe), all_vars - variables(child), universe):
                if b not in merged:
                    merged.append(b)
        return merged
    raise FormulaError(f"not a formula: {f!r}")


def find_bindings(f, world: WorldMap, ont: Ontology) -> list[dict]:
    """Exactly the assignments (variable -> object id) making the formula hold.

    Ground formulas yield [{}] when satisfied and [] otherwise.  Results are
    ordered lexicographically by variable name, then bound object id.
    """
    _check_names(f, ont)
    names = sorted(variables(f))
    universe = world.ids()
    partials = _sat(f, world, ont, universe)
    complete = _expand(partials, set(names), universe)
    unique = []
    for b in complete:
        if b not in unique:
            unique.append(b)
    unique.sort(key=lambda b: tuple(b[n] for n in names))
    return unique


# --- unification ----------------------------------------------------------------


def unify_atoms(pattern, target) -> dict | None:
    """Most-general binding making pattern equal target (variables in pattern only)."""
    if isinstance(pattern, TrueFormula) and isinstance(target, TrueFormula):
        return {}
    if isinstance(pattern, RelationAtom) and isinstance(target, RelationAtom):
        if pattern.relation != target.relation or len(pattern.terms) != len(target.terms):
            return None
        binding: dict = {}
        for p, t in zip(pattern.terms, target.terms):
            if isinstance(p, Variable):
                existing = binding.get(p.name)
                if existing is not None and existing != t:
                    return None
                binding[p.name] = t
            else:
                if not isinstance(t, ObjectRef) or p.object_id != t.object_id:
                    return None
        return {name: (t.object_id if isinstance(t, ObjectRef) else t) for name, t in binding.items()}
    if isinstance(pattern, AttributeAtom) and isinstance(target, AttributeAtom):
        if (
            pattern.subject == target.subject
            and pattern.path == target.path
            and pattern.comparator == target.comparator
            and pattern.value == target.value
        ):
            return {}
        return None
    return None


# --- well-typedness ---------------------------------------------------------------


def validate_formula(f, ont: Ontology, world: WorldMap | None = None) -> list[str]:
    """Problems that make a formula unusable against this ontology (and map)."""
    problems = []
    for atom in atoms(f):
        if isinstance(atom, RelationAtom):
            rel = ont.relations.get(atom.relation)
            if rel is None:
                problems.append(f"unknown relation {atom.relation}")
            elif rel.arity != len(atom.terms):
                problems.append(f"relation {atom.relation} expects {rel.arity} arguments")
            for term in atom.terms:
                if isinstance(term, ObjectRef) and world is not None and not world.has_object(term.object_id):
                    problems.append(f"unknown object {term.object_id}")
        else:
            if not ont.declares_attribute(atom.path[0]):
                problems.append(f"unknown attribute {atom.path[0]}")
            if world is not None and not world.has_object(atom.subject.object_id):
                problems.append(f"unknown object {atom.subject.object_id}")
    return problems
