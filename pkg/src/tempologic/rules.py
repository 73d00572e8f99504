"""Symbolic rule formulas, their canonical form, and the rule text grammar.

Grammar (whitespace-insensitive)::

    Y <- <pred> (^ <pred>)* (^ (<pred> (before|equal|after) <pred>))* @ <weight>
    Y <- true @ <weight>                      (degenerate empty body)

Canonical form: body sorted ascending with duplicates dropped; relations kept
as an ordered-pair map holding only BEFORE and EQUAL (an AFTER constraint is
rewritten as BEFORE with swapped operands, EQUAL pairs are ordered
``(min, max)``, NONE entries are dropped).  Two formulas describe the same
rule exactly when their canonical bodies and relation maps are equal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

from .events import Relation


class RuleSyntaxError(ValueError):
    """Rule text that does not match the grammar; carries a character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"position {position}: {message}")
        self.position = position


class ContradictionError(ValueError):
    """Two different relations constrain the same predicate pair."""


@dataclass(frozen=True)
class RuleFormula:
    """A conjunction of body predicates and pairwise temporal constraints.

    ``relations`` maps an ordered pair ``(a, b)`` to the relation holding
    between the groundings of ``a`` and ``b`` (in that operand order).
    """

    body: tuple[int, ...]
    relations: Mapping[tuple[int, int], Relation] = field(default_factory=dict)
    weight: float = 0.0

    def __post_init__(self) -> None:
        body = tuple(int(p) for p in self.body)
        for p in body:
            if p < 1:
                raise ValueError(f"body predicate ids must be >= 1, got {p}")
        object.__setattr__(self, "body", body)
        rels = {}
        members = set(body)
        for (a, b), rel in dict(self.relations).items():
            a, b = int(a), int(b)
            if a not in members or b not in members:
                raise ValueError(f"relation endpoint X{a if a not in members else b} not in body")
            if a == b:
                raise ValueError(f"relation endpoints must differ, got (X{a}, X{b})")
            if not isinstance(rel, Relation):
                raise ValueError(f"relation value must be a Relation, got {rel!r}")
            rels[(a, b)] = rel
        object.__setattr__(self, "relations", rels)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def is_empty(self) -> bool:
        return not self.body

    def key(self) -> tuple:
        """Identity of the canonicalized rule, ignoring the weight."""
        return (self.body, frozenset(self.relations.items()))


def canonicalize(formula: RuleFormula) -> RuleFormula:
    """Normalize a formula to canonical form; idempotent.

    Raises :class:`ContradictionError` when two distinct constraints land on
    the same unordered predicate pair.
    """
    body = tuple(sorted(set(formula.body)))
    canon: dict[tuple[int, int], Relation] = {}
    seen: dict[tuple[int, int], tuple[tuple[int, int], Relation]] = {}
    for (a, b), rel in formula.relations.items():
        if rel is Relation.NONE:
            continue
        if rel is Relation.AFTER:
            a, b, rel = b, a, Relation.BEFORE
        if rel is Relation.EQUAL:
            a, b = min(a, b), max(a, b)
        unordered = (min(a, b), max(a, b))
        entry = ((a, b), rel)
        if unordered in seen:
            if seen[unordered] != entry:
                raise ContradictionError(
                    f"conflicting relations on predicate pair (X{unordered[0]}, X{unordered[1]})")
            continue
        seen[unordered] = entry
        canon[(a, b)] = rel
    return RuleFormula(body, canon, formula.weight)


def _format_weight(w: float) -> str:
    two = f"{w:.2f}"
    return two if float(two) == w else repr(float(w))


def format_rule(formula: RuleFormula) -> str:
    """Render a formula as rule text; inverse of :func:`parse_rule` on canonical formulas."""
    if not formula.body:
        return f"Y <- true @ {_format_weight(formula.weight)}"
    parts = [f"X{p}" for p in formula.body]
    for (a, b), rel in sorted(formula.relations.items()):
        parts.append(f"(X{a} {rel.value} X{b})")
    return "Y <- " + " ^ ".join(parts) + f" @ {_format_weight(formula.weight)}"


_PRED_RE = re.compile(r"X(\d+)\Z")
_REL_RE = re.compile(r"\(\s*X(\d+)\s+(before|equal|after)\s+X(\d+)\s*\)\Z")


def parse_rule(text: str) -> RuleFormula:
    """Parse rule text into a canonical :class:`RuleFormula`.

    Raises :class:`RuleSyntaxError` with the character position of the bad
    term, or :class:`ContradictionError` for clashing relations.
    """
    head, arrow, rest = text.partition("<-")
    if not arrow or head.strip() != "Y":
        raise RuleSyntaxError("rule must start with 'Y <-'", 0)
    body_text, at, weight_text = rest.rpartition("@")
    if not at:
        raise RuleSyntaxError("missing '@ <weight>' suffix", len(text))
    weight_pos = len(head) + len(arrow) + len(body_text) + 1
    try:
        weight = float(weight_text.strip())
    except ValueError:
        raise RuleSyntaxError(f"bad weight {weight_text.strip()!r}", weight_pos) from None

    base = len(head) + len(arrow)
    body: list[int] = []
    relations: dict[tuple[int, int], Relation] = {}
    raw_relations: list[tuple[int, Relation, int, int]] = []  # (a, rel, b, position)
    saw_true = False
    offset = 0
    for chunk in body_text.split("^"):
        pos = base + offset + (len(chunk) - len(chunk.lstrip()))
        offset += len(chunk) + 1
        term = chunk.strip()
        if not term:
            raise RuleSyntaxError("empty term", pos)
        if term == "true":
            saw_true = True
            continue
        m = _PRED_RE.match(term)
        if m:
            pid = int(m.group(1))
            if pid < 1:
                raise RuleSyntaxError("predicate out of range: X0 is reserved", pos)
            body.append(pid)
            continue
        m = _REL_RE.match(term)
        if m:
            a, rel, b = int(m.group(1)), Relation(m.group(2)), int(m.group(3))
            raw_relations.append((a, rel, b, pos))
            continue
        raise RuleSyntaxError(f"cannot parse term {term!r}", pos)

    if saw_true and (body or raw_relations):
        raise RuleSyntaxError("'true' cannot be combined with other terms", base)
    members = set(body)
    for a, rel, b, pos in raw_relations:
        missing = a if a not in members else (b if b not in members else None)
        if missing is not None:
            raise RuleSyntaxError(f"relation endpoint X{missing} not in body", pos)
        if a == b:
            raise RuleSyntaxError(f"relation endpoints must differ (X{a})", pos)
        key = (a, b)
        if key in relations and relations[key] is not rel:
            raise ContradictionError(
                f"conflicting relations on predicate pair (X{min(a,b)}, X{max(a,b)})")
        relations[key] = rel
    return canonicalize(RuleFormula(tuple(body), relations, weight))
