"""Embedding tables, selection sampling, and grounded rule features.

A rule template is a small matrix of slot vectors.  Each static slot row is
matched against a fixed table of predicate embeddings through a temperature
softmax, giving a row of match scores that doubles as a selection
distribution; pair slots do the same against the four temporal-relation
embeddings.  Sampling a concrete predicate (or relation) per slot uses the
Gumbel-max trick, so empirical selection frequencies reproduce the softmax
scores exactly.

A selected rule grounded against a sequence yields a feature value: the soft
minimum over all selected match scores together with the grounded 0/1 facts.
The soft minimum never falls below the hard minimum and exceeds it by at most
``log(N)/rho`` for a collection of size ``N``.  Pairs touching a dummy slot
are pinned to the trivial relation: their fact is 1 and they contribute no
match-score term, so padding cannot dilute the feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .events import DUMMY_PREDICATE, EventSequence, Relation, fact_relation, fact_static
from .rules import RuleFormula

RELATIONS = (Relation.BEFORE, Relation.EQUAL, Relation.AFTER, Relation.NONE)
REL_BEFORE, REL_EQUAL, REL_AFTER, REL_NONE = range(4)


@dataclass(frozen=True)
class EmbeddingTables:
    """Fixed embedding matrices: predicates (row 0 = dummy) and the 4 relations."""

    predicates: np.ndarray
    relations: np.ndarray

    def __post_init__(self) -> None:
        pred = np.asarray(self.predicates, dtype=float)
        rel = np.asarray(self.relations, dtype=float)
        if pred.ndim != 2 or pred.shape[0] < 1:
            raise ValueError("predicate table must be a (U+1, d) matrix")
        if rel.ndim != 2 or rel.shape[0] != 4:
            raise ValueError("relation table must have exactly 4 rows")
        for name, table in (("predicate", pred), ("relation", rel)):
            if len({tuple(row) for row in table}) != table.shape[0]:
                raise ValueError(f"{name} embedding rows must be pairwise distinct")
        object.__setattr__(self, "predicates", pred)
        object.__setattr__(self, "relations", rel)

    @property
    def num_predicates(self) -> int:
        return self.predicates.shape[0] - 1


def one_hot_tables(num_predicates: int) -> EmbeddingTables:
    """Default scheme: unit-vector predicate rows, all-zero dummy row, identity relations."""
    if num_predicates < 1:
        raise ValueError("need at least one body predicate")
    pred = np.zeros((num_predicates + 1, num_predicates))
    pred[1:] = np.eye(num_predicates)
    return EmbeddingTables(pred, np.eye(4))


def slot_pairs(length: int) -> tuple[tuple[int, int], ...]:
    """Slot index pairs (i, l) with i < l, in the fixed enumeration order."""
    return tuple((i, l) for i in range(length) for l in range(i + 1, length))


@dataclass
class RuleEmbedding:
    """Learnable slot matrices of one rule: static slots and slot-pair relation slots."""

    slots: np.ndarray
    pair_slots: np.ndarray

    def __post_init__(self) -> None:
        self.slots = np.asarray(self.slots, dtype=float)
        self.pair_slots = np.asarray(self.pair_slots, dtype=float)
        if self.slots.ndim != 2 or self.slots.shape[0] < 1:
            raise ValueError("slots must be a (L, d) matrix with L >= 1")
        L = self.slots.shape[0]
        if self.pair_slots.ndim != 2 or self.pair_slots.shape[0] != L * (L - 1) // 2:
            raise ValueError("pair_slots must have L*(L-1)/2 rows")
        if not (np.isfinite(self.slots).all() and np.isfinite(self.pair_slots).all()):
            raise ValueError("slot entries must be finite")

    @property
    def length(self) -> int:
        return self.slots.shape[0]

    def copy(self) -> "RuleEmbedding":
        return RuleEmbedding(self.slots.copy(), self.pair_slots.copy())


def init_rule_embedding(length: int, tables: EmbeddingTables,
                        rng: np.random.Generator, scale: float = 0.5) -> RuleEmbedding:
    """Uniform(-scale, scale) init so every candidate stays reachable by sampling."""
    slots = rng.uniform(-scale, scale, size=(length, tables.predicates.shape[1]))
    pairs = rng.uniform(-scale, scale,
                        size=(len(slot_pairs(length)), tables.relations.shape[1]))
    return RuleEmbedding(slots, pairs)


@dataclass(frozen=True)
class HyperParams:
    """Temperatures and tolerances shared by features and likelihood."""

    tau: float = 0.2
    rho: float = 20.0
    delta: float = 0.5
    feature_form: str = "softmin"  # or "product"

    def __post_init__(self) -> None:
        if self.tau <= 0 or self.rho <= 0 or self.delta < 0:
            raise ValueError("tau and rho must be positive, delta nonnegative")
        if self.feature_form not in ("softmin", "product"):
            raise ValueError(f"unknown feature_form {self.feature_form!r}")


@dataclass(frozen=True)
class SelectionResult:
    """Concrete per-slot choices plus the noise draws that produced them."""

    static_idx: tuple[int, ...]
    relation_idx: tuple[int, ...]
    noise_static: np.ndarray | None = None
    noise_relation: np.ndarray | None = None


def similarity_matrix(slot_matrix: np.ndarray, table: np.ndarray, tau: float) -> np.ndarray:
    """Row-stochastic match scores: softmax of ``slot_matrix @ table.T / tau`` per row."""
    slot_matrix = np.asarray(slot_matrix, dtype=float)
    table = np.asarray(table, dtype=float)
    if slot_matrix.ndim != 2 or table.ndim != 2 or slot_matrix.shape[1] != table.shape[1]:
        raise ValueError(
            f"embedding dimension mismatch: slots {slot_matrix.shape} vs table {table.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = slot_matrix @ table.T / tau
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w


def gumbel_argmax(logits: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax of ``logits + Gumbel(0,1)`` noise; returns (indices, noise)."""
    logits = np.asarray(logits, dtype=float)
    noise = rng.gumbel(size=logits.shape)
    return np.argmax(logits + noise, axis=-1), noise


def gumbel_select(rule: RuleEmbedding, tables: EmbeddingTables, tau: float,
                  rng: np.random.Generator) -> SelectionResult:
    """Sample one predicate per static slot and one relation per pair slot."""
    s_idx, s_noise = gumbel_argmax(rule.slots @ tables.predicates.T / tau, rng)
    r_idx, r_noise = gumbel_argmax(rule.pair_slots @ tables.relations.T / tau, rng)
    return SelectionResult(tuple(int(j) for j in s_idx), tuple(int(j) for j in r_idx),
                           s_noise, r_noise)


def argmax_select(rule: RuleEmbedding, tables: EmbeddingTables) -> SelectionResult:
    """Noiseless mode of the selection distribution; temperature-invariant."""
    s_idx = np.argmax(rule.slots @ tables.predicates.T, axis=1)
    r_idx = np.argmax(rule.pair_slots @ tables.relations.T, axis=1)
    return SelectionResult(tuple(int(j) for j in s_idx), tuple(int(j) for j in r_idx))


def softmin(values: Sequence[float], rho: float) -> float:
    """Smooth minimum ``-(1/rho) log(mean(exp(-rho x)))``.

    Satisfies ``min(x) <= softmin(x) <= min(x) + log(N)/rho``; computed with a
    min-shift so large ``rho`` cannot overflow.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("softmin of an empty collection")
    if rho <= 0:
        raise ValueError("rho must be positive")
    lo = float(x.min())
    return lo - float(np.log(np.mean(np.exp(-rho * (x - lo))))) / rho


def softmin_grad(values: np.ndarray, rho: float) -> tuple[float, np.ndarray]:
    """Soft minimum and its gradient, ``softmax(-rho * x)``, in one pass."""
    x = np.asarray(values, dtype=float)
    lo = float(x.min())
    z = np.exp(-rho * (x - lo))
    s = float(z.sum())
    return lo - float(np.log(s / x.size)) / rho, z / s


def _reduce(values: Sequence[float], rho: float, form: str) -> float:
    if form == "product":
        return float(np.prod(np.asarray(values, dtype=float)))
    return softmin(values, rho)


def collection_parts(W: np.ndarray, Wr: np.ndarray, selection: SelectionResult,
                     seq: EventSequence, t: float, delta: float,
                     ) -> tuple[list[float], list[float], list[float], list[float]]:
    """Match scores and grounded facts for the static and temporal parts.

    Returns ``(static_scores, static_facts, pair_scores, pair_facts)``.  Pairs
    with a dummy endpoint contribute a pinned fact of 1 and no score term.
    """
    static_scores = [float(W[l, j]) for l, j in enumerate(selection.static_idx)]
    static_facts = [float(fact_static(seq, j, t)) for j in selection.static_idx]
    pair_scores, pair_facts = _pair_parts(Wr, selection, seq, t, delta)
    return static_scores, static_facts, pair_scores, pair_facts


def static_feature(W: np.ndarray, selection: SelectionResult, seq: EventSequence,
                   t: float, rho: float, form: str = "softmin") -> float:
    """Feature of the static part alone: reduce the 2L scores and facts."""
    L = len(selection.static_idx)
    scores = [float(W[l, j]) for l, j in enumerate(selection.static_idx)]
    facts = [float(fact_static(seq, j, t)) for j in selection.static_idx]
    return _reduce(scores + facts, rho, form)


def _pair_parts(Wr: np.ndarray, selection: SelectionResult, seq: EventSequence,
                t: float, delta: float) -> tuple[list[float], list[float]]:
    L = len(selection.static_idx)
    pair_scores: list[float] = []
    pair_facts: list[float] = []
    for pos, (i, l) in enumerate(slot_pairs(L)):
        pa, pb = selection.static_idx[i], selection.static_idx[l]
        if pa == DUMMY_PREDICATE or pb == DUMMY_PREDICATE:
            pair_facts.append(1.0)
            continue
        ridx = selection.relation_idx[pos]
        pair_scores.append(float(Wr[pos, ridx]))
        pair_facts.append(float(fact_relation(seq, pa, pb, RELATIONS[ridx], t, delta)))
    return pair_scores, pair_facts


def temporal_feature(Wr: np.ndarray, selection: SelectionResult, seq: EventSequence,
                     t: float, rho: float, delta: float, form: str = "softmin") -> float:
    """Feature of the temporal part alone: reduce pair scores and relation facts."""
    pair_scores, pair_facts = _pair_parts(Wr, selection, seq, t, delta)
    return _reduce(pair_scores + pair_facts, rho, form)


def combined_feature(rule: RuleEmbedding, tables: EmbeddingTables,
                     selection: SelectionResult, seq: EventSequence, t: float,
                     hyper: HyperParams) -> float:
    """Single reduction over the union of static and temporal collections."""
    W = similarity_matrix(rule.slots, tables.predicates, hyper.tau)
    Wr = similarity_matrix(rule.pair_slots, tables.relations, hyper.tau)
    ws, vs, wr, vr = collection_parts(W, Wr, selection, seq, t, hyper.delta)
    return _reduce(ws + wr + vs + vr, hyper.rho, hyper.feature_form)


def selection_to_formula(static_idx: Sequence[int], relation_idx: Sequence[int],
                         weight: float = 0.0) -> RuleFormula:
    """Canonical formula named by explicit slot and relation indices.

    Dummy slots are dropped; pairs touching a dummy or selecting NONE produce
    no constraint; when duplicate slots induce clashing constraints on one
    predicate pair, the first pair in enumeration order wins.
    """
    body = tuple(sorted({int(j) for j in static_idx if j != DUMMY_PREDICATE}))
    relations: dict[tuple[int, int], Relation] = {}
    claimed: set[tuple[int, int]] = set()
    for pos, (i, l) in enumerate(slot_pairs(len(static_idx))):
        pa, pb = int(static_idx[i]), int(static_idx[l])
        if pa == DUMMY_PREDICATE or pb == DUMMY_PREDICATE or pa == pb:
            continue
        rel = RELATIONS[int(relation_idx[pos])]
        if rel is Relation.NONE:
            continue
        if rel is Relation.AFTER:
            pa, pb, rel = pb, pa, Relation.BEFORE
        if rel is Relation.EQUAL:
            pa, pb = min(pa, pb), max(pa, pb)
        unordered = (min(pa, pb), max(pa, pb))
        if unordered in claimed:
            continue
        claimed.add(unordered)
        relations[(pa, pb)] = rel
    return RuleFormula(body, relations, weight)


def interpret_rule(rule: RuleEmbedding, tables: EmbeddingTables,
                   weight: float = 0.0) -> RuleFormula:
    """Read off the canonical formula under noiseless argmax selection."""
    s_idx = np.argmax(rule.slots @ tables.predicates.T, axis=1)
    r_idx = np.argmax(rule.pair_slots @ tables.relations.T, axis=1)
    return selection_to_formula(s_idx, r_idx, weight)


def embedding_from_selection(selection: SelectionResult, tables: EmbeddingTables,
                             sharpness: float = 50.0) -> RuleEmbedding:
    """Embedding whose softmax rows concentrate on ``selection``.

    With one-hot tables and the default sharpness the selected match scores
    are 1.0 to machine precision, so a compiled formula behaves as a hard
    rule.
    """
    s_idx = np.asarray(selection.static_idx, dtype=np.int64)
    r_idx = np.asarray(selection.relation_idx, dtype=np.int64)
    slots = sharpness * tables.predicates[s_idx]
    # the dummy row is all-zero, so its logit is pinned at 0; select it by
    # pushing every other logit down instead
    dummy = s_idx == DUMMY_PREDICATE
    slots[dummy] = -sharpness * np.ones(tables.predicates.shape[1])
    return RuleEmbedding(slots, sharpness * tables.relations[r_idx])


def selection_from_formula(formula: RuleFormula, length: int) -> SelectionResult:
    """Hard selection matching a canonical formula, padded with dummy slots."""
    if len(formula.body) > length:
        raise ValueError(f"formula body exceeds template length {length}")
    static = tuple(formula.body) + (DUMMY_PREDICATE,) * (length - len(formula.body))
    rel_idx = []
    for i, l in slot_pairs(length):
        rel = Relation.NONE
        if i < len(formula.body) and l < len(formula.body):
            a, b = static[i], static[l]
            rel = formula.relations.get((a, b), Relation.NONE)
            if rel is Relation.NONE:
                back = formula.relations.get((b, a), Relation.NONE)
                rel = Relation.AFTER if back is Relation.BEFORE else back
        rel_idx.append(RELATIONS.index(rel))
    return SelectionResult(static, tuple(rel_idx))
