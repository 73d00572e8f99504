"""Selection machinery and grounded features, anchored on hand-computed values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tempologic.events import EventSequence, Relation
from tempologic.features import (
    RELATIONS,
    EmbeddingTables,
    HyperParams,
    RuleEmbedding,
    SelectionResult,
    argmax_select,
    combined_feature,
    embedding_from_selection,
    gumbel_select,
    init_rule_embedding,
    interpret_rule,
    one_hot_tables,
    selection_from_formula,
    selection_to_formula,
    similarity_matrix,
    softmin,
    softmin_grad,
    static_feature,
    temporal_feature,
)
from tempologic.rules import RuleFormula, canonicalize, parse_rule
from tempologic.seeding import spawn_rng


# -- embedding tables ---------------------------------------------------------

def test_one_hot_tables_shape():
    t = one_hot_tables(5)
    assert t.predicates.shape == (6, 5)
    assert np.all(t.predicates[0] == 0.0)  # dummy row
    assert np.array_equal(t.predicates[1:], np.eye(5))
    assert np.array_equal(t.relations, np.eye(4))
    assert t.num_predicates == 5


def test_tables_reject_duplicate_rows():
    with pytest.raises(ValueError):
        EmbeddingTables(np.zeros((2, 3)), np.eye(4))
    with pytest.raises(ValueError):
        EmbeddingTables(np.eye(3), np.zeros((4, 4)))


# -- similarity ---------------------------------------------------------------

def test_similarity_hand_value():
    # q=[1,0] against rows [0,0],[1,0],[0,1] at tau=1: softmax of (0,1,0)
    table = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    W = similarity_matrix(np.array([[1.0, 0.0]]), table, tau=1.0)
    e = math.e
    expected = np.array([1.0, e, 1.0]) / (2.0 + e)
    assert np.allclose(W[0], expected, atol=1e-12)
    assert abs(W[0, 1] - 0.57611688) < 1e-7


def test_similarity_rows_are_distributions():
    rng = spawn_rng(3)
    slots = rng.normal(size=(4, 6))
    table = rng.normal(size=(9, 6))
    for tau in (0.05, 0.2, 1.0, 10.0):
        W = similarity_matrix(slots, table, tau)
        assert np.all(W >= 0)
        assert np.allclose(W.sum(axis=1), 1.0, atol=1e-12)


def test_similarity_sharpens_as_tau_drops():
    # unique max logit with gap 1: near one-hot at tau=0.01
    table = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    q = np.array([[1.0, 0.0]])
    hot = similarity_matrix(q, table, tau=0.01)
    assert hot[0, 1] > 0.999
    flat = similarity_matrix(q, table, tau=100.0)
    assert np.ptp(flat[0]) < 0.01


def test_similarity_overflow_safe():
    W = similarity_matrix(np.array([[1e4, 0.0]]), np.eye(2), tau=0.01)
    assert np.isfinite(W).all()
    assert W[0, 0] == pytest.approx(1.0)


def test_similarity_shape_errors():
    with pytest.raises(ValueError):
        similarity_matrix(np.zeros((2, 3)), np.zeros((4, 2)), tau=1.0)
    with pytest.raises(ValueError):
        similarity_matrix(np.zeros((2, 3)), np.eye(3), tau=0.0)


# -- gumbel selection ---------------------------------------------------------

def test_gumbel_frequencies_match_softmax():
    # the argmax of logits + Gumbel noise is a draw from the softmax
    rng = spawn_rng(11)
    logits = np.array([0.3, -0.9, 1.4, 0.0])
    table = np.eye(4)
    emb = RuleEmbedding(logits[None, :] * 0.2, np.zeros((0, 4)))
    probs = similarity_matrix(emb.slots, table, 0.2)[0]
    tables = EmbeddingTables(table, np.eye(4))
    draws = 40_000
    counts = np.zeros(4)
    for _ in range(draws):
        sel = gumbel_select(emb, tables, 0.2, rng)
        counts[sel.static_idx[0]] += 1
    freq = counts / draws
    se = np.sqrt(probs * (1 - probs) / draws)
    assert np.all(np.abs(freq - probs) < 4 * se + 1e-9)


def test_argmax_select_is_temperature_free(tables3):
    rng = spawn_rng(5)
    emb = init_rule_embedding(3, tables3, rng)
    sel = argmax_select(emb, tables3)
    for tau in (0.01, 0.2, 5.0):
        W = similarity_matrix(emb.slots, tables3.predicates, tau)
        assert tuple(np.argmax(W, axis=1)) == sel.static_idx


def test_gumbel_select_shapes(tables3):
    rng = spawn_rng(7)
    emb = init_rule_embedding(3, tables3, rng)
    sel = gumbel_select(emb, tables3, 0.2, rng)
    assert len(sel.static_idx) == 3
    assert len(sel.relation_idx) == 3  # 3 slot pairs for length 3
    assert all(0 <= j <= 3 for j in sel.static_idx)
    assert all(0 <= j <= 3 for j in sel.relation_idx)
    assert sel.noise_static.shape == (3, 4)


# -- soft minimum -------------------------------------------------------------

def test_softmin_hand_values():
    # [0, 1] at rho=1: -ln((1 + e^-1)/2)
    assert softmin([0.0, 1.0], rho=1.0) == pytest.approx(
        -math.log((1.0 + math.exp(-1.0)) / 2.0), abs=1e-12)
    assert abs(softmin([0.0, 1.0], rho=1.0) - 0.379885) < 1e-6
    # scores [0.8, 0.7] with two true facts at rho=10, evaluated directly
    direct = -0.1 * math.log(
        (math.exp(-8.0) + math.exp(-7.0) + 2.0 * math.exp(-10.0)) / 4.0)
    assert softmin([0.8, 0.7, 1.0, 1.0], rho=10.0) == pytest.approx(direct, abs=1e-12)


def test_softmin_constant_vector_is_exact():
    assert softmin([0.7, 0.7, 0.7], rho=20.0) == pytest.approx(0.7, abs=1e-12)


def test_softmin_errors():
    with pytest.raises(ValueError):
        softmin([], rho=1.0)
    with pytest.raises(ValueError):
        softmin([1.0], rho=0.0)


@given(arrays(np.float64, st.integers(1, 12),
              elements=st.floats(-50, 50, allow_nan=False)),
       st.sampled_from([1.0, 10.0, 100.0]))
@settings(max_examples=300, deadline=None)
def test_softmin_sandwich(x, rho):
    s = softmin(x, rho)
    assert x.min() - 1e-9 <= s <= x.min() + math.log(len(x)) / rho + 1e-9


def test_softmin_large_rho_no_overflow():
    # min-shifted form: huge rho must not overflow even with spread values
    s = softmin([0.0, 100.0], rho=1e6)
    assert s == pytest.approx(0.0, abs=1e-5)


def test_softmin_grad_matches_finite_differences():
    rng = spawn_rng(13)
    x = rng.uniform(-1, 2, size=7)
    val, grad = softmin_grad(x, rho=9.0)
    assert val == pytest.approx(softmin(x, 9.0), abs=1e-12)
    assert grad.sum() == pytest.approx(1.0, abs=1e-12)
    h = 1e-6
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (softmin(xp, 9.0) - softmin(xm, 9.0)) / (2 * h)
        assert grad[i] == pytest.approx(fd, abs=1e-6)


# -- grounded features --------------------------------------------------------

def test_static_feature_hand_value():
    # selected scores 0.8 and 0.7, both facts true at query time
    W = np.array([[0.2, 0.8], [0.3, 0.7]])
    sel = SelectionResult((1, 1), (3,))
    seq = EventSequence(horizon=10.0, events={1: (0.5,)})
    direct = -0.1 * math.log(
        (math.exp(-8.0) + math.exp(-7.0) + 2.0 * math.exp(-10.0)) / 4.0)
    assert static_feature(W, sel, seq, 2.0, rho=10.0) == pytest.approx(direct, abs=1e-12)


def test_feature_tracks_facts(tables3):
    # a false fact drags the soft-min near zero; true facts leave it near the scores
    form = parse_rule("Y <- X1 ^ X2 ^ (X1 before X2) @ 0.0")
    sel = selection_from_formula(form, 3)
    emb = embedding_from_selection(sel, tables3)
    seq = EventSequence(horizon=10.0, events={1: (1.0,), 2: (4.0,)},
                        target_times=())
    hyper = HyperParams()
    before = combined_feature(emb, tables3, sel, seq, 0.5, hyper)
    after = combined_feature(emb, tables3, sel, seq, 9.0, hyper)
    assert before < 0.25
    assert after > 0.9


def test_feature_monotone_in_time(tables3):
    # facts only flip false -> true, so the feature never decreases along t
    rng = spawn_rng(17)
    emb = init_rule_embedding(3, tables3, rng)
    sel = gumbel_select(emb, tables3, 0.2, rng)
    seq = EventSequence(horizon=10.0, events={1: (2.0,), 2: (3.0,), 3: (8.0,)})
    hyper = HyperParams()
    ts = np.linspace(0.0, 10.0, 41)
    vals = [combined_feature(emb, tables3, sel, seq, float(t), hyper) for t in ts]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_dummy_pairs_are_pinned(tables3):
    # pairs touching a dummy slot contribute fact 1 and no score term: padding
    # a short rule keeps the feature pinned to the hard min up to the soft-min
    # correction ln(N)/rho, instead of diluting it toward the middle
    short = parse_rule("Y <- X1 @ 0.0")
    sel3 = selection_from_formula(short, 3)
    emb3 = embedding_from_selection(sel3, tables3)
    seq = EventSequence(horizon=10.0, events={1: (1.0,)})
    hyper = HyperParams()
    slack = math.log(9) / hyper.rho  # 9 collection terms for L=3 with 2 dummies
    f_false = combined_feature(emb3, tables3, sel3, seq, 0.5, hyper)
    assert 0.0 <= f_false <= slack + 1e-9
    f_true = combined_feature(emb3, tables3, sel3, seq, 2.0, hyper)
    assert f_true == pytest.approx(1.0, abs=1e-9)


def test_temporal_feature_uses_relation_facts(tables3):
    form = parse_rule("Y <- X1 ^ X2 ^ (X2 before X1) @ 0.0")
    sel = selection_from_formula(form, 2)
    emb = embedding_from_selection(sel, tables3)
    Wr = similarity_matrix(emb.pair_slots, tables3.relations, 0.2)
    # X1 at 1, X2 at 4: (X2 before X1) is false forever
    seq = EventSequence(horizon=10.0, events={1: (1.0,), 2: (4.0,)})
    assert temporal_feature(Wr, sel, seq, 9.0, rho=20.0, delta=0.5) < 0.1
    # swapped occurrences make it true once both are grounded
    seq2 = EventSequence(horizon=10.0, events={1: (4.0,), 2: (1.0,)})
    assert temporal_feature(Wr, sel, seq2, 9.0, rho=20.0, delta=0.5) > 0.9


# -- selections <-> formulas --------------------------------------------------

def test_selection_to_formula_canonicalizes():
    # dummies dropped, AFTER swapped, NONE skipped, duplicates collapse
    # pairs touching the dummy slot 1 are skipped; (X2 after X1) on pair (0,2)
    # is rewritten as (X1 before X2)
    f = selection_to_formula((2, 0, 1), (3, 2, 3))
    assert f.body == (1, 2)
    assert f.relations == {(1, 2): Relation.BEFORE}

    # pair order is (0,1),(0,2),(1,2): (0,1) is a self-pair and is dropped,
    # (0,2) claims the unordered pair {1,2} with EQUAL, (1,2) selects NONE
    g = selection_to_formula((1, 1, 2), (0, 1, 3))
    assert g.body == (1, 2)
    assert g.relations == {(1, 2): Relation.EQUAL}

    # clashing claims on one unordered pair: the first in enumeration order
    # wins, so a duplicated predicate cannot smuggle in a contradiction
    h = selection_to_formula((1, 2, 1), (0, 3, 0))  # (X1 before X2) then (X2 before X1)
    assert h.body == (1, 2)
    assert h.relations == {(1, 2): Relation.BEFORE}


def test_selection_round_trip_examples():
    for text in ["Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.0",
                 "Y <- X4 ^ X5 ^ (X4 after X5) @ 0.0",
                 "Y <- X1 @ 0.0",
                 "Y <- true @ 0.0"]:
        f = parse_rule(text)
        sel = selection_from_formula(f, 3)
        assert selection_to_formula(sel.static_idx, sel.relation_idx) == f


@st.composite
def canonical_formulas(draw):
    body = tuple(sorted(draw(
        st.lists(st.integers(1, 7), min_size=0, max_size=3, unique=True))))
    rels = {}
    pairs = [(a, b) for i, a in enumerate(body) for b in body[i + 1:]]
    for a, b in pairs:
        choice = draw(st.sampled_from(["none", "before", "rbefore", "equal"]))
        if choice == "before":
            rels[(a, b)] = Relation.BEFORE
        elif choice == "rbefore":
            rels[(b, a)] = Relation.BEFORE
        elif choice == "equal":
            rels[(a, b)] = Relation.EQUAL
    return RuleFormula(body, rels, 0.0)


@given(canonical_formulas())
@settings(max_examples=200, deadline=None)
def test_selection_round_trip(f):
    assert canonicalize(f) == f
    sel = selection_from_formula(f, 3)
    assert selection_to_formula(sel.static_idx, sel.relation_idx) == f


@given(canonical_formulas())
@settings(max_examples=100, deadline=None)
def test_embedding_from_selection_interprets_back(f):
    tables = one_hot_tables(7)
    sel = selection_from_formula(f, 3)
    emb = embedding_from_selection(sel, tables)
    assert interpret_rule(emb, tables) == f
    # sharp selections carry machine-precision match scores
    W = similarity_matrix(emb.slots, tables.predicates, 0.2)
    for l, j in enumerate(sel.static_idx):
        assert W[l, j] == pytest.approx(1.0, abs=1e-12)


def test_selection_from_formula_rejects_long_bodies():
    f = parse_rule("Y <- X1 ^ X2 ^ X3 ^ X4 @ 0.0")
    with pytest.raises(ValueError):
        selection_from_formula(f, 3)


def test_interpret_rule_matches_argmax_selection(tables3):
    rng = spawn_rng(23)
    for _ in range(10):
        emb = init_rule_embedding(3, tables3, rng)
        sel = argmax_select(emb, tables3)
        assert interpret_rule(emb, tables3) == selection_to_formula(
            sel.static_idx, sel.relation_idx)


def test_rule_embedding_validation():
    with pytest.raises(ValueError):
        RuleEmbedding(np.zeros((2, 3)), np.zeros((3, 4)))  # wrong pair count
    with pytest.raises(ValueError):
        RuleEmbedding(np.array([[np.nan, 0.0]]), np.zeros((0, 4)))
    emb = RuleEmbedding(np.zeros((3, 4)), np.zeros((3, 4)))
    c = emb.copy()
    c.slots[0, 0] = 5.0
    assert emb.slots[0, 0] == 0.0
