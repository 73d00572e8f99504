"""Synthetic generator: assignment quotas, exact sampling, constraint margins."""

import math

import numpy as np
import pytest
from scipy import stats

from tempologic.events import Relation
from tempologic.rules import parse_rule
from tempologic.seeding import STREAM_SEQUENCE, spawn_rng
from tempologic.synth import (
    PRESETS,
    GenerationError,
    GroundTruthRule,
    GroundTruthSpec,
    assign_rules,
    generate_dataset,
    generate_sequence,
    load_spec,
    sample_target_times,
    save_spec,
    spec_from_json,
    spec_to_json,
    target_rate_profile,
)


class _FixedUniform:
    """Stand-in generator whose uniform draws are scripted."""

    def __init__(self, values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def small_spec(noise_rate=0.001):
    return GroundTruthSpec(
        rules=(GroundTruthRule(parse_rule("Y <- X1 ^ X2 ^ (X1 before X2) @ 0.5"),
                               0.5, 0.4),),
        base=0.05, num_predicates=4, horizon=50.0, noise_rate=noise_rate)


# -- presets ------------------------------------------------------------------

def test_presets_match_published_setup():
    g1 = PRESETS["group1"]
    assert g1.base == 0.02 and g1.num_predicates == 30 and g1.horizon == 100.0
    assert len(g1.rules) == 1
    assert g1.rules[0].weight == 0.40 and g1.rules[0].ratio == 0.20
    assert g1.rules[0].formula == parse_rule(
        "Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40")

    g2 = PRESETS["group2"]
    assert [r.weight for r in g2.rules] == [0.40, 0.80]
    assert [r.ratio for r in g2.rules] == [0.10, 0.15]

    g3 = PRESETS["group3"]
    assert [r.weight for r in g3.rules] == [0.40, 0.80, 1.20]
    assert [r.ratio for r in g3.rules] == [0.10, 0.15, 0.15]
    assert g3.rules[0].formula.relations == {}


# -- assignment ---------------------------------------------------------------

def test_assignment_counts_are_exact():
    counts = assign_rules(5000, PRESETS["group1"], seed=0)
    assert counts.count(0) == 1000
    assert counts.count(None) == 4000

    g3 = assign_rules(20000, PRESETS["group3"], seed=1)
    assert g3.count(0) == 2000 and g3.count(1) == 3000 and g3.count(2) == 3000


def test_assignment_largest_remainder():
    # quotas 1.5 and 1.5 over n=3: exactly one rule gets the extra sequence,
    # ties broken by rule index
    spec = GroundTruthSpec(
        rules=(GroundTruthRule(parse_rule("Y <- X1 @ 0.5"), 0.5, 0.5),
               GroundTruthRule(parse_rule("Y <- X2 @ 0.5"), 0.5, 0.5)),
        base=0.05, num_predicates=2)
    slots = assign_rules(3, spec, seed=0)
    assert sorted(s for s in slots if s is not None) == [0, 0, 1]


def test_assignment_deterministic_and_seed_sensitive():
    a = assign_rules(200, PRESETS["group1"], seed=3)
    b = assign_rules(200, PRESETS["group1"], seed=3)
    c = assign_rules(200, PRESETS["group1"], seed=4)
    assert a == b
    assert a != c


# -- exact target sampling ----------------------------------------------------

def test_first_arrival_inversion():
    # u = 0.5 at rate 0.02: arrival at -ln(0.5)/0.02; the second scripted draw
    # makes the next exponential exceed the remaining capacity
    rng = _FixedUniform([0.5, 1e-300])
    out = sample_target_times([0.0, 100.0], [0.02], rng)
    assert out == [pytest.approx(-math.log(0.5) / 0.02, abs=1e-12)]
    assert abs(out[0] - 34.657) < 1e-3


def test_arrival_carries_across_segments():
    # a zero-rate first segment consumes no exponential budget
    rng = _FixedUniform([0.5, 1e-300])
    out = sample_target_times([0.0, 50.0, 100.0], [0.0, 0.02], rng)
    assert out == [pytest.approx(50.0 - math.log(0.5) / 0.02, abs=1e-12)]


def test_sample_target_times_validation():
    rng = spawn_rng(0)
    with pytest.raises(ValueError):
        sample_target_times([0.0, 1.0], [0.1, 0.2], rng)
    with pytest.raises(ValueError):
        sample_target_times([0.0, 1.0], [-0.1], rng)


def test_gaps_are_exponential():
    # KS test of inter-arrival times at a constant rate
    rng = spawn_rng(101)
    rate = 0.4
    times = sample_target_times([0.0, 20000.0], [rate], rng)
    gaps = np.diff([0.0] + times)
    assert len(gaps) > 2000
    res = stats.kstest(gaps, "expon", args=(0.0, 1.0 / rate))
    assert res.pvalue > 0.01


def test_counts_are_poisson():
    rng = spawn_rng(103)
    counts = [len(sample_target_times([0.0, 100.0], [0.02], rng))
              for _ in range(3000)]
    mean = float(np.mean(counts))
    # Poisson(2): SE of the mean is sqrt(2/3000)
    assert abs(mean - 2.0) < 3.5 * math.sqrt(2.0 / 3000.0)


# -- sequence and corpus generation -------------------------------------------

def test_assigned_sequence_structure():
    spec = small_spec()
    rng = spawn_rng(5, STREAM_SEQUENCE, 0)
    seq = generate_sequence(0, spec, rng)
    # each body predicate occurs exactly once, in the first half-horizon
    t1, t2 = seq.times(1), seq.times(2)
    assert len(t1) == 1 and len(t2) == 1
    assert 0.0 <= t1[0] <= spec.horizon / 2
    assert 0.0 <= t2[0] <= spec.horizon / 2
    # the constraint holds with the full tolerance margin
    assert t1[0] - t2[0] < -spec.delta


def test_unassigned_sequence_has_no_planted_structure():
    spec = small_spec(noise_rate=0.0)
    seq = generate_sequence(None, spec, spawn_rng(5, STREAM_SEQUENCE, 1))
    assert seq.events == {}


def test_generate_dataset_deterministic():
    spec = small_spec()
    a, asg_a = generate_dataset(spec, 40, seed=9)
    b, asg_b = generate_dataset(spec, 40, seed=9)
    assert asg_a == asg_b
    assert tuple(a) == tuple(b)
    c, _ = generate_dataset(spec, 40, seed=10)
    assert tuple(a) != tuple(c)


def test_sequences_draw_from_per_index_streams():
    # sequence i depends only on (seed, i, assignment), so any one sequence
    # can be regenerated without generating the rest of the corpus
    spec = small_spec()
    data, assignments = generate_dataset(spec, 12, seed=21)
    for i in (0, 5, 11):
        alone = generate_sequence(assignments[i], spec,
                                  spawn_rng(21, STREAM_SEQUENCE, i))
        assert alone == data[i]


def test_all_assigned_sequences_satisfy_constraints():
    spec = PRESETS["group2"]
    data, assignments = generate_dataset(spec, 300, seed=13)
    checked = 0
    for seq, asg in zip(data, assignments):
        if asg is None:
            continue
        rule = spec.rules[asg]
        for p in rule.formula.body:
            assert len(seq.times(p)) == 1
        for (a, b), rel in rule.formula.relations.items():
            diff = seq.times(a)[0] - seq.times(b)[0]
            if rel is Relation.BEFORE:
                assert diff < -spec.delta
            else:
                assert abs(diff) <= spec.delta
        checked += 1
    assert checked == 75  # 0.10 * 300 + 0.15 * 300


def test_unassigned_mean_target_count():
    spec = PRESETS["group1"]
    n = 2500
    data, assignments = generate_dataset(spec, n, seed=17)
    counts = [len(seq.target_times)
              for seq, a in zip(data, assignments) if a is None]
    assert len(counts) == 2000
    expected = spec.base * spec.horizon  # Poisson mean 2.0
    se = math.sqrt(expected / len(counts))
    assert abs(float(np.mean(counts)) - expected) < 3.5 * se


def test_target_rate_profile():
    spec = small_spec()
    assert target_rate_profile(None, {}, spec) == ([0.0, 50.0], [0.05])
    breaks, rates = target_rate_profile(0, {1: 4.0, 2: 9.0}, spec)
    assert breaks == [0.0, 9.0, 50.0]
    assert rates == [0.05, 0.55]


def test_generation_error_on_unsatisfiable_constraints():
    # zero tolerance makes an exact-tie EQUAL constraint measure-zero
    spec = GroundTruthSpec(
        rules=(GroundTruthRule(parse_rule("Y <- X1 ^ X2 ^ (X1 equal X2) @ 0.5"),
                               0.5, 1.0),),
        base=0.05, num_predicates=2, delta=0.0)
    with pytest.raises(GenerationError):
        generate_sequence(0, spec, spawn_rng(0, STREAM_SEQUENCE, 0))


def test_spec_validation():
    with pytest.raises(ValueError):
        GroundTruthSpec(rules=(), base=-0.1, num_predicates=2)
    with pytest.raises(ValueError):
        GroundTruthSpec(
            rules=(GroundTruthRule(parse_rule("Y <- X9 @ 0.5"), 0.5, 0.5),),
            base=0.05, num_predicates=2)
    with pytest.raises(ValueError):
        GroundTruthSpec(
            rules=(GroundTruthRule(parse_rule("Y <- X1 @ 0.5"), 0.5, 0.7),
                   GroundTruthRule(parse_rule("Y <- X2 @ 0.5"), 0.5, 0.7)),
            base=0.05, num_predicates=2)
    with pytest.raises(ValueError):
        GroundTruthRule(parse_rule("Y <- X1 @ 0.5"), weight=0.0, ratio=0.5)


def test_spec_json_round_trip(tmp_path):
    spec = small_spec()
    back = spec_from_json(spec_to_json(spec))
    assert back == spec
    path = str(tmp_path / "spec.json")
    save_spec(spec, path)
    assert load_spec(path) == spec
