"""Ground-truth rule specifications and exact synthetic corpus generation.

Each sequence is assigned at most one ground-truth rule.  Assigned sequences
receive exactly one occurrence of every body predicate, placed uniformly on
the first half of the horizon and rejection-sampled until the rule's temporal
constraints hold at tolerance ``delta``; every other predicate fires as an
independent Poisson stream at ``noise_rate``.  Target events are then drawn
exactly from the piecewise-constant intensity ``base + weight * [body
satisfied]`` (just ``base`` when unassigned) by inverting the compensator, so
no thinning approximation is involved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import Dataset, EventSequence, Relation
from .rules import RuleFormula, canonicalize, format_rule, parse_rule
from .seeding import STREAM_ASSIGN, STREAM_SEQUENCE, spawn_rng

_MAX_PLACEMENT_TRIES = 10_000


class GenerationError(RuntimeError):
    """Raised when a rule's constraints cannot be satisfied by resampling."""


@dataclass(frozen=True)
class GroundTruthRule:
    """A rule formula with its true intensity weight and assignment ratio."""

    formula: RuleFormula
    weight: float
    ratio: float

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ValueError("ground-truth weight must be positive")
        if not (0 <= self.ratio <= 1):
            raise ValueError("ratio must lie in [0, 1]")
        object.__setattr__(self, "formula", canonicalize(self.formula))


@dataclass(frozen=True)
class GroundTruthSpec:
    """Everything needed to generate a corpus."""

    rules: tuple[GroundTruthRule, ...]
    base: float
    num_predicates: int
    horizon: float = 100.0
    delta: float = 0.5
    body_rate: float = 0.0   # reserved for non-uniform body placement schemes
    noise_rate: float = 0.001

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.base < 0 or self.noise_rate < 0 or self.horizon <= 0 or self.delta < 0:
            raise ValueError("rates must be nonnegative and horizon positive")
        if sum(r.ratio for r in self.rules) > 1 + 1e-12:
            raise ValueError("assignment ratios must sum to at most 1")
        for r in self.rules:
            if r.formula.body and max(r.formula.body) > self.num_predicates:
                raise ValueError(
                    f"rule {format_rule(r.formula)} references predicates beyond "
                    f"the vocabulary of size {self.num_predicates}")


def spec_to_json(spec: GroundTruthSpec) -> dict:
    return {
        "num_predicates": spec.num_predicates,
        "horizon": spec.horizon,
        "base": spec.base,
        "delta": spec.delta,
        "body_rate": spec.body_rate,
        "noise_rate": spec.noise_rate,
        "rules": [{"rule": format_rule(replace_weight(r.formula, r.weight)),
                   "ratio": r.ratio} for r in spec.rules],
    }


def spec_from_json(payload: dict) -> GroundTruthSpec:
    rules = tuple(
        GroundTruthRule(parse_rule(entry["rule"]),
                        weight=parse_rule(entry["rule"]).weight,
                        ratio=float(entry["ratio"]))
        for entry in payload.get("rules", ()))
    return GroundTruthSpec(
        rules=rules,
        base=float(payload["base"]),
        num_predicates=int(payload["num_predicates"]),
        horizon=float(payload.get("horizon", 100.0)),
        delta=float(payload.get("delta", 0.5)),
        body_rate=float(payload.get("body_rate", 0.0)),
        noise_rate=float(payload.get("noise_rate", 0.001)),
    )


def load_spec(path: str) -> GroundTruthSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))


def save_spec(spec: GroundTruthSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_json(spec), fh, indent=2)
        fh.write("\n")


def replace_weight(formula: RuleFormula, weight: float) -> RuleFormula:
    return RuleFormula(formula.body, formula.relations, weight)


def _preset(rule_texts: list[tuple[str, float]]) -> GroundTruthSpec:
    rules = tuple(GroundTruthRule(parse_rule(t), parse_rule(t).weight, ratio)
                  for t, ratio in rule_texts)
    return GroundTruthSpec(rules=rules, base=0.02, num_predicates=30)


PRESETS: dict[str, GroundTruthSpec] = {
    "group1": _preset([
        ("Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40", 0.20),
    ]),
    "group2": _preset([
        ("Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40", 0.10),
        ("Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80", 0.15),
    ]),
    "group3": _preset([
        ("Y <- X1 ^ X2 ^ X3 @ 0.40", 0.10),
        ("Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80", 0.15),
        ("Y <- X6 ^ X7 ^ (X6 before X7) @ 1.20", 0.15),
    ]),
}


def assign_rules(n: int, spec: GroundTruthSpec, seed: int) -> list[int | None]:
    """Assign each of ``n`` sequences to at most one rule.

    Rule ``k`` receives exactly ``round(n * ratio_k)`` sequences (largest
    remainder breaks fractional ties); positions are shuffled deterministically
    from ``seed``.
    """
    quotas = [n * r.ratio for r in spec.rules]
    counts = [math.floor(q) for q in quotas]
    short = round(sum(quotas)) - sum(counts)
    by_remainder = sorted(range(len(quotas)),
                          key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in by_remainder[:short]:
        counts[k] += 1
    slots: list[int | None] = []
    for k, c in enumerate(counts):
        slots.extend([k] * c)
    slots.extend([None] * (n - len(slots)))
    rng = spawn_rng(seed, STREAM_ASSIGN)
    rng.shuffle(slots)
    return slots


def _place_body(rule: GroundTruthRule, spec: GroundTruthSpec,
                rng: np.random.Generator) -> dict[int, float]:
    """One occurrence per body predicate, uniform on [0, T/2], constraints held."""
    body = rule.formula.body
    half = spec.horizon / 2.0
    for _ in range(_MAX_PLACEMENT_TRIES):
        times = {p: float(rng.uniform(0.0, half)) for p in body}
        ok = True
        for (a, b), rel in rule.formula.relations.items():
            diff = times[a] - times[b]
            if rel is Relation.BEFORE:
                ok = diff < -spec.delta
            elif rel is Relation.EQUAL:
                ok = abs(diff) <= spec.delta
            else:  # canonical formulas hold no AFTER, but stay total
                ok = diff > spec.delta
            if not ok:
                break
        if ok:
            return times
    raise GenerationError(
        f"could not satisfy constraints of {format_rule(rule.formula)} "
        f"after {_MAX_PLACEMENT_TRIES} draws")


def sample_target_times(breaks: Sequence[float], rates: Sequence[float],
                        rng: np.random.Generator) -> list[float]:
    """Exact draw from an inhomogeneous Poisson process with piecewise rates.

    ``rates[i]`` holds on ``[breaks[i], breaks[i+1])``.  Inter-arrival
    exponentials are inverted through the piecewise-linear compensator, so the
    first arrival at constant rate ``r`` from a uniform draw ``u`` lands at
    ``-log(u)/r``.
    """
    breaks = [float(b) for b in breaks]
    rates = [float(r) for r in rates]
    if len(breaks) != len(rates) + 1:
        raise ValueError("need exactly one rate per segment")
    if any(r < 0 for r in rates):
        raise ValueError("rates must be nonnegative")
    out: list[float] = []
    t = breaks[0]
    need = -math.log(rng.random() or np.nextafter(0, 1))
    for i, rate in enumerate(rates):
        end = breaks[i + 1]
        while True:
            capacity = rate * (end - t)
            if need > capacity:
                need -= capacity
                t = end
                break
            t = t + need / rate
            out.append(t)
            need = -math.log(rng.random() or np.nextafter(0, 1))
    return out


def target_rate_profile(assignment: int | None, body_times: dict[int, float],
                        spec: GroundTruthSpec) -> tuple[list[float], list[float]]:
    """Breakpoints and rates of the true target intensity for one sequence."""
    if assignment is None:
        return [0.0, spec.horizon], [spec.base]
    rule = spec.rules[assignment]
    onset = max((body_times[p] for p in rule.formula.body), default=0.0)
    if onset >= spec.horizon:
        return [0.0, spec.horizon], [spec.base]
    if onset <= 0.0:
        return [0.0, spec.horizon], [spec.base + rule.weight]
    return [0.0, onset, spec.horizon], [spec.base, spec.base + rule.weight]


def generate_sequence(assignment: int | None, spec: GroundTruthSpec,
                      rng: np.random.Generator) -> EventSequence:
    """Draw one sequence given its rule assignment (or None for background)."""
    events: dict[int, list[float]] = {}
    body_times: dict[int, float] = {}
    body = ()
    if assignment is not None:
        rule = spec.rules[assignment]
        body = rule.formula.body
        body_times = _place_body(rule, spec, rng)
        for p, t in body_times.items():
            events[p] = [t]
    for p in range(1, spec.num_predicates + 1):
        if p in body:
            continue
        k = rng.poisson(spec.noise_rate * spec.horizon)
        if k:
            events[p] = sorted(float(t) for t in rng.uniform(0.0, spec.horizon, size=k))
    breaks, rates = target_rate_profile(assignment, body_times, spec)
    targets = sample_target_times(breaks, rates, rng)
    return EventSequence(horizon=spec.horizon,
                         events={p: tuple(ts) for p, ts in events.items()},
                         target_times=tuple(targets))


def generate_dataset(spec: GroundTruthSpec, n: int, seed: int,
                     ) -> tuple[Dataset, list[int | None]]:
    """Generate ``n`` sequences; deterministic in (spec, n, seed).

    Each sequence draws from its own child stream keyed by (seed, index), so
    the result is independent of evaluation order.
    """
    assignments = assign_rules(n, spec, seed)
    sequences = tuple(
        generate_sequence(assignments[i], spec, spawn_rng(seed, STREAM_SEQUENCE, i))
        for i in range(n))
    return Dataset(sequences, spec.num_predicates), assignments
