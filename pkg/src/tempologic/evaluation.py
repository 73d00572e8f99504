"""Scoring: rule recovery against ground truth and event-time prediction error.

Recovery is judged strictly: a ground-truth rule counts as matched only when
some learned formula has the identical body and the identical relation map
after canonicalization; an extra or missing relation makes a non-match.
Weight error is averaged over matched rules only.  Event error conditions each
prediction on the history up to the previous target event.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .events import Dataset
from .features import one_hot_tables
from .induction import RuleSet, TrainConfig, ruleset_components, sequential_cover
from .likelihood import predict_next_time
from .rules import RuleFormula, canonicalize, format_rule
from .seeding import STREAM_REP, STREAM_SPLIT, spawn_rng
from .synth import GroundTruthSpec, generate_dataset, replace_weight


@dataclass(frozen=True)
class EvalReport:
    """One evaluation outcome; recovery fields are None without ground truth."""

    exact_match_accuracy: float | None
    weight_mae: float | None
    event_mae: float | None
    matched: tuple[str, ...] = ()
    missed: tuple[str, ...] = ()
    spurious: tuple[str, ...] = ()
    seconds: float = 0.0

    def to_json(self) -> dict:
        out: dict = {"seconds": self.seconds}
        if self.exact_match_accuracy is not None:
            out["exact_match_accuracy"] = self.exact_match_accuracy
            out["matched"] = list(self.matched)
            out["missed"] = list(self.missed)
            out["spurious"] = list(self.spurious)
        if self.weight_mae is not None:
            out["weight_mae"] = self.weight_mae
        if self.event_mae is not None:
            out["event_mae"] = self.event_mae
        return out


CSV_HEADER = "repetition,exact_match_accuracy,weight_mae,event_mae,seconds"


def csv_row(rep: int, report: EvalReport) -> str:
    def cell(x: float | None) -> str:
        return "" if x is None else repr(x)

    return (f"{rep},{cell(report.exact_match_accuracy)},{cell(report.weight_mae)},"
            f"{cell(report.event_mae)},{report.seconds!r}")


def match_rules(learned: RuleSet, truth: Sequence[RuleFormula],
                ) -> tuple[list[tuple[RuleFormula, RuleFormula]],
                           list[RuleFormula], list[RuleFormula]]:
    """Pair learned and truth formulas by exact canonical identity.

    Returns (matched pairs, missed truth rules, spurious learned rules).
    """
    truth_canon = [canonicalize(f) for f in truth]
    by_key = {f.key(): f for f in (canonicalize(g) for g in learned.rules)}
    matched = []
    missed = []
    for f in truth_canon:
        hit = by_key.pop(f.key(), None)
        if hit is None:
            missed.append(f)
        else:
            matched.append((hit, f))
    return matched, missed, list(by_key.values())


def exact_match_accuracy(learned: RuleSet, truth: Sequence[RuleFormula]) -> float:
    if not truth:
        return 1.0
    matched, _, _ = match_rules(learned, truth)
    return len(matched) / len(truth)


def weight_mae(learned: RuleSet, truth: Sequence[RuleFormula]) -> float | None:
    """Mean absolute weight error over exactly matched rules; None if no match."""
    matched, _, _ = match_rules(learned, truth)
    if not matched:
        return None
    return float(np.mean([abs(l.weight - t.weight) for l, t in matched]))


def event_mae(model: RuleSet, test_set: Dataset) -> float:
    """Mean |predicted - actual| over every target event in the test set.

    Each event is predicted from the history up to the previous target event
    of its sequence (time 0 for the first).
    """
    tables = one_hot_tables(model.num_predicates)
    params, sels = ruleset_components(model, tables)
    errors: list[float] = []
    for seq in test_set:
        t_prev = 0.0
        for t in seq.target_times:
            pred = predict_next_time(params, sels, seq, t_prev, model.hyper,
                                     tables, hard=True)
            errors.append(abs(pred - t))
            t_prev = t
    if not errors:
        raise ValueError("test set contains no target events")
    return float(np.mean(errors))


def evaluate_model(model: RuleSet, truth: Sequence[RuleFormula] | None = None,
                   test_set: Dataset | None = None, seconds: float = 0.0) -> EvalReport:
    accuracy = mae_w = mae_e = None
    matched: tuple[str, ...] = ()
    missed: tuple[str, ...] = ()
    spurious: tuple[str, ...] = ()
    if truth is not None:
        pairs, miss, spur = match_rules(model, truth)
        accuracy = len(pairs) / len(truth) if truth else 1.0
        if pairs:
            mae_w = float(np.mean([abs(l.weight - t.weight) for l, t in pairs]))
        matched = tuple(format_rule(l) for l, _ in pairs)
        missed = tuple(format_rule(f) for f in miss)
        spurious = tuple(format_rule(f) for f in spur)
    if test_set is not None and len(test_set):
        mae_e = event_mae(model, test_set)
    return EvalReport(accuracy, mae_w, mae_e, matched, missed, spurious, seconds)


def split_dataset(dataset: Dataset, seed: int, train_fraction: float = 0.8,
                  ) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split by sequence."""
    n = len(dataset)
    order = spawn_rng(seed, STREAM_SPLIT).permutation(n)
    cut = int(round(n * train_fraction))
    train = tuple(dataset[int(i)] for i in order[:cut])
    test = tuple(dataset[int(i)] for i in order[cut:])
    return (Dataset(train, dataset.num_predicates),
            Dataset(test, dataset.num_predicates))


def rep_seed(seed: int, rep: int) -> int:
    """A distinct, reproducible seed for repetition ``rep``."""
    return int(np.random.SeedSequence((seed, STREAM_REP, rep)).generate_state(1)[0])


def run_experiment(spec: GroundTruthSpec, n: int, config: TrainConfig,
                   repetitions: int = 1,
                   progress=None) -> list[EvalReport]:
    """Generate, train, and score ``repetitions`` times with distinct seeds.

    Each repetition draws its own corpus, splits 80/20 by sequence, learns on
    the training part, and reports recovery against ``spec`` plus held-out
    event MAE and wall-clock seconds.
    """
    truth = [replace_weight(r.formula, r.weight) for r in spec.rules]
    reports = []
    for rep in range(repetitions):
        seed = rep_seed(config.seed, rep)
        started = time.perf_counter()
        data, _ = generate_dataset(spec, n, seed)
        train, test = split_dataset(data, seed)
        model = sequential_cover(train, replace(config, seed=seed), progress=progress)
        elapsed = time.perf_counter() - started
        reports.append(evaluate_model(model, truth, test, seconds=elapsed))
        if progress is not None:
            progress(f"repetition {rep + 1}/{repetitions}: "
                     f"accuracy {reports[-1].exact_match_accuracy}, "
                     f"{elapsed:.1f}s")
    return reports


def aggregate(reports: Sequence[EvalReport]) -> dict:
    """Mean of each metric over the repetitions that define it."""
    def mean_of(values: list[float]) -> float | None:
        return float(np.mean(values)) if values else None

    return {
        "repetitions": len(reports),
        "mean_accuracy": mean_of(
            [r.exact_match_accuracy for r in reports if r.exact_match_accuracy is not None]),
        "mean_weight_mae": mean_of(
            [r.weight_mae for r in reports if r.weight_mae is not None]),
        "mean_event_mae": mean_of(
            [r.event_mae for r in reports if r.event_mae is not None]),
        "mean_seconds": mean_of([r.seconds for r in reports]),
    }
