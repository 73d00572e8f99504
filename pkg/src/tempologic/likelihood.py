"""Exact likelihood machinery for piecewise-constant rule-driven intensities.

The conditional intensity of the target event is ``b0 + sum_f gamma_f *
phi_f(t)`` where each ``phi_f`` is a grounded rule feature.  Everything here
exploits one structural fact: grounded facts depend on history only through
the first occurrence of each predicate, so under a fixed selection a rule's
feature takes at most ``m + 1`` distinct values per sequence, where ``m`` is
its number of switchable fact terms.  Each term flips false -> true at one
"switch time" (or never), and the feature value is a function of how many
terms are still false.  Compensators, likelihoods, gradients, and expected
next-event times all reduce to exact bookkeeping over those switch times; no
quadrature is involved anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import Dataset, EventSequence, fact_relation, fact_static
from .features import (
    REL_BEFORE,
    REL_EQUAL,
    REL_NONE,
    EmbeddingTables,
    HyperParams,
    RuleEmbedding,
    SelectionResult,
    combined_feature,
    similarity_matrix,
    slot_pairs,
    softmin_grad,
)


class DivergenceError(ValueError):
    """The optimizer or likelihood left the numerically valid region."""


@dataclass
class IntensityParams:
    """Base rate plus one nonnegative weight and embedding per rule."""

    b0: float
    gammas: Sequence[float]
    rules: Sequence[RuleEmbedding]

    def __post_init__(self) -> None:
        self.gammas = [float(g) for g in self.gammas]
        self.rules = list(self.rules)
        if len(self.gammas) != len(self.rules):
            raise ValueError("need one weight per rule")
        if self.b0 < 0 or any(g < 0 for g in self.gammas):
            raise ValueError("b0 and rule weights must be nonnegative")


@dataclass
class GradientBundle:
    """Partial derivatives of the total NLL for every free parameter."""

    d_b0: float
    d_gammas: np.ndarray
    d_slots: list[np.ndarray]
    d_pair_slots: list[np.ndarray]


@dataclass(frozen=True)
class CompiledDataset:
    """Array form of a corpus: first occurrences, horizons, flattened targets."""

    first: np.ndarray        # (n, U+1) first occurrence per predicate, +inf if absent
    horizons: np.ndarray     # (n,)
    target_times: np.ndarray  # (k,) grouped by sequence, ascending within each
    target_seq: np.ndarray   # (k,) owning sequence index, ascending
    num_predicates: int

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "CompiledDataset":
        n = len(dataset)
        first = np.full((n, dataset.num_predicates + 1), np.inf)
        horizons = np.empty(n)
        times: list[float] = []
        owners: list[int] = []
        for i, seq in enumerate(dataset):
            horizons[i] = seq.horizon
            for pid, ts in seq.events.items():
                first[i, pid] = ts[0]
            times.extend(seq.target_times)
            owners.extend([i] * len(seq.target_times))
        return cls(first, horizons, np.asarray(times, dtype=float),
                   np.asarray(owners, dtype=np.int64), dataset.num_predicates)

    @property
    def num_sequences(self) -> int:
        return self.first.shape[0]

    @property
    def num_targets(self) -> int:
        return self.target_times.shape[0]

    @property
    def total_time(self) -> float:
        return float(self.horizons.sum())

    def slice(self, lo: int, hi: int) -> "CompiledDataset":
        """Contiguous view of sequences [lo, hi); O(log k)."""
        a, b = np.searchsorted(self.target_seq, (lo, hi))
        return CompiledDataset(self.first[lo:hi], self.horizons[lo:hi],
                               self.target_times[a:b], self.target_seq[a:b] - lo,
                               self.num_predicates)

    def take(self, indices: np.ndarray) -> "CompiledDataset":
        """Arbitrary sequence subset, preserving order of ``indices``."""
        indices = np.asarray(indices, dtype=np.int64)
        keep = np.isin(self.target_seq, indices)
        remap = np.full(self.num_sequences, -1, dtype=np.int64)
        remap[indices] = np.arange(len(indices))
        return CompiledDataset(self.first[indices], self.horizons[indices],
                               self.target_times[keep], remap[self.target_seq[keep]],
                               self.num_predicates)


def compile_dataset(dataset: Dataset) -> CompiledDataset:
    return CompiledDataset.from_dataset(dataset)


class CompiledRule:
    """One rule under a fixed selection: score terms, fact layout, value tables.

    ``phi[c]`` is the feature value when exactly ``c`` of the switchable fact
    terms are false, and ``dphi[c]`` its gradient with respect to the selected
    match scores.  ``switch_times`` produces, per sequence, the sorted times
    after which each switchable term turns true (+inf when it never does).
    """

    def __init__(self, rule: RuleEmbedding, tables: EmbeddingTables,
                 selection: SelectionResult, hyper: HyperParams,
                 hard: bool = False):
        self.rule = rule
        self.tables = tables
        self.selection = selection
        self.hyper = hyper
        self.hard = hard
        self.W = similarity_matrix(rule.slots, tables.predicates, hyper.tau)
        self.Wr = similarity_matrix(rule.pair_slots, tables.relations, hyper.tau)
        L = rule.length
        s_idx = np.asarray(selection.static_idx, dtype=np.int64)
        r_idx = np.asarray(selection.relation_idx, dtype=np.int64)
        if s_idx.shape != (L,) or r_idx.shape != (len(slot_pairs(L)),):
            raise ValueError("selection shape does not match the rule template")
        self.static_idx = s_idx
        self.relation_idx = r_idx

        scores = [self.W[l, s_idx[l]] for l in range(L)]
        self.static_pids = s_idx[s_idx != 0]
        self.rel_specs: list[tuple[int, int, int]] = []  # (pid_a, pid_b, relation code)
        self.scored_pairs: list[int] = []                # pair positions with a score term
        n_pinned_true = L - len(self.static_pids)        # dummy slots: static fact is 1
        for pos, (i, l) in enumerate(slot_pairs(L)):
            pa, pb = int(s_idx[i]), int(s_idx[l])
            if pa == 0 or pb == 0:
                n_pinned_true += 1                       # pair forced to the trivial relation
                continue
            self.scored_pairs.append(pos)
            scores.append(self.Wr[pos, r_idx[pos]])
            if r_idx[pos] == REL_NONE:
                n_pinned_true += 1
            else:
                self.rel_specs.append((pa, pb, int(r_idx[pos])))
        self.scores = np.asarray(scores)
        self.m = len(self.static_pids) + len(self.rel_specs)
        n_terms = len(scores) + L + len(slot_pairs(L))

        n_w = len(scores)
        phi = np.empty(self.m + 1)
        dphi = np.empty((self.m + 1, n_w))
        for c in range(self.m + 1):
            if hyper.feature_form == "product":
                if c:
                    phi[c] = 0.0
                    dphi[c] = 0.0
                else:
                    p = float(np.prod(self.scores))
                    phi[c] = p
                    dphi[c] = p / np.maximum(self.scores, 1e-300)
            else:
                vals = np.concatenate(
                    [self.scores, np.ones(n_terms - n_w - c), np.zeros(c)])
                phi[c], g = softmin_grad(vals, hyper.rho)
                dphi[c] = g[:n_w]
        if hard:
            # exact indicator semantics: the feature is 1 only once every
            # fact term holds, with no soft-min slack and no score gradients
            phi = (np.arange(self.m + 1) == 0).astype(float)
            dphi = np.zeros_like(dphi)
        self.phi = phi
        self.dphi = dphi

    def switch_times(self, data: CompiledDataset) -> np.ndarray:
        """(n, m) ascending per-sequence times after which each term holds."""
        cols = []
        if len(self.static_pids):
            cols.append(data.first[:, self.static_pids])
        delta = self.hyper.delta
        for pa, pb, rel in self.rel_specs:
            fa = data.first[:, pa]
            fb = data.first[:, pb]
            ok = np.isfinite(fa) & np.isfinite(fb)
            diff = np.zeros_like(fa)
            np.subtract(fa, fb, out=diff, where=ok)
            if rel == REL_BEFORE:
                holds = diff < -delta
            elif rel == REL_EQUAL:
                holds = np.abs(diff) <= delta
            else:
                holds = diff > delta
            cols.append(np.where(ok & holds, np.maximum(fa, fb), np.inf)[:, None])
        if not cols:
            return np.empty((data.num_sequences, 0))
        return np.sort(np.concatenate(cols, axis=1), axis=1)

    def false_counts_at(self, data: CompiledDataset, sw: np.ndarray) -> np.ndarray:
        """Per target event, how many switchable terms are false just before it."""
        if sw.shape[1] == 0:
            return np.zeros(data.num_targets, dtype=np.int64)
        turned = (sw[data.target_seq] < data.target_times[:, None]).sum(axis=1)
        return sw.shape[1] - turned

    def durations_by_count(self, data: CompiledDataset, sw: np.ndarray) -> np.ndarray:
        """Total exposure time, indexed by the false-term count ``c``."""
        n = data.num_sequences
        if sw.shape[1] == 0:
            return np.array([data.total_time])
        capped = np.minimum(sw, data.horizons[:, None])
        edges = np.concatenate(
            [np.zeros((n, 1)), capped, data.horizons[:, None]], axis=1)
        per_level = np.diff(edges, axis=1).sum(axis=0)  # column k <-> c = m - k
        return per_level[::-1]

    def score_gradients(self, d_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Chain d(loss)/d(score) back to the slot matrices through each softmax row."""
        tau = self.hyper.tau
        K = self.tables.predicates
        Kr = self.tables.relations
        d_slots = np.zeros_like(self.rule.slots)
        for l in range(self.rule.length):
            j = self.static_idx[l]
            row = self.W[l]
            d_slots[l] = d_scores[l] * (row[j] / tau) * (K[j] - row @ K)
        d_pairs = np.zeros_like(self.rule.pair_slots)
        base = self.rule.length
        for k, pos in enumerate(self.scored_pairs):
            j = self.relation_idx[pos]
            row = self.Wr[pos]
            d_pairs[pos] = d_scores[base + k] * (row[j] / tau) * (Kr[j] - row @ Kr)
        return d_slots, d_pairs


def _model_eval(data: CompiledDataset, b0: float, gammas: Sequence[float],
                compiled: Sequence[CompiledRule], want_grad: bool,
                ) -> tuple[float, float, GradientBundle | None]:
    """Total NLL and compensator over ``data``; optionally all parameter gradients."""
    lam = np.full(data.num_targets, b0)
    comp = b0 * data.total_time
    cache = []
    for cr, gamma in zip(compiled, gammas):
        sw = cr.switch_times(data)
        dur = cr.durations_by_count(data, sw)
        c_t = cr.false_counts_at(data, sw)
        phi_t = cr.phi[c_t]
        lam += gamma * phi_t
        comp += gamma * float(cr.phi @ dur)
        cache.append((dur, c_t, phi_t))
    with np.errstate(divide="ignore"):
        log_term = float(np.log(lam).sum()) if data.num_targets else 0.0
    nll = comp - log_term
    if not want_grad:
        return nll, comp, None

    with np.errstate(divide="ignore"):
        inv = 1.0 / lam
    d_b0 = data.total_time - float(inv.sum())
    d_gammas = np.empty(len(compiled))
    d_slots = []
    d_pairs = []
    for f, (cr, gamma) in enumerate(zip(compiled, gammas)):
        dur, c_t, phi_t = cache[f]
        d_gammas[f] = float(cr.phi @ dur) - float(phi_t @ inv)
        ev = np.bincount(c_t, weights=inv, minlength=cr.m + 1)
        d_phi = gamma * (dur - ev)
        ds, dp = cr.score_gradients(d_phi @ cr.dphi)
        d_slots.append(ds)
        d_pairs.append(dp)
    return nll, comp, GradientBundle(d_b0, d_gammas, d_slots, d_pairs)


def _compiled_rules(params: IntensityParams, selections: Sequence[SelectionResult],
                    tables: EmbeddingTables, hyper: HyperParams,
                    hard: bool = False) -> list[CompiledRule]:
    if len(selections) != len(params.rules):
        raise ValueError("need one selection per rule")
    return [CompiledRule(r, tables, s, hyper, hard=hard)
            for r, s in zip(params.rules, selections)]


def _single(seq: EventSequence, num_predicates: int) -> CompiledDataset:
    return CompiledDataset.from_dataset(Dataset((seq,), num_predicates))


def intensity_at(params: IntensityParams, selections: Sequence[SelectionResult],
                 seq: EventSequence, t: float, hyper: HyperParams,
                 tables: EmbeddingTables) -> float:
    """Reference evaluation of the intensity at one query time."""
    lam = params.b0
    for rule, gamma, sel in zip(params.rules, params.gammas, selections):
        lam += gamma * combined_feature(rule, tables, sel, seq, t, hyper)
    return lam


def compensator(params: IntensityParams, selections: Sequence[SelectionResult],
                seq: EventSequence, hyper: HyperParams,
                tables: EmbeddingTables) -> float:
    """Exact integral of the intensity over the sequence horizon."""
    compiled = _compiled_rules(params, selections, tables, hyper)
    _, comp, _ = _model_eval(_single(seq, tables.num_predicates), params.b0,
                             params.gammas, compiled, want_grad=False)
    return comp


def neg_log_likelihood(params: IntensityParams, selections: Sequence[SelectionResult],
                       dataset: Dataset | CompiledDataset, hyper: HyperParams,
                       tables: EmbeddingTables) -> float:
    """Total negative log likelihood over the corpus; raises if non-finite."""
    data = dataset if isinstance(dataset, CompiledDataset) else compile_dataset(dataset)
    compiled = _compiled_rules(params, selections, tables, hyper)
    nll, _, _ = _model_eval(data, params.b0, params.gammas, compiled, want_grad=False)
    if not np.isfinite(nll):
        raise DivergenceError(
            "non-finite likelihood: a target event has zero intensity (b0 = 0 and no rule covers it)")
    return nll


def gradient(params: IntensityParams, selections: Sequence[SelectionResult],
             dataset: Dataset | CompiledDataset, hyper: HyperParams,
             tables: EmbeddingTables) -> GradientBundle:
    """Analytic NLL gradient for b0, every rule weight, and every slot matrix.

    Selections are held fixed: facts are constants and each selected score
    feeds back through its softmax row only.
    """
    data = dataset if isinstance(dataset, CompiledDataset) else compile_dataset(dataset)
    compiled = _compiled_rules(params, selections, tables, hyper)
    _, _, grad = _model_eval(data, params.b0, params.gammas, compiled, want_grad=True)
    return grad


def predict_next_time(params: IntensityParams, selections: Sequence[SelectionResult],
                      seq: EventSequence, t_last: float, hyper: HyperParams,
                      tables: EmbeddingTables, hard: bool = False) -> float:
    """Expected next target time given history up to ``t_last``.

    Computes ``t_last + int_0^inf S(u) du`` with ``S`` the survival function of
    the piecewise-constant intensity along the sequence's recorded covariate
    path; segments and the constant tail beyond the last switch time are
    integrated in closed form, so the value is exact.  Returns +inf when the
    tail intensity is zero.  With ``hard`` the features are exact indicators
    instead of soft-min scores, which is how finished rule sets are applied.
    """
    compiled = _compiled_rules(params, selections, tables, hyper, hard=hard)
    data1 = _single(seq, tables.num_predicates)
    sws = [cr.switch_times(data1)[0] for cr in compiled]
    cuts = sorted({float(s) for sw in sws for s in sw
                   if np.isfinite(s) and s > t_last})

    def lam_on(t_repr: float) -> float:
        lam = params.b0
        for cr, gamma, sw in zip(compiled, params.gammas, sws):
            c = int((sw >= t_repr).sum())
            lam += gamma * cr.phi[c]
        return lam

    expected_gap = 0.0
    survival = 1.0
    t_cur = t_last
    for cut in cuts:
        lam = lam_on(cut)  # constant on (t_cur, cut]
        dt = cut - t_cur
        if lam > 0:
            decay = np.exp(-lam * dt)
            expected_gap += survival * (1.0 - decay) / lam
            survival *= decay
        else:
            expected_gap += survival * dt
        t_cur = cut
    lam_tail = lam_on(t_cur + 1.0)
    if lam_tail <= 0:
        return float("inf")
    expected_gap += survival / lam_tail
    return t_last + expected_gap
