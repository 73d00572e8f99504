"""Rule induction: stochastic single-rule fits, restarts, sequential covering.

A single rule is fit by projected Adam on the rule's slot matrices plus the
rate parameters, drawing a fresh Gumbel selection each step so the gradient
explores the discrete neighbourhood of the current soft assignment.  The best
of several independently seeded restarts is interpreted as a discrete formula,
sequences it explains are removed, and the procedure repeats until rules stop
being useful.  Finally all accepted formulas are refit jointly on the full
corpus with their structure frozen and exact indicator features, which removes
the soft-min bias from the reported weights.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .events import Dataset, EventSequence
from .features import (
    EmbeddingTables,
    HyperParams,
    RuleEmbedding,
    SelectionResult,
    argmax_select,
    embedding_from_selection,
    gumbel_select,
    init_rule_embedding,
    interpret_rule,
    one_hot_tables,
    selection_from_formula,
    selection_to_formula,
    slot_pairs,
)
from .likelihood import (
    CompiledDataset,
    CompiledRule,
    DivergenceError,
    IntensityParams,
    _model_eval,
    compile_dataset,
    predict_next_time,
)
from .rules import RuleFormula, format_rule, parse_rule
from .seeding import (
    STREAM_BATCH,
    STREAM_GUMBEL,
    STREAM_INIT,
    spawn_rng,
)

_B0_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Everything the learner needs besides the data.

    ``full_batch_limit`` switches between full-batch steps and contiguous
    minibatch chunks whose order is reshuffled each epoch.  Each step averages
    the gradient over ``gumbel_samples`` independent selections, which is what
    lets rarely sampled slot candidates accumulate evidence.  For the first
    ``explore_fraction`` of the epochs the base rate stays pinned at the
    fitting data's empirical mean rate, which denies structureless selections
    any likelihood payoff (their best move would be to re-fit the base rate)
    and keeps Gumbel exploration alive until genuinely predictive slots
    appear; during that phase the base rate is still optimized, exactly, in
    every structure snapshot.  Letting the base rate descend by gradient
    instead (fraction < 1) opens a channel where the rule weight absorbs the
    background through soft-min slack, so the default keeps it pinned for the
    whole fit.  ``weight_decay`` shrinks slot logits toward zero so selection
    probabilities never saturate, and a slot whose argmax duplicates an
    earlier slot is re-initialized (a duplicate adds nothing to the
    interpreted formula but would otherwise absorb the slot forever).
    Convergence is declared when the deterministic loss stops improving in
    relative terms for ``patience`` consecutive epochs.
    """

    rule_length: int = 3
    learning_rate: float = 0.05
    rate_learning_rate: float = 0.01
    max_epochs: int = 600
    min_epochs: int = 60
    explore_fraction: float = 1.0
    gumbel_samples: int = 8
    weight_decay: float = 0.01
    batch_size: int = 1024
    full_batch_limit: int = 5000
    restarts: int = 4
    weight_threshold: float = 0.05
    max_rules: int = 5
    init_scale: float = 0.5
    gamma_init: float = 0.1
    rel_tol: float = 1e-5
    patience: int = 10
    seed: int = 0
    workers: int = 1
    hyper: HyperParams = HyperParams()

    def __post_init__(self) -> None:
        if self.rule_length < 1:
            raise ValueError("rule template needs at least one slot")
        if self.restarts < 1 or self.max_rules < 1 or self.workers < 1:
            raise ValueError("restarts, max_rules, and workers must be positive")
        if not (0 <= self.explore_fraction <= 1):
            raise ValueError("explore_fraction must lie in [0, 1]")
        if self.gumbel_samples < 1:
            raise ValueError("need at least one selection sample per step")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


@dataclass
class FitResult:
    """Best structure visited by one single-rule fit, with exact-refit rates."""

    embedding: RuleEmbedding
    selection: SelectionResult
    formula: RuleFormula
    b0: float
    gamma: float
    nll: float
    epochs: int
    restart_losses: tuple[float, ...] = ()


@dataclass(frozen=True)
class RuleSet:
    """A learned model: base rate plus weighted formulas (weight in each formula).

    ``embeddings`` holds each accepted rule's trained slot matrices for
    inspection; when built by hand they may be omitted and are reconstructed
    as sharp one-hot stand-ins on demand.
    """

    base_rate: float
    rules: tuple[RuleFormula, ...]
    num_predicates: int
    hyper: HyperParams = HyperParams()
    embeddings: tuple[RuleEmbedding, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "embeddings", tuple(self.embeddings))
        if self.base_rate < 0:
            raise ValueError("base rate must be nonnegative")
        if self.embeddings and len(self.embeddings) != len(self.rules):
            raise ValueError("need one stored embedding per rule (or none)")


class _Adam:
    """Adam over named arrays; every named parameter steps once per call."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, name: str, value: np.ndarray, grad: np.ndarray,
             lr: float | None = None) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        m = self._m.setdefault(name, np.zeros_like(grad))
        v = self._v.setdefault(name, np.zeros_like(grad))
        t = self._t.get(name, 0) + 1
        self._t[name] = t
        m += (1 - self.beta1) * (grad - m)
        v += (1 - self.beta2) * (grad * grad - v)
        mhat = m / (1 - self.beta1 ** t)
        vhat = v / (1 - self.beta2 ** t)
        return value - (self.lr if lr is None else lr) * mhat / (np.sqrt(vhat) + self.eps)


def _chunk_views(data: CompiledDataset, config: TrainConfig) -> list[CompiledDataset]:
    n = data.num_sequences
    if n <= config.full_batch_limit:
        return [data]
    k = math.ceil(n / config.batch_size)
    edges = np.linspace(0, n, k + 1).astype(int)
    return [data.slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _bisect_root(fn, lo: float, hi: float, iters: int = 60) -> float:
    """Root of an increasing function known to change sign on [lo, hi]."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _refit_rates(data: CompiledDataset, compiled: Sequence[CompiledRule],
                 b0: float, gammas: np.ndarray, rounds: int = 30,
                 ) -> tuple[float, np.ndarray, float]:
    """Exact coordinate maximization of the likelihood over the rates.

    With features fixed the NLL is jointly convex in (b0, gammas); each
    coordinate's stationarity condition is monotone, so bisection solves it
    exactly and cycling converges.  Ties along flat directions resolve toward
    small weights because each weight starts from the low side of its bracket.
    """
    total_time = data.total_time
    k = data.num_targets
    exposure = []
    phi_t = []
    for cr in compiled:
        sw = cr.switch_times(data)
        exposure.append(float(cr.phi @ cr.durations_by_count(data, sw)))
        phi_t.append(cr.phi[cr.false_counts_at(data, sw)])
    gammas = np.asarray(gammas, dtype=float).copy()

    def other(f: int) -> np.ndarray:
        s = np.zeros(k)
        for j, col in enumerate(phi_t):
            if j != f:
                s += gammas[j] * col
        return s

    for _ in range(rounds):
        prev_b0, prev_g = b0, gammas.copy()
        rest = np.zeros(k)
        for j, col in enumerate(phi_t):
            rest += gammas[j] * col
        hi = max(k / total_time, _B0_FLOOR)
        if k and float(np.sum(1.0 / np.maximum(rest, 1e-300))) > total_time:
            b0 = _bisect_root(
                lambda b: total_time - float(np.sum(1.0 / (b + rest))), 0.0, hi)
        else:
            b0 = 0.0
        b0 = max(b0, _B0_FLOOR)
        for f, cr in enumerate(compiled):
            col = phi_t[f]
            live = col > 0
            if not live.any() or exposure[f] <= 0:
                gammas[f] = 0.0
                continue
            base = b0 + other(f)

            def marg(g: float) -> float:
                return exposure[f] - float(np.sum(col[live] / (base[live] + g * col[live])))

            if marg(0.0) >= 0.0:
                gammas[f] = 0.0
                continue
            hi_g = 1.0
            while marg(hi_g) < 0.0 and hi_g < 1e9:
                hi_g *= 2.0
            gammas[f] = _bisect_root(marg, 0.0, hi_g)
        moved = abs(b0 - prev_b0) + float(np.abs(gammas - prev_g).sum())
        if moved < 1e-10 * (1.0 + b0 + float(gammas.sum())):
            break
    nll, _, _ = _model_eval(data, b0, list(gammas), compiled, want_grad=False)
    return b0, gammas, nll


def _recycle_duplicates(emb: RuleEmbedding, tables: EmbeddingTables,
                        pairs: Sequence[tuple[int, int]],
                        rng: np.random.Generator, scale: float) -> None:
    """Re-initialize slots whose argmax repeats an earlier slot's predicate.

    A duplicate slot contributes nothing to the interpreted formula, yet once
    its logits saturate the Gumbel draws stop visiting alternatives, so the
    slot would stay wasted forever.  Pair rows touching a recycled slot are
    re-drawn too since their learned relation referred to the old predicate.
    """
    am = np.argmax(emb.slots @ tables.predicates.T, axis=1)
    used: set[int] = set()
    for l, j in enumerate(am):
        if j != 0 and j in used:
            emb.slots[l] = rng.uniform(-scale, scale, emb.slots.shape[1])
            for p, (a, b) in enumerate(pairs):
                if a == l or b == l:
                    emb.pair_slots[p] = rng.uniform(-scale, scale,
                                                    emb.pair_slots.shape[1])
        else:
            used.add(int(j))


def _formula_score(data: CompiledDataset, formula: RuleFormula,
                   tables: EmbeddingTables, hyper: HyperParams,
                   ) -> tuple[float, float, float]:
    """Exact-best (nll, b0, gamma) of one frozen formula with indicator features."""
    if formula.is_empty:
        b0 = max(data.num_targets / data.total_time, _B0_FLOOR)
        nll, _, _ = _model_eval(data, b0, [], [], want_grad=False)
        return nll, b0, 0.0
    cr = _hard_rule(formula, tables, hyper)
    b0, gammas, nll = _refit_rates(data, [cr], data.num_targets / data.total_time,
                                   np.array([0.1]), rounds=12)
    return nll, b0, float(gammas[0])


def fit_single_rule(data: CompiledDataset, tables: EmbeddingTables,
                    config: TrainConfig, key: tuple[int, ...] = ()) -> FitResult:
    """One stochastic fit of a single rule template plus its rates.

    ``key`` extends the seed so restarts and covering rounds draw independent
    streams; results depend only on (data, config, key), never on scheduling.
    The reported loss and rates come from the best structure visited at any
    epoch end, scored by interpreting the argmax selection and refitting the
    rates exactly with indicator features.  Scoring interpreted structures
    rather than soft selections makes losses comparable across restarts and
    keeps the soft-min slack from rewarding vacuous rules.
    """
    rng_gum = spawn_rng(config.seed, STREAM_GUMBEL, *key)
    rng_batch = spawn_rng(config.seed, STREAM_BATCH, *key)
    rng_init = spawn_rng(config.seed, STREAM_INIT, *key)
    emb = init_rule_embedding(config.rule_length, tables, rng_init,
                              config.init_scale)
    if data.num_targets == 0 or data.total_time <= 0:
        raise ValueError("cannot fit a rule to data with no target events")
    mean_rate = data.num_targets / data.total_time
    b0 = np.array(mean_rate)
    gamma = np.array(config.gamma_init)
    opt = _Adam(config.learning_rate)
    chunks = _chunk_views(data, config)
    hyper = config.hyper
    # epoch limits are step budgets: a minibatched epoch performs one step
    # per chunk, so the limits shrink to keep total work roughly constant
    max_ep = max(1, math.ceil(config.max_epochs / len(chunks)))
    min_ep = max(1, math.ceil(config.min_epochs / len(chunks)))
    explore_until = int(round(config.explore_fraction * max_ep))
    pairs = slot_pairs(config.rule_length)

    scores: dict = {}
    best: tuple[float, RuleEmbedding, float, float, RuleFormula] | None = None
    prev = None
    prev_body: tuple[int, ...] = ()
    streak = 0
    epoch = 0
    for epoch in range(1, max_ep + 1):
        order = rng_batch.permutation(len(chunks)) if len(chunks) > 1 else range(1)
        for ci in order:
            part = chunks[ci]
            g_slots = np.zeros_like(emb.slots)
            g_pairs = np.zeros_like(emb.pair_slots)
            g_b0 = 0.0
            g_gamma = 0.0
            sampled: list[SelectionResult] = []
            for _ in range(config.gumbel_samples):
                sel = gumbel_select(emb, tables, hyper.tau, rng_gum)
                sampled.append(sel)
                cr = CompiledRule(emb, tables, sel, hyper)
                _, _, grad = _model_eval(part, float(b0), [float(gamma)], [cr],
                                         want_grad=True)
                g_slots += grad.d_slots[0]
                g_pairs += grad.d_pair_slots[0]
                g_b0 += grad.d_b0
                g_gamma += grad.d_gammas[0]
            s = config.gumbel_samples
            emb.slots = opt.step("slots", emb.slots,
                                 g_slots / s + config.weight_decay * emb.slots)
            emb.pair_slots = opt.step("pairs", emb.pair_slots,
                                      g_pairs / s
                                      + config.weight_decay * emb.pair_slots)
            if epoch > explore_until:
                b0 = np.maximum(opt.step("b0", b0, g_b0 / s,
                                         config.rate_learning_rate), _B0_FLOOR)
            gamma = np.maximum(opt.step("gamma", gamma, g_gamma / s,
                                        config.rate_learning_rate), 0.0)
            _recycle_duplicates(emb, tables, pairs, rng_init, config.init_scale)
            formula = interpret_rule(emb, tables)
            # the sampled selections double as structure proposals: relation
            # logits often sit in near-ties the argmax alone would hide, so
            # sampled variants over the argmax body compete on exact loss;
            # requiring a body stable across two steps skips wandering phases
            candidates = [formula]
            if formula.body and formula.body == prev_body:
                for sel in sampled:
                    variant = selection_to_formula(sel.static_idx, sel.relation_idx)
                    if variant.body == formula.body:
                        candidates.append(variant)
            prev_body = formula.body
            for cand in candidates:
                fkey = cand.key()
                if fkey not in scores:
                    scores[fkey] = _formula_score(data, cand, tables, hyper)
                nll, b0_fit, gamma_fit = scores[fkey]
                if best is None or nll < best[0]:
                    best = (nll, emb.copy(), b0_fit, gamma_fit, cand)
        # convergence watches the soft objective the optimizer actually descends
        sel = argmax_select(emb, tables)
        soft_cr = CompiledRule(emb, tables, sel, hyper)
        soft_nll, _, _ = _model_eval(data, float(b0), [float(gamma)], [soft_cr],
                                     want_grad=False)
        if prev is not None and (abs(prev - soft_nll) / max(1.0, abs(prev))
                                 < config.rel_tol):
            streak += 1
        else:
            streak = 0
        prev = soft_nll
        if epoch <= explore_until:
            streak = 0
        if epoch >= min_ep and streak >= config.patience:
            break
    nll, emb, b0_f, gamma_f, cand = best
    if not np.isfinite(nll):
        raise DivergenceError("single-rule fit produced a non-finite loss")
    sel = selection_from_formula(cand, config.rule_length)
    return FitResult(emb, sel, cand, b0_f, gamma_f, nll, epoch)


def _fit_job(args: tuple) -> FitResult | None:
    data, tables, config, key = args
    try:
        return fit_single_rule(data, tables, config, key)
    except DivergenceError:
        return None


def best_of_restarts(data: CompiledDataset, tables: EmbeddingTables,
                     config: TrainConfig, round_index: int = 0) -> FitResult:
    """Independently seeded fits; the lowest deterministic loss wins, ties to
    the lowest restart index, so the outcome is identical for any worker count.
    Diverged restarts show up as inf in ``restart_losses``."""
    jobs = [(data, tables, config, (round_index, r)) for r in range(config.restarts)]
    if config.workers > 1 and config.restarts > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.restarts)) as ex:
            results = list(ex.map(_fit_job, jobs))
    else:
        results = [_fit_job(job) for job in jobs]
    losses = tuple(r.nll if r is not None else math.inf for r in results)
    order = min(range(len(results)), key=lambda r: (losses[r], r))
    winner = results[order]
    if winner is None:
        raise DivergenceError("every restart diverged")
    winner.restart_losses = losses
    return winner


def _hard_rule(formula: RuleFormula, tables: EmbeddingTables,
               hyper: HyperParams) -> CompiledRule:
    length = max(len(formula.body), 1)
    sel = selection_from_formula(formula, length)
    return CompiledRule(embedding_from_selection(sel, tables), tables, sel,
                        hyper, hard=True)


def _explained_mask(data: CompiledDataset, cr: CompiledRule) -> np.ndarray:
    """True for sequences in which the rule covers at least one target event."""
    sw = cr.switch_times(data)
    on = sw[:, -1] if sw.shape[1] else np.zeros(data.num_sequences)
    covered = data.target_times > on[data.target_seq]
    hits = np.bincount(data.target_seq[covered], minlength=data.num_sequences)
    return hits > 0


def is_explained(seq: EventSequence, formula: RuleFormula, num_predicates: int,
                 hyper: HyperParams = HyperParams()) -> bool:
    """Does the formula's body (with its temporal constraints) precede a target?"""
    data = compile_dataset(Dataset((seq,), num_predicates))
    tables = one_hot_tables(num_predicates)
    return bool(_explained_mask(data, _hard_rule(formula, tables, hyper))[0])


def joint_refine(data: CompiledDataset, formulas: Sequence[RuleFormula],
                 tables: EmbeddingTables, config: TrainConfig,
                 ) -> tuple[float, list[float], float]:
    """Refit the base rate and all weights jointly, structures frozen.

    Each formula is compiled with exact indicator features, so the objective
    is convex in the rates and exact coordinate maximization applies; the
    returned loss never exceeds that of any other rate assignment for the
    same structures.
    """
    if data.total_time <= 0:
        raise ValueError("cannot fit a base rate to an empty corpus")
    if not formulas:
        b0 = max(data.num_targets / data.total_time, _B0_FLOOR)
        nll, _, _ = _model_eval(data, b0, [], [], want_grad=False)
        return b0, [], nll

    crs = [_hard_rule(f, tables, config.hyper) for f in formulas]
    start = np.array([max(f.weight, config.gamma_init) for f in formulas])
    b0, gammas, nll = _refit_rates(data, crs, data.num_targets / data.total_time,
                                   start)
    return b0, [float(g) for g in gammas], nll


def sequential_cover(dataset: Dataset | CompiledDataset, config: TrainConfig,
                     tables: EmbeddingTables | None = None,
                     progress: Callable[[str], None] | None = None) -> RuleSet:
    """Learn a rule set by repeated single-rule discovery and removal.

    Stops when a round yields an empty rule, a weight below the threshold, a
    duplicate of an accepted formula, or a rule explaining no remaining
    sequence; accepted formulas are then refit jointly on the full corpus.
    """
    data = dataset if isinstance(dataset, CompiledDataset) else compile_dataset(dataset)
    if tables is None:
        tables = one_hot_tables(data.num_predicates)
    say = progress or (lambda _msg: None)

    working = data
    formulas: list[RuleFormula] = []
    embeddings: list[RuleEmbedding] = []
    seen: set = set()
    for rnd in range(config.max_rules):
        if working.num_sequences == 0 or working.num_targets == 0:
            say("no sequences with target events remain")
            break
        fit = best_of_restarts(working, tables, config, rnd)
        formula = RuleFormula(fit.formula.body, fit.formula.relations, fit.gamma)
        if formula.is_empty:
            say(f"round {rnd + 1}: empty rule, stopping")
            break
        if fit.gamma < config.weight_threshold:
            say(f"round {rnd + 1}: weight {fit.gamma:.4f} below threshold, stopping")
            break
        if formula.key() in seen:
            say(f"round {rnd + 1}: duplicate of an accepted rule, stopping")
            break
        mask = _explained_mask(working, _hard_rule(formula, tables, config.hyper))
        if not mask.any():
            say(f"round {rnd + 1}: rule explains no remaining sequence, stopping")
            break
        say(f"round {rnd + 1}: accepted {format_rule(formula)} "
            f"(explains {int(mask.sum())}/{working.num_sequences} sequences)")
        formulas.append(formula)
        embeddings.append(fit.embedding)
        seen.add(formula.key())
        working = working.take(np.flatnonzero(~mask))

    b0, weights, nll = joint_refine(data, formulas, tables, config)
    # a rule fit on a small remainder can collapse once the full corpus
    # judges it jointly; the covering threshold applies to refit weights too
    while formulas and min(weights) < config.weight_threshold:
        drop = int(np.argmin(weights))
        say(f"dropping {format_rule(formulas[drop])}: "
            f"refit weight {weights[drop]:.4f} below threshold")
        del formulas[drop]
        del embeddings[drop]
        b0, weights, nll = joint_refine(data, formulas, tables, config)
    say(f"joint refit: base rate {b0:.6f}, loss {nll:.3f}")
    rules = tuple(RuleFormula(f.body, f.relations, w)
                  for f, w in zip(formulas, weights))
    return RuleSet(b0, rules, data.num_predicates, config.hyper, tuple(embeddings))


def ruleset_components(model: RuleSet, tables: EmbeddingTables,
                       ) -> tuple[IntensityParams, list[SelectionResult]]:
    """Embeddings and selections equivalent to the model's hard formulas."""
    sels = [selection_from_formula(f, max(len(f.body), 1)) for f in model.rules]
    embs = [embedding_from_selection(s, tables) for s in sels]
    params = IntensityParams(model.base_rate, [f.weight for f in model.rules], embs)
    return params, sels


def model_intensity(model: RuleSet, seq: EventSequence, t: float) -> float:
    """Target intensity of a finished model at time ``t`` (indicator features)."""
    tables = one_hot_tables(model.num_predicates)
    data = compile_dataset(Dataset((seq,), model.num_predicates))
    lam = model.base_rate
    for f in model.rules:
        cr = _hard_rule(f, tables, model.hyper)
        sw = cr.switch_times(data)[0]
        lam += f.weight * cr.phi[int((sw >= t).sum())]
    return lam


def model_predict_next(model: RuleSet, seq: EventSequence, t_last: float = 0.0) -> float:
    """Expected next target time under the finished model, exactly."""
    tables = one_hot_tables(model.num_predicates)
    params, sels = ruleset_components(model, tables)
    return predict_next_time(params, sels, seq, t_last, model.hyper, tables, hard=True)


def save_model(model: RuleSet, path: str) -> None:
    payload = {
        "format_version": 1,
        "base_rate": model.base_rate,
        "num_predicates": model.num_predicates,
        "hyper": {"tau": model.hyper.tau, "rho": model.hyper.rho,
                  "delta": model.hyper.delta, "feature_form": model.hyper.feature_form},
        "rules": [format_rule(f) for f in model.rules],
        "embeddings": [{"slots": e.slots.tolist(),
                        "pair_slots": e.pair_slots.tolist()}
                       for e in model.embeddings],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_model(path: str) -> RuleSet:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    hyper = HyperParams(**payload.get("hyper", {}))
    embs = tuple(RuleEmbedding(np.asarray(e["slots"], dtype=float),
                               np.asarray(e["pair_slots"], dtype=float))
                 for e in payload.get("embeddings", []))
    return RuleSet(float(payload["base_rate"]),
                   tuple(parse_rule(t) for t in payload["rules"]),
                   int(payload["num_predicates"]), hyper, embs)
