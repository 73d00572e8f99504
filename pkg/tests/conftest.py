"""Shared fixtures and reference oracles kept dumb enough to trust on sight."""

import numpy as np
import pytest

from tempologic.events import Dataset, EventSequence, breakpoints
from tempologic.features import one_hot_tables
from tempologic.likelihood import gradient, intensity_at, neg_log_likelihood


@pytest.fixture
def seq_simple():
    # X1 at 3, X2 at 6, X3 never; targets at 7 and 9, horizon 10
    return EventSequence(horizon=10.0,
                         events={1: (3.0,), 2: (6.0,)},
                         target_times=(7.0, 9.0))


@pytest.fixture
def data_simple(seq_simple):
    other = EventSequence(horizon=10.0, events={2: (1.0, 4.0), 3: (2.0,)},
                          target_times=(5.0,))
    empty = EventSequence(horizon=10.0)
    return Dataset((seq_simple, other, empty), num_predicates=3)


@pytest.fixture
def tables3():
    return one_hot_tables(3)


def random_dataset(rng: np.random.Generator, n: int, num_predicates: int = 4,
                   horizon: float = 20.0, event_rate: float = 0.08,
                   target_rate: float = 0.15) -> Dataset:
    """Unstructured random corpus; dense enough that facts flip mid-horizon."""
    seqs = []
    for _ in range(n):
        events = {}
        for p in range(1, num_predicates + 1):
            k = rng.poisson(event_rate * horizon)
            if k:
                events[p] = tuple(sorted(rng.uniform(0, horizon, size=k)))
        k = rng.poisson(target_rate * horizon)
        targets = tuple(sorted(rng.uniform(0, horizon, size=k)))
        seqs.append(EventSequence(horizon=horizon, events=events,
                                  target_times=targets))
    return Dataset(tuple(seqs), num_predicates)


def riemann_compensator(params, selections, seq, hyper, tables,
                        points: int = 100_000) -> float:
    """Midpoint Riemann sum of the intensity over [0, horizon].

    Every cell takes the pointwise intensity at a midpoint inside its
    segment; since the intensity is constant between fact breakpoints, one
    evaluation per occupied segment prices all of its cells.
    """
    bps = np.asarray(breakpoints(seq))
    dt = seq.horizon / points
    mids = (np.arange(points) + 0.5) * dt
    seg = np.searchsorted(bps, mids, side="right") - 1
    total = 0.0
    for s in np.unique(seg):
        t_repr = float(mids[np.argmax(seg == s)])
        lam = intensity_at(params, selections, seq, t_repr, hyper, tables)
        total += lam * dt * int((seg == s).sum())
    return total


def fd_gradient_error(params, selections, data, hyper, tables,
                      h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences."""
    bundle = gradient(params, selections, data, hyper, tables)

    def nll() -> float:
        return neg_log_likelihood(params, selections, data, hyper, tables)

    def central(setter) -> float:
        setter(+h)
        up = nll()
        setter(-2 * h)
        down = nll()
        setter(+h)
        return (up - down) / (2 * h)

    pairs = []

    def bump_b0(d):
        params.b0 += d

    pairs.append((bundle.d_b0, central(bump_b0)))
    for f in range(len(params.rules)):
        def bump_gamma(d, f=f):
            params.gammas[f] += d

        pairs.append((bundle.d_gammas[f], central(bump_gamma)))
        slots = params.rules[f].slots
        for idx in np.ndindex(slots.shape):
            def bump_slot(d, slots=slots, idx=idx):
                slots[idx] += d

            pairs.append((bundle.d_slots[f][idx], central(bump_slot)))
        pair_slots = params.rules[f].pair_slots
        for idx in np.ndindex(pair_slots.shape):
            def bump_pair(d, pair_slots=pair_slots, idx=idx):
                pair_slots[idx] += d

            pairs.append((bundle.d_pair_slots[f][idx], central(bump_pair)))
    return max(abs(a - fd) / max(1.0, abs(a), abs(fd)) for a, fd in pairs)
