"""Randomised invariants (hypothesis) for the building blocks."""
import itertools
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualris.config import SystemConfig
from dualris.phaseopt import SinrModel, gs_optimize, od_optimize
from dualris.scenario import ChannelSet
from dualris.sensing import (circular_distance, narrow_feasible_set, quantize_index,
                             quantize_phase)
from dualris.txbf import (CombinedChannels, bisect, bisection_step_count, sinr_lifted,
                          sinr_per_user)

from conftest import random_rows

angles = st.floats(-20.0, 20.0, allow_nan=False)
bits = st.sampled_from([1, 2, 3, 4])
seeds = st.integers(0, 2**32 - 1)


@given(angles, bits)
def test_quantization_error_at_most_half_a_step(phase, b):
    assert circular_distance(quantize_phase(phase, b), phase) <= np.pi / 2**b + 1e-9
    assert 0 <= quantize_index(phase, b) < 2**b


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)), elements=angles), bits)
def test_arc_covers_every_quantized_optimum_and_is_shortest(phases, b):
    table = narrow_feasible_set(phases, b)
    L = 2**b
    q = quantize_index(phases, b)
    for n in range(phases.shape[0]):
        arc = set(table.arc(n).tolist())
        assert set(q[n].tolist()) <= arc
        # no arc of any start that is shorter also covers them
        for length in range(1, table.length[n]):
            for s in range(L):
                assert not set(q[n].tolist()) <= {(s + i) % L for i in range(length)}


@given(seeds, st.integers(1, 4), st.integers(2, 6))
def test_lifted_matches_vector_sinr(seed, k, n_t):
    rng = np.random.default_rng(seed)
    comb = CombinedChannels(random_rows(rng, k, n_t))
    w = random_rows(rng, n_t, k, 1.0)
    W = np.einsum("ak,bk->kab", w, w.conj())
    a, b = sinr_per_user(comb, w, 1e-7), sinr_lifted(comb, W, 1e-7)
    assert np.max(np.abs(a - b) / a) <= 1e-10


@given(st.floats(-5, 5), st.floats(0.1, 50), st.floats(1e-4, 0.5), st.floats(0, 1))
def test_bisection_hits_threshold_in_exact_step_count(lo, width, eps, frac):
    hi = lo + width
    threshold = lo + frac * width
    got_lo, got_hi, steps, _ = bisect(lambda t: (t <= threshold, t, 0, ""), lo, hi, eps)
    assert len(steps) == bisection_step_count(lo, hi, eps)
    assert len(steps) == max(1, math.ceil(math.log2(width / eps)))
    assert got_lo - 1e-12 <= threshold <= got_hi + 1e-12 and got_hi - got_lo <= eps


def _random_case(seed, k, n, b):
    rng = np.random.default_rng(seed)
    n_t = k + 1
    channels = ChannelSet([random_rows(rng, n, n_t, 1.0)], [random_rows(rng, k, n, 1.0)], [None])
    beams = random_rows(rng, n_t, k, 1.0)
    table = narrow_feasible_set(rng.uniform(-np.pi, np.pi, (n, k)), b)
    cfg = SystemConfig(n_users=k, n_tx_antennas=n_t, bits=b, noise_power_user=1.0)
    return channels, beams, table, cfg


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 5), st.sampled_from([1, 2, 3]))
def test_gs_equals_exhaustive(seed, k, n, b):
    channels, beams, table, cfg = _random_case(seed, k, n, b)
    res = gs_optimize(channels, beams, None, table, cfg)
    model = SinrModel(channels, beams, cfg.noise_power_user, 0)
    step = 2 * np.pi / table.n_levels
    brute = max(float(model.min_sinr(np.array(c) * step))
                for c in itertools.product(*table.arcs()))
    assert res.evaluations == table.cardinality()
    assert res.objective == brute


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(1, 5), st.sampled_from([1, 2, 3]))
def test_one_dimensional_never_beats_gs(seed, k, n, b):
    channels, beams, table, cfg = _random_case(seed, k, n, b)
    gs = gs_optimize(channels, beams, None, table, cfg).objective
    od = od_optimize(channels, beams, None, table, cfg).objective
    assert od <= gs * (1 + 1e-12)
    assert set(range(n)) == {t["element"] for t in od_optimize(channels, beams, None, table,
                                                               cfg).trace}
