"""Discrete RIS phase optimization over sensing-narrowed arcs, plus baselines.

All searches maximise ``f_s(theta) = min_k SINR_k`` for fixed beams and a
fixed phase vector on the other RIS. With the beams frozen, the complex gain
``h_k w_j`` is affine in ``exp(j theta_n)``::

    g_kj(theta) = base_kj + sum_n C[k, j, n] exp(j theta_n)

so a candidate costs one ``K x K x N`` contraction, and changing a single
element is a rank-one update of ``g``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .scenario import ChannelSet
from .sensing import FeasibleSetTable, circular_distance, quantize_phase
from .txbf import bisect

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class CodebookTooLarge(ValueError):
    """Raised when the candidate product exceeds the enumeration budget."""

    def __init__(self, cardinality: int, budget: int):
        super().__init__(f"codebook has {cardinality} candidates, budget is {budget}")
        self.cardinality = cardinality
        self.budget = budget


@dataclass(frozen=True)
class PhaseConfig:
    """One RIS's phase vector; ``bits is None`` marks continuous phases."""

    phases: np.ndarray
    bits: int | None = None
    indices: np.ndarray | None = None

    @classmethod
    def from_indices(cls, indices, bits: int):
        idx = np.asarray(indices, dtype=int)
        return cls(idx * (2 * np.pi / 2 ** bits), bits, idx)


@dataclass
class PhaseOptResult:
    config: PhaseConfig
    objective: float
    evaluations: int
    trace: list = field(default_factory=list)  # dicts: sweep, element, chosen_phase_index, objective
    tau: float = float("nan")  # bisection lower bound (global search only)
    sweeps: int = 0
    method: str = ""


# -- objective ---------------------------------------------------------------

class SinrModel:
    """Min-SINR of one RIS's phases with beams and the other RIS frozen."""

    def __init__(self, channels: ChannelSet, beams, noise, ris: int, other_phases=None):
        beams = np.asarray(beams)
        self.noise = float(noise)
        # A[k, n, :] = conj(h_{i,k}[n]) * H_BR,i[n, :]
        A = channels.h[ris].conj()[:, :, None] * channels.H_BR[ris][None, :, :]
        self.C = np.einsum("knt,tj->kjn", A, beams)
        k = beams.shape[1]
        self.base = np.zeros((k, k), dtype=complex)
        for i in range(channels.n_ris):
            if i == ris or other_phases is None or other_phases[i] is None:
                continue
            rows = (channels.h[i].conj() * np.exp(1j * np.asarray(other_phases[i]))) @ channels.H_BR[i]
            self.base += rows @ beams
        self.n_elements = self.C.shape[2]

    def gains(self, phases):
        """``g`` for one phase vector ``(N,)`` or a batch ``(B, N)``."""
        e = np.exp(1j * np.asarray(phases, dtype=float))
        return self.base + np.einsum("kjn,...n->...kj", self.C, e)

    def sinr_from_gains(self, g):
        p = np.abs(g) ** 2
        sig = np.diagonal(p, axis1=-2, axis2=-1)
        return sig / (p.sum(axis=-1) - sig + self.noise)

    def min_sinr(self, phases):
        return self.sinr_from_gains(self.gains(phases)).min(axis=-1)


# -- codebook ----------------------------------------------------------------

class Codebook:
    """Lexicographic enumeration of the Cartesian product of per-element arcs."""

    def __init__(self, table: FeasibleSetTable, budget: int | None = None):
        self.table = table
        self.arcs = table.arcs()
        self.cardinality = table.cardinality()
        if budget is not None and self.cardinality > budget:
            raise CodebookTooLarge(self.cardinality, budget)

    def __len__(self):
        return self.cardinality

    def indices(self, start: int, stop: int) -> np.ndarray:
        """Grid indices of candidates ``start..stop-1``, shape ``(stop-start, N)``."""
        ranks = np.arange(start, stop, dtype=np.int64)
        out = np.empty((ranks.size, len(self.arcs)), dtype=int)
        for n in range(len(self.arcs) - 1, -1, -1):  # element 0 is most significant
            size = len(self.arcs[n])
            out[:, n] = self.arcs[n][ranks % size]
            ranks //= size
        return out

    def batches(self, size: int = 4096):
        for start in range(0, self.cardinality, size):
            yield start, self.indices(start, min(start + size, self.cardinality))

    def __iter__(self):
        for _, batch in self.batches():
            yield from batch


def enumerate_candidates(table: FeasibleSetTable, budget: int = 1_000_000) -> Codebook:
    return Codebook(table, budget)


# -- global search -----------------------------------------------------------

def gs_optimize(channels: ChannelSet, beams, other_phases, table: FeasibleSetTable,
                config: SystemConfig, ris: int = 0, *, batch_size: int = 4096) -> PhaseOptResult:
    """Exhaustive max of min-SINR over the codebook, with the tau bisection on top.

    Candidates are scored in index order and the first maximiser wins. The
    bisection then checks "some candidate reaches tau" against those scores,
    so its lower bound is within ``tolerance`` of the returned objective.
    """
    book = Codebook(table, config.enumeration_budget)
    model = SinrModel(channels, beams, config.noise_power_user, ris, other_phases)
    step = 2 * np.pi / table.n_levels
    best_val, best_idx = -np.inf, None
    for _, idx in book.batches(batch_size):
        vals = model.min_sinr(idx * step)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), idx[j].copy()

    lo, hi = config.tau_min, max(config.tau_max, best_val + config.tolerance)
    tau, _, _, _ = bisect(lambda t: (best_val >= t, None, 0, ""), lo, hi, config.tolerance)
    chosen = PhaseConfig.from_indices(best_idx, table.bits)
    trace = [{"sweep": 1, "element": n, "chosen_phase_index": int(best_idx[n]), "objective": best_val}
             for n in range(best_idx.size)]
    return PhaseOptResult(chosen, best_val, len(book), trace, tau, 1, "gs")


# -- one-dimensional search --------------------------------------------------

def od_optimize(channels: ChannelSet, beams, other_phases, table: FeasibleSetTable,
                config: SystemConfig, ris: int = 0, init=None) -> PhaseOptResult:
    """Cyclic element-wise search; a move is kept only if it raises min-SINR.

    ``init`` (grid indices) defaults to the arc point nearest the circular
    mean of the user optima. Stops when a sweep gains less than
    ``tolerance`` or after ``max_od_iters`` sweeps.
    """
    model = SinrModel(channels, beams, config.noise_power_user, ris, other_phases)
    step = 2 * np.pi / table.n_levels
    idx = table.representative() if init is None else np.asarray(init, dtype=int).copy()
    arcs = table.arcs()
    g = model.gains(idx * step)
    best = float(model.sinr_from_gains(g).min())
    evals, trace, sweeps = 0, [], 0
    while sweeps < config.max_od_iters:
        sweeps += 1
        start = best
        for n, arc in enumerate(arcs):
            # swap element n's contribution for each arc point
            delta = np.exp(1j * arc * step)[:, None, None] - np.exp(1j * idx[n] * step)
            cand = g + delta * model.C[:, :, n]
            vals = model.sinr_from_gains(cand).min(axis=-1)
            evals += arc.size
            j = int(np.argmax(vals))
            if vals[j] > best:
                best, idx[n], g = float(vals[j]), int(arc[j]), cand[j]
            trace.append({"sweep": sweeps, "element": n, "chosen_phase_index": int(idx[n]),
                          "objective": best})
        if best - start < config.tolerance:
            break
    # recompute from scratch so accumulated rank-one updates leave no drift
    objective = float(model.min_sinr(idx * step))
    return PhaseOptResult(PhaseConfig.from_indices(idx, table.bits), objective, evals, trace,
                          sweeps=sweeps, method="1d")


# -- continuous baseline -----------------------------------------------------

def _golden_max(f, a, b, tol):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def continuous_baseline(channels: ChannelSet, beams, other_phases, config: SystemConfig,
                        ris: int = 0, init=None, *, scan_points: int = 16,
                        line_tol: float = 1e-6) -> PhaseOptResult:
    """Coordinate ascent on continuous phases with golden-section line searches.

    Per element: scan ``scan_points`` equispaced phases, then refine by
    golden-section search on the bracket around the best scan point. A move
    is kept only if it improves min-SINR, so the objective never decreases.
    """
    model = SinrModel(channels, beams, config.noise_power_user, ris, other_phases)
    n_el = model.n_elements
    theta = np.zeros(n_el) if init is None else np.mod(np.asarray(init, dtype=float), 2 * np.pi)
    g = model.gains(theta)
    best = float(model.sinr_from_gains(g).min())
    grid = np.arange(scan_points) * (2 * np.pi / scan_points)
    evals, trace, sweeps = 0, [], 0
    while sweeps < config.max_od_iters:
        sweeps += 1
        start = best
        for n in range(n_el):
            cur = np.exp(1j * theta[n])
            Cn = model.C[:, :, n]

            def f(t, Cn=Cn, cur=cur):
                return float(model.sinr_from_gains(g + (np.exp(1j * t) - cur) * Cn).min())

            vals = model.sinr_from_gains(g + (np.exp(1j * grid) - cur)[:, None, None] * Cn).min(axis=-1)
            j = int(np.argmax(vals))
            h = 2 * np.pi / scan_points
            t, val = _golden_max(f, grid[j] - h, grid[j] + h, line_tol)
            evals += scan_points
            if vals[j] > val:
                t, val = grid[j], float(vals[j])
            if val > best:
                theta[n] = np.mod(t, 2 * np.pi)
                g = g + (np.exp(1j * theta[n]) - cur) * Cn
                best = val
            trace.append({"sweep": sweeps, "element": n, "chosen_phase_index": -1, "objective": best})
        if best - start < config.tolerance:
            break
    objective = float(model.min_sinr(theta))
    return PhaseOptResult(PhaseConfig(theta), objective, evals, trace, sweeps=sweeps,
                          method="continuous")


def quantize_baseline(continuous, bits: int) -> PhaseConfig:
    """Element-wise nearest grid point under circular distance."""
    phases = continuous.phases if isinstance(continuous, PhaseConfig) else np.asarray(continuous)
    q = quantize_phase(phases, bits)
    assert np.all(circular_distance(q, phases) <= np.pi / 2 ** bits + 1e-12)
    return PhaseConfig.from_indices(np.rint(q / (2 * np.pi / 2 ** bits)).astype(int) % 2 ** bits, bits)


TRACE_COLUMNS = ("sweep", "element", "chosen_phase_index", "objective")
