"""Transmit beamforming: SINR evaluation, SDR feasibility, bisection, rank-one extraction."""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from . import sdp
from .config import SystemConfig
from .scenario import ChannelSet

FEASIBLE, INFEASIBLE, FAILED = "feasible", "infeasible", "failed"
RANK1_RATIO = 1e-6


@dataclass(frozen=True)
class CombinedChannels:
    """Effective BS-to-user rows ``h_k`` (shape ``(K, N_t)``) and ``H_k = h_k^H h_k``."""

    rows: np.ndarray

    @property
    def lifted(self) -> np.ndarray:
        return np.einsum("ki,kj->kij", self.rows.conj(), self.rows)

    @property
    def n_users(self) -> int:
        return self.rows.shape[0]

    @property
    def n_tx(self) -> int:
        return self.rows.shape[1]


def combine_channels(channels: ChannelSet, *phases) -> CombinedChannels:
    """``h_k = sum_i h_{i,k}^H diag(exp(j theta_i)) H_BR,i`` over the active RISs.

    ``phases`` holds one phase vector per active RIS; ``None`` switches that
    RIS off.
    """
    if len(phases) != channels.n_ris:
        raise ValueError(f"expected {channels.n_ris} phase vectors, got {len(phases)}")
    rows = 0
    for h, H_BR, theta in zip(channels.h, channels.H_BR, phases):
        if theta is None:
            continue
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (H_BR.shape[0],):
            raise ValueError(f"phase vector of shape {theta.shape} for a {H_BR.shape[0]}-element RIS")
        rows = rows + (h.conj() * np.exp(1j * theta)) @ H_BR
    if np.isscalar(rows):
        k, nt = channels.h[0].shape[0], channels.H_BR[0].shape[1]
        rows = np.zeros((k, nt), dtype=complex)
    return CombinedChannels(rows=rows)


def _noise_vector(noise, k):
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (k,))
    if np.any(noise <= 0):
        raise ValueError("noise power must be positive")
    return noise


def sinr_per_user(combined: CombinedChannels, beams, noise) -> np.ndarray:
    """Per-user SINR for beams given as columns of an ``(N_t, K)`` array."""
    beams = np.asarray(beams)
    k = combined.n_users
    if beams.shape != (combined.n_tx, k):
        raise ValueError(f"beams must have shape {(combined.n_tx, k)}, got {beams.shape}")
    noise = _noise_vector(noise, k)
    gains = np.abs(combined.rows @ beams) ** 2
    signal = np.diag(gains)
    return signal / (gains.sum(axis=1) - signal + noise)


def sinr_lifted(combined: CombinedChannels, W, noise) -> np.ndarray:
    """SINR in lifted form, ``Tr(H_k W_k) / (sum_{j!=k} Tr(H_k W_j) + noise)``."""
    k = combined.n_users
    noise = _noise_vector(noise, k)
    # T[k, j] = Tr(H_k W_j) = h_k W_j h_k^H
    T = np.einsum("ka,jab,kb->kj", combined.rows, W, combined.rows.conj()).real
    signal = np.diag(T)
    return signal / (T.sum(axis=1) - signal + noise)


# -- SDR feasibility ---------------------------------------------------------

def _hermitian_basis(n):
    basis = []
    for i in range(n):
        E = np.zeros((n, n), dtype=complex)
        E[i, i] = 1
        basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = E[j, i] = 1
            basis.append(E)
            E = np.zeros((n, n), dtype=complex)
            E[i, j], E[j, i] = -1j, 1j
            basis.append(E)
    return np.array(basis)


def _real_embedding(B):
    return np.block([[B.real, -B.imag], [B.imag, B.real]])


@functools.lru_cache(maxsize=None)
def _basis(n):
    """Hermitian basis and its map into the solver's scaled triangular vectors."""
    basis = _hermitian_basis(n)
    size = 2 * n
    # column-major upper triangle, off-diagonals scaled by sqrt(2)
    rows = np.array([i for j in range(size) for i in range(j + 1)])
    cols = np.array([j for j in range(size) for i in range(j + 1)])
    scale = np.where(rows == cols, 1.0, math.sqrt(2.0))
    svec = np.array([_real_embedding(B)[rows, cols] * scale for B in basis]).T
    return basis, svec


@dataclass
class FeasibilityResult:
    status: str  # FEASIBLE | INFEASIBLE | FAILED
    W: np.ndarray | None
    margin: float
    solver_iters: int
    solver_status: str


def _feasibility_data(combined, tau, p_max, noise):
    """Linear rows ``lin @ x <= rhs`` and objective of the margin problem.

    ``x`` stacks the ``n^2`` real Hermitian-basis coordinates of each scaled
    ``V_k = W_k / p_max`` followed by the margin ``s``.
    """
    k, n = combined.n_users, combined.n_tx
    basis, _ = _basis(n)
    m = len(basis)
    nvar = k * m + 1
    # coef[k, q] = Re Tr(G_k B_q),  G_k = p_max * H_k / noise_k
    G = combined.lifted * (p_max / noise)[:, None, None]
    coef = np.einsum("kab,qba->kq", G, basis).real
    trace_coef = np.einsum("qaa->q", basis).real

    lin = np.zeros((k + 1, nvar))
    rhs = np.zeros(k + 1)
    for kk in range(k):
        lin[kk, : k * m] = np.tile(tau * coef[kk], k)
        lin[kk, kk * m:(kk + 1) * m] = -coef[kk]
        lin[kk, -1] = 1.0
        rhs[kk] = -tau
    # equilibrate the SINR rows; the margin becomes a per-row weighted slack,
    # which leaves its sign (the feasibility verdict) unchanged
    scale = np.maximum(1.0, np.linalg.norm(lin[:k, :-1], axis=1))
    lin[:k, :-1] /= scale[:, None]
    rhs[:k] /= scale
    lin[k, : k * m] = np.tile(trace_coef, k)
    rhs[k] = 1.0
    c = np.zeros(nvar)
    c[-1] = -1.0
    return c, lin, rhs, basis, m


@functools.lru_cache(maxsize=None)
def _embedded_basis(n):
    return np.array([-_real_embedding(B) for B in _hermitian_basis(n)])


CLOSED_FORM_MIN_ANTENNAS = 7


@functools.lru_cache(maxsize=None)
def _psd_blocks(k, n):
    m = n * n
    coeffs = np.broadcast_to(_embedded_basis(n), (k, m, 2 * n, 2 * n))
    return sdp.PsdBlocks(coeffs, np.arange(k * m).reshape(k, m), np.zeros((k, 2 * n, 2 * n)))


def _solve_ipm(c, lin, rhs, k, n, m, tol, max_iters):
    blocks = _psd_blocks(k, n)
    # embedded Hermitian blocks are closed under the NT scaling, and each W_k
    # owns its own coordinates, so the solver can eliminate them in closed form;
    # below ~7 antennas the dense KKT factorization is cheaper
    sol = sdp.solve_conic(c, lin, rhs, blocks, max_iters=max_iters, feastol=tol, abstol=tol,
                          reltol=tol, closed_blocks=n >= CLOSED_FORM_MIN_ANTENNAS)
    return sol.x, sol.iterations, sol.status, sol.status == "optimal"


def _solve_clarabel(c, lin, rhs, k, n, m, tol, max_iters):
    _, svec = _basis(n)
    nvar = c.size
    psd = sp.block_diag([-svec] * k, format="csc")
    A = sp.vstack([sp.csc_matrix(lin), sp.hstack([psd, sp.csc_matrix((psd.shape[0], 1))])],
                  format="csc")
    b = np.concatenate([rhs, np.zeros(psd.shape[0])])
    cones = [clarabel.NonnegativeConeT(k + 1)] + [clarabel.PSDTriangleConeT(2 * n)] * k
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(max_iters)
    sol = clarabel.DefaultSolver(sp.csc_matrix((nvar, nvar)), c, A, b, cones, settings).solve()
    status = str(sol.status)
    return np.asarray(sol.x, dtype=float), int(sol.iterations), status, status == "Solved"


BACKENDS = {"ipm": _solve_ipm, "clarabel": _solve_clarabel}


def solve_feasibility(combined: CombinedChannels, tau, p_max, noise, *, tol=1e-7,
                      max_iters=200, backend="ipm") -> FeasibilityResult:
    """Decide whether SINR target ``tau`` is reachable by the relaxed problem.

    Solved as a margin maximisation: maximise ``s`` subject to
    ``Tr(H_k W_k) - tau * (sum_{j!=k} Tr(H_k W_j) + noise_k) >= s * d_k * noise_k``,
    ``sum_k Tr(W_k) <= p_max`` and ``W_k >= 0``. The target is feasible iff the
    optimal margin is ``>= -tol``. Constraints are scaled by ``noise_k`` and
    powers by ``p_max``, and ``d_k >= 1`` equilibrates each SINR row, so the
    conic solver sees O(1) data. Each complex
    ``W_k`` enters the PSD cone through its real embedding
    ``[[Re, -Im], [Im, Re]]``.

    ``backend`` is ``"ipm"`` (the bundled dense interior-point solver) or
    ``"clarabel"``.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    k, n = combined.n_users, combined.n_tx
    noise = _noise_vector(noise, k)
    c, lin, rhs, basis, m = _feasibility_data(combined, tau, p_max, noise)
    try:
        x, iters, status, certified = BACKENDS[backend](c, lin, rhs, k, n, m, tol, max_iters)
    except Exception as exc:  # solvers raise on malformed numerics
        return FeasibilityResult(FAILED, None, float("nan"), 0, f"error: {exc}")
    if x.size != c.size or not np.all(np.isfinite(x)):
        return FeasibilityResult(FAILED, None, float("nan"), iters, status)
    W = p_max * np.einsum("kq,qab->kab", x[:-1].reshape(k, m), basis)
    margin = float(x[-1])
    if not certified:
        # a non-certified point counts as feasible only if it passes the
        # independent re-check, and as infeasible only if the margin is
        # negative by far more than the lost accuracy
        if margin >= -tol and check_lifted_solution(W, combined, tau, p_max, noise, tol=1e-6):
            return FeasibilityResult(FEASIBLE, W, margin, iters, status)
        if status == "inaccurate" and margin < -1e3 * tol:
            return FeasibilityResult(INFEASIBLE, W, margin, iters, status)
        return FeasibilityResult(FAILED, W, margin, iters, status)
    return FeasibilityResult(FEASIBLE if margin >= -tol else INFEASIBLE, W, margin, iters, status)


def check_lifted_solution(W, combined: CombinedChannels, tau, p_max, noise, *,
                          tol=1e-7, psd_tol=1e-8) -> bool:
    """Independent constraint re-check of a lifted solution, outside the solver."""
    noise = _noise_vector(noise, combined.n_users)
    W = np.asarray(W)
    for Wk in W:
        if not np.allclose(Wk, Wk.conj().T, atol=1e-9 * max(p_max, 1.0)):
            return False
        if np.linalg.eigvalsh(Wk).min() < -psd_tol * p_max:
            return False
    if np.trace(W, axis1=1, axis2=2).real.sum() > p_max * (1 + 1e-6):
        return False
    T = np.einsum("ka,jab,kb->kj", combined.rows, W, combined.rows.conj()).real
    signal = np.diag(T)
    interference = T.sum(axis=1) - signal
    slack = (signal - tau * (interference + noise)) / noise
    return bool(np.all(slack >= -tol * max(1.0, tau)))


# -- bisection ---------------------------------------------------------------

@dataclass
class BisectionStep:
    step: int
    tau: float
    feasible: bool
    solver_iters: int = 0
    wall_ms: float = 0.0
    status: str = ""


def bisect(is_feasible, lo, hi, eps, *, timer=None):
    """Repeat-until bisection on ``[lo, hi]``.

    ``is_feasible(tau)`` returns ``(bool, payload, solver_iters, status)``.
    Returns ``(lo, hi, steps, payload)`` where ``payload`` belongs to the last
    feasible midpoint (``None`` if none was feasible).
    """
    if not lo < hi:
        raise ValueError("bisection needs lo < hi")
    steps, payload = [], None
    while True:
        tau = 0.5 * (lo + hi)
        t0 = timer() if timer else 0.0
        ok, result, iters, status = is_feasible(tau)
        wall = (timer() - t0) * 1e3 if timer else 0.0
        steps.append(BisectionStep(len(steps) + 1, tau, bool(ok), iters, wall, status))
        if ok:
            lo, payload = tau, result
        else:
            hi = tau
        if hi - lo <= eps:
            return lo, hi, steps, payload


def bisection_step_count(lo, hi, eps) -> int:
    return max(1, math.ceil(math.log2((hi - lo) / eps)))


# -- rank-one extraction -----------------------------------------------------

def _scale_to_power(beams, p_max):
    total = float(np.sum(np.abs(beams) ** 2))
    if total <= 0:
        return beams
    return beams * math.sqrt(p_max / total)


def extract_rank1(W, combined: CombinedChannels, tau, p_max, noise, n_draws=100, rng=None):
    """Turn lifted matrices into beam vectors.

    Returns ``(beams, rank1, degraded)``: beams as columns of an ``(N_t, K)``
    array scaled to use the full power budget, a per-user rank-one flag, and
    whether the best candidate fell below ``0.95 * tau``.
    """
    rng = np.random.default_rng(rng)
    W = np.asarray(W)
    k, n = W.shape[0], W.shape[1]
    vals, vecs = np.linalg.eigh(W)
    vals = np.clip(vals[:, ::-1], 0.0, None)
    vecs = vecs[:, :, ::-1]
    rank1 = np.array([v[0] <= 0 or v[1] <= RANK1_RATIO * v[0] for v in vals]) if n > 1 \
        else np.ones(k, dtype=bool)

    principal = np.stack([np.sqrt(vals[kk, 0]) * vecs[kk, :, 0] for kk in range(k)], axis=1)
    best = _scale_to_power(principal, p_max)
    if rank1.all():
        degraded = bool(sinr_per_user(combined, best, noise).min() < 0.95 * tau)
        return best, rank1, degraded

    best_val = sinr_per_user(combined, best, noise).min()
    root = vecs * np.sqrt(vals)[:, None, :]  # W_k = root_k root_k^H
    for _ in range(int(n_draws)):
        z = (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) / math.sqrt(2)
        cand = _scale_to_power(np.einsum("kab,kb->ak", root, z), p_max)
        val = sinr_per_user(combined, cand, noise).min()
        if val > best_val:
            best, best_val = cand, val
    return best, rank1, bool(best_val < 0.95 * tau)


# -- Algorithm: bisection over tau with SDR feasibility ----------------------

@dataclass
class BeamSolution:
    verdict: str  # FEASIBLE or INFEASIBLE
    W: np.ndarray | None
    beams: np.ndarray | None  # (N_t, K)
    sinr: np.ndarray | None
    tau: float  # min SINR of the extracted beams
    tau_lifted: float  # last feasible bisection target
    steps: list = field(default_factory=list)
    rank1: np.ndarray | None = None
    degraded: bool = False
    solver_failures: int = 0

    @property
    def solver_iters(self) -> int:
        return sum(s.solver_iters for s in self.steps)

    @property
    def rank1_failures(self) -> int:
        return 0 if self.rank1 is None else int((~self.rank1).sum())


def optimize_txbf(combined: CombinedChannels, config: SystemConfig, rng=None, *,
                  record_timing=False, feasibility=None) -> BeamSolution:
    """Max-min SINR beamforming by bisection on ``tau`` over SDR feasibility problems.

    ``feasibility`` replaces the SDR oracle (``tau -> FeasibilityResult``); it
    exists for testing the bisection logic in isolation.
    """
    p_max, noise = config.p_max, config.noise_power_user

    def solve(tau):
        if feasibility is not None:
            return feasibility(tau)
        return solve_feasibility(combined, tau, p_max, noise, tol=config.sdp_tol,
                                 max_iters=config.sdp_max_iters)

    failures = 0

    def oracle(tau):
        nonlocal failures
        res = solve(tau)
        if res.status == FAILED:
            failures += 1
        return res.status == FEASIBLE, res, res.solver_iters, res.status

    timer = time.perf_counter if record_timing else None
    lo, _, steps, res = bisect(oracle, config.tau_min, config.tau_max, config.tolerance,
                               timer=timer)
    if res is None:
        # nothing above tau_min was feasible; certify tau_min itself
        res = solve(config.tau_min)
        steps.append(BisectionStep(len(steps) + 1, config.tau_min, res.status == FEASIBLE,
                                   res.solver_iters, 0.0, res.status))
        if res.status != FEASIBLE:
            return BeamSolution(INFEASIBLE, None, None, None, float("nan"), float("nan"),
                                steps, solver_failures=failures)
    beams, rank1, degraded = extract_rank1(res.W, combined, lo, p_max, noise,
                                           n_draws=config.n_draws, rng=rng)
    sinr = sinr_per_user(combined, beams, noise)
    return BeamSolution(FEASIBLE, res.W, beams, sinr, float(sinr.min()), float(lo), steps,
                        rank1, degraded, failures)


def beam_trace_rows(solution: BeamSolution):
    """Rows for the bisection trace CSV: step, tau, feasible, solver_iters, wall_ms."""
    return [
        {"step": s.step, "tau": s.tau, "feasible": int(s.feasible),
         "solver_iters": s.solver_iters, "wall_ms": round(s.wall_ms, 3)}
        for s in solution.steps
    ]
