"""A small dense primal-dual interior-point solver for LP + SDP cone programs.

Solves::

    minimize    c^T x
    subject to  G_lp x + s_lp = h_lp,            s_lp >= 0
                sum_i x[cols[b, i]] C[b, i] + S_b = H_b,   S_b PSD (real symmetric)

with Nesterov-Todd scaling and Mehrotra predictor-corrector steps. All PSD
blocks share one size ``p`` and touch ``m_b`` entries of ``x`` each, so every
per-block operation is a single batched numpy call.

Newton systems are solved in the augmented form ``[[H, G_lp^T], [G_lp, -D]]``
with ``H`` the PSD part of the normal matrix. By default ``H`` is assembled
densely. With ``closed_blocks=True`` the caller asserts that the blocks own
disjoint entries of ``x`` and that each block's coefficient span is closed
under ``X -> T X T`` for ``T`` in the span (real embeddings of Hermitian
matrices are the motivating case). Then ``H_b^{-1}`` is available in closed
form::

    H_b^{-1} = Gram^{-1} C^T (T^{-1} (x) T^{-1}) C Gram^{-1}

and the block variables are eliminated, leaving a system the size of the LP
rows plus the free variables. That turns the per-iteration cost from
``O(m^2 p^2)`` into ``O(m p^2)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse


@dataclass
class PsdBlocks:
    coeffs: np.ndarray  # (nb, mb, p, p) symmetric coefficient matrices
    cols: np.ndarray  # (nb, mb) indices into x
    rhs: np.ndarray  # (nb, p, p)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.cols = np.asarray(self.cols, dtype=int)
        self.rhs = np.asarray(self.rhs, dtype=float)
        nb, mb, p, q = self.coeffs.shape
        if p != q or self.cols.shape != (nb, mb) or self.rhs.shape != (nb, p, p):
            raise ValueError("inconsistent PSD block shapes")

    @property
    def size(self) -> int:
        return self.coeffs.shape[2]

    @property
    def count(self) -> int:
        return self.coeffs.shape[0]

    @functools.cached_property
    def closed_ops(self) -> "_BlockBasis":
        """Sparse basis operators for ``closed_blocks`` solves (built once per instance)."""
        return _BlockBasis(self.coeffs.reshape(self.count, -1, self.size**2))


@dataclass
class ConicSolution:
    status: str  # "optimal" | "inaccurate" | "max_iters" | "numerical"
    x: np.ndarray
    iterations: int
    primal_obj: float
    dual_obj: float
    primal_res: float
    dual_res: float
    gap: float


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _tr(A):
    return np.swapaxes(A, -1, -2)


def _inner(A, B):
    return float(np.sum(A * B))


def _min_eig(A):
    return np.linalg.eigvalsh(A)[..., 0]


class _Scaling:
    """Nesterov-Todd scaling at ``(s, z)``: ``R^T Z R = R^{-1} S R^{-T} = diag(lam)``."""

    def __init__(self, s_lp, z_lp, S, Z):
        self.w = np.sqrt(s_lp / z_lp)
        self.lam_lp = np.sqrt(s_lp * z_lp)
        Ls = np.linalg.cholesky(S)
        Lz = np.linalg.cholesky(Z)
        U, sig, Vt = np.linalg.svd(_tr(Lz) @ Ls)
        isq = 1.0 / np.sqrt(sig)
        self.R = Ls @ _tr(Vt) * isq[:, None, :]
        self.Rinv = _tr(U * isq[:, None, :]) @ _tr(Lz)
        self.lam = sig
        self.T = _tr(self.Rinv) @ self.Rinv  # (W^T W)^{-1}: U -> T U T

    def W_z(self, z_lp, Z):
        return z_lp * self.w, _tr(self.R) @ Z @ self.R

    def W_T(self, v_lp, V):
        return v_lp * self.w, self.R @ V @ _tr(self.R)

    def WTW_inv(self, u_lp, U):
        return u_lp / self.w**2, self.T @ U @ self.T


def _lam_div(lam_lp, lam, d_lp, D):
    """Solve ``lam o t = d`` (Jordan product with a diagonal ``lam``)."""
    return d_lp / lam_lp, D * (2.0 / (lam[:, :, None] + lam[:, None, :]))


def _max_step(lam_lp, lam, d_lp, D):
    """Largest ``alpha`` keeping ``lam + alpha * d`` in the cone (``inf`` if unbounded)."""
    worst = 0.0
    if lam_lp.size:
        worst = max(worst, float(np.max(-d_lp / lam_lp)))
    if lam.size:
        isq = 1.0 / np.sqrt(lam)
        worst = max(worst, float(np.max(-_min_eig(D * isq[:, :, None] * isq[:, None, :]))))
    return np.inf if worst <= 0 else 1.0 / worst


class _DenseKkt:
    """Augmented system with the PSD normal matrix formed explicitly."""

    def __init__(self, H, G_lp, w2):
        nx = H.shape[0]
        self.nx = nx
        self.kkt = np.zeros((nx + w2.size, nx + w2.size))
        self.kkt[:nx, :nx] = H
        self.kkt[:nx, nx:] = G_lp.T
        self.kkt[nx:, :nx] = G_lp
        self.kkt[nx:, nx:] = -np.diag(w2)
        self.fac = linalg.lu_factor(self.kkt, check_finite=True)
        _check_lu(self.fac[0])

    def solve(self, rhs):
        return linalg.lu_solve(self.fac, rhs)

    def matvec(self, v):
        return self.kkt @ v


class _ClosedBlockKkt:
    """Augmented system with the block variables eliminated in closed form."""

    def __init__(self, G_lp, w2, ops, cols, Tinv, T, free):
        self.G_lp, self.w2, self.ops, self.cols = G_lp, w2, ops, cols
        self.Tinv, self.T, self.free = Tinv, T, free
        self.nx = G_lp.shape[1]
        self.GB = G_lp[:, cols]  # (n_lp, nb, m)
        self.GF = G_lp[:, free]
        HiGT = self._apply(Tinv, np.moveaxis(self.GB, 0, -1), gram=True)  # (nb, m, n_lp)
        S = self.GB.reshape(self.GB.shape[0], -1) @ HiGT.reshape(-1, HiGT.shape[2])
        nf, nl = free.size, w2.size
        self.small = np.zeros((nf + nl, nf + nl))
        self.small[:nf, nf:] = self.GF.T
        self.small[nf:, :nf] = self.GF
        self.small[nf:, nf:] = -np.diag(w2) - S
        self.fac = linalg.lu_factor(self.small, check_finite=True)
        _check_lu(self.fac[0])

    def _apply(self, Tm, V, gram=False):
        """Coordinates of ``Tm (sum_i v_i C_i) Tm`` for each column of ``V`` (nb, m, r)."""
        nb, m, r = V.shape
        p = Tm.shape[1]
        V = V.reshape(nb * m, r)
        if gram:
            V = self.ops.gram_inv(V)
        M = np.moveaxis((self.ops.basis_T @ V).reshape(nb, p, p, r), -1, 1)
        X = Tm[:, None] @ M @ Tm[:, None]
        out = self.ops.basis @ np.moveaxis(X, 1, -1).reshape(nb * p * p, r)
        if gram:
            out = self.ops.gram_inv(out)
        return out.reshape(nb, m, r)

    def _hinv(self, vB):
        return self._apply(self.Tinv, vB[..., None], gram=True)[..., 0]

    def solve(self, rhs):
        nx, cols, free = self.nx, self.cols, self.free
        bB, bF, by = rhs[:nx][cols], rhs[:nx][free], rhs[nx:]
        red = np.concatenate([bF, by - self.GB.reshape(by.size, -1) @ self._hinv(bB).ravel()])
        sol = linalg.lu_solve(self.fac, red)
        dF, y = sol[:free.size], sol[free.size:]
        out = np.empty(nx + y.size)
        out[free] = dF
        out[cols] = self._hinv(bB - (y @ self.GB.reshape(y.size, -1)).reshape(bB.shape))
        out[nx:] = y
        return out

    def matvec(self, v):
        nx = self.nx
        x, y = v[:nx], v[nx:]
        top = self.G_lp.T @ y
        top[self.cols] += self._apply(self.T, x[self.cols][..., None])[..., 0]
        return np.concatenate([top, self.G_lp @ x - self.w2 * y])


class _BlockBasis:
    """Sparse block-diagonal ``x_block -> vec(sum_i x_i C_i)`` and its Gram inverse."""

    def __init__(self, flat):
        nb, m, pp = flat.shape
        self.basis = sparse.block_diag([sparse.csr_matrix(f) for f in flat], format="csr")
        self.basis_T = self.basis.T.tocsr()
        gram = (self.basis @ self.basis_T).toarray()
        diag = np.diag(gram).copy()
        if np.allclose(gram, np.diag(diag), rtol=0, atol=1e-12 * diag.max()):
            self._scale = (1.0 / diag)[:, None]
            self._dense = None
        else:
            self._scale = None
            self._dense = np.linalg.inv(gram)

    def gram_inv(self, V):
        return self._scale * V if self._dense is None else self._dense @ V


def _check_lu(lu):
    if not np.all(np.isfinite(lu)) or np.min(np.abs(np.diag(lu))) == 0.0:
        raise np.linalg.LinAlgError("singular Newton system")


def solve_conic(c, G_lp, h_lp, blocks: PsdBlocks, *, feastol=1e-9, abstol=1e-10,
                reltol=1e-9, max_iters=200, closed_blocks=False) -> ConicSolution:
    c = np.asarray(c, dtype=float)
    G_lp = np.asarray(G_lp, dtype=float).reshape(-1, c.size)
    h_lp = np.asarray(h_lp, dtype=float)
    nb, p = blocks.count, blocks.size
    flat = blocks.coeffs.reshape(nb, -1, p * p)
    cols = blocks.cols
    eye = np.broadcast_to(np.eye(p), (nb, p, p))
    degree = h_lp.size + nb * p

    def G(x):
        return G_lp @ x, (x[cols][:, None, :] @ flat).reshape(nb, p, p)

    def GT(z_lp, Z):
        out = G_lp.T @ z_lp
        np.add.at(out, cols, (flat @ Z.reshape(nb, p * p, 1))[..., 0])
        return out

    def normal_matrix(d_lp, T):
        # G^T (W^T W)^{-1} G: diag(d_lp) on the LP part, U -> T U T per block
        H = (G_lp.T * d_lp) @ G_lp
        TCT = (T[:, None] @ blocks.coeffs @ T[:, None]).reshape(flat.shape)
        Hb = flat @ _tr(TCT)
        for b in range(nb):
            H[np.ix_(cols[b], cols[b])] += Hb[b]
        return H

    def shifted(v_lp, V):
        lows = [float(np.min(_min_eig(V)))] + ([float(v_lp.min())] if v_lp.size else [])
        lo = min(lows)
        # a barely-interior start gives huge scaling weights; push it to depth ~1
        scale = max(1.0, float(np.sqrt(v_lp @ v_lp + _inner(V, V))))
        if lo <= 1e-8 * scale:
            return v_lp + (1.0 - lo), V + (1.0 - lo) * eye
        return v_lp, V

    nx = c.size
    if closed_blocks:
        if np.unique(cols).size != cols.size:
            raise ValueError("closed_blocks needs blocks that own disjoint variables")
        free = np.setdiff1d(np.arange(nx), cols.ravel())
        ops = blocks.closed_ops
        # G^T G through the augmented form with unit weights and T = I
        unit = _ClosedBlockKkt(G_lp, np.ones(h_lp.size), ops, cols, np.array(eye),
                               np.array(eye), free)

        def init_solve(b):
            rhs = np.concatenate([b, np.zeros(h_lp.size)])
            sol = unit.solve(rhs)
            sol += unit.solve(rhs - unit.matvec(sol))
            return sol[:nx]
    else:
        fac = linalg.cho_factor(normal_matrix(np.ones(h_lp.size), np.array(eye)))

        def init_solve(b):
            return linalg.cho_solve(fac, b)

    # initial point: least-squares primal, least-norm dual, shifted into the cone
    x = init_solve(GT(h_lp, blocks.rhs))
    gx_lp, GX = G(x)
    s_lp, S = shifted(h_lp - gx_lp, blocks.rhs - GX)
    gz_lp, GZ = G(init_solve(c))
    z_lp, Z = shifted(-gz_lp, -GZ)

    def norm2(v_lp, V):
        return float(np.sqrt(v_lp @ v_lp + _inner(V, V)))

    h_norm = norm2(h_lp, blocks.rhs)
    c_norm = float(np.linalg.norm(c))
    status, best, it = "max_iters", None, 0
    for it in range(max_iters + 1):
        gx_lp, GX = G(x)
        rz_lp, RZ = gx_lp + s_lp - h_lp, GX + S - blocks.rhs
        gtz = GT(z_lp, Z)
        rx = gtz + c
        gap = float(s_lp @ z_lp) + _inner(S, Z)
        pcost = float(c @ x)
        dcost = -float(h_lp @ z_lp) - _inner(blocks.rhs, Z)
        # residuals relative to the data and the iterate's own scale
        pres = norm2(rz_lp, RZ) / max(1.0, h_norm, norm2(gx_lp, GX), norm2(s_lp, S))
        dres = float(np.linalg.norm(rx)) / max(1.0, c_norm, float(np.linalg.norm(gtz)))
        relgap = gap / max(abs(pcost), abs(dcost), 1e-300) if min(pcost, -dcost) < 0 or \
            max(pcost, -dcost) > 0 else np.inf
        merit = max(pres / feastol, dres / feastol, min(gap / abstol, relgap / reltol))
        if best is None or merit < best[0]:
            best = (merit, x, pcost, dcost, pres, dres, gap)
        if merit <= 1.0:
            status = "optimal"
            break
        if it == max_iters:
            break
        if merit > 1e6 * best[0]:
            # lost accuracy (ill-conditioned normal equations near the optimum)
            status = "numerical"
            break

        try:
            sc = _Scaling(s_lp, z_lp, S, Z)
            # augmented form [[H_psd, G_lp^T], [G_lp, -w^2]]: large LP weights 1/w^2
            # would wreck the normal equations near the optimum, small w^2 does not
            if closed_blocks:
                kkt = _ClosedBlockKkt(G_lp, sc.w**2, ops, cols, sc.R @ _tr(sc.R), sc.T, free)
            else:
                kkt = _DenseKkt(normal_matrix(np.zeros(h_lp.size), sc.T), G_lp, sc.w**2)
        except (np.linalg.LinAlgError, linalg.LinAlgError, ValueError):
            status = "numerical"
            break

        def newton(b):
            rhs = np.concatenate([b, np.zeros(h_lp.size)])
            sol = kkt.solve(rhs)
            for _ in range(2):  # iterative refinement
                sol += kkt.solve(rhs - kkt.matvec(sol))
            return sol[:nx]
        mu = gap / degree
        lam_lp, lam = sc.lam_lp, sc.lam

        def direction(t_lp, Tm):
            # Newton step whose scaled complementarity residual is lam o t:
            # bx = -rx, bz = -rz - W^T t, then ds = W^T (t - W dz)
            wt_lp, WT = sc.W_T(t_lp, Tm)
            bz_lp, BZ = -rz_lp - wt_lp, -RZ - WT
            u_lp, U = sc.WTW_inv(bz_lp, BZ)
            dx = newton(-rx + GT(u_lp, U))
            g_lp, GD = G(dx)
            dz_lp, DZ = sc.WTW_inv(g_lp - bz_lp, GD - BZ)
            wz_lp, WZ = sc.W_z(dz_lp, DZ)
            # ds from the linear primal equation (exact), not through the
            # scaling, which cancels badly once S and Z are nearly complementary
            ds_lp, DS = -rz_lp - g_lp, -RZ - GD
            ts_lp, TS = ds_lp / sc.w, _sym(sc.Rinv @ DS @ _tr(sc.Rinv))
            return dx, ds_lp, DS, dz_lp, DZ, (ts_lp, TS), (wz_lp, WZ)

        Lam = lam[:, :, None] * eye
        # predictor (affine scaling): t = -lam
        aff = direction(-lam_lp, -Lam)
        alpha = min(1.0, _max_step(lam_lp, lam, *aff[5]), _max_step(lam_lp, lam, *aff[6]))
        sigma = (1.0 - alpha) ** 3
        # corrector: lam o t = -lam o lam - ds_a o dz_a + sigma mu e
        (as_lp, AS), (az_lp, AZ) = aff[5], aff[6]
        d_lp = -lam_lp**2 - as_lp * az_lp + sigma * mu
        D = -Lam * lam[:, None, :] - _sym(AS @ AZ) + sigma * mu * eye
        dx, ds_lp, DS, dz_lp, DZ, sdir, zdir = direction(*_lam_div(lam_lp, lam, d_lp, D))
        step = min(1.0, 0.99 * min(_max_step(lam_lp, lam, *sdir), _max_step(lam_lp, lam, *zdir)))

        x = x + step * dx
        s_lp, S = s_lp + step * ds_lp, _sym(S + step * DS)
        z_lp, Z = z_lp + step * dz_lp, _sym(Z + step * DZ)

    merit, x, pcost, dcost, pres, dres, gap = best
    if status != "optimal" and merit <= 1.0:
        status = "optimal"
    elif status != "optimal" and merit <= 1e3:
        status = "inaccurate"  # within three digits of every tolerance
    return ConicSolution(status, x, it, pcost, dcost, pres, dres, gap)
