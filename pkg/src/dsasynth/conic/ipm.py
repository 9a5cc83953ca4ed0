"""Primal-dual interior-point solver for dense second-order cone programs.

Algorithm: homogeneous self-dual embedding, Nesterov-Todd scaling, Mehrotra
predictor-corrector, Ruiz equilibration.  Each Newton step reduces to one
positive-definite system H = F' W^-2 F + delta*I.  The synthesis problems
this solver exists for couple a handful of controller coefficients to a
large number of per-frequency slack variables, so H is an arrow matrix:
a diagonal over "local" variables (each appearing in a single block)
bordered by a small dense "core".  The factorization eliminates locals
analytically, Cholesky-factors the core Schur complement, and treats wide
linear rows (e.g. a budget over all slacks) as rank-one updates via
Woodbury.  All kernels are dense numpy; iteration order is fixed, so
repeated solves are bit-identical.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, get_lapack_funcs

from .model import (ConeBlock, ConeKind, ConicError, ConicProblem,
                    ConicSolution, SolveStatus, ToleranceSet, rsoc_rotation)

_WIDE_ROW_MIN_SUPPORT = 64
_STEP_BACKOFF = 0.99
_BIG_STEP = 1e18
_REG_BASE = 1e-10
_REFINE_ROUNDS = 6
_REFINE_TARGET = 1e-13
_EQUIL_ITERS = 12


class _Numerical(Exception):
    pass


# ---------------------------------------------------------------------------
# Stacked block groups
# ---------------------------------------------------------------------------

class _SocGroup:
    """SOC blocks of equal dim and support size, stacked for vector math."""

    def __init__(self, rows, sup, F, g):
        self.rows = rows          # (nb, d) flat cone-row indices
        self.sup = sup            # (nb, s) variable indices
        self.F = F                # (nb, d, s)
        self.g = g                # (nb, d)
        self.nb, self.d, self.s = F.shape
        self.plan = None
        # NT state, refreshed each iteration
        self.wbar = None          # (nb, d)
        self.eta = None           # (nb,)
        self.lam = None           # (nb, d)

    def fx(self, x):
        return np.einsum("bds,bs->bd", self.F, x[self.sup])

    def ftw(self, w, out):
        contrib = np.einsum("bds,bd->bs", self.F, w[self.rows])
        np.add.at(out, self.sup, contrib)

    def unit_scaling(self):
        self.wbar = np.zeros((self.nb, self.d))
        self.wbar[:, 0] = 1.0
        self.eta = np.ones(self.nb)

    # The NT operators are hyperbolic: for nearly active blocks the entries
    # of wbar grow like 1/sqrt(mu) and products like 2*wbar*wbar' - J cancel
    # catastrophically in double precision.  The per-block arrays are tiny,
    # so this algebra runs in extended precision and rounds the result.

    def compute_scaling(self, s, z):
        sg = s[self.rows].astype(np.longdouble)
        zg = z[self.rows].astype(np.longdouble)
        js = sg[:, 0] ** 2 - np.einsum("bi,bi->b", sg[:, 1:], sg[:, 1:])
        jz = zg[:, 0] ** 2 - np.einsum("bi,bi->b", zg[:, 1:], zg[:, 1:])
        if np.any(js <= 0.0) or np.any(jz <= 0.0):
            raise _Numerical("iterate left the cone interior")
        sbar = sg / np.sqrt(js)[:, None]
        zbar = zg / np.sqrt(jz)[:, None]
        gamma = np.sqrt((1.0 + np.einsum("bi,bi->b", sbar, zbar)) / 2.0)
        jzbar = zbar.copy()
        jzbar[:, 1:] *= -1.0
        self.wbar = (sbar + jzbar) / (2.0 * gamma[:, None])
        self.eta = (js / jz) ** 0.25
        self.lam_ld = self.eta[:, None] * self._t_apply(self.wbar, zg)
        self.lam = self.lam_ld.astype(np.float64)

    @staticmethod
    def _t_apply(wbar, u):
        # T(wbar) is the hyperbolic rotation with T(wbar)^2 = 2*wbar*wbar' - J
        w0 = wbar[:, 0]
        w1 = wbar[:, 1:]
        dot = np.einsum("bi,bi->b", w1, u[:, 1:])
        out = np.empty_like(u)
        out[:, 0] = w0 * u[:, 0] + dot
        out[:, 1:] = u[:, 1:] + (u[:, 0] + dot / (1.0 + w0))[:, None] * w1
        return out

    def apply_w(self, u):
        u = u.astype(np.longdouble)
        out = self.eta[:, None] * self._t_apply(self.wbar, u)
        return out.astype(np.float64)

    def apply_winv(self, u):
        u = u.astype(np.longdouble)
        jw = self.wbar.copy()
        jw[:, 1:] *= -1.0
        return (self._t_apply(jw, u) / self.eta[:, None]).astype(np.float64)

    def apply_w2(self, u):
        u = u.astype(np.longdouble)
        dot = np.einsum("bi,bi->b", self.wbar, u)
        ju = u.copy()
        ju[:, 1:] *= -1.0
        out = (self.eta ** 2)[:, None] * (2.0 * dot[:, None] * self.wbar - ju)
        return out.astype(np.float64)

    def apply_w2inv(self, u):
        u = u.astype(np.longdouble)
        jw = self.wbar.copy()
        jw[:, 1:] *= -1.0
        dot = np.einsum("bi,bi->b", jw, u)
        ju = u.copy()
        ju[:, 1:] *= -1.0
        out = (2.0 * dot[:, None] * jw - ju) / (self.eta ** 2)[:, None]
        return out.astype(np.float64)

    def w2inv_dense(self):
        jw = self.wbar.copy()
        jw[:, 1:] *= -1.0
        J = np.eye(self.d, dtype=np.longdouble)
        J[1:, 1:] *= -1.0
        M = 2.0 * jw[:, :, None] * jw[:, None, :] - J[None, :, :]
        return (M / (self.eta ** 2)[:, None, None]).astype(np.float64)

    def jprod(self, u, v):
        out = np.empty_like(u)
        out[:, 0] = np.einsum("bi,bi->b", u, v)
        out[:, 1:] = u[:, 0:1] * v[:, 1:] + v[:, 0:1] * u[:, 1:]
        return out

    def jsolve_lam(self, d):
        lam = self.lam_ld
        d = d.astype(np.longdouble)
        jl = lam[:, 0] ** 2 - np.einsum("bi,bi->b", lam[:, 1:], lam[:, 1:])
        if np.any(jl <= 0.0) or np.any(lam[:, 0] <= 0.0):
            raise _Numerical("scaled point left the cone interior")
        out = np.empty_like(d)
        u0 = (lam[:, 0] * d[:, 0] -
              np.einsum("bi,bi->b", lam[:, 1:], d[:, 1:])) / jl
        out[:, 0] = u0
        out[:, 1:] = (d[:, 1:] - u0[:, None] * lam[:, 1:]) / lam[:, 0:1]
        return out.astype(np.float64)

    def step_bound(self, u, du):
        """Largest alpha keeping u + alpha*du in the cone, per block."""
        c0 = u[:, 0] ** 2 - np.einsum("bi,bi->b", u[:, 1:], u[:, 1:])
        c1 = u[:, 0] * du[:, 0] - np.einsum("bi,bi->b", u[:, 1:], du[:, 1:])
        c2 = du[:, 0] ** 2 - np.einsum("bi,bi->b", du[:, 1:], du[:, 1:])
        alpha = np.full(self.nb, _BIG_STEP)
        lin = np.abs(c2) <= 1e-14 * np.maximum(1.0, np.abs(c1))
        neg_c1 = c1 < 0.0
        m = lin & neg_c1
        alpha[m] = c0[m] / (-2.0 * c1[m])
        disc = c1 ** 2 - c2 * c0
        m = (~lin) & (c2 < 0.0)  # exactly one positive root
        alpha[m] = (c1[m] + np.sqrt(np.maximum(disc[m], 0.0))) / (-c2[m])
        m = (~lin) & (c2 > 0.0) & neg_c1 & (disc >= 0.0)
        alpha[m] = c0[m] / (-c1[m] + np.sqrt(disc[m]))
        return alpha


class _NnGroup:
    """Nonnegative rows of equal support size."""

    def __init__(self, rows, sup, F, g, wide):
        self.rows = rows          # (nr,)
        self.sup = sup            # (nr, s)
        self.F = F                # (nr, s)
        self.g = g                # (nr,)
        self.wide = wide
        self.nr, self.s = F.shape
        self.plan = None

    def fx(self, x):
        if self.s == 0:
            return np.zeros(self.nr)
        return np.einsum("rs,rs->r", self.F, x[self.sup])

    def ftw(self, w, out):
        if self.s == 0:
            return
        np.add.at(out, self.sup, self.F * w[self.rows][:, None])


class _ScatterPlan:
    """How a stacked group deposits F' W^-2 F into the arrow structure."""

    def __init__(self, sup: np.ndarray, prep: "_Prep"):
        nb, s = sup.shape
        if s == 0:
            self.empty = True
            return
        self.empty = False
        core = prep.is_core[sup]
        nloc = (~core).sum(axis=1)
        if np.any(nloc > 1):  # pragma: no cover - excluded by the cover
            raise ConicError("internal: block with more than one local variable")
        self.has_local = nloc == 1
        self.lpos = np.where(self.has_local, np.argmax(~core, axis=1), -1)
        safe_lpos = np.maximum(self.lpos, 0)
        self.local_row = np.where(
            self.has_local,
            prep.local_pos_of[sup[np.arange(nb), safe_lpos]], -1)
        self.core_pos = prep.core_pos_of[sup]          # -1 at local columns
        self.uniform = (
            bool(np.all(self.lpos == self.lpos[0]))
            and bool(np.all(self.core_pos == self.core_pos[0]))
        )
        if self.uniform:
            l0 = int(self.lpos[0])
            cols = [j for j in range(s) if j != l0] if l0 >= 0 else list(range(s))
            self.cc_idx = np.asarray(cols, dtype=np.int64)
            self.cc_core = self.core_pos[0][self.cc_idx]

    def scatter(self, M, H_CC, d_L, B):
        if self.empty:
            return
        if self.uniform:
            cc = self.cc_idx
            if cc.size:
                H_CC[np.ix_(self.cc_core, self.cc_core)] += \
                    M[:, cc[:, None], cc[None, :]].sum(axis=0)
            l0 = int(self.lpos[0])
            if l0 >= 0:
                np.add.at(d_L, self.local_row, M[:, l0, l0])
                if cc.size:
                    np.add.at(B, (self.local_row[:, None], self.cc_core[None, :]),
                              M[:, l0, cc])
            return
        nb = M.shape[0]
        for b in range(nb):  # heterogeneous fallback
            cp = self.core_pos[b]
            cmask = cp >= 0
            cidx = cp[cmask]
            H_CC[np.ix_(cidx, cidx)] += M[b][np.ix_(cmask, cmask)]
            if self.has_local[b]:
                lp = int(self.lpos[b])
                lr = int(self.local_row[b])
                d_L[lr] += M[b, lp, lp]
                B[lr, cidx] += M[b, lp, cmask]


def _greedy_cover(n: int, supports: list, forced: np.ndarray) -> np.ndarray:
    """Deterministic greedy cover: every support keeps <= 1 non-core variable."""
    is_core = forced.copy()
    supports = [s for s in supports if s.size >= 2]
    if not supports:
        return is_core
    s_max = max(s.size for s in supports)
    SUP = np.full((len(supports), s_max), n, dtype=np.int64)
    for i, s in enumerate(supports):
        SUP[i, :s.size] = s
    while True:
        core_ext = np.append(is_core, True)  # sentinel column n counts as core
        noncore = ~core_ext[SUP]
        active = noncore.sum(axis=1) >= 2
        if not np.any(active):
            return is_core
        flat = SUP[active][noncore[active]]
        counts = np.bincount(flat, minlength=n + 1)[:n]
        pick = int(np.argmax(counts))
        is_core[pick] = True


# ---------------------------------------------------------------------------
# Preprocessing: rotation, flat layout, equilibration, core/local split
# ---------------------------------------------------------------------------

class _Prep:
    def __init__(self, prob: ConicProblem):
        self.prob = prob
        n = prob.n_vars
        self.n = n
        self.m = prob.n_eq

        # Rotate RSOC blocks; remember the involution for reporting.
        blocks = []
        self.rotations = []
        for b in prob.blocks:
            if b.kind is ConeKind.RSOC:
                R = rsoc_rotation(b.dim)
                blocks.append(ConeBlock(ConeKind.SOC, b.support, R @ b.F, R @ b.g))
                self.rotations.append(R)
            else:
                blocks.append(b)
                self.rotations.append(None)
        self.blocks = blocks

        # Flat cone-row layout: nonneg rows first, then SOC blocks.
        nn_entries = []   # (flat_row, support, coeffs, g)
        soc_entries = []  # (flat_row0, support, F, g)
        self.rows_of_block = []
        pos = 0
        for b in blocks:
            if b.kind is ConeKind.NONNEG:
                self.rows_of_block.append(np.arange(pos, pos + b.dim))
                for r in range(b.dim):
                    nn_entries.append((pos, b.support, b.F[r], float(b.g[r])))
                    pos += 1
        self.n_nn = pos
        for b in blocks:
            if b.kind is not ConeKind.NONNEG:
                soc_entries.append((pos, b.support, b.F, b.g))
                pos += b.dim
        # rows_of_block must follow original block order; rebuild properly.
        self.rows_of_block = []
        pos_nn = 0
        pos_soc = self.n_nn
        for b in blocks:
            if b.kind is ConeKind.NONNEG:
                self.rows_of_block.append(np.arange(pos_nn, pos_nn + b.dim))
                pos_nn += b.dim
            else:
                self.rows_of_block.append(np.arange(pos_soc, pos_soc + b.dim))
                pos_soc += b.dim
        self.k = pos_soc
        self.nu = self.n_nn + len(soc_entries)
        if self.k == 0 and self.m == 0:
            raise ConicError("problem has no constraints")
        # Fix flat rows of nn entries (they were assigned before soc offset).
        nn_entries = [(i, sup, coef, g)
                      for i, (_, sup, coef, g) in enumerate(nn_entries)]

        # Original-data copies for reporting and certificate tests.
        self.c0 = prob.c.copy()
        self.A0 = prob.A_eq.copy() if prob.A_eq is not None else np.zeros((0, n))
        self.b0 = prob.b_eq.copy() if prob.b_eq is not None else np.zeros(0)
        self.norm_c = float(np.max(np.abs(self.c0))) if n else 0.0
        self.norm_b = float(np.max(np.abs(self.b0))) if self.m else 0.0
        g_mags = [abs(g) for _, _, _, g in nn_entries]
        g_mags += [float(np.max(np.abs(g))) for _, _, _, g in soc_entries]
        self.norm_g = max(g_mags, default=0.0)
        mags = [self.norm_c, self.norm_b, self.norm_g]
        mags += [float(np.max(np.abs(coef))) if coef.size else 0.0
                 for _, _, coef, _ in nn_entries]
        mags += [float(np.max(np.abs(F))) for _, _, F, _ in soc_entries]
        if self.m:
            mags.append(float(np.max(np.abs(self.A0))))
        self.data_scale = max(1.0, max(mags, default=1.0))

        # -- Ruiz equilibration ------------------------------------------------
        d_col = np.ones(n)
        rho = np.ones(self.k)
        rho_eq = np.ones(self.m)
        A = self.A0
        for _ in range(_EQUIL_ITERS):
            for i, sup, coef, g in nn_entries:
                if coef.size == 0:
                    continue
                mx = float(np.max(np.abs(coef) * d_col[sup])) * rho[i]
                if mx > 0:
                    rho[i] /= math.sqrt(mx)
            for p0, sup, F, g in soc_entries:
                mx = float(np.max(np.abs(F) * d_col[sup][None, :])) * rho[p0]
                if mx > 0:
                    rho[p0:p0 + F.shape[0]] /= math.sqrt(mx)
            for i in range(self.m):
                mx = float(np.max(np.abs(A[i]) * d_col)) * rho_eq[i]
                if mx > 0:
                    rho_eq[i] /= math.sqrt(mx)
            cmax = np.zeros(n)
            for i, sup, coef, g in nn_entries:
                if coef.size == 0:
                    continue
                np.maximum.at(cmax, sup, np.abs(coef) * d_col[sup] * rho[i])
            for p0, sup, F, g in soc_entries:
                colmax = np.max(np.abs(F), axis=0) * d_col[sup] * rho[p0]
                np.maximum.at(cmax, sup, colmax)
            if self.m:
                cmax = np.maximum(cmax, np.max(
                    np.abs(A) * rho_eq[:, None] * d_col[None, :], axis=0))
            nz = cmax > 0
            d_col[nz] /= np.sqrt(cmax[nz])
        self.d_col = d_col
        self.rho = rho
        self.rho_eq = rho_eq

        # Scaled data.
        c_s = d_col * prob.c
        self.sigma_c = max(1.0, float(np.max(np.abs(c_s))) if n else 1.0)
        self.c = c_s / self.sigma_c
        self.A = rho_eq[:, None] * A * d_col[None, :] if self.m else A
        b_s = rho_eq * self.b0
        g_flat = np.zeros(self.k)
        for i, sup, coef, g in nn_entries:
            g_flat[i] = rho[i] * g
        for p0, sup, F, g in soc_entries:
            g_flat[p0:p0 + F.shape[0]] = rho[p0] * g
        self.sigma_h = max(1.0,
                           float(np.max(np.abs(g_flat))) if self.k else 1.0,
                           float(np.max(np.abs(b_s))) if self.m else 1.0)
        self.g = g_flat / self.sigma_h
        self.b = b_s / self.sigma_h

        # -- Core / local split --------------------------------------------------
        narrow_sups = [sup for _, sup, coef, _ in nn_entries
                       if 2 <= sup.size < _WIDE_ROW_MIN_SUPPORT]
        narrow_sups += [sup for _, sup, _, _ in soc_entries if sup.size >= 2]
        forced = np.zeros(n, dtype=bool)
        if self.m:
            forced |= np.any(self.A != 0.0, axis=0)
        self.is_core = _greedy_cover(n, narrow_sups, forced)
        self.core_ids = np.flatnonzero(self.is_core)
        self.local_ids = np.flatnonzero(~self.is_core)
        self.core_pos_of = np.full(n, -1, dtype=np.int64)
        self.core_pos_of[self.core_ids] = np.arange(self.core_ids.size)
        self.local_pos_of = np.full(n, -1, dtype=np.int64)
        self.local_pos_of[self.local_ids] = np.arange(self.local_ids.size)

        # -- Stacked groups (scaled data) ----------------------------------------
        self.soc_groups: list[_SocGroup] = []
        by_shape: dict[tuple, list] = {}
        for p0, sup, F, g in soc_entries:
            by_shape.setdefault((F.shape[0], sup.size), []).append((p0, sup, F, g))
        for (d, s), entries in sorted(by_shape.items()):
            rows = np.asarray([np.arange(p0, p0 + d) for p0, _, _, _ in entries])
            sup = np.asarray([sup for _, sup, _, _ in entries]).reshape(len(entries), s)
            F = np.asarray([rho[p0] * F * d_col[sup][None, :]
                            for p0, sup, F, _ in entries]).reshape(len(entries), d, s)
            g = np.asarray([rho[p0] * g / self.sigma_h
                            for p0, _, _, g in entries]).reshape(len(entries), d)
            self.soc_groups.append(_SocGroup(rows, sup, F, g))

        self.nn_groups: list[_NnGroup] = []
        by_key: dict[tuple, list] = {}
        for i, sup, coef, g in nn_entries:
            wide = sup.size >= _WIDE_ROW_MIN_SUPPORT
            by_key.setdefault((wide, sup.size), []).append((i, sup, coef, g))
        for (wide, s), entries in sorted(by_key.items()):
            rows = np.asarray([i for i, _, _, _ in entries], dtype=np.int64)
            sup = np.asarray([sup for _, sup, _, _ in entries],
                             dtype=np.int64).reshape(len(entries), s)
            F = np.asarray([rho[i] * coef * d_col[sup]
                            for i, sup, coef, _ in entries]).reshape(len(entries), s)
            g = np.asarray([rho[i] * g / self.sigma_h for i, _, _, g in entries])
            self.nn_groups.append(_NnGroup(rows, sup, F, g, wide))

        for grp in self.soc_groups:
            grp.plan = _ScatterPlan(grp.sup, self)
        for grp in self.nn_groups:
            if not grp.wide:
                grp.plan = _ScatterPlan(grp.sup, self)

    def mv_f(self, x):
        out = np.zeros(self.k)
        for grp in self.nn_groups:
            out[grp.rows] = grp.fx(x)
        for grp in self.soc_groups:
            out[grp.rows.ravel()] = grp.fx(x).ravel()
        return out

    def mv_ft(self, w):
        out = np.zeros(self.n)
        for grp in self.nn_groups:
            grp.ftw(w, out)
        for grp in self.soc_groups:
            grp.ftw(w, out)
        return out


# ---------------------------------------------------------------------------
# Structured KKT factorization
# ---------------------------------------------------------------------------

class _KKTFactor:
    """Bordered factorization of the reduced Newton system.

    The narrow-block part of H = F' W^-2 F is an arrow matrix (diagonal
    locals, dense core); wide cone rows and equality rows are kept as a
    symmetric-indefinite border, because an active wide row becomes
    arbitrarily stiff and Bunch-Kaufman pivoting inside the small bordered
    system handles that stably where a Woodbury correction cancels.

        [ d_L   B    V_L ] [x_L]   [v_L]
        [ B'   H_CC  V_C ] [x_C] = [v_C]
        [ V_L'  V_C'  Dg ] [ w ]   [v_b]

    with V = [wide-row vectors | A_eq'] and Dg = diag(-1/rho_wide, -delta).
    A local pivot d_j that is tiny against its coupling row would grow the
    elimination error unboundedly, so such pivots are deferred into the
    dense bordered factor for the current scaling (adaptive pivot
    rejection); locals never couple to each other, which keeps the deferred
    rows diagonal among themselves.
    """

    _GROWTH_LIMIT = 1e8

    def __init__(self, prep: _Prep, ipm: "_IPM", delta: float):
        self.prep = prep
        n_C = prep.core_ids.size
        n_L = prep.local_ids.size
        H_CC = np.zeros((n_C, n_C))
        H_CC[np.diag_indices(n_C)] = delta
        d_L = np.full(n_L, delta)
        B = np.zeros((n_L, n_C))
        wides = []

        for grp in prep.nn_groups:
            w2 = 1.0 / ipm.w_nn[grp.rows] ** 2
            if grp.wide:
                for i in range(grp.nr):
                    wides.append((grp.sup[i], grp.F[i], w2[i]))
                continue
            if grp.s == 0:
                continue
            M = (grp.F[:, :, None] * grp.F[:, None, :]) * w2[:, None, None]
            grp.plan.scatter(M, H_CC, d_L, B)
        for grp in prep.soc_groups:
            W2 = grp.w2inv_dense()
            M = np.einsum("bdi,bde,bej->bij", grp.F, W2, grp.F, optimize=True)
            grp.plan.scatter(M, H_CC, d_L, B)

        if n_L and np.any(d_L <= 0.0):
            raise _Numerical("nonpositive local pivot")

        m = prep.m
        r = len(wides)
        self.r = r
        self.m = m
        nb = r + m
        self.nb = nb
        V = np.zeros((prep.n, nb))
        dg = np.empty(nb)
        for j, (sup, coef, w2) in enumerate(wides):
            V[sup, j] = coef
            dg[j] = -1.0 / w2
        if m:
            V[:, r:] = prep.A.T
            dg[r:] = -delta
        V_L = V[prep.local_ids]
        self.V_C = V[prep.core_ids]

        # Pivot rejection: defer locals whose elimination growth is extreme.
        if n_L:
            coup = np.abs(B).max(axis=1, initial=0.0)
            if nb:
                coup = np.maximum(coup, np.abs(V_L).max(axis=1, initial=0.0))
            hscale = max(float(np.max(H_CC.diagonal())) if n_C else 0.0, 1.0)
            growth = coup ** 2 / (d_L * hscale)
            defer = growth > self._GROWTH_LIMIT
        else:
            defer = np.zeros(0, dtype=bool)
        keep = ~defer
        self.keep = keep
        self.defer_rows = np.flatnonzero(defer)
        self.keep_rows = np.flatnonzero(keep)
        n_D = self.defer_rows.size

        Bk = B[keep]
        dk = d_L[keep]
        Vk = V_L[keep]
        self.B_keep = Bk
        self.d_keep = dk
        self.V_keep = Vk
        self.B_def = B[defer]
        self.d_def = d_L[defer]
        self.V_def = V_L[defer]

        S_C = H_CC - (Bk / dk[:, None]).T @ Bk if dk.size else H_CC
        C_b = (self.V_C - (Bk / dk[:, None]).T @ Vk if dk.size else self.V_C) \
            if nb else np.zeros((n_C, 0))
        S_bb = (np.diag(dg) - (Vk / dk[:, None]).T @ Vk if dk.size
                else np.diag(dg)) if nb else np.zeros((0, 0))
        # deferred block: diagonal among itself, dense against core/border
        M_core = np.block([
            [S_C, self.B_def.T, C_b],
            [self.B_def, np.diag(self.d_def), self.V_def],
            [C_b.T, self.V_def.T, S_bb]])
        self.n_C = n_C
        self.n_D = n_D
        if M_core.size == 0:
            self._factor = None
            return
        sytrf, = get_lapack_funcs(("sytrf",), (M_core,))
        ldu, ipiv, info = sytrf(M_core, lower=1)
        if info != 0:
            raise _Numerical(f"core factorization failed (sytrf info={info})")
        sytrs, = get_lapack_funcs(("sytrs",), (ldu,))
        self._factor = (sytrs, ldu, ipiv)

    def solve(self, v, ry=None):
        """Solve for x given the full-length rhs v and equality rhs ry."""
        prep = self.prep
        n_C = self.n_C
        n_D = self.n_D
        vL = v[prep.local_ids]
        vC = v[prep.core_ids]
        vk = vL[self.keep]
        tk = vk / self.d_keep if vk.size else vk
        rhs_core = vC - self.B_keep.T @ tk if vk.size else vC.copy()
        rhs_def = vL[~self.keep]
        if self.nb:
            vb = np.zeros(self.nb)
            if ry is not None and self.m:
                vb[self.r:] = ry
            rhs_b = vb - self.V_keep.T @ tk if vk.size else vb
            rhs = np.concatenate([rhs_core, rhs_def, rhs_b])
        else:
            rhs = np.concatenate([rhs_core, rhs_def])
        if self._factor is not None:
            sytrs, ldu, ipiv = self._factor
            sol, info = sytrs(ldu, ipiv, rhs, lower=1)
            if info != 0:
                raise _Numerical("core solve failed")
        else:
            sol = rhs
        xC = sol[:n_C]
        xD = sol[n_C:n_C + n_D]
        w = sol[n_C + n_D:]
        out = np.empty(prep.n)
        if vk.size:
            xk = (vk - self.B_keep @ xC - (self.V_keep @ w if self.nb else 0.0)
                  ) / self.d_keep
            out[prep.local_ids[self.keep_rows]] = xk
        if n_D:
            out[prep.local_ids[self.defer_rows]] = xD
        out[prep.core_ids] = xC
        # border unknowns: w[:r] wide-row auxiliaries, w[r:] = -dy
        return out, (-w[self.r:] if self.m else np.zeros(0))


# ---------------------------------------------------------------------------
# The interior-point iteration
# ---------------------------------------------------------------------------

class _IPM:
    def __init__(self, prep: _Prep, tol: ToleranceSet, verbose: bool):
        self.p = prep
        self.tol = tol
        self.verbose = verbose
        self.w_nn = np.ones(prep.n_nn)
        self.lam = None
        self._e = self._e_vec()

    def _e_vec(self):
        p = self.p
        e = np.zeros(p.k)
        e[:p.n_nn] = 1.0
        for grp in p.soc_groups:
            e[grp.rows[:, 0]] = 1.0
        return e

    def _to_cone(self, v):
        p = self.p
        viol = -_BIG_STEP
        if p.n_nn:
            viol = max(viol, float(-np.min(v[:p.n_nn])))
        for grp in p.soc_groups:
            vg = v[grp.rows]
            viol = max(viol, float(np.max(
                np.linalg.norm(vg[:, 1:], axis=1) - vg[:, 0])))
        if viol >= -0.1:
            v = v + (1.0 + max(viol, 0.0)) * self._e
        return v

    def _unit_scaling(self):
        self.w_nn = np.ones(self.p.n_nn)
        for grp in self.p.soc_groups:
            grp.unit_scaling()

    def _compute_scalings(self, s, z):
        p = self.p
        sn = s[:p.n_nn]
        zn = z[:p.n_nn]
        if np.any(sn <= 0.0) or np.any(zn <= 0.0):
            raise _Numerical("nonnegative part left the interior")
        self.w_nn = np.sqrt(sn / zn)
        self.lam = np.empty(p.k)
        self.lam[:p.n_nn] = np.sqrt(sn * zn)
        for grp in p.soc_groups:
            grp.compute_scaling(s, z)
            self.lam[grp.rows.ravel()] = grp.lam.ravel()

    def _apply_w(self, u):
        p = self.p
        out = np.empty_like(u)
        out[:p.n_nn] = u[:p.n_nn] * self.w_nn
        for grp in p.soc_groups:
            out[grp.rows.ravel()] = grp.apply_w(u[grp.rows]).ravel()
        return out

    def _apply_winv(self, u):
        p = self.p
        out = np.empty_like(u)
        out[:p.n_nn] = u[:p.n_nn] / self.w_nn
        for grp in p.soc_groups:
            out[grp.rows.ravel()] = grp.apply_winv(u[grp.rows]).ravel()
        return out

    def _apply_w2(self, u):
        p = self.p
        out = np.empty_like(u)
        out[:p.n_nn] = u[:p.n_nn] * self.w_nn ** 2
        for grp in p.soc_groups:
            out[grp.rows.ravel()] = grp.apply_w2(u[grp.rows]).ravel()
        return out

    def _apply_w2inv(self, u):
        p = self.p
        out = np.empty_like(u)
        out[:p.n_nn] = u[:p.n_nn] / self.w_nn ** 2
        for grp in p.soc_groups:
            out[grp.rows.ravel()] = grp.apply_w2inv(u[grp.rows]).ravel()
        return out

    def _jprod(self, u, v):
        p = self.p
        out = np.empty(p.k)
        out[:p.n_nn] = u[:p.n_nn] * v[:p.n_nn]
        for grp in p.soc_groups:
            out[grp.rows.ravel()] = grp.jprod(u[grp.rows], v[grp.rows]).ravel()
        return out

    def _jsolve_lam(self, d):
        p = self.p
        out = np.empty(p.k)
        out[:p.n_nn] = d[:p.n_nn] / self.lam[:p.n_nn]
        for grp in p.soc_groups:
            out[grp.rows.ravel()] = grp.jsolve_lam(d[grp.rows]).ravel()
        return out

    def _step_bound(self, u, du):
        p = self.p
        alpha = _BIG_STEP
        if p.n_nn:
            un = u[:p.n_nn]
            dn = du[:p.n_nn]
            neg = dn < 0.0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-un[neg] / dn[neg])))
        for grp in p.soc_groups:
            a = grp.step_bound(u[grp.rows], du[grp.rows])
            alpha = min(alpha, float(np.min(a)))
        return alpha

    def _kkt(self, fac: _KKTFactor, R1, R2, R3):
        """Solve the reduced Newton system with adaptive iterative refinement.

        The factorization eliminates ill-conditioned directions late in the
        run; refinement against exact matvecs recovers the accuracy as long
        as the factor still contracts the error, so iterate until the
        residual stops improving or hits the target.
        """
        p = self.p
        dx = np.zeros(p.n)
        dy = np.zeros(p.m)
        dz = np.zeros(p.k)
        r1, r2, r3 = R1, R2, R3
        ref_scale = max(1.0,
                        float(np.max(np.abs(R1))) if R1.size else 0.0,
                        float(np.max(np.abs(R3))) if R3.size else 0.0)
        best = (None, np.inf)
        prev_res = np.inf
        for _ in range(_REFINE_ROUNDS + 1):
            u = p.mv_ft(self._apply_w2inv(r3)) - r1
            ddx, ddy = fac.solve(u, r2 if p.m else None)
            ddz = self._apply_w2inv(r3 - p.mv_f(ddx))
            dx = dx + ddx
            dy = dy + ddy
            dz = dz + ddz
            r1 = R1 - ((p.A.T @ dy if p.m else 0.0) + p.mv_ft(dz))
            r2 = R2 - p.A @ dx if p.m else R2
            r3 = R3 - (p.mv_f(dx) + self._apply_w2(dz))
            res = max(float(np.max(np.abs(r1))) if r1.size else 0.0,
                      float(np.max(np.abs(r2))) if p.m else 0.0,
                      float(np.max(np.abs(r3))) if r3.size else 0.0)
            if res < best[1]:
                best = ((dx.copy(), dy.copy(), dz.copy()), res)
            if res <= _REFINE_TARGET * ref_scale or res >= 0.5 * prev_res:
                break
            prev_res = res
        if best[1] > 1e-3 * ref_scale:
            raise _Numerical(f"KKT refinement stalled at {best[1]:.2e}")
        return best[0]

    # -- result assembly ------------------------------------------------------
    def _split_blocks(self, v):
        out = []
        for rows, R in zip(self.p.rows_of_block, self.p.rotations):
            vb = v[rows]
            if R is not None:
                vb = R @ vb  # symmetric involution maps back
            out.append(vb)
        return out

    def _finish(self, status, x, y, z, s, tau, kap, it, message):
        p = self.p
        xu = p.sigma_h * p.d_col * x / tau
        yu = p.sigma_c * p.rho_eq * y / tau if p.m else np.zeros(0)
        zu = p.sigma_c * p.rho * z / tau
        su = p.sigma_h * s / (p.rho * tau)
        pobj = float(p.c0 @ xu)
        dobj = p.sigma_c * p.sigma_h * float(
            (p.b @ y if p.m else 0.0) - p.g @ z) / tau
        return ConicSolution(
            status=status, x=xu, primal_obj=pobj, dual_obj=dobj,
            iterations=it, s_blocks=self._split_blocks(su),
            z_blocks=self._split_blocks(zu), message=message)

    def _failure(self, message, it=0):
        return ConicSolution(
            status=SolveStatus.NUMERICAL, x=None,
            primal_obj=float("nan"), dual_obj=float("nan"),
            iterations=it, message=message)

    def _check_exit(self, x, y, z, s, tau, kap, r1, r2, r3, it):
        p = self.p
        tol = self.tol
        r1u = p.sigma_c * r1 / p.d_col / tau
        r2u = p.sigma_h * r2 / p.rho_eq / tau if p.m else np.zeros(0)
        r3u = p.sigma_h * r3 / p.rho / tau
        dres = float(np.max(np.abs(r1u))) / (1.0 + p.norm_c) if r1u.size else 0.0
        pres = max(
            float(np.max(np.abs(r2u))) / (1.0 + p.norm_b) if p.m else 0.0,
            float(np.max(np.abs(r3u))) / (1.0 + p.norm_g) if r3u.size else 0.0)
        pobj = p.sigma_c * p.sigma_h * float(p.c @ x) / tau
        dobj = p.sigma_c * p.sigma_h * float(
            (p.b @ y if p.m else 0.0) - p.g @ z) / tau
        relgap = abs(pobj - dobj) / max(1.0, abs(pobj), abs(dobj))
        if pres <= tol.feas and dres <= tol.feas and relgap <= tol.gap:
            return self._finish(SolveStatus.OPTIMAL, x, y, z, s, tau, kap, it, "")

        # Farkas certificate tests run in the equilibrated space, where every
        # row and column is O(1), so residual-vs-gap comparisons are clean.
        dq_s = float((p.b @ y if p.m else 0.0) - p.g @ z)
        cert_scale = max(1.0,
                         float(np.max(np.abs(y))) if p.m else 0.0,
                         float(np.max(np.abs(z))) if p.k else 0.0)
        if dq_s > 1e-12 * cert_scale:
            res_s = float(np.max(np.abs(r1 + p.c * tau)))
            if res_s <= tol.feas * dq_s:
                yu = p.sigma_c * p.rho_eq * y if p.m else np.zeros(0)
                zu = p.sigma_c * p.rho * z
                dq = p.sigma_c * p.sigma_h * dq_s
                return ConicSolution(
                    status=SolveStatus.PRIMAL_INFEASIBLE, x=None,
                    primal_obj=float("inf"), dual_obj=float("inf"),
                    iterations=it, cert_y=yu / dq,
                    cert_z_blocks=self._split_blocks(zu / dq),
                    message="primal constraints are infeasible")
        dc_s = -float(p.c @ x)
        ray_scale = max(1.0, float(np.max(np.abs(x))))
        if dc_s > 1e-12 * ray_scale:
            ray_eq = float(np.max(np.abs(r2 + p.b * tau))) if p.m else 0.0
            ray_cone = float(np.max(np.abs(r3 - p.g * tau))) if p.k else 0.0
            if max(ray_eq, ray_cone) <= tol.feas * dc_s:
                xu = p.sigma_h * p.d_col * x
                dc = p.sigma_c * p.sigma_h * dc_s
                return ConicSolution(
                    status=SolveStatus.DUAL_INFEASIBLE, x=None,
                    primal_obj=float("-inf"), dual_obj=float("-inf"),
                    iterations=it, cert_x=xu / dc,
                    message="objective unbounded below along a feasible ray")
        return None

    # -- main loop --------------------------------------------------------------
    def run(self) -> ConicSolution:
        p = self.p
        tol = self.tol
        n, m, k = p.n, p.m, p.k
        nu = p.nu

        delta = _REG_BASE
        fac = None
        self._unit_scaling()
        for _ in range(4):
            try:
                fac = _KKTFactor(p, self, delta)
                break
            except _Numerical:
                delta *= 1e3
        if fac is None:
            return self._failure("initial factorization failed")

        x1, _, z1 = self._kkt(fac, np.zeros(n), p.b, -p.g)
        x = x1
        s = self._to_cone(-z1)
        _, y2, z2 = self._kkt(fac, p.c, np.zeros(m), np.zeros(k))
        y = y2
        z = self._to_cone(z2)
        tau = 1.0
        kap = 1.0

        for it in range(tol.max_iter):
            r1 = np.asarray((p.A.T @ y if m else 0.0) + p.mv_ft(z) - p.c * tau)
            r2 = (p.A @ x - p.b * tau) if m else np.zeros(0)
            r3 = p.mv_f(x) + p.g * tau - s
            r4 = float(p.c @ x - (p.b @ y if m else 0.0) + p.g @ z + kap)
            mu = (float(s @ z) + tau * kap) / (nu + 1)

            done = self._check_exit(x, y, z, s, tau, kap, r1, r2, r3, it)
            if done is not None:
                return done
            if self.verbose:
                print(f"  ipm it={it:3d} mu={mu:9.2e} tau={tau:8.2e} "
                      f"kap={kap:8.2e} delta={delta:7.1e}")

            step = None
            for _attempt in range(4):
                try:
                    step = self._compute_step(fac_delta=delta, r1=r1, r2=r2,
                                              r3=r3, r4=r4, s=s, z=z,
                                              tau=tau, kap=kap, mu=mu)
                    break
                except _Numerical:
                    delta *= 1e2
                    step = None
            if step is None:
                return self._finish(SolveStatus.NUMERICAL, x, y, z, s, tau,
                                    kap, it, "regularization exhausted")
            delta = max(delta / 10.0, _REG_BASE)
            dx, dy, dz, ds, dtau, dkap, alpha = step

            x = x + alpha * dx
            if m:
                y = y + alpha * dy
            z = z + alpha * dz
            s = s + alpha * ds
            tau = tau + alpha * dtau
            kap = kap + alpha * dkap
            if tau <= 0.0 or kap <= 0.0 or not np.isfinite(tau + kap):
                return self._failure("homogenizing variables left the cone", it)

        return self._finish(SolveStatus.MAX_ITER, x, y, z, s, tau, kap,
                            tol.max_iter, "iteration limit reached")

    def _compute_step(self, fac_delta, r1, r2, r3, r4, s, z, tau, kap, mu):
        """One predictor-corrector direction and its accepted step length."""
        p = self.p
        m = p.m
        self._compute_scalings(s, z)
        fac = _KKTFactor(p, self, fac_delta)
        ex1, ey1, ez1 = self._kkt(fac, p.c, p.b, -p.g)
        dt_den = float(p.c @ ex1 - (p.b @ ey1 if m else 0.0) + p.g @ ez1
                       - kap / tau)
        if abs(dt_den) < 1e-14:
            dt_den = -1e-14

        def direction(sigma, ds_rhs, dk_rhs):
            wld = self._apply_w(self._jsolve_lam(ds_rhs))
            R1 = -(1.0 - sigma) * r1
            R2 = -(1.0 - sigma) * r2
            R3 = -(1.0 - sigma) * r3 + wld
            ex2, ey2, ez2 = self._kkt(fac, R1, R2, R3)
            rhs_t = -(1.0 - sigma) * r4
            dtau = (rhs_t - dk_rhs / tau -
                    float(p.c @ ex2 - (p.b @ ey2 if m else 0.0) + p.g @ ez2)
                    ) / dt_den
            dx = ex2 + dtau * ex1
            dy = ey2 + dtau * ey1 if m else np.zeros(0)
            dz = ez2 + dtau * ez1
            ds = wld - self._apply_w2(dz)
            dkap = (dk_rhs - kap * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        lam2 = self._jprod(self.lam, self.lam)
        dxa, dya, dza, dsa, dta, dka = direction(0.0, -lam2, -tau * kap)
        a_aff = min(1.0,
                    self._step_bound(s, dsa), self._step_bound(z, dza),
                    _BIG_STEP if dta >= 0 else -tau / dta,
                    _BIG_STEP if dka >= 0 else -kap / dka)
        mu_aff = (float((s + a_aff * dsa) @ (z + a_aff * dza)) +
                  (tau + a_aff * dta) * (kap + a_aff * dka)) / (p.nu + 1)
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        eta = self._jprod(self._apply_winv(dsa), self._apply_w(dza))
        ds_rhs = -lam2 + sigma * mu * self._e - eta
        dk_rhs = -tau * kap + sigma * mu - dta * dka
        dx, dy, dz, ds, dtau, dkap = direction(sigma, ds_rhs, dk_rhs)

        a_max = min(self._step_bound(s, ds), self._step_bound(z, dz),
                    _BIG_STEP if dtau >= 0 else -tau / dtau,
                    _BIG_STEP if dkap >= 0 else -kap / dkap)
        alpha = min(1.0, _STEP_BACKOFF * a_max)
        if not np.isfinite(alpha):
            raise _Numerical("step length not finite")
        # A corrupted direction shows up as a jump in complementarity;
        # backtrack, and hand the iteration back for a stronger factor if
        # no usable step remains.
        for _ in range(10):
            mu_new = (float((s + alpha * ds) @ (z + alpha * dz)) +
                      (tau + alpha * dtau) * (kap + alpha * dkap)) / (p.nu + 1)
            if mu_new <= 5.0 * mu:
                break
            alpha *= 0.5
        if alpha <= 1e-10:
            raise _Numerical("step length collapsed")
        return dx, dy, dz, ds, dtau, dkap, alpha


def solve(prob: ConicProblem, tol: ToleranceSet | None = None,
          verbose: bool = False) -> ConicSolution:
    """Solve a conic problem; deterministic for identical inputs."""
    tol = tol or ToleranceSet()
    prep = _Prep(prob)
    return _IPM(prep, tol, verbose).run()
