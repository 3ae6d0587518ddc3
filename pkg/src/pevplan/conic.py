"""Self-contained second-order cone programming solver.

Standard form hosted here:

    minimize    c' x
    subject to  A x = b
                lb <= x <= ub        (entries may be infinite)
                x[i] >= 0            for i in each non-negative block
                ||x[tail]|| <= x[head]   for each second-order cone block

Internally the problem is mapped to the inequality form
``G x + s = h, s in K`` and solved with an infeasible-start primal-dual
path-following method (Mehrotra predictor-corrector) under
Nesterov-Todd scaling.  Binary variables are declared on top of the
continuous program (:class:`MixedConicProgram`) and handled by the
branch-and-bound driver in :mod:`pevplan.bnb`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError

INF = float("inf")


@dataclass
class ConicProgram:
    num_vars: int
    objective: np.ndarray
    A: sp.csr_matrix          # equality lhs, shape (p, num_vars)
    b: np.ndarray
    nonneg: list[list[int]] = field(default_factory=list)
    soc: list[list[int]] = field(default_factory=list)  # [head, tail...]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    obj_const: float = 0.0

    def __post_init__(self):
        n = self.num_vars
        self.objective = np.asarray(self.objective, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.lb is None:
            self.lb = np.full(n, -INF)
        if self.ub is None:
            self.ub = np.full(n, INF)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.objective.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValidationError("objective/bound dimensions do not match num_vars")
        if self.A.shape[1] != n or self.A.shape[0] != self.b.shape[0]:
            raise ValidationError("equality system dimensions are inconsistent")
        seen: set[int] = set()
        for block in list(self.nonneg) + list(self.soc):
            for i in block:
                if not 0 <= i < n:
                    raise ValidationError(f"cone index {i} out of range")
                if i in seen:
                    raise ValidationError(f"variable {i} appears in two cones")
                seen.add(i)
        for block in self.soc:
            if len(block) < 1:
                raise ValidationError("empty second-order cone block")


@dataclass
class MixedConicProgram:
    program: ConicProgram
    binary: list[int] = field(default_factory=list)

    def __post_init__(self):
        for i in self.binary:
            if not 0 <= i < self.program.num_vars:
                raise ValidationError(f"binary index {i} out of range")
            if self.program.lb[i] < -1e-12 or self.program.ub[i] > 1 + 1e-12:
                raise ValidationError(f"binary variable {i} must have bounds within [0, 1]")


@dataclass
class SocpResult:
    status: str                 # optimal | infeasible | unbounded | failed
    x: np.ndarray | None
    objective: float | None
    eq_dual: np.ndarray | None = None      # multipliers of the original eq rows
    var_dual: np.ndarray | None = None     # net bound/fixing multipliers per var
    soc_dual: list[np.ndarray] | None = None
    iterations: int = 0
    primal_residual: float = INF
    dual_residual: float = INF
    gap: float = INF


# ---------------------------------------------------------------------------
# Cone algebra (concatenated vectors: LP part first, then SOC blocks)

class _ConeLayout:
    def __init__(self, lp_dim: int, soc_dims: list[int]):
        self.lp = lp_dim
        self.soc_dims = soc_dims
        self.offsets = []
        off = lp_dim
        for d in soc_dims:
            self.offsets.append(off)
            off += d
        self.m = off
        self.degree = lp_dim + len(soc_dims)
        # CSC pattern of a block-diagonal matrix (LP diagonal, dense SOC
        # blocks), so per-iteration scaling matrices only refill the data.
        indptr = [0] * (self.m + 1)
        indices: list[np.ndarray] = []
        for j in range(lp_dim):
            indptr[j + 1] = indptr[j] + 1
            indices.append(np.array([j]))
        for off, d in zip(self.offsets, soc_dims):
            rows = np.arange(off, off + d)
            for j in range(d):
                indptr[off + j + 1] = indptr[off + j] + d
                indices.append(rows)
        self._csc_indptr = np.array(indptr)
        self._csc_indices = (np.concatenate(indices) if indices
                             else np.zeros(0, dtype=int))

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[:self.lp] = 1.0
        for off in self.offsets:
            e[off] = 1.0
        return e

    def margin(self, v: np.ndarray) -> float:
        """Distance of v from the cone boundary (negative when outside)."""
        vals = []
        if self.lp:
            vals.append(v[:self.lp].min())
        for off, d in zip(self.offsets, self.soc_dims):
            vals.append(v[off] - np.linalg.norm(v[off + 1:off + d]))
        return min(vals) if vals else INF


class _Scaling:
    """Nesterov-Todd scaling W with W^2 z = s (W symmetric positive definite)."""

    def __init__(self, layout: _ConeLayout, s: np.ndarray, z: np.ndarray):
        self.layout = layout
        lp = layout.lp
        self.d_lp = np.sqrt(s[:lp] / z[:lp]) if lp else np.zeros(0)
        self.wbar: list[np.ndarray] = []
        self.eta: list[float] = []
        for off, d in zip(layout.offsets, layout.soc_dims):
            sb, zb = s[off:off + d], z[off:off + d]
            rs = sb[0] ** 2 - sb[1:] @ sb[1:]
            rz = zb[0] ** 2 - zb[1:] @ zb[1:]
            if rs <= 0 or rz <= 0 or sb[0] <= 0 or zb[0] <= 0:
                raise SolverError("iterate left the cone interior")
            shat, zhat = sb / math.sqrt(rs), zb / math.sqrt(rz)
            gamma = math.sqrt((1.0 + shat @ zhat) / 2.0)
            w = (shat + np.concatenate(([zhat[0]], -zhat[1:]))) / (2.0 * gamma)
            self.wbar.append(w)
            self.eta.append((rs / rz) ** 0.25)
        self.lmbda = self.apply(z)

    def _wbar_mul(self, k: int, u: np.ndarray) -> np.ndarray:
        w = self.wbar[k]
        out = np.empty_like(u)
        out[0] = w[0] * u[0] + w[1:] @ u[1:]
        out[1:] = u[1:] + ((u[0] + out[0]) / (1.0 + w[0])) * w[1:]
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """W u."""
        lay = self.layout
        out = np.empty(lay.m)
        out[:lay.lp] = self.d_lp * u[:lay.lp]
        for k, (off, d) in enumerate(zip(lay.offsets, lay.soc_dims)):
            out[off:off + d] = self.eta[k] * self._wbar_mul(k, u[off:off + d])
        return out

    def apply_inv(self, u: np.ndarray) -> np.ndarray:
        """W^{-1} u  (= J Wbar J u / eta per block)."""
        lay = self.layout
        out = np.empty(lay.m)
        out[:lay.lp] = u[:lay.lp] / self.d_lp
        for k, (off, d) in enumerate(zip(lay.offsets, lay.soc_dims)):
            v = u[off:off + d].copy()
            v[1:] = -v[1:]
            v = self._wbar_mul(k, v)
            v[1:] = -v[1:]
            out[off:off + d] = v / self.eta[k]
        return out

    def w2_inv_matrix(self) -> sp.csc_matrix:
        """(W^2)^{-1} as a sparse block-diagonal matrix."""
        lay = self.layout
        data = np.empty(lay._csc_indptr[-1])
        data[:lay.lp] = 1.0 / self.d_lp ** 2
        pos = lay.lp
        for k, d in enumerate(lay.soc_dims):
            jw = self.wbar[k].copy()
            jw[1:] = -jw[1:]
            mat = 2.0 * np.outer(jw, jw)
            mat[0, 0] -= 1.0
            mat[np.arange(1, d), np.arange(1, d)] += 1.0
            # blocks are symmetric, so row-major flatten matches CSC order
            data[pos:pos + d * d] = mat.ravel() / self.eta[k] ** 2
            pos += d * d
        return sp.csc_matrix((data, lay._csc_indices, lay._csc_indptr),
                             shape=(lay.m, lay.m))

    def w2_matrix(self) -> sp.csc_matrix:
        """W^2 as a sparse block-diagonal matrix."""
        lay = self.layout
        data = np.empty(lay._csc_indptr[-1])
        data[:lay.lp] = self.d_lp ** 2
        pos = lay.lp
        for k, d in enumerate(lay.soc_dims):
            w = self.wbar[k]
            mat = 2.0 * np.outer(w, w)
            mat[0, 0] -= 1.0
            mat[np.arange(1, d), np.arange(1, d)] += 1.0
            data[pos:pos + d * d] = mat.ravel() * self.eta[k] ** 2
            pos += d * d
        return sp.csc_matrix((data, lay._csc_indices, lay._csc_indptr),
                             shape=(lay.m, lay.m))


def _jordan_mul(layout: _ConeLayout, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty(layout.m)
    out[:layout.lp] = u[:layout.lp] * v[:layout.lp]
    for off, d in zip(layout.offsets, layout.soc_dims):
        ub, vb = u[off:off + d], v[off:off + d]
        out[off] = ub @ vb
        out[off + 1:off + d] = ub[0] * vb[1:] + vb[0] * ub[1:]
    return out


def _jordan_div(layout: _ConeLayout, lmbda: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve lmbda o u = v."""
    out = np.empty(layout.m)
    out[:layout.lp] = v[:layout.lp] / lmbda[:layout.lp]
    for off, d in zip(layout.offsets, layout.soc_dims):
        lb, vb = lmbda[off:off + d], v[off:off + d]
        det = lb[0] ** 2 - lb[1:] @ lb[1:]
        u0 = (lb[0] * vb[0] - lb[1:] @ vb[1:]) / det
        out[off] = u0
        out[off + 1:off + d] = (vb[1:] - u0 * lb[1:]) / lb[0]
    return out


def _max_step(layout: _ConeLayout, v: np.ndarray, dv: np.ndarray) -> float:
    """Largest a with v + t*dv in the cone for all t in [0, a] (v interior)."""
    alpha = INF
    lp = layout.lp
    neg = dv[:lp] < 0
    if neg.any():
        alpha = min(alpha, float(np.min(-v[:lp][neg] / dv[:lp][neg])))
    for off, d in zip(layout.offsets, layout.soc_dims):
        vb, db = v[off:off + d], dv[off:off + d]
        # roots of (v0+t d0)^2 - ||vbar + t dbar||^2 = 0 with v0 + t d0 >= 0
        a = db[0] ** 2 - db[1:] @ db[1:]
        bq = 2.0 * (vb[0] * db[0] - vb[1:] @ db[1:])
        cq = vb[0] ** 2 - vb[1:] @ vb[1:]
        roots = []
        if abs(a) < 1e-14:
            if bq < -1e-14:
                roots.append(-cq / bq)
        else:
            disc = bq * bq - 4.0 * a * cq
            if disc >= 0:
                sq = math.sqrt(disc)
                roots.extend([(-bq - sq) / (2 * a), (-bq + sq) / (2 * a)])
        step = INF
        for r in roots:
            if r > 1e-14 and vb[0] + r * db[0] >= -1e-12:
                step = min(step, r)
        # the head coordinate must also stay non-negative
        if db[0] < -1e-14:
            step = min(step, -vb[0] / db[0])
        alpha = min(alpha, step)
    return alpha


# ---------------------------------------------------------------------------
# Standardization: ConicProgram -> (c, A, b, G, h, layout, dual bookkeeping)

class _Standardized:
    def __init__(self, prog: ConicProgram):
        n = prog.num_vars
        lb = prog.lb.copy()
        ub = prog.ub.copy()
        for block in prog.nonneg:
            for i in block:
                lb[i] = max(lb[i], 0.0)
        if np.any(lb > ub + 1e-12):
            raise _TriviallyInfeasible()
        self.n = n
        self.c = prog.objective
        self.obj_const = prog.obj_const

        fixed = np.where(np.isfinite(lb) & (np.abs(ub - lb) <= 1e-12))[0]
        fixed_set = set(fixed.tolist())
        self.fixed = fixed
        self.num_orig_eq = prog.A.shape[0]
        if len(fixed):
            rows = sp.csr_matrix(
                (np.ones(len(fixed)), (np.arange(len(fixed)), fixed)), shape=(len(fixed), n))
            self.A = sp.vstack([prog.A, rows], format="csr")
            self.b = np.concatenate([prog.b, lb[fixed]])
        else:
            self.A = prog.A.tocsr()
            self.b = prog.b

        g_rows, g_cols, g_vals, h = [], [], [], []
        self.lp_origin: list[tuple[str, int]] = []  # ('lb'|'ub', var)
        r = 0
        for i in range(n):
            if i in fixed_set:
                continue
            if np.isfinite(lb[i]):
                g_rows.append(r); g_cols.append(i); g_vals.append(-1.0)
                h.append(-lb[i]); self.lp_origin.append(("lb", i)); r += 1
            if np.isfinite(ub[i]):
                g_rows.append(r); g_cols.append(i); g_vals.append(1.0)
                h.append(ub[i]); self.lp_origin.append(("ub", i)); r += 1
        lp_dim = r
        soc_dims = []
        self.soc_vars: list[list[int]] = []
        for block in prog.soc:
            for i in block:
                g_rows.append(r); g_cols.append(i); g_vals.append(-1.0)
                h.append(0.0); r += 1
            soc_dims.append(len(block))
            self.soc_vars.append(list(block))
        self.G = sp.csr_matrix((g_vals, (g_rows, g_cols)), shape=(r, n))
        self.h = np.asarray(h)
        self.layout = _ConeLayout(lp_dim, soc_dims)


class _TriviallyInfeasible(Exception):
    pass


def _row_max_abs(mat: sp.spmatrix) -> np.ndarray:
    if mat.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(abs(mat).max(axis=1).todense()).ravel()


def _equilibrate(std: _Standardized, passes: int = 10):
    """Ruiz-equilibrate the standardized data in place.

    Planning models mix per-unit grid rows, kW variables and dollar
    costs, which spreads the KKT coefficients over many orders of
    magnitude and stalls the interior point near convergence.  Scaling
    rows and columns toward unit infinity-norm removes that spread.
    Rows of one second-order-cone block share a single scale so cone
    membership of the slack is preserved.  Returns the diagonals
    (columns, equality rows, cone rows) and the cost scalar needed to
    map scaled iterates back to original units.
    """
    lay = std.layout
    p = std.A.shape[0]
    d = np.ones(std.n)
    e = np.ones(p)
    f = np.ones(lay.m)
    # Normalize variables by their bound magnitudes first: a branch
    # current capped at a few mili-pu sharing a cone with a near-unit
    # voltage leaves the Newton steps crashing into that block.
    mag = np.zeros(std.n)
    for r, (_, var) in enumerate(std.lp_origin):
        mag[var] = max(mag[var], abs(std.h[r]))
    d[mag > 0] = 1.0 / mag[mag > 0]
    A = (std.A @ sp.diags(d)).tocsr()
    G = (std.G @ sp.diags(d)).tocsr()
    for _ in range(passes):
        ra = _row_max_abs(A)
        rg = _row_max_abs(G)
        for off, dim in zip(lay.offsets, lay.soc_dims):
            rg[off:off + dim] = rg[off:off + dim].max()
        stacked = sp.vstack([A, G]) if p else G
        cm = np.asarray(abs(stacked).max(axis=0).todense()).ravel()
        se = np.where(ra > 0, 1.0 / np.sqrt(ra), 1.0)
        sg = np.where(rg > 0, 1.0 / np.sqrt(rg), 1.0)
        sc = np.where(cm > 0, 1.0 / np.sqrt(cm), 1.0)
        A = sp.diags(se) @ A @ sp.diags(sc) if p else A
        G = sp.diags(sg) @ G @ sp.diags(sc)
        e *= se
        f *= sg
        d *= sc
        worst = max(abs(np.log(se)).max() if p else 0.0,
                    abs(np.log(sg)).max(), abs(np.log(sc)).max())
        if worst < 0.1:
            break
    scaled_c = d * std.c
    sig = 1.0 / max(1.0, np.abs(scaled_c).max())
    std.A = A.tocsr()
    std.G = G.tocsr()
    std.b = e * std.b
    std.h = f * std.h
    std.c = sig * scaled_c
    return d, e, f, sig


# ---------------------------------------------------------------------------
# The interior-point driver

def _kkt_factor(H: sp.spmatrix, A: sp.spmatrix, reg: float):
    p, n = A.shape
    K = sp.bmat([[H + reg * sp.eye(n), A.T],
                 [A, -reg * sp.eye(p) if p else None]], format="csc")
    if p == 0:
        K = (H + reg * sp.eye(n)).tocsc()
    return spla.splu(K)


def _kkt3_factor(A: sp.spmatrix, G: sp.spmatrix, W2: sp.spmatrix, reg: float):
    """Factor the full augmented KKT system.

    The condensed form G' W^-2 G squares the cone scaling, which
    overwhelms double precision on degenerate blocks; the augmented
    quasi-definite form keeps the conditioning at W^2 itself.
    """
    p, n = A.shape
    m = G.shape[0]
    blocks = [[reg * sp.eye(n), A.T if p else None, G.T],
              [A if p else None, -reg * sp.eye(p) if p else None, None],
              [G, None, -(W2 + reg * sp.eye(m))]]
    if not p:
        blocks = [[blocks[0][0], blocks[0][2]], [blocks[2][0], blocks[2][2]]]
    return spla.splu(sp.bmat(blocks, format="csc"))


def _kkt3_solve(factor, A, G, W2, r1, r2, r3, refine: int = 10):
    p, n = A.shape
    m = G.shape[0]
    rhs = np.concatenate([r1, r2, r3])
    sol = factor.solve(rhs)
    scale = max(1.0, np.linalg.norm(rhs))
    prev = INF
    for _ in range(refine):
        dx, dy, dz = sol[:n], sol[n:n + p], sol[n + p:]
        res = np.concatenate([
            r1 - ((A.T @ dy if p else 0) + G.T @ dz),
            r2 - (A @ dx if p else np.zeros(0)),
            r3 - (G @ dx - W2 @ dz)])
        nrm = np.linalg.norm(res)
        if nrm <= 1e-14 * scale or nrm >= 0.5 * prev:
            break
        prev = nrm
        sol = sol + factor.solve(res)
    return sol[:n], sol[n:n + p], sol[n + p:]


def _kkt_solve(factor, H, A, rhs1, rhs2, refine: int = 5):
    p, n = A.shape
    rhs = np.concatenate([rhs1, rhs2])
    sol = factor.solve(rhs)
    scale = max(1.0, np.linalg.norm(rhs))
    prev = INF
    for _ in range(refine):
        rx = rhs1 - (H @ sol[:n] + (A.T @ sol[n:] if p else 0))
        ry = rhs2 - (A @ sol[:n] if p else np.zeros(0))
        res = np.concatenate([rx, ry])
        nrm = np.linalg.norm(res)
        if nrm <= 1e-14 * scale or nrm >= 0.5 * prev:
            break
        prev = nrm
        sol = sol + factor.solve(res)
    return sol[:n], sol[n:]


def solve_socp(prog: ConicProgram, tol: float = 1e-8,
               max_iter: int = 120) -> SocpResult:
    """Solve a continuous SOCP to the requested residual/gap tolerance.

    Returns status ``optimal`` only when primal/dual residuals and the
    relative complementarity gap are below ``tol``; numerical failure is
    reported explicitly, never as a silently wrong answer.
    """
    try:
        std = _Standardized(prog)
    except _TriviallyInfeasible:
        return SocpResult("infeasible", None, None)
    lay = std.layout
    n, p, m = std.n, std.A.shape[0], lay.m

    if m == 0:
        return _solve_equality_only(std)

    c_orig = std.c
    d_col, d_eq, d_cone, sig = _equilibrate(std)
    c, A, b, G, h = std.c, std.A, std.b, std.G, std.h

    def unscale(xs, ys, zs):
        return d_col * xs, d_eq * ys / sig, d_cone * zs / sig

    e = lay.identity()
    reg = 1e-10

    # Initial point: least-squares primal/dual with W = I, shifted interior.
    H0 = (G.T @ G).tocsc()
    f0 = _kkt_factor(H0, A, reg)
    x, y0 = _kkt_solve(f0, H0, A, G.T @ h, b)
    s = h - G @ x
    mg = lay.margin(s)
    if mg <= 0:
        s = s + (1.0 - mg) * e
    u, y = _kkt_solve(f0, H0, A, -c, np.zeros(p))
    z = G @ u
    mg = lay.margin(z)
    if mg <= 0:
        z = z + (1.0 - mg) * e

    bnorm = max(1.0, np.linalg.norm(b)) if p else 1.0
    hnorm = max(1.0, np.linalg.norm(h))
    cnorm = max(1.0, np.linalg.norm(c))

    best = None
    status = "failed"
    it = 0
    for it in range(1, max_iter + 1):
        rx = A.T @ y + G.T @ z + c if p else G.T @ z + c
        ry = (A @ x - b) if p else np.zeros(0)
        rz = G @ x + s - h
        gap = float(s @ z)
        mu = gap / lay.degree
        pres = max(np.linalg.norm(ry) / bnorm, np.linalg.norm(rz) / hnorm)
        dres = np.linalg.norm(rx) / cnorm
        pobj = float(c @ x) + std.obj_const
        dobj = -float(h @ z) - (float(b @ y) if p else 0.0) + std.obj_const
        relgap = abs(pobj - dobj) / max(1.0, abs(pobj))

        if os.environ.get("PEVPLAN_DEBUG_IPM"):
            print(f"it {it}: pres {pres:.2e} dres {dres:.2e} relgap {relgap:.2e} mu {mu:.2e}")
        if best is None or pres + dres + relgap < best[0]:
            best = (pres + dres + relgap, x.copy(), y.copy(), z.copy(), s.copy(),
                    pres, dres, gap, pobj)
        if pres <= tol and dres <= tol and (relgap <= tol or gap <= tol):
            status = "optimal"
            break

        # Certificates of primal / dual infeasibility.
        kappa = -(float(h @ z) + (float(b @ y) if p else 0.0))
        if kappa > 1e-10 and pres > 10 * tol:
            zin = z / kappa
            yin = y / kappa
            cert = np.linalg.norm((A.T @ yin if p else 0) + G.T @ zin)
            if cert <= 1e-8 * max(1.0, np.linalg.norm(zin)) and lay.margin(zin) >= -1e-9:
                status = "infeasible"
                break
        scale = -(float(c @ x))
        if scale > 1e-10 and dres > 1e-6:
            # ray certificate: c'x < 0, A x = 0, -G x in K
            xin = x / scale
            sdir = -(G @ xin)
            if (np.linalg.norm(A @ xin if p else np.zeros(0))
                    <= 1e-8 * max(1.0, np.linalg.norm(xin))
                    and lay.margin(sdir) >= -1e-9):
                status = "unbounded"
                break

        try:
            scal = _Scaling(lay, s, z)
        except SolverError:
            break
        lmbda = scal.lmbda
        W2 = scal.w2_matrix()
        try:
            factor = _kkt3_factor(A, G, W2, reg)
        except RuntimeError:
            break

        def newton(d_comp):
            bz = -rz - scal.apply(_jordan_div(lay, lmbda, d_comp))
            dx, dy, dz = _kkt3_solve(factor, A, G, W2, -rx, -ry, bz)
            # two algebraically equivalent recoveries of ds: the primal
            # row keeps G x + s - h shrinking exactly, while the cone
            # expression keeps the linearized complementarity exact;
            # prefer the primal form, fall back on boundary stalls
            ds = -rz - G @ dx
            ds_alt = scal.apply(_jordan_div(lay, lmbda, d_comp)
                                - scal.apply(dz))
            return dx, dy, dz, ds, ds_alt

        def pick(step_tuple):
            dx, dy, dz, ds, ds_alt = step_tuple
            if _max_step(lay, s, ds_alt) > _max_step(lay, s, ds):
                ds = ds_alt
            a = 0.99 * min(_max_step(lay, s, ds), _max_step(lay, z, dz))
            return dx, dy, dz, ds, min(a, 1.0)

        # Predictor
        d_aff = -_jordan_mul(lay, lmbda, lmbda)
        dxa, dya, dza, dsa, dsa_alt = newton(d_aff)
        ap = min(_max_step(lay, s, dsa), _max_step(lay, z, dza), 1.0)
        mu_aff = float((s + ap * dsa) @ (z + ap * dza)) / lay.degree
        sigma = max(0.0, min(1.0, mu_aff / mu)) ** 3

        # Corrector
        corr = _jordan_mul(lay, scal.apply_inv(dsa_alt), scal.apply(dza))
        d_comb = d_aff - corr + sigma * mu * e
        dx, dy, dz, ds, alpha = pick(newton(d_comb))
        if alpha < 0.05:
            # the corrector cross term can point sharply out of the cone
            # on nearly degenerate coordinates; retry with plain centering
            dx2, dy2, dz2, ds2, a2 = pick(newton(d_aff + sigma * mu * e))
            if a2 > alpha:
                dx, dy, dz, ds, alpha = dx2, dy2, dz2, ds2, a2
        if os.environ.get("PEVPLAN_DEBUG_IPM"):
            print(f"   alpha {alpha:.2e} sigma {sigma:.2e} W2_max {W2.data.max():.2e}")
        if alpha <= 1e-13:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    if status == "optimal":
        xo, yo, zo = unscale(x, y, z)
        return _package(std, xo, yo, zo, it, pres, dres, gap / sig,
                        float(c_orig @ xo) + std.obj_const)
    if status in ("infeasible", "unbounded"):
        return SocpResult(status, None, None, iterations=it)
    # Accept a slightly looser answer before declaring failure.
    _, bx, by, bz, bs, bp, bd, bg, bo = best
    loose = max(tol * 1e3, 1e-6)
    if bp <= loose and bd <= loose and bg / max(1.0, abs(bo)) <= loose:
        xo, yo, zo = unscale(bx, by, bz)
        return _package(std, xo, yo, zo, it, bp, bd, bg / sig,
                        float(c_orig @ xo) + std.obj_const)
    return SocpResult("failed", None, None, iterations=it,
                      primal_residual=bp, dual_residual=bd, gap=bg)


def _package(std, x, y, z, it, pres, dres, gap, pobj) -> SocpResult:
    nu = np.zeros(std.n)
    for (kind, var), zi in zip(std.lp_origin, z[:std.layout.lp]):
        nu[var] += zi if kind == "ub" else -zi
    # fixing rows contribute their multiplier to the variable's net dual
    for k, var in enumerate(std.fixed):
        nu[var] += y[std.num_orig_eq + k]
    soc_dual = []
    for off, d in zip(std.layout.offsets, std.layout.soc_dims):
        soc_dual.append(z[off:off + d].copy())
    return SocpResult("optimal", x, pobj, eq_dual=y[:std.num_orig_eq],
                      var_dual=nu, soc_dual=soc_dual, iterations=it,
                      primal_residual=pres, dual_residual=dres, gap=gap)


def _solve_equality_only(std) -> SocpResult:
    """Degenerate case with no inequalities or cones at all."""
    A, b, c = std.A.toarray(), std.b, std.c
    x, *_ = np.linalg.lstsq(A, b, rcond=None) if A.size else (np.zeros(std.n),)
    if A.size and np.linalg.norm(A @ x - b) > 1e-8 * max(1.0, np.linalg.norm(b)):
        return SocpResult("infeasible", None, None)
    y, *_ = np.linalg.lstsq(A.T, -c, rcond=None) if A.size else (np.zeros(0),)
    if np.linalg.norm((A.T @ y if A.size else 0) + c) > 1e-8 * max(1.0, np.linalg.norm(c)):
        return SocpResult("unbounded", None, None)
    pobj = float(c @ x) + std.obj_const
    return SocpResult("optimal", x, pobj, eq_dual=y[:std.num_orig_eq],
                      var_dual=np.zeros(std.n), soc_dual=[], iterations=0,
                      primal_residual=0.0, dual_residual=0.0, gap=0.0)


# ---------------------------------------------------------------------------
# Named-variable model builder

class ModelBuilder:
    """Incremental construction of a (mixed) conic program by variable name."""

    def __init__(self):
        self._names: dict[str, int] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: list[float] = []
        self._rows: list[tuple[list[tuple[float, int]], float]] = []
        self._soc: list[list[int]] = []
        self._binary: list[int] = []
        self.obj_const = 0.0

    def add_var(self, name: str, lb: float = -INF, ub: float = INF,
                obj: float = 0.0) -> int:
        if name in self._names:
            raise ValidationError(f"duplicate variable {name}")
        idx = len(self._lb)
        self._names[name] = idx
        self._lb.append(lb)
        self._ub.append(ub)
        self._obj.append(obj)
        return idx

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def index(self, name: str) -> int:
        return self._names[name]

    def add_obj(self, name: str, coef: float) -> None:
        self._obj[self._names[name]] += coef

    def mark_binary(self, name: str) -> None:
        self._binary.append(self._names[name])

    def add_eq(self, terms: Sequence[tuple[float, str]], rhs: float) -> None:
        self._rows.append(([(c, self._names[v]) for c, v in terms], rhs))

    def add_le(self, terms: Sequence[tuple[float, str]], rhs: float) -> None:
        """terms . x <= rhs via an explicit slack variable."""
        slack = self.add_var(f"_slack{len(self._lb)}", lb=0.0)
        row = [(c, self._names[v]) for c, v in terms] + [(1.0, slack)]
        self._rows.append((row, rhs))

    def add_soc(self, head: str, tail: Sequence[str]) -> None:
        self._soc.append([self._names[head]] + [self._names[t] for t in tail])

    def build(self) -> MixedConicProgram:
        n = len(self._lb)
        rows, cols, vals = [], [], []
        rhs = []
        for r, (terms, bval) in enumerate(self._rows):
            for cval, idx in terms:
                rows.append(r); cols.append(idx); vals.append(cval)
            rhs.append(bval)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self._rows), n))
        prog = ConicProgram(n, np.array(self._obj), A, np.array(rhs),
                            soc=[list(bk) for bk in self._soc],
                            lb=np.array(self._lb), ub=np.array(self._ub),
                            obj_const=self.obj_const)
        return MixedConicProgram(prog, list(self._binary))

    def value(self, x: np.ndarray, name: str) -> float:
        return float(x[self._names[name]])


# ---------------------------------------------------------------------------
# Text dump/load of programs, for debugging and solver cross-checks.

def dump_program(mp: MixedConicProgram) -> str:
    """Serialize a program to a documented line format.

    Lines: ``socp 1`` header, ``vars N``, ``const V``, sparse ``obj i v``,
    ``bound i lb ub``, ``eq rhs i1 v1 i2 v2 ...``, ``nonneg i...``,
    ``soc head i...``, ``binary i...``, ``end``.
    """
    p = mp.program
    out = ["socp 1", f"vars {p.num_vars}", f"const {float(p.obj_const)!r}"]
    for i, v in enumerate(p.objective):
        if v != 0:
            out.append(f"obj {i} {float(v)!r}")
    for i in range(p.num_vars):
        if np.isfinite(p.lb[i]) or np.isfinite(p.ub[i]):
            out.append(f"bound {i} {float(p.lb[i])!r} {float(p.ub[i])!r}")
    acoo = p.A.tocoo()
    rows: dict[int, list[tuple[int, float]]] = {}
    for r, cl, v in zip(acoo.row, acoo.col, acoo.data):
        rows.setdefault(int(r), []).append((int(cl), float(v)))
    for r in range(p.A.shape[0]):
        terms = " ".join(f"{i} {float(v)!r}" for i, v in sorted(rows.get(r, [])))
        out.append(f"eq {float(p.b[r])!r} {terms}".rstrip())
    for block in p.nonneg:
        out.append("nonneg " + " ".join(map(str, block)))
    for block in p.soc:
        out.append("soc " + " ".join(map(str, block)))
    if mp.binary:
        out.append("binary " + " ".join(map(str, mp.binary)))
    out.append("end")
    return "\n".join(out) + "\n"


def load_program(text: str) -> MixedConicProgram:
    n = 0
    const = 0.0
    obj: dict[int, float] = {}
    bounds: dict[int, tuple[float, float]] = {}
    eqs: list[tuple[float, list[tuple[int, float]]]] = []
    nonneg, soc, binary = [], [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0] == "socp":
            continue
        kw = parts[0]
        if kw == "vars":
            n = int(parts[1])
        elif kw == "const":
            const = float(parts[1])
        elif kw == "obj":
            obj[int(parts[1])] = float(parts[2])
        elif kw == "bound":
            bounds[int(parts[1])] = (float(parts[2]), float(parts[3]))
        elif kw == "eq":
            rhs = float(parts[1])
            terms = [(int(parts[i]), float(parts[i + 1])) for i in range(2, len(parts), 2)]
            eqs.append((rhs, terms))
        elif kw == "nonneg":
            nonneg.append([int(v) for v in parts[1:]])
        elif kw == "soc":
            soc.append([int(v) for v in parts[1:]])
        elif kw == "binary":
            binary = [int(v) for v in parts[1:]]
        elif kw == "end":
            break
        else:
            raise ValidationError(f"unknown record {kw!r} in program dump")
    c = np.zeros(n)
    for i, v in obj.items():
        c[i] = v
    lb = np.full(n, -INF)
    ub = np.full(n, INF)
    for i, (lo, hi) in bounds.items():
        lb[i], ub[i] = lo, hi
    rows, cols, vals = [], [], []
    b = []
    for r, (rhs, terms) in enumerate(eqs):
        b.append(rhs)
        for i, v in terms:
            rows.append(r); cols.append(i); vals.append(v)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(eqs), n))
    prog = ConicProgram(n, c, A, np.array(b), nonneg=nonneg, soc=soc,
                        lb=lb, ub=ub, obj_const=const)
    return MixedConicProgram(prog, binary)
