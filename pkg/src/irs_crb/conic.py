"""Interior-point backend for max-CRB programs.

Hands a :class:`~irs_crb.convexsolver.PsdProgram` whose objective is
``max_k tr(F_k(X_{v_k})^{-1})`` (the ``fims`` field) to Clarabel in epigraph
form::

    minimize  kappa
    s.t.      [[D F_k D, I], [I, U_k]] >= 0,  sum_p d_p^2 [U_k]_pp <= kappa
              X_v >= 0, diag caps, affine constraints

The Schur complement gives ``U_k >= (D F_k D)^{-1}``, so at the optimum
``sum_p d_p^2 [U_k]_pp = tr(F_k^{-1})``. ``D`` is a diagonal Jacobi scaling
taken at the starting point. Complex Hermitian variables are represented by
their real ``2n x 2n`` embedding.

The call signature matches :func:`irs_crb.convexsolver.solve`, so either
engine can be passed wherever a ``solver`` is accepted.
"""
from __future__ import annotations

import logging

import clarabel
import numpy as np
from scipy import sparse

from . import convexsolver as cs
from .fim import crb

log = logging.getLogger(__name__)

_SQ2 = np.sqrt(2.0)
_METHOD = "faer"


def herm_coeffs(C) -> np.ndarray:
    """Vector ``c`` with ``Re tr(C X) = c @ x`` for the real parameters of X.

    Parameters are ordered as diagonal, then ``Re X_ab`` and ``Im X_ab`` for
    ``a < b`` in ``triu_indices`` order.
    """
    C = np.asarray(C, dtype=complex)
    n = C.shape[0]
    iu = np.triu_indices(n, 1)
    Cu = C[iu]
    Cl = C.T[iu]  # C_ba
    return np.concatenate([np.real(np.diag(C)), np.real(Cu + Cl), np.real(1j * (Cl - Cu))])


def unpack_herm(x, n) -> np.ndarray:
    iu = np.triu_indices(n, 1)
    k = len(iu[0])
    X = np.diag(x[:n]).astype(complex)
    X[iu] = x[n:n + k] + 1j * x[n + k:n + 2 * k]
    X[iu[1], iu[0]] = np.conj(X[iu])
    return X


def pack_herm(X) -> np.ndarray:
    n = X.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.real(np.diag(X)), np.real(X[iu]), np.imag(X[iu])])


def _svec_index(m):
    """Row offsets of the upper triangle, stacked by columns."""
    idx = -np.ones((m, m), dtype=int)
    k = 0
    for j in range(m):
        for i in range(j + 1):
            idx[i, j] = idx[j, i] = k
            k += 1
    return idx


class _Rows:
    """Accumulates ``A x + s = b`` in COO form, one cone at a time."""

    def __init__(self, nvar):
        self.nvar = nvar
        self.r, self.c, self.v = [], [], []
        self.b = []
        self.cones = []
        self.m = 0

    def add(self, rows, cols, vals, b, cone):
        self.r.append(np.asarray(rows, dtype=int) + self.m)
        self.c.append(np.asarray(cols, dtype=int))
        self.v.append(np.asarray(vals, dtype=float))
        self.b.append(np.asarray(b, dtype=float))
        self.cones.append(cone)
        self.m += len(b)

    def matrices(self):
        A = sparse.csc_matrix((np.concatenate(self.v), (np.concatenate(self.r),
                                                         np.concatenate(self.c))),
                              shape=(self.m, self.nvar))
        return A, np.concatenate(self.b)


def _herm_psd_block(n, off):
    """COO entries of ``-svec(embed(X))`` for the parameters at ``off``."""
    m = 2 * n
    idx = _svec_index(m)
    rows, cols, vals = [], [], []

    def put(i, j, col, val):
        scale = 1.0 if i == j else _SQ2
        rows.append(idx[i, j])
        cols.append(col)
        vals.append(-scale * val)

    for i in range(n):
        put(i, i, off + i, 1.0)
        put(n + i, n + i, off + i, 1.0)
    iu = np.triu_indices(n, 1)
    k = len(iu[0])
    for t, (a, b) in enumerate(zip(*iu)):
        cr = off + n + t
        ci = off + n + k + t
        put(a, b, cr, 1.0)
        put(n + a, n + b, cr, 1.0)
        put(a, n + b, ci, -1.0)
        put(b, n + a, ci, 1.0)
    return rows, cols, vals, m * (m + 1) // 2


def _reference_diag(fim, X):
    d = np.diag(fim(X))
    if np.all(d > 0) and np.all(np.isfinite(d)):
        return d
    n = X.shape[0]
    d = np.diag(fim(np.eye(n) * max(1.0, np.real(np.trace(X)) / n)))
    return np.where(d > 0, d, 1.0)


def solve(prog: cs.PsdProgram, tol: float = 1e-8, max_iter: int = 200, x0=None,
          rng=None, **_ignored) -> cs.SolveReport:
    """Solve ``prog`` with Clarabel; requires ``prog.fims``."""
    if not prog.fims:
        raise ValueError("conic backend needs the structured max-CRB objective (prog.fims)")
    dims = list(prog.dims)
    offs = np.concatenate([[0], np.cumsum([n * n for n in dims])]).astype(int)
    nx = int(offs[-1])
    K = len(prog.fims)
    u_idx = np.triu_indices(4)
    nu = len(u_idx[0])
    u_off = nx
    kap = nx + K * nu
    nvar = kap + 1
    if x0 is None:
        x0 = [np.eye(n, dtype=complex) * (1.0 if cap is None else float(np.min(cap)))
              for n, cap in zip(dims, prog.diag_caps)]
    x0 = [cs.herm(np.asarray(X, dtype=complex)) for X in x0]

    rows = _Rows(nvar)
    # equality constraints first (zero cone), then inequalities
    eq = [c for c in prog.constraints if c.sense == "=="]
    ineq = [c for c in prog.constraints if c.sense == "<="]

    def affine_row(con):
        cols, vals = [], []
        for v, C in enumerate(con.coeffs):
            if C is None:
                continue
            cv = herm_coeffs(C)
            cols.append(np.arange(offs[v], offs[v + 1]))
            vals.append(cv)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        nrm = max(np.linalg.norm(vals), 1e-300)
        return cols, vals / nrm, con.bound / nrm

    if eq:
        for con in eq:
            cols, vals, b = affine_row(con)
            rows.add(np.zeros(len(cols)), cols, vals, [b], clarabel.ZeroConeT(1))
    lin_r, lin_c, lin_v, lin_b = [], [], [], []
    for con in ineq:
        cols, vals, b = affine_row(con)
        lin_r.append(np.full(len(cols), len(lin_b)))
        lin_c.append(cols)
        lin_v.append(vals)
        lin_b.append(b)
    for v, (n, cap) in enumerate(zip(dims, prog.diag_caps)):
        if cap is None:
            continue
        caps = np.broadcast_to(np.asarray(cap, dtype=float), (n,))
        for i in range(n):
            lin_r.append(np.array([len(lin_b)]))
            lin_c.append(np.array([offs[v] + i]))
            lin_v.append(np.array([1.0]))
            lin_b.append(caps[i])

    # epigraph rows: sum_p w_kp U_kpp - kappa <= 0
    ref_vals = []
    weights = []
    for k, (v, fim) in enumerate(prog.fims):
        d = 1.0 / np.sqrt(_reference_diag(fim, x0[v]))
        weights.append(d)
        ref_vals.append(crb(fim(x0[v])))
    finite = [r for r in ref_vals if np.isfinite(r) and r > 0]
    cscale = max(finite) if finite else 1.0
    for k in range(K):
        w = weights[k] ** 2 / cscale
        diag_pos = [t for t, (i, j) in enumerate(zip(*u_idx)) if i == j]
        cols = [u_off + k * nu + t for t in diag_pos] + [kap]
        lin_r.append(np.full(len(cols), len(lin_b)))
        lin_c.append(np.array(cols))
        lin_v.append(np.concatenate([w, [-1.0]]))
        lin_b.append(0.0)
    rows.add(np.concatenate(lin_r), np.concatenate(lin_c), np.concatenate(lin_v), lin_b,
             clarabel.NonnegativeConeT(len(lin_b)))

    for v, n in enumerate(dims):
        r, c, val, size = _herm_psd_block(n, offs[v])
        rows.add(r, c, val, np.zeros(size), clarabel.PSDTriangleConeT(2 * n))

    idx8 = _svec_index(8)
    for k, (v, fim) in enumerate(prog.fims):
        d = weights[k]
        b = np.zeros(36)
        r, c, val = [], [], []
        for p in range(4):
            for q in range(p, 4):
                s = 1.0 if p == q else _SQ2
                row = idx8[p, q]
                b[row] = s * d[p] * d[q] * fim.F0[p, q]
                cv = herm_coeffs(fim.B[p, q])
                nz = np.nonzero(cv)[0]
                r.append(np.full(len(nz), row))
                c.append(offs[v] + nz)
                val.append(-s * d[p] * d[q] * cv[nz])
        for p in range(4):
            b[idx8[p, 4 + p]] = _SQ2  # identity block, off-diagonal
        for t, (i, j) in enumerate(zip(*u_idx)):
            s = 1.0 if i == j else _SQ2
            r.append(np.array([idx8[4 + i, 4 + j]]))
            c.append(np.array([u_off + k * nu + t]))
            val.append(np.array([-s]))
        rows.add(np.concatenate(r), np.concatenate(c), np.concatenate(val), b,
                 clarabel.PSDTriangleConeT(8))

    A, b = rows.matrices()
    q = np.zeros(nvar)
    q[kap] = 1.0
    P = sparse.csc_matrix((nvar, nvar))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.direct_solve_method = _METHOD
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    solver = clarabel.DefaultSolver(P, q, A, b, rows.cones, settings)
    sol = solver.solve()
    status_name = str(sol.status)
    x = np.asarray(sol.x)
    if "Infeasible" in status_name and "Almost" not in status_name:
        raise cs.Infeasible(f"conic backend: {status_name}")
    Xs = [unpack_herm(x[offs[v]:offs[v + 1]], n) for v, n in enumerate(dims)]
    Xs = [cs.proj_psd(X) for X in Xs]
    Xs = cs._polish(prog, Xs)
    obj = max(crb(f(Xs[v])) for v, f in prog.fims)
    viol = prog.violation(Xs)
    if status_name.endswith("Solved") and not status_name.startswith("Almost"):
        status = cs.Status.CONVERGED
    else:
        status = cs.Status.ITER_LIMIT
        log.debug("conic backend status %s", status_name)
    return cs.SolveReport(solution=Xs, objective=obj, iterations=int(sol.iterations),
                          stationarity=0.0 if status is cs.Status.CONVERGED else np.inf,
                          violation=viol, status=status)


solve.exact_max = True
