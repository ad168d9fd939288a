"""Small convex programs over Hermitian PSD matrix variables.

Minimizes a smooth convex objective of one or more Hermitian matrices subject
to ``X >= 0``, optional diagonal caps and real affine constraints
``sum_v Re tr(C_v X_v) (<= | ==) b``. The engine is accelerated projected
gradient with backtracking; the projection onto the feasible set is computed
with Dykstra's alternating projections (eigenvalue clipping for the PSD cone,
closed forms for everything else).

An alternative backend that hands the same program to an interior-point
conic solver through cvxpy is in :mod:`irs_crb.conic`.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    INFEASIBLE = "Infeasible"


class Infeasible(RuntimeError):
    pass


def herm(X):
    return 0.5 * (X + X.conj().T)


def inner(A, B) -> float:
    """Real inner product ``Re tr(A^H B)``."""
    return float(np.real(np.vdot(A, B)))


def proj_psd(X):
    w, V = np.linalg.eigh(herm(X))
    if w[0] >= 0:
        return herm(X)
    w = np.clip(w, 0, None)
    return (V * w) @ V.conj().T


@dataclass
class AffineConstraint:
    """``sum_v Re tr(coeffs[v] X_v) <= bound`` (or ``==``).

    ``coeffs`` holds one Hermitian matrix (or ``None``) per variable.
    """

    coeffs: list
    bound: float
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in ("<=", "=="):
            raise ValueError(f"bad constraint sense {self.sense!r}")
        self.coeffs = [None if c is None else herm(np.asarray(c, dtype=complex))
                       for c in self.coeffs]
        self._norm2 = sum(inner(c, c) for c in self.coeffs if c is not None)

    def value(self, Xs) -> float:
        return sum(inner(c, X) for c, X in zip(self.coeffs, Xs) if c is not None)

    def violation(self, Xs) -> float:
        r = self.value(Xs) - self.bound
        return abs(r) if self.sense == "==" else max(r, 0.0)

    def project(self, Xs):
        r = self.value(Xs) - self.bound
        if self._norm2 == 0 or (self.sense == "<=" and r <= 0):
            return Xs
        step = r / self._norm2
        return [X if c is None else X - step * c for c, X in zip(self.coeffs, Xs)]

    def scale(self) -> float:
        return max(1.0, abs(self.bound))


@dataclass
class PsdProgram:
    """Convex program over Hermitian PSD matrices.

    ``objective(Xs)`` returns ``(value, grads)`` where ``grads`` is a list of
    Hermitian gradient matrices w.r.t. the real inner product
    ``Re tr(A^H B)``; return ``(inf, None)`` outside the objective's domain.
    """

    dims: Sequence[int]
    objective: Callable
    constraints: list = field(default_factory=list)
    diag_caps: list | None = None
    names: list | None = None
    anchor: list | None = None  # strictly feasible point used to polish feasibility
    # optional structure: objective is max_k tr(F_k(X_{v_k})^-1) over (v_k, AffineFim)
    fims: list | None = None

    def __post_init__(self):
        if self.diag_caps is None:
            self.diag_caps = [None] * len(self.dims)
        if self.names is None:
            self.names = [f"X{i}" for i in range(len(self.dims))]

    def zeros(self):
        return [np.zeros((n, n), dtype=complex) for n in self.dims]

    def scale(self) -> float:
        s = [c.scale() for c in self.constraints]
        for cap in self.diag_caps:
            if cap is not None:
                s.append(float(np.max(cap)))
        return max(s, default=1.0)

    def violation(self, Xs) -> float:
        """Largest constraint violation, recomputed from scratch."""
        v = 0.0
        for X in Xs:
            Xh = herm(X)
            v = max(v, float(np.linalg.norm(X - Xh)), max(0.0, -np.linalg.eigvalsh(Xh)[0]))
        for cap, X in zip(self.diag_caps, Xs):
            if cap is not None:
                v = max(v, float(np.max(np.real(np.diag(X)) - cap)))
        for c in self.constraints:
            v = max(v, c.violation(Xs))
        return v


@dataclass
class SolveReport:
    solution: list
    objective: float
    iterations: int
    stationarity: float
    violation: float
    status: Status
    history: list = field(default_factory=list)


def _proj_diag_caps(Xs, caps):
    out = []
    for X, cap in zip(Xs, caps):
        if cap is None:
            out.append(X)
            continue
        d = np.real(np.diag(X))
        over = d - np.minimum(d, cap)
        if np.any(over > 0):
            X = X - np.diag(over)
        out.append(X)
    return out


def project(prog: PsdProgram, Xs, tol=1e-10, max_iter=500):
    """Euclidean projection onto the feasible set (Dykstra).

    Returns ``(point, residual)``; the point is exactly PSD, the residual is
    the largest violation of the remaining constraints. If the iteration
    budget runs out and ``prog.anchor`` is set, the point is moved toward the
    anchor until feasible.
    """
    ops = [lambda Y: [proj_psd(X) for X in Y]]
    if any(c is not None for c in prog.diag_caps):
        ops.append(lambda Y: _proj_diag_caps(Y, prog.diag_caps))
    for c in prog.constraints:
        ops.append(c.project)
    x = [herm(np.asarray(X, dtype=complex)) for X in Xs]
    if len(ops) == 1:
        return ops[0](x), 0.0
    incr = [[np.zeros_like(X) for X in x] for _ in ops]
    scale = prog.scale()
    res = np.inf
    for _ in range(max_iter):
        moved = 0.0
        for k, op in enumerate(ops):
            z = [X + P for X, P in zip(x, incr[k])]
            y = op(z)
            incr[k] = [Z - Y for Z, Y in zip(z, y)]
            moved = max(moved, max(float(np.max(np.abs(Y - X))) for X, Y in zip(x, y)))
            x = y
        # x is the last op's output; PSD projection gives an exactly PSD point
        xp = ops[0](x)
        res = _residual(prog, xp)
        if res <= tol * scale and moved <= tol * max(scale, 1.0):
            return xp, res
        if moved == 0.0:
            break
    xp = ops[0](x)
    # Dykstra is sublinear near low-rank boundary points; finish by pulling
    # toward the interior anchor so the returned point is feasible
    xp = _polish(prog, xp)
    return xp, _residual(prog, xp)


def _residual(prog, Xs):
    v = 0.0
    for cap, X in zip(prog.diag_caps, Xs):
        if cap is not None:
            v = max(v, float(np.max(np.real(np.diag(X)) - cap)))
    for c in prog.constraints:
        v = max(v, c.violation(Xs))
    return v


def _polish(prog, Xs):
    """Pull a nearly-feasible PSD point toward the anchor until it is feasible."""
    if prog.anchor is None or _residual(prog, Xs) == 0.0:
        return Xs
    A = prog.anchor
    t_need = 0.0
    for c in prog.constraints:
        if c.sense != "<=":
            continue
        vx, va = c.value(Xs) - c.bound, c.value(A) - c.bound
        if vx > 0 and va < 0:
            t_need = max(t_need, vx / (vx - va))
    for cap, X, Y in zip(prog.diag_caps, Xs, A):
        if cap is None:
            continue
        dx = np.real(np.diag(X)) - cap
        da = np.real(np.diag(Y)) - cap
        m = (dx > 0) & (da < 0)
        if np.any(m):
            t_need = max(t_need, float(np.max(dx[m] / (dx[m] - da[m]))))
    if t_need == 0.0:
        return Xs
    t = min(1.0, t_need * (1 + 1e-9) + 1e-15)
    return [(1 - t) * X + t * Y for X, Y in zip(Xs, A)]


def feasibility_presolve(prog: PsdProgram, start=None, max_iter=500):
    """Find a feasible point by alternating projections from a scaled identity."""
    if start is None:
        start = []
        for n, cap in zip(prog.dims, prog.diag_caps):
            c = 1.0 if cap is None else float(np.min(cap))
            start.append(c * np.eye(n, dtype=complex))
    if not prog.constraints and all(c is None for c in prog.diag_caps):
        return [herm(np.asarray(X, dtype=complex)) for X in start]
    x, res = project(prog, start, tol=1e-12, max_iter=max_iter)
    if res > 1e-6 * prog.scale():
        raise Infeasible(f"no feasible point found (residual {res:.3e})")
    return _polish(prog, x)


def _stationarity(prog, x, f, g, t):
    step = [X - t * G for X, G in zip(x, g)]
    p, _ = project(prog, step)
    gm = np.sqrt(sum(inner(P - X, P - X) for P, X in zip(p, x))) / t
    xn = np.sqrt(sum(inner(X, X) for X in x))
    return gm * max(xn, 1e-300) / max(abs(f), 1e-300)


def solve(prog: PsdProgram, tol: float = 1e-6, max_iter: int = 5000, x0=None,
          rng: np.random.Generator | None = None, dykstra_iter: int = 500,
          check_every: int = 10) -> SolveReport:
    """Accelerated projected gradient on ``prog``.

    The stationarity residual is the gradient-mapping norm made dimensionless
    by ``||X|| / |f(X)|``. The iterate sequence is monotone (restart on any
    increase) and the best feasible iterate is returned.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if x0 is None:
        x = feasibility_presolve(prog)
    else:
        x, res = project(prog, x0, max_iter=dykstra_iter)
        x = _polish(prog, x)
        if _residual(prog, x) > 1e-6 * prog.scale():
            x = feasibility_presolve(prog)
    f, g = prog.objective(x)
    restarts = 0
    while not np.isfinite(f) or g is None or all(inner(G, G) == 0 for G in g):
        # degenerate start: perturb inside the PSD cone
        restarts += 1
        if restarts > 20:
            return SolveReport(x, f, 0, np.inf, prog.violation(x), Status.ITER_LIMIT)
        pert = []
        for n in prog.dims:
            B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            pert.append(B @ B.conj().T / n)
        x, _ = project(prog, [X + 0.1 * P for X, P in zip(x, pert)], max_iter=dykstra_iter)
        x = _polish(prog, x)
        f, g = prog.objective(x)

    xn = np.sqrt(sum(inner(X, X) for X in x)) or 1.0
    gn = np.sqrt(sum(inner(G, G) for G in g)) or 1.0
    t = 0.1 * xn / gn
    x_prev, f_best, x_best = x, f, x
    theta = 1.0
    history = [f]
    stat = np.inf
    status = Status.ITER_LIMIT
    it = 0
    for it in range(1, max_iter + 1):
        # momentum point
        theta_next = 0.5 * (1 + np.sqrt(1 + 4 * theta ** 2))
        beta = (theta - 1) / theta_next
        y = [X + beta * (X - Xp) for X, Xp in zip(x, x_prev)]
        fy, gy = prog.objective(y)
        if not np.isfinite(fy) or gy is None:
            y, fy, gy, theta_next = x, f, g, 1.0
        while True:
            z, _ = project(prog, [Y - t * G for Y, G in zip(y, gy)], max_iter=dykstra_iter)
            fz, gz = prog.objective(z)
            d = [Z - Y for Z, Y in zip(z, y)]
            quad = fy + sum(inner(G, D) for G, D in zip(gy, d)) + sum(inner(D, D) for D in d) / (2 * t)
            if np.isfinite(fz) and fz <= quad + 1e-12 * abs(fy):
                break
            t *= 0.5
            if t < 1e-30:
                break
        if not np.isfinite(fz) or fz > f:
            # lost monotonicity: restart momentum from x
            theta = 1.0
            x_prev = x
            if y is x:
                # plain step from x failed to decrease: converged to tolerance
                stat = _stationarity(prog, x, f, g, t)
                status = Status.CONVERGED if stat < tol else Status.ITER_LIMIT
                break
            continue
        x_prev, x, f, g = x, z, fz, gz
        theta = theta_next
        history.append(f)
        if f < f_best:
            f_best, x_best = f, x
        t *= 1.5
        if it % check_every == 0:
            stat = _stationarity(prog, x, f, g, t)
            if stat < tol:
                status = Status.CONVERGED
                break
    x_best = _polish(prog, x_best)
    f_best, _ = prog.objective(x_best)
    viol = prog.violation(x_best)
    if status is Status.CONVERGED and viol > 1e-7 * prog.scale():
        status = Status.ITER_LIMIT
    return SolveReport(solution=x_best, objective=f_best, iterations=it,
                       stationarity=stat, violation=viol, status=status, history=history)
