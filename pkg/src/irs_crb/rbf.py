"""Reflective beamforming half-step.

For one IRS with the transmit covariance fixed, the FIM trace terms are
bilinear forms in the lifted coefficient matrix ``Theta = psi psi^H``. Each
SCA iteration linearizes them (and the IRS power constraint) around the
current ``Theta``, solves the relaxed convex program without the rank-one
constraint, and recovers a coefficient vector by Gaussian randomization
checked against the exact constraint and the exact CRB.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import convexsolver as cs
from .fim import (AffineFim, assemble_fim, crb, fim_closed_form, herm, noise_covariance,
                  _inv_pd)
from .scenario import Channel, ScenarioConfig, SteeringBundle, TargetParams, irs_power_used

log = logging.getLogger(__name__)

Q_KEYS = ("tt", "pp", "tp", "tb", "pb", "bb")


class NoFeasibleCandidate(RuntimeError):
    pass


def _t(X, Theta):
    """tr(X Theta)"""
    return np.sum(X.T * Theta)


def _tT(X, Theta):
    """tr(X Theta^T)"""
    return np.sum(X * Theta)


@dataclass
class ScaState:
    """Frozen quantities of one SCA iteration for a single IRS.

    ``R_w`` (hence ``R2``) is evaluated at the base point and held constant.
    """

    bundle: SteeringBundle
    tp: TargetParams
    ch: Channel
    R_s: np.ndarray
    Theta0: np.ndarray
    cfg: ScenarioConfig
    iteration: int = 0
    last_crb: float = np.inf
    R1: np.ndarray = field(init=False, repr=False)
    R2: np.ndarray = field(init=False, repr=False)
    Zt: np.ndarray = field(init=False, repr=False)
    Zp: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        G = self.ch.G
        A = np.diag(self.bundle.a)
        self.A = A
        self.Theta0 = herm(np.asarray(self.Theta0, dtype=complex))
        psi_mag = np.sqrt(np.clip(np.real(np.diag(self.Theta0)), 0, None))
        # R_w depends on Theta only through its diagonal
        R_w = noise_covariance(self.ch, psi_mag, self.cfg)
        self.R_w_inv = _inv_pd(R_w)
        self.R1 = herm(A @ G @ self.R_s @ G.conj().T @ A.conj().T)
        self.R2 = herm(A.conj().T @ G.conj() @ self.R_w_inv @ G.T @ A)
        self.Zt = np.diag(self.bundle.zeta_theta)
        self.Zp = np.diag(self.bundle.zeta_phi)
        self.GRG = G @ self.R_s @ G.conj().T

    @classmethod
    def from_psi(cls, psi, bundle, tp, ch, R_s, cfg, **kw):
        psi = np.asarray(psi, dtype=complex)
        return cls(bundle, tp, ch, np.asarray(R_s, dtype=complex),
                   np.outer(psi, psi.conj()), cfg, **kw)


def q_terms(Theta, st: ScaState) -> dict:
    """The six FIM trace terms as bilinear forms in ``Theta``."""
    R1, R2, Zt, Zp = st.R1, st.R2, st.Zt, st.Zp
    Zth, Zph = Zt.conj().T, Zp.conj().T
    tT = lambda X: _tT(X, Theta)  # noqa: E731
    t = lambda X: _t(X, Theta)  # noqa: E731
    return {
        "tt": (tT(R1) * t(Zth @ R2 @ Zt) + tT(Zt @ R1) * t(Zth @ R2)
               + tT(R1 @ Zth) * t(R2 @ Zt) + tT(Zt @ R1 @ Zth) * t(R2)),
        "pp": (tT(R1) * t(Zph @ R2 @ Zp) + tT(Zp @ R1) * t(Zph @ R2)
               + tT(R1 @ Zph) * t(R2 @ Zp) + tT(Zp @ R1 @ Zph) * t(R2)),
        "tp": (tT(R1) * t(Zth @ R2 @ Zp) + tT(Zp @ R1) * t(Zth @ R2)
               + tT(R1 @ Zth) * t(R2 @ Zp) + tT(Zp @ R1 @ Zth) * t(R2)),
        "tb": tT(R1) * t(Zth @ R2) + tT(R1 @ Zth) * t(R2),
        "pb": tT(R1) * t(Zph @ R2) + tT(R1 @ Zph) * t(R2),
        "bb": tT(R1) * t(R2),
    }


def q_gradients(Theta, st: ScaState) -> dict:
    """Holomorphic derivatives ``d Q / d Theta`` (R_w held constant).

    Each is the matrix ``D`` with ``Q(Theta + dT) ~ Q(Theta) + tr(D^T dT)``.
    """
    R1, R2, Zt, Zp = st.R1, st.R2, st.Zt, st.Zp
    Zth, Zph = Zt.conj().T, Zp.conj().T
    tT = lambda X: _tT(X, Theta)  # noqa: E731
    t = lambda X: _t(X, Theta)  # noqa: E731
    R2T = R2.T

    def sq(Zh, W):
        # derivative of the four-product form shared by the (tt, pp, tp) terms
        return (t(Zh @ R2 @ W) * R1 + tT(R1) * W.T @ R2T @ Zh.T
                + t(Zh @ R2) * W @ R1 + tT(W @ R1) * R2T @ Zh.T
                + t(R2 @ W) * R1 @ Zh + tT(R1 @ Zh) * W.T @ R2T
                + t(R2) * W @ R1 @ Zh + tT(W @ R1 @ Zh) * R2T)

    def cross(Zh):
        return (t(Zh @ R2) * R1 + tT(R1) * R2T @ Zh.T
                + t(R2) * R1 @ Zh + tT(R1 @ Zh) * R2T)

    return {
        "tt": sq(Zth, Zt),
        "pp": sq(Zph, Zp),
        "tp": sq(Zth, Zp),
        "tb": cross(Zth),
        "pb": cross(Zph),
        "bb": t(R2) * R1 + tT(R1) * R2T,
    }


def lifted_fim(Theta, st: ScaState) -> np.ndarray:
    """FIM at ``Theta`` with ``R_w`` frozen at the base point."""
    q = q_terms(Theta, st)
    return assemble_fim(2 * st.cfg.T_c / st.cfg.L, st.tp.beta, *(q[k] for k in Q_KEYS))


def surrogate_affine(st: ScaState) -> AffineFim:
    """First-order expansion of the lifted FIM around ``st.Theta0``."""
    T0 = st.Theta0
    q0 = q_terms(T0, st)
    g0 = q_gradients(T0, st)
    k = 2 * st.cfg.T_c / st.cfg.L
    beta = st.tp.beta
    b2 = abs(beta) ** 2
    cb = np.conj(beta)
    N = T0.shape[0]
    F0 = np.zeros((4, 4))
    B = np.zeros((4, 4, N, N), dtype=complex)

    def put(p, q, weight, key):
        D = g0[key].T
        c = weight * (q0[key] - np.trace(D @ T0))
        F0[p, q] = F0[q, p] = np.real(c)
        B[p, q] = B[q, p] = herm(weight * D)

    put(0, 0, k * b2, "tt")
    put(1, 1, k * b2, "pp")
    put(0, 1, k * b2, "tp")
    put(0, 2, k * cb, "tb")
    put(0, 3, 1j * k * cb, "tb")
    put(1, 2, k * cb, "pb")
    put(1, 3, 1j * k * cb, "pb")
    put(2, 2, k, "bb")
    put(3, 3, k, "bb")
    return AffineFim(F0, B)


def surrogate_fim(Theta, st: ScaState) -> np.ndarray:
    return surrogate_affine(st)(Theta)


# ----------------------------------------------------------------------
# IRS power constraint in the lifted variable
# ----------------------------------------------------------------------

def power_terms(Theta, st: ScaState):
    """The two quadratic power terms ``tr(A^H A Theta) tr(R1 Theta^T)`` and
    ``tr(A^H A Theta)^2``."""
    AA = st.A.conj().T @ st.A
    trA = _t(AA, Theta)
    return trA * _tT(st.R1, Theta), trA ** 2


def power_gradients(Theta, st: ScaState):
    AA = st.A.conj().T @ st.A
    trA = _t(AA, Theta)
    g1 = _tT(st.R1, Theta) * AA.T + trA * st.R1
    g2 = 2 * trA * AA.T
    return g1, g2


def linearized_power_affine(st: ScaState):
    """Return ``(W, c)`` such that the linearized C1 residual is
    ``Re tr(W Theta) + c`` (<= 0 when feasible)."""
    T0 = st.Theta0
    s2 = st.cfg.sigma_r2
    b2 = abs(st.tp.beta) ** 2
    q1, q2 = power_terms(T0, st)
    g1, g2 = power_gradients(T0, st)
    D1, D2 = g1.T, g2.T
    W = b2 * D1 + s2 * b2 * D2 + np.diag(np.diag(st.GRG)) + 2 * s2 * np.eye(T0.shape[0])
    c = (b2 * (q1 - np.trace(D1 @ T0)) + s2 * b2 * (q2 - np.trace(D2 @ T0))
         - st.cfg.P_s)
    return herm(W), float(np.real(c))


def linearized_power_constraint(Theta, st: ScaState) -> float:
    W, c = linearized_power_affine(st)
    return float(np.real(np.trace(W @ Theta))) + c


# ----------------------------------------------------------------------
# SDR solve, randomization, SCA loop
# ----------------------------------------------------------------------

def build_sdr_program(st: ScaState, a_max: float, power_cap: bool = True) -> cs.PsdProgram:
    fim = surrogate_affine(st)
    N = st.Theta0.shape[0]
    cons = []
    if power_cap:
        W, c = linearized_power_affine(st)
        cons.append(cs.AffineConstraint([W], -c))
    prog = cs.PsdProgram(
        dims=[N],
        objective=lambda Xs: _wrap(fim.crb_objective(Xs[0])),
        constraints=cons,
        diag_caps=[a_max ** 2],
        names=["Theta"],
        anchor=[np.zeros((N, N), dtype=complex)],
        fims=[(0, fim)],
    )
    return prog


def _wrap(res):
    val, g = res
    return val, None if g is None else [g]


def solve_sdr(st: ScaState, solver=None, a_max=None, power_cap=True, **kw) -> np.ndarray:
    """Solve the relaxed surrogate program; returns ``Theta*``."""
    a_max = st.cfg.a_max if a_max is None else a_max
    solver = solver or cs.solve
    prog = build_sdr_program(st, a_max, power_cap)
    rep = solver(prog, x0=[st.Theta0], **kw)
    if rep.status is cs.Status.INFEASIBLE:
        raise cs.Infeasible("surrogate program infeasible")
    f_base, _ = prog.objective([st.Theta0])
    Theta = rep.solution[0]
    if not rep.objective <= f_base:
        Theta = st.Theta0
    return herm(Theta)


def power_scale_to_budget(psi, R_s, ch, tp, cfg, budget=None) -> float:
    """Largest ``c in [0, 1]`` with ``irs_power_used(c psi) <= budget``.

    The power is ``c^2 (t3 + t4) + c^4 (t1 + t2)`` so it is increasing in c.
    """
    budget = cfg.P_s if budget is None else budget
    if irs_power_used(psi, R_s, ch, tp, cfg) <= budget:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if irs_power_used(mid * psi, R_s, ch, tp, cfg) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def exact_crb(psi, bundle, tp, ch, R_s, cfg) -> float:
    return crb(fim_closed_form(bundle, tp, ch, psi, R_s, cfg))


def feasible(psi, R_s, ch, tp, cfg, a_max=None, rtol=1e-9) -> bool:
    a_max = cfg.a_max if a_max is None else a_max
    if np.max(np.abs(psi)) > a_max * (1 + rtol):
        return False
    return irs_power_used(psi, R_s, ch, tp, cfg) <= cfg.P_s * (1 + rtol)


def psd_sqrt(Theta):
    w, V = np.linalg.eigh(herm(Theta))
    return (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T


def gaussian_randomize(Theta_star, n_rand, rng, is_feasible, evaluate, incumbent,
                       a_max, rescale=None, unit_modulus=False):
    """Recover a coefficient vector from a relaxed solution.

    Parameters
    ----------
    is_feasible, evaluate : callable
        Exact C1 check and exact CRB of a candidate ``psi``.
    incumbent : ndarray
        Returned unchanged if no candidate is feasible and strictly better.
    rescale : callable, optional
        ``psi -> c`` giving the amplitude factor that restores C1 equality.
    unit_modulus : bool
        Project candidates elementwise onto ``|psi_n| = 1`` (passive IRS).

    Returns
    -------
    psi, crb
    """
    if n_rand < 1:
        raise ValueError("n_rand must be >= 1")
    best = np.asarray(incumbent, dtype=complex)
    inc_ok = is_feasible(best)
    best_val = evaluate(best) if inc_ok else np.inf
    root = psd_sqrt(Theta_star)
    N = root.shape[0]
    for _ in range(n_rand):
        r = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) / np.sqrt(2)
        psi = root @ r
        mags = np.abs(psi)
        if unit_modulus:
            psi = np.where(mags > 0, psi / np.where(mags > 0, mags, 1), 1.0)
        elif mags.max() > a_max:
            psi = a_max * psi / mags.max()
        if not is_feasible(psi):
            if rescale is None:
                continue
            psi = rescale(psi) * psi
            if not is_feasible(psi):
                continue
        val = evaluate(psi)
        if val < best_val:
            best, best_val = psi, val
    if not np.isfinite(best_val) and not inc_ok:
        raise NoFeasibleCandidate("no feasible candidate and incumbent infeasible")
    return best, best_val


def random_feasible_psi(rng, R_s, ch, tp, cfg, a_max=None) -> np.ndarray:
    """Uniform phases with the common amplitude at C1 equality (at most a_max)."""
    a_max = cfg.a_max if a_max is None else a_max
    psi = a_max * np.exp(1j * rng.uniform(-np.pi, np.pi, cfg.N))
    return power_scale_to_budget(psi, R_s, ch, tp, cfg) * psi


@dataclass
class ScaResult:
    psi: np.ndarray
    crb: float
    crb_trace: list
    iterations: int


def sca_loop(psi0, bundle, tp, ch, R_s, cfg, solver=None, max_sca=15, tol=1e-3,
             n_rand=200, rng=None, passive=False, solver_kw=None) -> ScaResult:
    """SCA over the lifted variable for one IRS; never returns a worse CRB."""
    rng = rng if rng is not None else np.random.default_rng(0)
    solver_kw = solver_kw or {}
    R_s = np.asarray(R_s, dtype=complex)
    a_max = 1.0 if passive else cfg.a_max
    if passive:
        def ok(p):
            return np.all(np.abs(np.abs(p) - 1) < 1e-9)
        rescale = None
    else:
        def ok(p):
            return feasible(p, R_s, ch, tp, cfg)

        def rescale(p):
            return power_scale_to_budget(p, R_s, ch, tp, cfg)

    def evaluate(p):
        return exact_crb(p, bundle, tp, ch, R_s, cfg)

    psi = np.asarray(psi0, dtype=complex)
    cur = evaluate(psi)
    trace = [cur]
    it = 0
    for it in range(1, max_sca + 1):
        st = ScaState.from_psi(psi, bundle, tp, ch, R_s, cfg, iteration=it, last_crb=cur)
        try:
            Theta = solve_sdr(st, solver, a_max=a_max, power_cap=not passive, **solver_kw)
        except (cs.Infeasible, np.linalg.LinAlgError) as exc:
            log.warning("SDR step failed at SCA iteration %d: %s", it, exc)
            break
        new_psi, new = gaussian_randomize(Theta, n_rand, rng, ok, evaluate, psi, a_max,
                                          rescale=rescale, unit_modulus=passive)
        trace.append(min(new, cur))
        if not new < cur:
            break
        improvement = (cur - new) / cur if np.isfinite(cur) else np.inf
        psi, cur = new_psi, new
        if improvement < tol:
            break
    return ScaResult(psi=psi, crb=cur, crb_trace=trace, iterations=it)
