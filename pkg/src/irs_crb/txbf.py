"""Transmit-covariance half-step: minimize the max CRB over ``R_s`` with the
reflection coefficients fixed.

With every ``psi_l`` fixed, each FIM is linear in its own ``R_{s,l}`` and the
IRS power constraint is affine in it, so the subproblem is convex. The max
over IRSs is smoothed by a log-sum-exp whose temperature is annealed down to
a negligible fraction of the current max.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import convexsolver as cs
from .fim import AffineFim, crb, herm, tx_affine_fim
from .scenario import Scene, response_matrix


class InfeasiblePsi(ValueError):
    """Amplified IRS noise alone exceeds the IRS power budget."""


class DegeneratePsi(ValueError):
    """Some IRS has zero Fisher information for every covariance."""


@dataclass
class TxProblem:
    fims: list            # AffineFim per IRS, linear in R_{s,l}
    power_coeffs: list    # K_l with IRS power = Re tr(K_l R_l) + noise_l
    noise_power: list     # R_s-free part of the IRS power
    P_t: float
    P_s: float
    L: int
    M: int
    degenerate: bool = False

    def crbs(self, Rs) -> list:
        return [crb(f(R)) for f, R in zip(self.fims, Rs)]

    def max_crb(self, Rs) -> float:
        return max(self.crbs(Rs))

    def isotropic(self) -> list:
        """``(P_t / M) I`` scaled down if needed to satisfy every IRS cap."""
        R = self.P_t / self.M * np.eye(self.M, dtype=complex)
        c = 1.0
        for K, n in zip(self.power_coeffs, self.noise_power):
            used = float(np.real(np.trace(K @ R)))
            if used > 0 and n + used > self.P_s:
                c = min(c, (self.P_s - n) / used)
        return [c * R for _ in range(self.L)]

    def violation(self, Rs) -> float:
        v = max(0.0, sum(np.trace(R).real for R in Rs) / self.L - self.P_t)
        for K, n, R in zip(self.power_coeffs, self.noise_power, Rs):
            v = max(v, np.real(np.trace(K @ R)) + n - self.P_s)
            v = max(v, -np.linalg.eigvalsh(herm(R))[0])
        return float(v)


def irs_power_split(psi, ch, tp, cfg):
    """``(K, noise)`` with IRS power ``= Re tr(K R_s) + noise``."""
    psi = np.asarray(psi, dtype=complex)
    G = ch.G
    E = response_matrix(tp, cfg)
    Psi = np.diag(psi)
    PEP = Psi @ E @ Psi
    K = G.conj().T @ (PEP.conj().T @ PEP + Psi.conj().T @ Psi) @ G
    s2 = cfg.sigma_r2
    noise = s2 * np.trace(PEP @ PEP.conj().T).real + 2 * s2 * np.sum(abs(psi) ** 2)
    return herm(K), float(noise)


def build_tx_problem(scene: Scene, psis, power_cap: bool = True) -> TxProblem:
    """Freeze ``psis`` and collect the per-IRS FIM maps and power caps.

    With ``power_cap=False`` the IRS power constraint is dropped (passive
    IRSs draw no amplifier power).
    """
    cfg = scene.cfg
    fims, Ks, noises = [], [], []
    degenerate = False
    for l in range(cfg.L):
        psi = np.asarray(psis[l], dtype=complex)
        ch, tp, bundle = scene.channels[l], scene.targets[l], scene.bundles[l]
        if np.max(np.abs(psi)) > cfg.a_max * (1 + 1e-9):
            raise InfeasiblePsi(f"IRS {l}: |psi| exceeds a_max")
        if power_cap:
            K, noise = irs_power_split(psi, ch, tp, cfg)
        else:
            K, noise = np.zeros((cfg.M, cfg.M), dtype=complex), 0.0
        if noise >= cfg.P_s:
            raise InfeasiblePsi(f"IRS {l}: noise power {noise:.3e} W exceeds P_s")
        fim = tx_affine_fim(bundle, tp, ch, psi, cfg)
        if not np.any(psi):
            degenerate = True
        fims.append(fim)
        Ks.append(K)
        noises.append(noise)
    return TxProblem(fims, Ks, noises, cfg.P_t, cfg.P_s, cfg.L, cfg.M, degenerate)


def _lse_objective(prob: TxProblem, tau):
    def objective(Rs):
        vals, grads = [], []
        for f, R in zip(prob.fims, Rs):
            v, g = f.crb_objective(R)
            if g is None:
                return np.inf, None
            vals.append(v)
            grads.append(g)
        vals = np.array(vals)
        if len(vals) == 1:
            return float(vals[0]), grads
        m = vals.max()
        w = np.exp((vals - m) / tau)
        s = w.sum()
        return float(m + tau * np.log(s)), [wl / s * g for wl, g in zip(w, grads)]
    return objective


def tx_program(prob: TxProblem, tau) -> cs.PsdProgram:
    M, L = prob.M, prob.L
    cons = [cs.AffineConstraint([np.eye(M) / L] * L, prob.P_t)]
    for l, (K, n) in enumerate(zip(prob.power_coeffs, prob.noise_power)):
        if not np.any(K):
            continue
        coeffs = [None] * L
        coeffs[l] = K
        cons.append(cs.AffineConstraint(coeffs, prob.P_s - n))
    return cs.PsdProgram(dims=[M] * L, objective=_lse_objective(prob, tau), constraints=cons,
                         names=[f"R_s{l}" for l in range(L)],
                         anchor=[np.zeros((M, M), dtype=complex)] * L,
                         fims=list(enumerate(prob.fims)))


def solve_tx(prob: TxProblem, solver=None, warm_start=None,
             anneal=(1e-2, 1e-3, 1e-4, 1e-5), **solver_kw):
    """Minimize the max CRB over the transmit covariances.

    Returns ``(Rs, max_crb)``. The warm start is kept whenever the solver
    does not improve on it.
    """
    if prob.degenerate:
        raise DegeneratePsi("zero reflection coefficients make some CRB infinite")
    solver = solver or cs.solve
    start = warm_start if warm_start is not None else prob.isotropic()
    start = [herm(np.asarray(R, dtype=complex)) for R in start]
    best, best_val = start, prob.max_crb(start) if prob.violation(start) <= 1e-9 * max(prob.P_t, 1) else np.inf
    x = start
    # a backend that handles the max exactly needs no smoothing
    exact = getattr(solver, "exact_max", False)
    stages = anneal if prob.L > 1 and not exact else (None,)
    for rel in stages:
        cur = prob.max_crb(x)
        tau = rel * cur if (rel is not None and np.isfinite(cur)) else 1.0
        rep = solver(tx_program(prob, tau), x0=x, **solver_kw)
        x = rep.solution
        val = prob.max_crb(x)
        if val < best_val and prob.violation(x) <= 1e-7 * max(prob.P_t, prob.P_s, 1):
            best, best_val = x, val
    return best, best_val
