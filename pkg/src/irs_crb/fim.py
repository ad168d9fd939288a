"""Fisher information for per-IRS DoA estimation and its CRB.

Parameters are ordered ``(theta, phi, Re beta, Im beta)``. Two independent
routes are provided: :func:`fim_closed_form` assembles the six trace blocks
directly, :func:`fim_oracle` differentiates the noiseless echo numerically
and applies the Gaussian-mean FIM formula. The latter never touches the
analytic steering derivatives.
"""
from __future__ import annotations

import numpy as np

from .scenario import (Channel, DimensionMismatch, ScenarioConfig, SteeringBundle,
                       TargetParams, steering_vector)

EPS_INV = 1e-14


class SingularNoiseCov(np.linalg.LinAlgError):
    pass


def herm(X):
    return 0.5 * (X + X.conj().T)


def noise_covariance(ch: Channel, psi, cfg: ScenarioConfig) -> np.ndarray:
    """``sigma_r^2 G^T Psi Psi^H G^* + sigma_b^2 I`` (first-stage IRS noise dropped)."""
    psi = np.asarray(psi, dtype=complex)
    GtP = ch.G.T * psi
    return herm(cfg.sigma_r2 * GtP @ GtP.conj().T + cfg.sigma_b2 * np.eye(ch.G.shape[1]))


def _inv_pd(R):
    w, V = np.linalg.eigh(R)
    if w[0] <= 0:
        raise SingularNoiseCov(f"noise covariance not positive definite (min eig {w[0]:.3e})")
    return herm((V / w) @ V.conj().T)


def fim_intermediates(bundle: SteeringBundle, ch: Channel, psi, cfg: ScenarioConfig):
    """Return ``(C_theta, C_phi, H, R_w, R_w_inv)``."""
    psi = np.asarray(psi, dtype=complex)
    G = ch.G
    if psi.shape != (G.shape[0],) or bundle.a.shape != psi.shape:
        raise DimensionMismatch("psi / steering / channel sizes disagree")
    a = bundle.a
    Pa = psi * a
    u = G.T @ Pa                                  # G^T Psi a
    v = Pa @ G                                    # a^T Psi G
    ut = G.T @ (psi * bundle.da_theta)
    vt = (psi * bundle.da_theta) @ G
    up = G.T @ (psi * bundle.da_phi)
    vp = (psi * bundle.da_phi) @ G
    C_theta = np.outer(ut, v) + np.outer(u, vt)
    C_phi = np.outer(up, v) + np.outer(u, vp)
    H = np.outer(u, v)
    R_w = noise_covariance(ch, psi, cfg)
    return C_theta, C_phi, H, R_w, _inv_pd(R_w)


def assemble_fim(scale, beta, t_tt, t_pp, t_tp, t_tb, t_pb, t_bb) -> np.ndarray:
    """Build the real 4x4 FIM from the six trace terms.

    ``scale`` is ``2 T_c / L``. The cross blocks carry ``conj(beta)`` because
    the theta/phi derivatives of the echo mean are proportional to ``beta``.
    """
    b2 = abs(beta) ** 2
    F = np.zeros((4, 4))
    F[0, 0] = b2 * np.real(t_tt)
    F[1, 1] = b2 * np.real(t_pp)
    F[0, 1] = F[1, 0] = b2 * np.real(t_tp)
    for row, t in ((0, t_tb), (1, t_pb)):
        z = np.conj(beta) * t
        F[row, 2] = F[2, row] = z.real
        F[row, 3] = F[3, row] = (1j * z).real
    F[2, 2] = F[3, 3] = np.real(t_bb)
    return scale * F


def fim_closed_form(bundle: SteeringBundle, tp: TargetParams, ch: Channel, psi, R_s,
                    cfg: ScenarioConfig) -> np.ndarray:
    C_t, C_p, H, _, Rinv = fim_intermediates(bundle, ch, psi, cfg)
    R_s = np.asarray(R_s)
    if R_s.shape != (ch.G.shape[1],) * 2:
        raise DimensionMismatch(f"R_s shape {R_s.shape}")

    def tr(X, Y):
        return np.trace(X.conj().T @ Rinv @ Y @ R_s)

    return assemble_fim(2 * cfg.T_c / cfg.L, tp.beta,
                        tr(C_t, C_t), tr(C_p, C_p), tr(C_t, C_p),
                        tr(C_t, H), tr(C_p, H), tr(H, H))


def oracle_symbols(R_s, T_L) -> np.ndarray:
    """Deterministic symbol block with sample covariance exactly ``R_s``.

    ``S = sqrt(T_L) R_s^{1/2} [I | 0]``; when ``T_L < M`` the zero padding is
    dropped (only ``S S^H = T_L R_s`` matters to the FIM).
    """
    w, V = np.linalg.eigh(herm(np.asarray(R_s, dtype=complex)))
    root = (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T
    M = root.shape[0]
    S = np.zeros((M, max(T_L, M)), dtype=complex)
    S[:, :M] = np.sqrt(T_L) * root
    return S


def fim_oracle(tp: TargetParams, ch: Channel, psi, R_s, cfg: ScenarioConfig,
               h: float = 1e-6, S=None) -> np.ndarray:
    """FIM from central finite differences of the echo mean.

    Uses ``F_pq = 2 Re(d eta^H R_y^{-1} d eta)`` with ``R_y = I (x) R_w``; the
    covariance term of the general Gaussian FIM vanishes because ``R_w`` does
    not depend on the parameters.
    """
    psi = np.asarray(psi, dtype=complex)
    G = ch.G
    if S is None:
        S = oracle_symbols(R_s, cfg.T_L)
    GS = G @ S
    R_w = noise_covariance(ch, psi, cfg)
    L_chol = np.linalg.cholesky(R_w)

    def eta(xi):
        a = steering_vector(xi[0], xi[1], cfg)
        beta = xi[2] + 1j * xi[3]
        Pa = psi * a
        return beta * np.outer(G.T @ Pa, Pa @ GS)

    # beta scale for the amplitude step
    bscale = max(abs(tp.beta), np.finfo(float).tiny)
    xi0 = np.array([tp.theta, tp.phi, tp.beta.real, tp.beta.imag])
    steps = np.array([h, h, h * bscale, h * bscale])
    derivs = []
    for k in range(4):
        e = np.zeros(4)
        e[k] = steps[k]
        d = (eta(xi0 + e) - eta(xi0 - e)) / (2 * steps[k])
        # whiten: R_w^{-1/2} via Cholesky solve, summed over symbols
        derivs.append(np.linalg.solve(L_chol, d).ravel())
    D = np.array(derivs)
    F = 2 * np.real(D.conj() @ D.T)
    return 0.5 * (F + F.T)


def crb(F) -> float:
    """``tr(F^{-1})``; ``inf`` when F is singular to ``1e-14 tr F``."""
    F = 0.5 * (np.asarray(F, dtype=float) + np.asarray(F, dtype=float).T)
    trF = np.trace(F)
    if not np.all(np.isfinite(F)) or trF <= 0:
        return np.inf
    d = np.diag(F)
    if np.any(d <= 0):
        return np.inf
    w = np.linalg.eigvalsh(F)
    if w[0] <= EPS_INV * trF:
        return np.inf
    # Jacobi scaling keeps the small eigenvalues accurate
    s = 1.0 / np.sqrt(d)
    ws, V = np.linalg.eigh(F * np.outer(s, s))
    if ws[0] <= 0:
        return np.inf
    return float(np.sum((V * s[:, None]) ** 2 / ws))


def crb_value_and_grad(F):
    """``tr(F^{-1})`` and its gradient ``-F^{-2}`` with respect to F."""
    F = 0.5 * (F + F.T)
    val = crb(F)
    if not np.isfinite(val):
        return val, None
    s = 1.0 / np.sqrt(np.diag(F))
    ws, V = np.linalg.eigh(F * np.outer(s, s))
    Finv = (V * s[:, None] / ws) @ (V * s[:, None]).T
    return val, -(Finv @ Finv)


class AffineFim:
    """FIM that is affine in a Hermitian matrix variable X.

    ``F_pq(X) = F0_pq + Re tr(B_pq X)`` with Hermitian ``B_pq``.
    """

    def __init__(self, F0, B):
        self.F0 = np.asarray(F0, dtype=float)
        self.B = np.asarray(B, dtype=complex)

    def __call__(self, X) -> np.ndarray:
        F = self.F0 + np.real(np.einsum("pqij,ji->pq", self.B, X))
        return 0.5 * (F + F.T)

    def crb_objective(self, X):
        """``(tr F(X)^{-1}, gradient)``; ``(inf, None)`` if F(X) is singular."""
        F = self(X)
        val, dF = crb_value_and_grad(F)
        if dF is None:
            return np.inf, None
        return val, herm(np.einsum("pq,pqij->ij", dF, self.B))


def tx_affine_fim(bundle: SteeringBundle, tp: TargetParams, ch: Channel, psi,
                  cfg: ScenarioConfig) -> AffineFim:
    """The closed-form FIM as a linear map of the transmit covariance."""
    C_t, C_p, H, _, Ri = fim_intermediates(bundle, ch, psi, cfg)
    k = 2 * cfg.T_c / cfg.L
    b2 = abs(tp.beta) ** 2
    cb = np.conj(tp.beta)
    M = ch.G.shape[1]
    B = np.zeros((4, 4, M, M), dtype=complex)

    def put(p, q, X):
        B[p, q] = B[q, p] = herm(X)

    put(0, 0, k * b2 * C_t.conj().T @ Ri @ C_t)
    put(1, 1, k * b2 * C_p.conj().T @ Ri @ C_p)
    put(0, 1, k * b2 * C_t.conj().T @ Ri @ C_p)
    for row, C in ((0, C_t), (1, C_p)):
        X = k * cb * C.conj().T @ Ri @ H
        put(row, 2, X)
        put(row, 3, 1j * X)
    bb = k * H.conj().T @ Ri @ H
    put(2, 2, bb)
    put(3, 3, bb)
    return AffineFim(np.zeros((4, 4)), B)
