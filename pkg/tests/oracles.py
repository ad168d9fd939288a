"""Brute-force references shared by the unit and acceptance tests."""
import numpy as np

from irs_crb.checks import random_instance
from irs_crb.fim import tx_affine_fim
from irs_crb.scenario import Scene
from irs_crb.txbf import build_tx_problem


def _det3(F, i, j, k):
    a = F[..., [i, j, k], :][..., :, [i, j, k]]
    return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))


def batched_crb(F):
    """tr(F^-1) over a stack of symmetric 4x4 matrices by cofactors; inf where
    not positive definite. Diagonal scaling first, so badly scaled FIMs are fine."""
    d = np.sqrt(np.abs(np.einsum("...ii->...i", F)))
    d = np.where(d > 0, d, 1.0)
    Fs = F / d[..., :, None] / d[..., None, :]
    minors = [_det3(Fs, *[j for j in range(4) if j != i]) for i in range(4)]
    # Laplace expansion along the first row
    det = 0.0
    for i in range(4):
        rows = [1, 2, 3]
        cols = [j for j in range(4) if j != i]
        sub = Fs[..., rows, :][..., :, cols]
        det = det + (-1) ** i * Fs[..., 0, i] * _det3(sub, 0, 1, 2)
    lead2 = Fs[..., 0, 0] * Fs[..., 1, 1] - Fs[..., 0, 1] ** 2
    ok = (lead2 > 0) & (_det3(Fs, 0, 1, 2) > 0) & (det > 1e-14)
    out = sum(m / d[..., i] ** 2 for i, m in enumerate(minors)) / np.where(ok, det, 1.0)
    return np.where(ok, out, np.inf)


def two_antenna_tx(seed, P_s=1e3):
    """Single-IRS transmit subproblem (M = 2, 4 x 4 surface) with an inactive
    IRS power cap."""
    inst = random_instance(np.random.default_rng(seed), M=2, N_h=4, N_v=4, P_s=P_s)
    scene = Scene.build(inst.cfg)
    prob = build_tx_problem(scene, [inst.psi])
    return inst, prob


def grid_best_tx(fim_map, P, step=0.01):
    """Exhaustive search over 2x2 PSD matrices of trace P.

    ``R = P (lam u u^H + (1 - lam) v v^H)`` with ``u = (cos a, e^{jw} sin a)``
    and ``v`` orthogonal to it; ``lam``, ``a`` and ``w`` are gridded with the
    given step so rank-one points are included exactly. Swapping ``u`` and
    ``v`` maps ``lam`` to ``1 - lam``, so ``lam >= 1/2`` covers every matrix.
    """
    lams = np.arange(0.5, 1.0 + step / 2, step)
    alphas = np.arange(0.0, np.pi / 2 + step / 2, step)
    omegas = np.arange(0.0, 2 * np.pi, step)
    A, W = np.meshgrid(alphas, omegas, indexing="ij")
    u = np.stack([np.cos(A), np.exp(1j * W) * np.sin(A)], axis=-1)
    v = np.stack([-np.exp(-1j * W) * np.sin(A), np.cos(A)], axis=-1)
    B = fim_map.B  # (4, 4, 2, 2)
    # F(x x^H) = Re x^H B x for each pq
    Fu = np.real(np.einsum("...i,pqij,...j->...pq", u.conj(), B, u))
    Fv = np.real(np.einsum("...i,pqij,...j->...pq", v.conj(), B, v))
    best, arg = np.inf, None
    for lam in lams:
        F = P * (lam * Fu + (1 - lam) * Fv)
        c = batched_crb(F)
        k = np.unravel_index(np.argmin(c), c.shape)
        if c[k] < best:
            best, arg = float(c[k]), (lam, alphas[k[0]], omegas[k[1]])
    return best, arg


def tx_fim_of(inst):
    return tx_affine_fim(inst.bundle, inst.tp, inst.ch, inst.psi, inst.cfg)
