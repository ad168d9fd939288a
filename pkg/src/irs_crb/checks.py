"""Oracle battery: every analytic formula against an independent route.

Used by the ``verify`` subcommand and by the test suite. Module functions are
looked up at call time, so a patched formula is seen by the checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fim as fim_mod
from . import rbf
from . import scenario as sc


@dataclass
class Instance:
    cfg: sc.ScenarioConfig
    bundle: sc.SteeringBundle
    tp: sc.TargetParams
    ch: sc.Channel
    psi: np.ndarray
    R_s: np.ndarray


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    passed: bool
    detail: str = ""


def random_hermitian(rng, n, psd=False):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return B @ B.conj().T / n if psd else (B + B.conj().T) / 2


def random_instance(rng, M=4, N_h=2, N_v=2, base: sc.ScenarioConfig | None = None,
                    **overrides) -> Instance:
    """One IRS with a random target position, coefficients and covariance.

    Physical constants (carrier, noise, budgets) come from ``base``.
    """
    while True:
        target = (rng.uniform(-10, 10), rng.uniform(0, 30), rng.uniform(-5, 5))
        irs = (-5.0, 10.0, 0.0)
        if np.linalg.norm(np.subtract(target, irs)) > 1.0:
            break
    kw = dict(M=M, N_h=N_h, N_v=N_v, L=1, irs_pos=(irs,), target_pos=target,
              seed=int(rng.integers(2 ** 31)), T_c=50)
    kw.update(overrides)
    cfg = base.replace(**kw) if base is not None else sc.ScenarioConfig(**kw)
    ch = sc.generate_channel(cfg, 0)
    tp = sc.target_params(cfg, 0)
    bundle = sc.steering_bundle(tp.theta, tp.phi, cfg)
    psi = rng.uniform(0.5, cfg.a_max, cfg.N) * np.exp(1j * rng.uniform(-np.pi, np.pi, cfg.N))
    R = random_hermitian(rng, M, psd=True)
    R_s = cfg.P_t * R / np.trace(R).real
    return Instance(cfg, bundle, tp, ch, psi, R_s)


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def sca_state(inst: Instance) -> rbf.ScaState:
    return rbf.ScaState.from_psi(inst.psi, inst.bundle, inst.tp, inst.ch, inst.R_s, inst.cfg)


# ----------------------------------------------------------------------
# individual oracles, each returning the worst relative error
# ----------------------------------------------------------------------

def fim_oracle_error(inst: Instance) -> float:
    Fc = fim_mod.fim_closed_form(inst.bundle, inst.tp, inst.ch, inst.psi, inst.R_s, inst.cfg)
    Fo = fim_mod.fim_oracle(inst.tp, inst.ch, inst.psi, inst.R_s, inst.cfg)
    return rel_err(Fc, Fo)


def fd_holomorphic(f, X, eps):
    """Componentwise central differences ``d f / d X_ij`` of a polynomial in X."""
    n = X.shape[0]
    D = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n), dtype=complex)
            E[i, j] = eps
            D[i, j] = (f(X + E) - f(X - E)) / (2 * eps)
    return D


def q_gradient_errors(inst: Instance, Theta=None) -> dict:
    st = sca_state(inst)
    if Theta is None:
        Theta = st.Theta0
    eps = 1e-4 * max(np.abs(Theta).max(), 1.0)
    grads = rbf.q_gradients(Theta, st)
    out = {}
    for key in rbf.Q_KEYS:
        fd = fd_holomorphic(lambda T: rbf.q_terms(T, st)[key], Theta, eps)
        out[key] = rel_err(grads[key], fd)
    return out


def power_gradient_errors(inst: Instance, Theta=None) -> dict:
    st = sca_state(inst)
    if Theta is None:
        Theta = st.Theta0
    eps = 1e-4 * max(np.abs(Theta).max(), 1.0)
    g1, g2 = rbf.power_gradients(Theta, st)
    fd1 = fd_holomorphic(lambda T: rbf.power_terms(T, st)[0], Theta, eps)
    fd2 = fd_holomorphic(lambda T: rbf.power_terms(T, st)[1], Theta, eps)
    return {"c1": rel_err(g1, fd1), "c2": rel_err(g2, fd2)}


def proposition_terms(inst: Instance) -> dict:
    C_t, C_p, H, _, Ri = fim_mod.fim_intermediates(inst.bundle, inst.ch, inst.psi, inst.cfg)

    def tr(X, Y):
        return np.trace(X.conj().T @ Ri @ Y @ inst.R_s)

    return {"tt": tr(C_t, C_t), "pp": tr(C_p, C_p), "tp": tr(C_t, C_p),
            "tb": tr(C_t, H), "pb": tr(C_p, H), "bb": tr(H, H)}


def lift_errors(inst: Instance) -> dict:
    st = sca_state(inst)
    q = rbf.q_terms(st.Theta0, st)
    ref = proposition_terms(inst)
    return {k: abs(q[k] - ref[k]) / max(abs(ref[k]), 1e-300) for k in rbf.Q_KEYS}


def power_form_error(inst: Instance) -> float:
    a = sc.irs_power_used(inst.psi, inst.R_s, inst.ch, inst.tp, inst.cfg)
    Theta = np.outer(inst.psi, inst.psi.conj())
    b = sc.irs_power_used_lifted(Theta, inst.R_s, inst.ch, inst.tp, inst.cfg)
    return abs(a - b) / abs(a)


def taylor_ratios(inst: Instance, rng, halvings=3, rel_step=0.1) -> list:
    """Error ratios of the linearized FIM under successive halvings of the step.

    The comparison is against the FIM of the lifted variable with the noise
    covariance frozen at the base point, which is the function the surrogate
    linearizes; its remainder is exactly quadratic in the step.
    """
    st = sca_state(inst)
    aff = rbf.surrogate_affine(st)
    D = random_hermitian(rng, st.Theta0.shape[0])
    D *= rel_step * np.linalg.norm(st.Theta0) / np.linalg.norm(D)
    errs = []
    for k in range(halvings + 1):
        T = st.Theta0 + D / 2 ** k
        errs.append(np.linalg.norm(aff(T) - rbf.lifted_fim(T, st)))
    return [errs[k] / errs[k + 1] for k in range(halvings)]


def surrogate_base_error(inst: Instance) -> float:
    st = sca_state(inst)
    return rel_err(rbf.surrogate_affine(st)(st.Theta0), rbf.lifted_fim(st.Theta0, st))


def linearized_power_base_error(inst: Instance) -> float:
    st = sca_state(inst)
    exact = sc.irs_power_used(inst.psi, inst.R_s, inst.ch, inst.tp, inst.cfg) - inst.cfg.P_s
    lin = rbf.linearized_power_constraint(st.Theta0, st)
    return abs(lin - exact) / inst.cfg.P_s


def ao_monotonicity_gap(seed: int, mode="Joint", base: sc.ScenarioConfig | None = None,
                        **cfg_kw) -> float:
    """Largest increase between consecutive recorded max-CRB values."""
    from .ao import AoOptions, run_ao
    base = base if base is not None else sc.ScenarioConfig()
    cfg = base.replace(seed=seed, **cfg_kw)
    res = run_ao(cfg, AoOptions(mode=mode))
    seq = res.trace.sequence()
    return max([b - a for a, b in zip(seq, seq[1:])] + [0.0])


# ----------------------------------------------------------------------
# battery
# ----------------------------------------------------------------------

def run_battery(seed: int = 0, n: int = 10, ao_runs: int = 1,
                base: sc.ScenarioConfig | None = None) -> list:
    """Run every oracle on ``n`` random instances; one result per check."""
    rng = np.random.default_rng(seed)
    insts = [random_instance(rng, base=base) for _ in range(n)]
    results = []

    def add(name, errs, tol):
        worst = float(np.max(errs))
        results.append(CheckResult(name, worst, tol, worst <= tol))

    add("fim closed form vs finite-difference oracle", [fim_oracle_error(i) for i in insts], 1e-6)
    qg = [q_gradient_errors(i) for i in insts]
    for key in rbf.Q_KEYS:
        add(f"Q_{key} gradient vs finite differences", [e[key] for e in qg], 1e-5)
    pg = [power_gradient_errors(i) for i in insts]
    for key in ("c1", "c2"):
        add(f"power gradient {key} vs finite differences", [e[key] for e in pg], 1e-5)
    add("Q terms at psi psi^H vs FIM trace terms",
        [max(lift_errors(i).values()) for i in insts], 1e-9)
    add("IRS power: coefficient vs lifted form", [power_form_error(i) for i in insts], 1e-10)
    add("surrogate FIM exact at base point", [surrogate_base_error(i) for i in insts], 1e-9)
    add("linearized IRS power exact at base point",
        [linearized_power_base_error(i) for i in insts], 1e-9)
    # ratio must lie in [3, 5]; reported as distance from 4
    ratios = np.array([r for i in insts for r in taylor_ratios(i, rng)])
    add("Taylor remainder ratio under halving (|ratio - 4|)", np.abs(ratios - 4.0), 1.0)
    gaps = [ao_monotonicity_gap(int(rng.integers(2 ** 31)), base=base, M=4, N_h=2, N_v=2)
            for _ in range(ao_runs)]
    add("AO max-CRB sequence non-increasing", gaps, 1e-9)
    return results


def format_table(results) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'check':<{w}}  {'worst error':>12}  {'tol':>9}  result"]
    for r in results:
        lines.append(f"{r.name:<{w}}  {r.error:12.3e}  {r.tol:9.1e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
