"""Alternating optimization between the transmit and reflection half-steps.

Both half-steps only accept candidates that do not raise the CRB they
optimize, so the recorded max-CRB sequence is non-increasing.
"""
from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import convexsolver as cs
from .fim import crb, fim_closed_form
from .rbf import NoFeasibleCandidate, power_scale_to_budget, sca_loop
from .scenario import Scene, ScenarioConfig, irs_power_used
from .txbf import DegeneratePsi, InfeasiblePsi, build_tx_problem, irs_power_split, solve_tx

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    JOINT = "Joint"
    TX_ONLY = "TxOnly"
    RBF_ONLY = "RbfOnly"
    PASSIVE = "PassiveBaseline"


class InfeasibleScenario(RuntimeError):
    pass


def default_solver():
    from . import conic
    return conic.solve


@dataclass
class AoOptions:
    max_outer: int = 30
    rel_tol: float = 1e-3
    mode: Mode = Mode.JOINT
    max_sca: int = 15
    sca_tol: float = 1e-3
    n_rand: int = 200
    solver: object = None   # None -> conic backend

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


@dataclass
class IterRecord:
    iteration: int
    crb_after_tx: float
    crb_after_rbf: float
    crbs: list
    residuals: dict
    wall_s: float
    errors: list = field(default_factory=list)


@dataclass
class AoTrace:
    mode: str
    initial_crb: float
    records: list = field(default_factory=list)

    def sequence(self) -> list:
        """Every recorded max-CRB value in the order it was produced."""
        seq = [self.initial_crb]
        for r in self.records:
            seq += [r.crb_after_tx, r.crb_after_rbf]
        return seq

    def to_dict(self) -> dict:
        return {"mode": self.mode, "initial_crb": self.initial_crb,
                "records": [asdict(r) for r in self.records]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass
class AoResult:
    R_s: list
    psi: list
    crbs: list
    max_crb: float
    iterations: int
    trace: AoTrace
    status: str = "ok"


def passive_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Unit-gain reflection without amplifier noise."""
    return cfg.replace(sigma_r_dbm=-np.inf, a_max=1.0)


def _crbs(scene, Rs, psis):
    return [crb(fim_closed_form(scene.bundles[l], scene.targets[l], scene.channels[l],
                                psis[l], Rs[l], scene.cfg))
            for l in range(scene.cfg.L)]


def residuals(scene, Rs, psis, passive=False) -> dict:
    """Constraint violations of ``(Rs, psis)``; all are ``<= 0`` when feasible."""
    cfg = scene.cfg
    bs = sum(np.trace(R).real for R in Rs) / cfg.L - cfg.P_t
    psd = max(-np.linalg.eigvalsh(0.5 * (R + R.conj().T))[0] for R in Rs)
    amp = max(np.max(np.abs(p)) for p in psis) - cfg.a_max
    out = {"bs_power": float(bs), "psd": float(psd), "a_max": float(amp)}
    if passive:
        out["unit_modulus"] = float(max(np.max(np.abs(np.abs(p) - 1)) for p in psis))
    else:
        out["irs_power"] = float(max(irs_power_used(psis[l], Rs[l], scene.channels[l],
                                                    scene.targets[l], cfg) - cfg.P_s
                                     for l in range(cfg.L)))
    return out


def _balanced_start(scene, l, phases, R_iso, grid=31):
    """Common amplitude and covariance scale for IRS ``l``.

    For each amplitude on a log grid up to ``a_max`` the isotropic covariance
    is scaled down (never up) to IRS power equality; the pair with the lowest
    CRB wins. Starting from full-power isotropic transmission instead forces
    a tiny amplitude when the IRS budget is small, and the alternating steps
    cannot leave that corner since each one is blocked by the same cap.
    """
    cfg = scene.cfg
    ch, tp, bundle = scene.channels[l], scene.targets[l], scene.bundles[l]
    best = (np.inf, None, None)
    for c in cfg.a_max * np.logspace(-3, 0, grid):
        psi = c * phases
        K, noise = irs_power_split(psi, ch, tp, cfg)
        if noise >= cfg.P_s:
            continue
        used = float(np.real(np.trace(K @ R_iso)))
        s = min(1.0, (cfg.P_s - noise) / used) if used > 0 else 1.0
        val = crb(fim_closed_form(bundle, tp, ch, psi, s * R_iso, cfg))
        if val < best[0]:
            best = (val, psi, s * R_iso)
    if best[1] is None:
        raise InfeasibleScenario(f"IRS {l}: amplifier noise exceeds P_s at every amplitude")
    return best[1], best[2]


def initial_point(scene: Scene, passive: bool = False, fixed_tx: bool = False):
    """Isotropic covariances and random-phase coefficients.

    Passive coefficients have unit modulus. With ``fixed_tx`` the covariance
    stays at ``(P_t / M) I`` and the common amplitude is bisected down from
    ``a_max`` to IRS power equality; otherwise amplitude and covariance scale
    are picked together (see :func:`_balanced_start`).
    """
    cfg = scene.cfg
    R_iso = cfg.P_t / cfg.M * np.eye(cfg.M, dtype=complex)
    Rs, psis = [], []
    for l in range(cfg.L):
        rng = np.random.default_rng([cfg.seed, l, 11])
        phases = np.exp(1j * rng.uniform(-np.pi, np.pi, cfg.N))
        if passive:
            psi, R = phases, R_iso
        elif fixed_tx:
            psi = cfg.a_max * phases
            psi = power_scale_to_budget(psi, R_iso, scene.channels[l], scene.targets[l],
                                        cfg) * psi
            R = R_iso
        else:
            psi, R = _balanced_start(scene, l, phases, R_iso)
        Rs.append(R)
        psis.append(psi)
    return Rs, psis


def run_ao(scene, options: AoOptions | None = None) -> AoResult:
    """Minimize the max CRB over IRSs.

    ``scene`` is a :class:`Scene` or a :class:`ScenarioConfig`. The passive
    baseline rebuilds the scene without amplifier noise and with unit gain;
    channels and targets are unchanged because they only depend on geometry
    and the seed.
    """
    opt = options or AoOptions()
    if isinstance(scene, ScenarioConfig):
        scene = Scene.build(scene)
    mode = opt.mode
    passive = mode is Mode.PASSIVE
    if passive:
        scene = Scene.build(passive_config(scene.cfg))
    cfg = scene.cfg
    solver = opt.solver or default_solver()
    do_tx = mode in (Mode.JOINT, Mode.TX_ONLY, Mode.PASSIVE)
    do_rbf = mode in (Mode.JOINT, Mode.RBF_ONLY, Mode.PASSIVE)

    Rs, psis = initial_point(scene, passive, fixed_tx=not do_tx)
    crbs = _crbs(scene, Rs, psis)
    cur = max(crbs)
    if not np.isfinite(cur):
        raise InfeasibleScenario("initial point has an infinite CRB")
    trace = AoTrace(mode=mode.value, initial_crb=cur)
    it = 0
    for it in range(1, opt.max_outer + 1):
        t0 = time.perf_counter()
        start = cur
        errors = []
        if do_tx:
            try:
                prob = build_tx_problem(scene, psis, power_cap=not passive)
                new_Rs, _ = solve_tx(prob, solver=solver, warm_start=Rs)
                new_crbs = _crbs(scene, new_Rs, psis)
                if max(new_crbs) <= cur:
                    Rs, crbs, cur = new_Rs, new_crbs, max(new_crbs)
            except (cs.Infeasible, InfeasiblePsi, DegeneratePsi, np.linalg.LinAlgError) as exc:
                errors.append(f"tx: {exc}")
        after_tx = cur
        if do_rbf:
            new_psis = list(psis)
            for l in range(cfg.L):
                rng = np.random.default_rng([cfg.seed, l, 23, it])
                try:
                    res = sca_loop(psis[l], scene.bundles[l], scene.targets[l],
                                   scene.channels[l], Rs[l], cfg, solver=solver,
                                   max_sca=opt.max_sca, tol=opt.sca_tol, n_rand=opt.n_rand,
                                   rng=rng, passive=passive)
                    new_psis[l] = res.psi
                except (cs.Infeasible, NoFeasibleCandidate, np.linalg.LinAlgError) as exc:
                    errors.append(f"rbf[{l}]: {exc}")
            new_crbs = _crbs(scene, Rs, new_psis)
            if max(new_crbs) <= cur:
                psis, crbs, cur = new_psis, new_crbs, max(new_crbs)
        trace.records.append(IterRecord(
            iteration=it, crb_after_tx=after_tx, crb_after_rbf=cur, crbs=list(crbs),
            residuals=residuals(scene, Rs, psis, passive),
            wall_s=time.perf_counter() - t0, errors=errors))
        for e in errors:
            log.warning("AO iteration %d: %s", it, e)
        if mode is Mode.TX_ONLY:
            # coefficients never change, a second solve would be a re-solve
            break
        if (start - cur) < opt.rel_tol * start:
            break
    status = "ok" if not any(r.errors for r in trace.records) else "solver_warning"
    return AoResult(R_s=Rs, psi=psis, crbs=crbs, max_crb=cur, iterations=it, trace=trace,
                    status=status)
