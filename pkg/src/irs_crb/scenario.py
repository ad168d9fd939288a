"""Physical world for multi-active-IRS sensing.

Geometry, BS->IRS Rician channels, IRS steering vectors with their angular
derivatives, target reflectivity, and the active-IRS signal / power model.

Array conventions
-----------------
* IRS UPA: horizontal axis along global x, vertical axis along global z.
  Element ``n = v * N_h + h`` (vertical index outer, Kronecker order
  ``a_v (x) a_h``).
* ``theta`` is measured from +z, ``phi`` is the azimuth from +x in the
  xy-plane, so broadside of every IRS is ``theta = phi = pi/2``.
* BS ULA lies along global x with half-wavelength spacing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


class ColocatedTarget(ScenarioError):
    """Target sits on top of an IRS; angles and path loss are undefined."""


class DimensionMismatch(ValueError):
    pass


def dbm_to_watt(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class ScenarioConfig:
    """All physical and system constants of one sensing scenario.

    Defaults reproduce the two-IRS numerical setup (BS at the origin, IRSs at
    (-5, 10, 0) and (-5, 20, 0), target at (5, 15, 0), -80 dBm noise,
    100-symbol dwell time, 5 dB Rician factor).
    """

    M: int = 16                # BS antennas (ULA)
    N_h: int = 4               # IRS columns
    N_v: int = 4               # IRS rows
    L: int = 2                 # number of IRSs
    P_t: float = 10.0          # W, BS power budget
    P_s: float = 0.1           # W, per-IRS power budget
    a_max: float = 8.0         # max amplitude gain per element
    sigma_r_dbm: float = -80.0
    sigma_b_dbm: float = -80.0
    T_c: int = 100             # dwell time, symbols
    K_db: float = 5.0          # Rician K-factor
    carrier_hz: float = 3.5e9
    d_h: float | None = None   # m, None -> lambda/2
    d_v: float | None = None   # m, None -> lambda/2
    bs_pos: tuple = (0.0, 0.0, 0.0)
    irs_pos: tuple = ((-5.0, 10.0, 0.0), (-5.0, 20.0, 0.0))
    target_pos: tuple = (5.0, 15.0, 0.0)
    rcs_m2: float = 1.0
    seed: int = 0

    sigma_r2: float = field(init=False, repr=False)
    sigma_b2: float = field(init=False, repr=False)

    def __post_init__(self):
        self.bs_pos = tuple(float(x) for x in self.bs_pos)
        self.target_pos = tuple(float(x) for x in self.target_pos)
        self.irs_pos = tuple(tuple(float(x) for x in p) for p in self.irs_pos)
        if self.d_h is None:
            self.d_h = self.wavelength / 2
        if self.d_v is None:
            self.d_v = self.wavelength / 2
        self.sigma_r2 = dbm_to_watt(self.sigma_r_dbm)
        self.sigma_b2 = dbm_to_watt(self.sigma_b_dbm)
        self.validate()

    @property
    def N(self) -> int:
        return self.N_h * self.N_v

    @property
    def T_L(self) -> int:
        """Symbols per IRS time slot."""
        return self.T_c // self.L

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    def validate(self):
        if self.M < 1 or self.N_h < 1 or self.N_v < 1 or self.L < 1:
            raise ScenarioError("M, N_h, N_v, L must all be >= 1")
        if self.P_t <= 0 or self.P_s <= 0:
            raise ScenarioError("power budgets must be positive")
        if self.a_max < 1:
            raise ScenarioError("a_max must be >= 1")
        if self.T_c % self.L:
            raise ScenarioError(f"T_c={self.T_c} not divisible by L={self.L}")
        if self.d_h <= 0 or self.d_v <= 0 or self.carrier_hz <= 0:
            raise ScenarioError("element spacing and carrier must be positive")
        if len(self.irs_pos) != self.L:
            raise ScenarioError(f"expected {self.L} IRS positions, got {len(self.irs_pos)}")
        pts = [self.bs_pos, self.target_pos, *self.irs_pos]
        if any(len(p) != 3 for p in pts):
            raise ScenarioError("positions must be 3-D")
        if len(set(pts)) != len(pts):
            raise ScenarioError("BS, IRS and target positions must be distinct")

    def replace(self, **changes) -> "ScenarioConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        kw.update(changes)
        return ScenarioConfig(**kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.init}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls) if f.init}
        unknown = set(doc) - known
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SteeringBundle:
    a: np.ndarray            # (N,) unit-modulus steering vector
    da_theta: np.ndarray     # (N,) d a / d theta
    da_phi: np.ndarray       # (N,) d a / d phi
    zeta_theta: np.ndarray   # (N,) purely imaginary, da_theta = zeta_theta * a
    zeta_phi: np.ndarray

    @property
    def A_diag(self) -> np.ndarray:
        return np.diag(self.a)


@dataclass
class Channel:
    G: np.ndarray  # (N, M) BS -> IRS


@dataclass
class TargetParams:
    theta: float
    phi: float
    beta: complex
    distance: float = float("nan")


def _index_vectors(cfg: ScenarioConfig):
    """Return (1_{N_v} (x) d_{N_h}, d_{N_v} (x) 1_{N_h})."""
    d_h = np.arange(cfg.N_h, dtype=float)
    d_v = np.arange(cfg.N_v, dtype=float)
    return np.kron(np.ones(cfg.N_v), d_h), np.kron(d_v, np.ones(cfg.N_h))


def steering_vector(theta, phi, cfg: ScenarioConfig) -> np.ndarray:
    """IRS UPA response ``a_v(theta) (x) a_h(theta, phi)``."""
    k = 2 * np.pi / cfg.wavelength
    a_v = np.exp(1j * k * cfg.d_v * np.arange(cfg.N_v) * np.cos(theta))
    a_h = np.exp(1j * k * cfg.d_h * np.arange(cfg.N_h) * np.sin(theta) * np.cos(phi))
    return np.kron(a_v, a_h)


def steering_bundle(theta, phi, cfg: ScenarioConfig) -> SteeringBundle:
    k = 2 * np.pi / cfg.wavelength
    idx_h, idx_v = _index_vectors(cfg)
    a = steering_vector(theta, phi, cfg)
    zeta_theta = (1j * k * cfg.d_h * np.cos(theta) * np.cos(phi) * idx_h
                  - 1j * k * cfg.d_v * np.sin(theta) * idx_v)
    zeta_phi = -1j * k * cfg.d_h * np.sin(theta) * np.sin(phi) * idx_h
    return SteeringBundle(a=a, da_theta=zeta_theta * a, da_phi=zeta_phi * a,
                          zeta_theta=zeta_theta, zeta_phi=zeta_phi)


def bs_steering_vector(direction, cfg: ScenarioConfig) -> np.ndarray:
    """Half-wavelength ULA along x; ``direction`` is a unit 3-vector."""
    return np.exp(1j * np.pi * np.arange(cfg.M) * direction[0])


def _angles(vec):
    d = float(np.linalg.norm(vec))
    return np.arccos(np.clip(vec[2] / d, -1.0, 1.0)), np.arctan2(vec[1], vec[0]), d


def free_space_path_loss(d, wavelength) -> float:
    return (wavelength / (4 * np.pi * d)) ** 2


def _rng(cfg: ScenarioConfig, irs_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, irs_index, stream])


def _check_index(cfg, irs_index):
    if not 0 <= irs_index < cfg.L:
        raise IndexError(f"IRS index {irs_index} out of range for L={cfg.L}")


def los_channel(cfg: ScenarioConfig, irs_index: int) -> np.ndarray:
    """Deterministic BS -> IRS LoS component, ``a_irs a_bs^H`` (N x M)."""
    _check_index(cfg, irs_index)
    bs = np.asarray(cfg.bs_pos)
    irs = np.asarray(cfg.irs_pos[irs_index])
    theta, phi, d = _angles(bs - irs)
    a_irs = steering_vector(theta, phi, cfg)
    a_bs = bs_steering_vector((irs - bs) / d, cfg)
    return np.outer(a_irs, a_bs.conj())


def generate_channel(cfg: ScenarioConfig, irs_index: int) -> Channel:
    """Rician BS -> IRS channel with free-space path loss."""
    g_los = los_channel(cfg, irs_index)
    d = float(np.linalg.norm(np.subtract(cfg.irs_pos[irs_index], cfg.bs_pos)))
    pl = free_space_path_loss(d, cfg.wavelength)
    K = 10.0 ** (cfg.K_db / 10.0)
    rng = _rng(cfg, irs_index, 0)
    g_nlos = (rng.standard_normal(g_los.shape)
              + 1j * rng.standard_normal(g_los.shape)) / np.sqrt(2)
    G = np.sqrt(pl) * (np.sqrt(K / (K + 1)) * g_los + np.sqrt(1 / (K + 1)) * g_nlos)
    return Channel(G=G)


def target_params(cfg: ScenarioConfig, irs_index: int) -> TargetParams:
    """Target DoA seen from IRS ``irs_index`` and its round-trip reflectivity."""
    _check_index(cfg, irs_index)
    vec = np.subtract(cfg.target_pos, cfg.irs_pos[irs_index])
    if not np.any(vec):
        raise ColocatedTarget(f"target coincides with IRS {irs_index}")
    theta, phi, d = _angles(vec)
    lam = cfg.wavelength
    mag2 = lam ** 2 * cfg.rcs_m2 / ((4 * np.pi) ** 3 * d ** 4)
    phase = _rng(cfg, irs_index, 1).uniform(-np.pi, np.pi)
    return TargetParams(theta=float(theta), phi=float(phi),
                        beta=complex(np.sqrt(mag2) * np.exp(1j * phase)), distance=d)


def _check_dims(psi, R_s, G):
    N, M = G.shape
    if psi.shape != (N,):
        raise DimensionMismatch(f"psi has shape {psi.shape}, expected ({N},)")
    if R_s is not None and R_s.shape != (M, M):
        raise DimensionMismatch(f"R_s has shape {R_s.shape}, expected ({M}, {M})")


def response_matrix(tp: TargetParams, cfg: ScenarioConfig) -> np.ndarray:
    """Round-trip target response ``E = beta a a^T``."""
    a = steering_vector(tp.theta, tp.phi, cfg)
    return tp.beta * np.outer(a, a)


def irs_power_used(psi, R_s, ch: Channel, tp: TargetParams, cfg: ScenarioConfig) -> float:
    """Mean transmit power of an active IRS (both amplification stages).

    Sum of the four terms: amplified echo, amplified first-stage noise
    re-reflected, amplified incident signal and the two direct noise
    amplifications.
    """
    psi = np.asarray(psi, dtype=complex)
    G = ch.G
    _check_dims(psi, R_s, G)
    E = response_matrix(tp, cfg)
    Psi = np.diag(psi)
    PEP = Psi @ E @ Psi
    GRG = G @ R_s @ G.conj().T
    s2 = cfg.sigma_r2
    t1 = np.trace(PEP @ GRG @ PEP.conj().T).real
    t2 = s2 * np.trace(PEP @ PEP.conj().T).real
    t3 = np.trace(Psi @ GRG @ Psi.conj().T).real
    t4 = 2 * s2 * np.sum(np.abs(psi) ** 2)
    return float(t1 + t2 + t3 + t4)


def irs_power_used_lifted(Theta, R_s, ch: Channel, tp: TargetParams, cfg: ScenarioConfig) -> float:
    """Same power as :func:`irs_power_used`, written in ``Theta = psi psi^H``."""
    a = steering_vector(tp.theta, tp.phi, cfg)
    A = np.diag(a)
    G = ch.G
    R1 = A @ G @ R_s @ G.conj().T @ A.conj().T
    AA = A.conj().T @ A
    b2 = abs(tp.beta) ** 2
    trAT = np.trace(AA @ Theta)
    t1 = b2 * trAT * np.trace(R1 @ Theta.T)
    t2 = b2 * trAT ** 2
    t3 = np.trace(G @ R_s @ G.conj().T @ np.diag(np.diag(Theta)))
    t4 = np.trace(Theta)
    s2 = cfg.sigma_r2
    return float((t1 + s2 * t2 + t3 + 2 * s2 * t4).real)


def simulate_echo(cfg: ScenarioConfig, ch: Channel, tp: TargetParams, psi, S,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Received echo block at the BS for one IRS slot (M x T_L)."""
    psi = np.asarray(psi, dtype=complex)
    G = ch.G
    N, M = G.shape
    _check_dims(psi, None, G)
    S = np.asarray(S)
    if S.shape != (M, cfg.T_L):
        raise DimensionMismatch(f"S has shape {S.shape}, expected ({M}, {cfg.T_L})")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    E = response_matrix(tp, cfg)
    GtP = G.T * psi                       # G^T Psi
    GtPEP = GtP @ E * psi                 # G^T Psi E Psi
    T = S.shape[1]

    def cn(rows, var):
        if var == 0:
            return np.zeros((rows, T), dtype=complex)
        return np.sqrt(var / 2) * (rng.standard_normal((rows, T))
                                   + 1j * rng.standard_normal((rows, T)))

    Z1 = cn(N, cfg.sigma_r2)
    Z2 = cn(N, cfg.sigma_r2)
    Z = cn(M, cfg.sigma_b2)
    return GtPEP @ G @ S + GtPEP @ Z1 + GtP @ Z2 + Z


def echo_covariance(cfg: ScenarioConfig, ch: Channel, tp: TargetParams, psi) -> np.ndarray:
    """Per-symbol noise covariance of the echo including the first-stage IRS noise."""
    psi = np.asarray(psi, dtype=complex)
    G = ch.G
    E = response_matrix(tp, cfg)
    GtP = G.T * psi
    GtPEP = GtP @ E * psi
    s2 = cfg.sigma_r2
    return (s2 * GtPEP @ GtPEP.conj().T + s2 * GtP @ GtP.conj().T
            + cfg.sigma_b2 * np.eye(G.shape[1]))


@dataclass
class Scene:
    """Per-IRS channels, target parameters and steering bundles for one draw."""

    cfg: ScenarioConfig
    channels: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    bundles: list = field(default_factory=list)

    @classmethod
    def build(cls, cfg: ScenarioConfig) -> "Scene":
        chans = [generate_channel(cfg, l) for l in range(cfg.L)]
        tps = [target_params(cfg, l) for l in range(cfg.L)]
        bundles = [steering_bundle(tp.theta, tp.phi, cfg) for tp in tps]
        return cls(cfg=cfg, channels=chans, targets=tps, bundles=bundles)
