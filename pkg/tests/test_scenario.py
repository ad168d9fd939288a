import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irs_crb import scenario as sc
from irs_crb.scenario import ScenarioConfig


def test_defaults_match_study_setup():
    cfg = ScenarioConfig()
    assert (cfg.M, cfg.N, cfg.L, cfg.T_c) == (16, 16, 2, 100)
    assert cfg.irs_pos == ((-5.0, 10.0, 0.0), (-5.0, 20.0, 0.0))
    assert cfg.target_pos == (5.0, 15.0, 0.0)
    assert cfg.sigma_r2 == pytest.approx(1e-11)
    assert cfg.d_h == pytest.approx(cfg.wavelength / 2)
    assert cfg.T_L == 50


@pytest.mark.parametrize("bad", [
    {"M": 0}, {"P_t": 0.0}, {"P_s": -1.0}, {"a_max": 0.5}, {"T_c": 101},
    {"target_pos": (-5.0, 10.0, 0.0)}, {"irs_pos": ((-5.0, 10.0, 0.0),)},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(sc.ScenarioError):
        ScenarioConfig(**bad)


def test_json_roundtrip_and_unknown_keys(tmp_path):
    cfg = ScenarioConfig(P_t=3.0, seed=7)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert ScenarioConfig.from_json(p) == cfg
    with pytest.raises(sc.ScenarioError, match="unknown"):
        ScenarioConfig.from_dict({"P_t": 1.0, "carrier": 3e9})


def test_broadside_steering_is_all_ones():
    cfg = ScenarioConfig(N_h=3, N_v=5)
    b = sc.steering_bundle(np.pi / 2, np.pi / 2, cfg)
    assert np.allclose(b.a, 1.0)
    k = 2 * np.pi / cfg.wavelength
    idx_h = np.kron(np.ones(cfg.N_v), np.arange(cfg.N_h))
    assert np.allclose(b.zeta_phi, -1j * k * cfg.d_h * idx_h)
    assert b.zeta_phi[0] == 0


@given(theta=st.floats(0.1, 3.0), phi=st.floats(-3.1, 3.1))
def test_steering_derivatives_match_finite_differences(theta, phi):
    cfg = ScenarioConfig()
    b = sc.steering_bundle(theta, phi, cfg)
    h = 1e-6
    fd_t = (sc.steering_vector(theta + h, phi, cfg) - sc.steering_vector(theta - h, phi, cfg)) / (2 * h)
    fd_p = (sc.steering_vector(theta, phi + h, cfg) - sc.steering_vector(theta, phi - h, cfg)) / (2 * h)
    assert np.linalg.norm(b.da_theta - fd_t) <= 1e-6 * max(np.linalg.norm(fd_t), 1.0)
    assert np.linalg.norm(b.da_phi - fd_p) <= 1e-6 * max(np.linalg.norm(fd_p), 1.0)
    assert np.allclose(np.abs(b.a), 1.0)
    assert np.allclose(b.zeta_theta.real, 0) and np.allclose(b.zeta_phi.real, 0)
    assert np.allclose(b.da_theta, b.zeta_theta * b.a, atol=1e-15)


def test_steering_kronecker_order():
    cfg = ScenarioConfig(N_h=3, N_v=2)
    th, ph = 1.1, 0.4
    k = 2 * np.pi / cfg.wavelength
    a_v = np.exp(1j * k * cfg.d_v * np.arange(2) * np.cos(th))
    a_h = np.exp(1j * k * cfg.d_h * np.arange(3) * np.sin(th) * np.cos(ph))
    assert np.allclose(sc.steering_vector(th, ph, cfg), np.kron(a_v, a_h))


def test_channel_los_limit_and_determinism():
    cfg = ScenarioConfig(K_db=200.0)
    G = sc.generate_channel(cfg, 0).G
    d = np.linalg.norm(np.subtract(cfg.irs_pos[0], cfg.bs_pos))
    pl = sc.free_space_path_loss(d, cfg.wavelength)
    los = np.sqrt(pl) * sc.los_channel(cfg, 0)
    assert np.linalg.norm(G - los) / np.linalg.norm(G) < 1e-4
    cfg5 = ScenarioConfig(seed=3)
    assert np.array_equal(sc.generate_channel(cfg5, 1).G, sc.generate_channel(cfg5, 1).G)
    assert not np.array_equal(sc.generate_channel(cfg5, 1).G,
                              sc.generate_channel(cfg5.replace(seed=4), 1).G)


def test_channel_power_moment():
    cfg = ScenarioConfig(M=4, N_h=2, N_v=2)
    d = np.linalg.norm(np.subtract(cfg.irs_pos[0], cfg.bs_pos))
    pl = sc.free_space_path_loss(d, cfg.wavelength)
    vals = [np.linalg.norm(sc.generate_channel(cfg.replace(seed=s), 0).G) ** 2
            for s in range(1000)]
    assert np.mean(vals) / (cfg.N * cfg.M * pl) == pytest.approx(1.0, abs=0.05)


def test_target_geometry_and_radar_equation():
    cfg = ScenarioConfig()
    tp = sc.target_params(cfg, 0)
    assert tp.distance == pytest.approx(np.sqrt(125.0))
    assert 0 < tp.theta < np.pi and -np.pi < tp.phi <= np.pi
    assert tp.theta == pytest.approx(np.pi / 2)  # target in the IRS plane z = 0
    far = cfg.replace(target_pos=(15.0, 20.0, 0.0))  # twice the IRS-target distance
    tp2 = sc.target_params(far, 0)
    assert tp2.distance == pytest.approx(2 * tp.distance)
    assert abs(tp2.beta) ** 2 == pytest.approx(abs(tp.beta) ** 2 / 16)


def test_colocated_target():
    cfg = ScenarioConfig(L=1, irs_pos=((1.0, 2.0, 3.0),), target_pos=(4.0, 5.0, 6.0))
    cfg.target_pos = (1.0, 2.0, 3.0)  # bypass validation
    with pytest.raises(sc.ColocatedTarget):
        sc.target_params(cfg, 0)


def test_power_special_cases(small_instance):
    inst = small_instance
    cfg = inst.cfg
    assert sc.irs_power_used(np.zeros(cfg.N), inst.R_s, inst.ch, inst.tp, cfg) == 0.0
    tp0 = sc.TargetParams(inst.tp.theta, inst.tp.phi, 0j)
    got = sc.irs_power_used(inst.psi, np.zeros((cfg.M, cfg.M)), inst.ch, tp0, cfg)
    assert got == pytest.approx(2 * cfg.sigma_r2 * np.sum(np.abs(inst.psi) ** 2), rel=1e-12)
    with pytest.raises(sc.DimensionMismatch):
        sc.irs_power_used(inst.psi[:-1], inst.R_s, inst.ch, inst.tp, cfg)


@given(seed=st.integers(0, 10_000), rho=st.floats(-np.pi, np.pi))
def test_power_forms_agree_and_phase_invariant(seed, rho):
    from irs_crb.checks import random_instance
    inst = random_instance(np.random.default_rng(seed))
    p = sc.irs_power_used(inst.psi, inst.R_s, inst.ch, inst.tp, inst.cfg)
    Theta = np.outer(inst.psi, inst.psi.conj())
    q = sc.irs_power_used_lifted(Theta, inst.R_s, inst.ch, inst.tp, inst.cfg)
    assert abs(p - q) <= 1e-10 * p
    r = sc.irs_power_used(np.exp(1j * rho) * inst.psi, inst.R_s, inst.ch, inst.tp, inst.cfg)
    assert r == pytest.approx(p, rel=1e-12)


def test_echo_noiseless_and_noise_only():
    cfg = ScenarioConfig(M=4, N_h=2, N_v=2, sigma_r_dbm=-np.inf, sigma_b_dbm=-np.inf)
    ch, tp = sc.generate_channel(cfg, 0), sc.target_params(cfg, 0)
    rng = np.random.default_rng(0)
    psi = np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.N))
    S = rng.standard_normal((cfg.M, cfg.T_L)) + 0j
    E = sc.response_matrix(tp, cfg)
    Psi = np.diag(psi)
    Y = sc.simulate_echo(cfg, ch, tp, psi, S, rng)
    assert np.allclose(Y, ch.G.T @ Psi @ E @ Psi @ ch.G @ S, rtol=1e-12, atol=0)
    # psi = 0: only receiver noise, covariance sigma_b^2 I
    cfg2 = ScenarioConfig(M=4, N_h=2, N_v=2, T_c=20000)
    ch2, tp2 = sc.generate_channel(cfg2, 0), sc.target_params(cfg2, 0)
    Y = sc.simulate_echo(cfg2, ch2, tp2, np.zeros(cfg2.N), np.zeros((4, cfg2.T_L)), rng)
    C = Y @ Y.conj().T / Y.shape[1]
    assert np.linalg.norm(C - cfg2.sigma_b2 * np.eye(4)) / np.linalg.norm(cfg2.sigma_b2 * np.eye(4)) < 0.05
    with pytest.raises(sc.DimensionMismatch):
        sc.simulate_echo(cfg2, ch2, tp2, np.zeros(cfg2.N), np.zeros((4, 3)), rng)


def test_echo_noise_energy_matches_covariance():
    # louder IRS noise so the amplified terms are visible next to sigma_b
    cfg = ScenarioConfig(M=4, N_h=2, N_v=2, T_c=20000, sigma_r_dbm=-40.0,
                         target_pos=(-4.0, 10.5, 0.0))
    ch, tp = sc.generate_channel(cfg, 0), sc.target_params(cfg, 0)
    rng = np.random.default_rng(5)
    psi = 8 * np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.N))
    Y = sc.simulate_echo(cfg, ch, tp, psi, np.zeros((cfg.M, cfg.T_L)), rng)
    energy = np.mean(np.sum(np.abs(Y) ** 2, axis=0))
    assert energy == pytest.approx(np.trace(sc.echo_covariance(cfg, ch, tp, psi)).real, rel=0.05)


def test_scene_build_is_pure():
    a, b = sc.Scene.build(ScenarioConfig(seed=9)), sc.Scene.build(ScenarioConfig(seed=9))
    for l in range(2):
        assert np.array_equal(a.channels[l].G, b.channels[l].G)
        assert a.targets[l] == b.targets[l]
