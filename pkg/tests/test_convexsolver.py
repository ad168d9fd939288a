import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irs_crb import conic
from irs_crb import convexsolver as cs
from irs_crb.checks import random_hermitian, random_instance, sca_state
from irs_crb.rbf import build_sdr_program
from irs_crb.txbf import solve_tx, tx_program

from oracles import grid_best_tx, two_antenna_tx


def trace_obj(Xs):
    n = Xs[0].shape[0]
    return float(np.trace(Xs[0]).real), [np.eye(n, dtype=complex)]


def inv_obj(Xs):
    n = Xs[0].shape[0]
    A = Xs[0] + np.eye(n)
    w = np.linalg.eigvalsh(cs.herm(A))
    if w[0] <= 0:
        return np.inf, None
    Ai = np.linalg.inv(A)
    return float(np.trace(Ai).real), [-cs.herm(Ai @ Ai)]


def test_min_trace_is_zero():
    prog = cs.PsdProgram(dims=[3], objective=trace_obj, diag_caps=[np.ones(3)])
    rep = cs.solve(prog)
    assert rep.objective == pytest.approx(0.0, abs=1e-8)
    assert np.linalg.norm(rep.solution[0]) < 1e-6
    assert rep.violation <= 1e-7 * prog.scale()


@pytest.mark.parametrize("P", [0.5, 2.0, 10.0])
def test_symmetric_inverse_trace_optimum(P):
    cons = [cs.AffineConstraint([np.eye(2)], P)]
    prog = cs.PsdProgram(dims=[2], objective=inv_obj, constraints=cons)
    rep = cs.solve(prog, tol=1e-8)
    assert rep.objective == pytest.approx(2 / (1 + P / 2), rel=1e-6)
    assert np.allclose(rep.solution[0], P / 2 * np.eye(2), atol=1e-3 * P)
    assert prog.violation(rep.solution) <= 1e-7 * prog.scale()


def test_history_non_increasing():
    cons = [cs.AffineConstraint([np.eye(3)], 4.0)]
    prog = cs.PsdProgram(dims=[3], objective=inv_obj, constraints=cons,
                         anchor=[np.zeros((3, 3), dtype=complex)])
    rep = cs.solve(prog, x0=[np.diag([3.0, 0.5, 0.1]).astype(complex)])
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-12 * np.abs(h[:-1]))


def test_presolve_psd_only_returns_identity():
    prog = cs.PsdProgram(dims=[3], objective=trace_obj)
    x = cs.feasibility_presolve(prog)
    assert np.array_equal(x[0], np.eye(3))


def test_presolve_empty_set_is_infeasible():
    prog = cs.PsdProgram(dims=[2], objective=trace_obj,
                         constraints=[cs.AffineConstraint([np.eye(2)], -1.0)])
    with pytest.raises(cs.Infeasible):
        cs.feasibility_presolve(prog)


def test_sdr_base_point_satisfies_own_linearization(rng):
    for _ in range(5):
        st_ = sca_state(random_instance(rng, P_s=10.0))
        prog = build_sdr_program(st_, st_.cfg.a_max)
        assert prog.violation([st_.Theta0]) <= 1e-9 * prog.scale()


@given(seed=st.integers(0, 10_000))
def test_dykstra_projection_lands_in_every_set_and_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = 3
    cons = [cs.AffineConstraint([random_hermitian(rng, n, psd=True)], 1.0),
            cs.AffineConstraint([np.eye(n)], 2.0)]
    caps = [np.full(n, 0.6)]
    prog = cs.PsdProgram(dims=[n], objective=trace_obj, constraints=cons, diag_caps=caps,
                         anchor=[np.zeros((n, n), dtype=complex)])
    X0 = [3 * random_hermitian(rng, n)]
    P, res = cs.project(prog, X0, tol=1e-13, max_iter=2000)
    X = P[0]
    assert np.linalg.eigvalsh(X)[0] >= -1e-9
    assert np.max(np.diag(X).real) <= 0.6 + 1e-9
    for c in cons:
        assert c.violation(P) <= 1e-9
    P2, _ = cs.project(prog, P, tol=1e-13, max_iter=5000)
    assert np.linalg.norm(P2[0] - X) <= 1e-12 * max(np.linalg.norm(X), 1.0)


def test_converged_reports_are_feasible_independently(rng):
    inst, prob = two_antenna_tx(7)
    rep = cs.solve(tx_program(prob, 1.0))
    if rep.status is cs.Status.CONVERGED:
        assert prob.violation(rep.solution) <= 1e-7 * max(prob.P_t, 1.0)
        assert rep.stationarity < 1e-6


@pytest.mark.parametrize("engine", ["first_order", "conic"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_two_antenna_grid_oracle(engine, seed):
    _, prob = two_antenna_tx(seed)
    solver = cs.solve if engine == "first_order" else conic.solve
    kw = {"tol": 1e-9} if engine == "first_order" else {}
    _, val = solve_tx(prob, solver=solver, **kw)
    grid, _ = grid_best_tx(prob.fims[0], prob.P_t)
    assert val <= grid * (1 + 1e-3)
    assert abs(val - grid) <= 1e-3 * grid


def test_conic_backend_matches_first_order_on_sdr(rng):
    st_ = sca_state(random_instance(rng, P_s=10.0))
    prog = build_sdr_program(st_, st_.cfg.a_max)
    a = conic.solve(prog)
    b = cs.solve(prog, x0=[st_.Theta0], tol=1e-8)
    assert a.violation <= 1e-7 * prog.scale()
    assert a.objective <= b.objective * (1 + 1e-4)


def test_conic_requires_structured_objective():
    prog = cs.PsdProgram(dims=[2], objective=trace_obj)
    with pytest.raises(ValueError):
        conic.solve(prog)


def test_hermitian_packing_roundtrip(rng):
    X = random_hermitian(rng, 4)
    assert np.allclose(conic.unpack_herm(conic.pack_herm(X), 4), X)
    C = random_hermitian(rng, 4)
    # the coefficient vector reproduces the real inner product
    assert conic.herm_coeffs(C) @ conic.pack_herm(X) == pytest.approx(cs.inner(C, X))
