import numpy as np
import pytest

from ksrobust.adjoint import ControlOperators, CoupledSolveConfig
from ksrobust.errors import MaxIterReached
from ksrobust.fem import Subdomain, build_mesh
from ksrobust.forward import ForwardProblem, TimeGrid, solve_forward
from ksrobust.io import desired_state
from ksrobust.robust import FunctionalBreakdown, eval_Jr, grad_psi, grad_v, run_robust, step_size_update

import gradcheck
import oracles

L = 30.0


def test_breakdown_total():
    fb = FunctionalBreakdown.from_parts(1.5, 0.25, 0.75)
    assert fb.total == 1.0


def test_eval_Jr_zero():
    mesh = build_mesh(L, 4)
    grid = TimeGrid(1.0, 2)
    z = np.zeros((3, 5))
    fb = eval_Jr(mesh, grid, z, z, z, z, CoupledSolveConfig(40.0, 40.0, Subdomain(-10, 10)))
    assert (fb.tracking, fb.control_cost, fb.disturbance_gain, fb.total) == (0, 0, 0, 0)


def test_eval_Jr_perfect_tracking():
    mesh = build_mesh(L, 8)
    grid = TimeGrid(1.0, 4)
    u = np.random.default_rng(0).standard_normal((5, 9))
    z = np.zeros_like(u)
    assert eval_Jr(mesh, grid, u, z, z, u, CoupledSolveConfig(1.0, 1.0, None, Subdomain(0, 10))).total == 0.0


def test_eval_Jr_direct_summation():
    # piecewise-constant nodal data on n_elems=4, n_steps=2
    mesh = build_mesh(L, 4)
    grid = TimeGrid(2.0, 2)
    O, O_d = Subdomain(-16, 16), Subdomain(-30, 0)
    cfg = CoupledSolveConfig(3.0, 5.0, O, O_d)
    u = np.array([[0, 1, 1, 2, 0], [0, 2, 2, 2, 0], [0, -1, 3, 3, 0]], dtype=float)
    u_d = np.full((3, 5), 0.5)
    v = np.array([[0, 1, 1, 1, 0]] * 3, dtype=float) * np.array([[1], [2], [3]])
    psi = np.array([[1, 1, 0, 0, 0], [0, 0, 1, 1, 0], [2, 2, 2, 2, 2]], dtype=float)
    M = oracles.dense_mass(L, 4)
    x = mesh.nodes
    rO = ((x >= O.a) & (x <= O.b)).astype(float)
    rOd = ((x >= O_d.a) & (x <= O_d.b)).astype(float)
    c = np.array([0.5, 1.0, 0.5]) * grid.dt
    tr = cg = dg = 0.0
    for n in range(3):
        e = (u[n] - u_d[n]) * rOd
        tr += 0.5 * c[n] * e @ M @ e
        cg += 0.5 * 9.0 * c[n] * (v[n] * rO) @ M @ (v[n] * rO)
        dg += 0.5 * 25.0 * c[n] * psi[n] @ M @ psi[n]
    fb = eval_Jr(mesh, grid, u, v, psi, u_d, cfg)
    assert fb.tracking == pytest.approx(tr, rel=1e-12)
    assert fb.control_cost == pytest.approx(cg, rel=1e-12)
    assert fb.disturbance_gain == pytest.approx(dg, rel=1e-12)
    assert fb.total == fb.tracking + fb.control_cost - fb.disturbance_gain


def test_gradients_trivial_and_stationary():
    mesh = build_mesh(L, 10)
    rng = np.random.default_rng(1)
    z = rng.standard_normal((3, 11))
    O = Subdomain(-10, 10)
    zero = np.zeros_like(z)
    assert np.all(grad_v(mesh, zero, zero, 40.0, O) == 0.0)
    assert np.all(grad_psi(zero, zero, 40.0) == 0.0)
    assert np.abs(grad_v(mesh, z, -z / 40.0**2, 40.0, O)).max() < 1e-15
    assert np.abs(grad_psi(z, z / 7.0**2, 7.0)).max() < 1e-15
    g = grad_v(mesh, z, zero, 40.0, O)
    assert np.all(g[:, np.abs(mesh.nodes) > 10] == 0.0)


def test_gradients_match_finite_differences():
    errs = gradcheck.robust_gradient_errors(n_dirs=3)
    assert max(errs["grad_v"]) <= 1e-3
    assert max(errs["grad_psi"]) <= 1e-3


@pytest.mark.parametrize(
    "prev,gn,fp,expected",
    [(0.5, 2.0, 0.0, 0.5), (0.5, 2.0, 0.4, 0.3), (0.5, 0.5, 0.4, 0.1), (0.5, 2.0, 10.0, 1e-6), (0.5, 0.1, -3.0, 1.0)],
)
def test_step_size_update(prev, gn, fp, expected):
    assert step_size_update(prev, gn, fp) == pytest.approx(expected, rel=1e-12)


def test_run_robust_requires_positive_tol():
    mesh = build_mesh(L, 8)
    with pytest.raises(ValueError):
        run_robust(mesh, TimeGrid(1.0, 4), np.zeros(9), None, None, CoupledSolveConfig(1.0, 1.0), tol=0.0)


def test_zero_is_the_saddle_when_tracking_is_perfect():
    mesh = build_mesh(L, 20)
    grid = TimeGrid(1.0, 10)
    u0 = np.sin(np.pi * mesh.nodes / 30) ** 2
    u_free, _ = solve_forward(ForwardProblem(mesh, grid, u0))
    cfg = CoupledSolveConfig(40.0, 40.0, Subdomain(-10, 10), Subdomain(-5, 20))
    state, report = run_robust(mesh, grid, u0, None, u_free, cfg, tol=1e-6)
    assert report.converged and state.k == 0
    assert np.all(state.v == 0.0) and np.all(state.psi == 0.0)


def fig2_run(max_iter=200, tol=1e-6, **kw):
    mesh = build_mesh(L, 50)
    grid = TimeGrid.from_dt(1.0, 2e-2)
    cfg = CoupledSolveConfig(40.0, 40.0, Subdomain(-10, 10), None)
    u0 = np.sin(np.pi * mesh.nodes / 30) ** 2
    return mesh, grid, cfg, run_robust(mesh, grid, u0, None, desired_state("fig3", mesh, grid), cfg,
                                       tol=tol, max_iter=max_iter, **kw)


def test_fig2_converges_with_support_and_monotone_updates():
    mesh, grid, cfg, (state, report) = fig2_run()
    assert report.converged
    assert state.grad_norm < 1e-6
    assert np.all(state.v[:, np.abs(mesh.nodes) > 10] == 0.0)
    assert np.abs(state.psi[:, np.abs(mesh.nodes) > 10]).max() > 0.0
    updates = report.notes["updates"][:20]
    assert updates
    for kind, before, after in updates:
        slack = 1e-10 * max(1.0, abs(before))
        if kind == "psi":
            assert after >= before - slack
        else:
            assert after <= before + slack
    assert [r.iter for r in report.rows] == list(range(len(report.rows)))
    assert 0.0 < state.alpha <= 1.0 and 0.0 < state.beta_step <= 1.0


def test_max_iter_returns_best_or_raises():
    mesh, grid, cfg, (state, report) = fig2_run(max_iter=1, tol=1e-14)
    assert not report.converged and report.reason.startswith("max_iter")
    assert state.grad_norm == min(r.grad_v_norm + r.grad_psi_norm for r in report.rows)
    with pytest.raises(MaxIterReached) as info:
        fig2_run(max_iter=1, tol=1e-14, raise_on_maxiter=True)
    assert info.value.state is not None


def test_v0_is_restricted_to_O():
    mesh = build_mesh(L, 20)
    grid = TimeGrid(1.0, 10)
    cfg = CoupledSolveConfig(40.0, 40.0, Subdomain(-10, 10))
    v0 = np.ones((11, 21))
    state, report = run_robust(mesh, grid, np.zeros(21), None, None, cfg, max_iter=0, v0=v0)
    assert np.all(state.v[:, ~ControlOperators(mesh, cfg.O, None).mask_O] == 0.0)
