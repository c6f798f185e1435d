"""Saddle point of the robust functional at a fixed leader control.

    J_r(v, psi) = 1/2 ||u - u_d||^2_{O_d x (0,T)} + ell^2/2 ||v||^2_{O x (0,T)} - gamma^2/2 ||psi||^2_Q

The follower v (supported in O) minimises, the disturbance psi maximises.
Gradients in L2(Q) are (ell^2 v + z) 1_O and z - gamma^2 psi, with z the
adjoint state, so the saddle satisfies v = -z/ell^2 on O and psi = z/gamma^2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .adjoint import AdjointProblem, ControlOperators, CoupledSolveConfig, solve_adjoint_z
from .errors import MaxIterReached
from .fem import Mesh1D, Subdomain, indicator_mask
from .forward import ForwardProblem, TimeGrid, solve_forward, spacetime_inner, spacetime_norm
from .report import IterRecord, RunReport

STEP_MIN, STEP_MAX = 1e-6, 1.0
INITIAL_STEP = 0.5
MAX_HALVINGS = 30


@dataclass(frozen=True)
class FunctionalBreakdown:
    tracking: float
    control_cost: float
    disturbance_gain: float
    total: float

    @classmethod
    def from_parts(cls, tracking, control_cost, disturbance_gain):
        return cls(tracking, control_cost, disturbance_gain, tracking + control_cost - disturbance_gain)


def eval_Jr(mesh: Mesh1D, grid: TimeGrid, u, v, psi, u_d, cfg: CoupledSolveConfig,
            ops: ControlOperators | None = None) -> FunctionalBreakdown:
    ops = ops or ControlOperators(mesh, cfg.O, cfg.O_d)
    e = np.asarray(u, dtype=float) - np.asarray(u_d, dtype=float)
    tracking = 0.5 * spacetime_inner(mesh, grid, e, e, ops.M_Od)
    control = 0.5 * cfg.ell**2 * spacetime_inner(mesh, grid, v, v, ops.M_O)
    disturbance = 0.5 * cfg.gamma**2 * spacetime_inner(mesh, grid, psi, psi, ops.M)
    return FunctionalBreakdown.from_parts(tracking, control, disturbance)


def grad_v(mesh: Mesh1D, z, v, ell: float, O: Subdomain | None) -> np.ndarray:
    return np.where(indicator_mask(mesh, O), ell**2 * np.asarray(v) + np.asarray(z), 0.0)


def grad_psi(z, psi, gamma: float) -> np.ndarray:
    return np.asarray(z) - gamma**2 * np.asarray(psi)


def step_size_update(prev: float, grad_norm: float, directional_derivative: float) -> float:
    """Preconditioned step update, clamped to [1e-6, 1].

    ``directional_derivative`` is f'(prev), the slope of the functional being
    minimised along the current direction at the current step.
    """
    if grad_norm > 1.0:
        nxt = prev - directional_derivative / grad_norm
    else:
        nxt = prev - directional_derivative
    return float(min(max(nxt, STEP_MIN), STEP_MAX))


@dataclass
class RobustState:
    v: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    z: np.ndarray
    alpha: float
    beta_step: float
    k: int
    J: FunctionalBreakdown | None = None
    grad_norm: float = np.inf


class _Evaluator:
    """Forward + adjoint solve and functional value for given (v, psi)."""

    def __init__(self, mesh, grid, u0, h, u_d, cfg, omega):
        self.mesh, self.grid, self.u0, self.cfg = mesh, grid, u0, cfg
        self.ops = ControlOperators(mesh, cfg.O, cfg.O_d, omega)
        nshape = (grid.n_steps + 1, mesh.n_nodes)
        self.u_d = np.zeros(nshape) if u_d is None else np.asarray(u_d, dtype=float)
        self.base = np.zeros(nshape) if h is None else self.ops.control_load(h=h)
        self.calls = 0

    def __call__(self, v, psi):
        self.calls += 1
        ops = self.ops
        load = self.base + ops.control_load(v=v, psi=psi)
        u, _ = solve_forward(ForwardProblem(self.mesh, self.grid, self.u0, self.cfg.theta, forcing=load))
        z = solve_adjoint_z(AdjointProblem(self.mesh, self.grid, u, ops.M_Od.matvec(u - self.u_d), self.cfg.theta))
        J = eval_Jr(self.mesh, self.grid, u, v, psi, self.u_d, self.cfg, ops)
        return J, u, z

    def inner(self, a, b):
        return spacetime_inner(self.mesh, self.grid, a, b, self.ops.M)

    def norm(self, a):
        return spacetime_norm(self.mesh, self.grid, a, self.ops.M)


def _line_search(f_and_slope, f0, slope0, trial):
    """Step along a direction for a function to be decreased.

    ``f_and_slope(s)`` returns (value, slope, payload). The step comes from a
    secant on the slope between 0 and ``trial`` and is halved until the value
    does not increase. Returns ``(s, value, slope, payload)``; ``s = 0``
    (payload ``None``) when no decrease was found.
    """
    if not slope0 < 0.0:
        return 0.0, f0, slope0, None
    ft, st, pt = f_and_slope(trial)
    if st > slope0:
        s = trial * slope0 / (slope0 - st)
    else:
        s = trial if ft < f0 else 0.5 * trial
    if abs(s - trial) <= 1e-14 * trial:
        fs, ss, ps = ft, st, pt
    else:
        fs, ss, ps = f_and_slope(s)
    for _ in range(MAX_HALVINGS):
        if fs <= f0:
            return s, fs, ss, ps
        s *= 0.5
        fs, ss, ps = f_and_slope(s)
    return 0.0, f0, slope0, None


def run_robust(mesh: Mesh1D, grid: TimeGrid, u0, h, u_d, cfg: CoupledSolveConfig, tol: float = 1e-6,
               max_iter: int = 200, omega: Subdomain | None = None, v0=None, psi0=None,
               raise_on_maxiter: bool = False) -> tuple[RobustState, RunReport]:
    """Gradient ascent in psi, then descent in v, until the gradients vanish.

    Both updates use the gradients at the current iterate. Each step length
    is found by a secant on the directional slope seeded with the trial step
    from :func:`step_size_update`, then halved until J does not decrease
    (psi) or increase (v).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    t_start = time.perf_counter()
    ev = _Evaluator(mesh, grid, u0, h, u_d, cfg, omega)
    shape = (grid.n_steps + 1, mesh.n_nodes)
    mask_O = ev.ops.mask_O
    v = np.zeros(shape) if v0 is None else np.where(mask_O, v0, 0.0)
    psi = np.zeros(shape) if psi0 is None else np.array(psi0, dtype=float)
    alpha = beta = INITIAL_STEP
    J, u, z = ev(v, psi)
    report = RunReport()
    # (kind, J before, J after) for every accepted update
    trace = report.notes.setdefault("updates", [])
    best = None

    for k in range(max_iter + 1):
        gv = grad_v(mesh, z, v, cfg.ell, cfg.O)
        gp = grad_psi(z, psi, cfg.gamma)
        nv, np_ = ev.norm(gv), ev.norm(gp)
        state = RobustState(v, psi, u, z, alpha, beta, k, J, nv + np_)
        if best is None or state.grad_norm < best.grad_norm:
            best = state
        report.append(IterRecord(k, J.total, J.tracking, J.control_cost, J.disturbance_gain, nv, np_,
                                 alpha=alpha, beta_step=beta))
        if nv + np_ < tol:
            report.converged, report.reason = True, "gradient norm below tol"
            break
        if k == max_iter:
            break

        # ascent in psi: decrease -J along +gp
        def psi_trial(s):
            Js, us, zs = ev(v, psi + s * gp)
            return -Js.total, -ev.inner(grad_psi(zs, psi + s * gp, cfg.gamma), gp), (Js, us, zs)

        s, _, slope, payload = _line_search(psi_trial, -J.total, -np_**2, alpha)
        if s > 0:
            psi = psi + s * gp
            trace.append(("psi", J.total, payload[0].total))
            J, u, z = payload
            alpha = step_size_update(s, np_, slope)

        # descent in v along -gv, at the updated disturbance
        def v_trial(s):
            vs = v - s * gv
            Js, us, zs = ev(vs, psi)
            return Js.total, -ev.inner(grad_v(mesh, zs, vs, cfg.ell, cfg.O), gv), (Js, us, zs)

        slope0 = -ev.inner(grad_v(mesh, z, v, cfg.ell, cfg.O), gv)
        s, _, slope, payload = _line_search(v_trial, J.total, slope0, beta)
        if s > 0:
            v = v - s * gv
            trace.append(("v", J.total, payload[0].total))
            J, u, z = payload
            beta = step_size_update(s, nv, slope)

    report.elapsed = time.perf_counter() - t_start
    report.notes["evaluations"] = ev.calls
    if report.converged:
        return state, report
    report.reason = f"max_iter={max_iter} reached"
    if raise_on_maxiter:
        raise MaxIterReached(report.reason, state=best, report=report)
    return best, report
