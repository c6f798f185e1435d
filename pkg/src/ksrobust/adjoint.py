"""Backward solvers: the adjoint state z, the coupled (u, z) system and the
adjoint pair (phi1, phi2) used by the leader gradient.

All backward recursions here are the exact transposes of the forward TAB2
recursion (discretise-then-optimise). The resulting gradients are exact
derivatives of the discrete functionals, which is what the finite-difference
checks measure. In the continuum limit they solve

    -z_t + z_xxxx + z_xx - u z_x = (u - u_d) 1_{O_d},    z(T) = 0,

and the linear pair of the leader problem.

Adjoint fields are normalised so that the L2(Q) gradient of a functional with
respect to a distributed force f is the field itself: a load change dF^n
changes the functional by ``sum_n c_n dt z^n . dF^n`` with trapezoid weights
``c_n``. Level 0 carries zero because the load at t = 0 never enters the scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, PicardDiverged
from .fem import MaskedMass, Mesh1D, Subdomain, indicator_mask, nonlinear_hvp, nonlinear_vjp
from .forward import (
    DEFAULT_THETA,
    ForwardProblem,
    StepSystem,
    TimeGrid,
    solve_forward,
    spacetime_norm,
    step_system,
    tangent_forward,
    trapezoid_weights,
)

AB_A, AB_B = 1.5, -0.5


@dataclass(frozen=True)
class CoupledSolveConfig:
    ell: float
    gamma: float
    O: Subdomain | None = None
    O_d: Subdomain | None = None
    theta: float = DEFAULT_THETA
    picard_tol: float = 1e-8
    picard_max: int = 200
    relaxation: float = 1.0

    def __post_init__(self):
        if not (self.ell > 0 and self.gamma > 0):
            raise ValueError("ell and gamma must be positive")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max < 1:
            raise ValueError("picard_max must be >= 1")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")


@dataclass
class AdjointProblem:
    """Backward problem frozen around a state trajectory.

    ``source[n]`` is the load of the right-hand side at level n, e.g.
    ``M_{O_d}(u^n - u_d^n)``. ``terminal_load`` is the derivative of a
    terminal cost with respect to u^N (``None`` for z, whose terminal value is 0).
    """

    mesh: Mesh1D
    grid: TimeGrid
    u_traj: np.ndarray
    source: np.ndarray
    theta: float = DEFAULT_THETA
    terminal_load: np.ndarray | None = None
    nonlinear: bool = True

    def __post_init__(self):
        shape = (self.grid.n_steps + 1, self.mesh.n_nodes)
        for name in ("u_traj", "source"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            setattr(self, name, arr)


def _check_finite(arr, what):
    bad = ~np.isfinite(arr).all(axis=-1)
    if bad.any():
        step = int(np.flatnonzero(bad)[-1])
        raise NonFinite(f"non-finite {what} at level {step}", step=step)


def backward_sweep(sys: StepSystem, u: np.ndarray, src_u: np.ndarray, nonlinear: bool = True) -> np.ndarray:
    """Multipliers of the u-rows of the forward recursion.

    Solves, for m = N..1 with lam^{N+1} = lam^{N+2} = 0,

        A^T lam^m = B^T lam^{m+1} - dt J(u^m)^T D (a lam1^{m+1} + b lam1^{m+2}) + src_u[m]

    where ``src_u[m]`` is already scaled by the time weight. Returns
    ``D lam1`` with row 0 zero.
    """
    nt = u.shape[0] - 1
    lam = np.zeros_like(u)
    zero = np.zeros(u.shape[1])
    for m in range(nt, 0, -1):
        lam1 = lam[m + 1] if m < nt else zero
        lam2 = lam[m + 2] if m + 2 <= nt else zero
        lam[m] = backward_step(sys, lam1, lam2, src_u[m], u[m] if nonlinear else None)
    _check_finite(lam, "adjoint values")
    return lam


def backward_step(sys: StepSystem, lam1, lam2, src_u, u_m=None) -> np.ndarray:
    """One level of :func:`backward_sweep`; ``u_m=None`` drops the convection term."""
    bu, bw = sys.explicit_part_T(lam1)
    rhs_u = np.asarray(src_u, dtype=float) + bu
    if u_m is not None:
        rhs_u = rhs_u - sys.dt * nonlinear_vjp(u_m, AB_A * lam1 + AB_B * lam2)
    lu, _ = sys.solve_transpose(rhs_u, bw)
    return np.where(sys.interior, lu, 0.0)


def solve_adjoint_z(prob: AdjointProblem) -> np.ndarray:
    """Adjoint state z, one row per time level (row 0 is zero)."""
    sys = step_system(prob.mesh, prob.grid.dt, prob.theta)
    c = trapezoid_weights(prob.grid)
    src = (c * prob.grid.dt)[:, None] * prob.source
    if prob.terminal_load is not None:
        src[-1] += prob.terminal_load
    lam = backward_sweep(sys, prob.u_traj, src, prob.nonlinear)
    return lam / c[:, None]


class ControlOperators:
    """Masked mass matrices for one (mesh, O, O_d, omega) configuration."""

    def __init__(self, mesh: Mesh1D, O: Subdomain | None, O_d: Subdomain | None, omega: Subdomain | None = None):
        self.mesh = mesh
        self.M = step_system(mesh, 1.0, DEFAULT_THETA).M
        self.mask_O = indicator_mask(mesh, O)
        self.mask_Od = indicator_mask(mesh, O_d)
        self.mask_omega = indicator_mask(mesh, omega)
        self.M_O = MaskedMass(self.M, self.mask_O)
        self.M_Od = MaskedMass(self.M, self.mask_Od)
        self.M_omega = MaskedMass(self.M, self.mask_omega)

    def control_load(self, h=None, v=None, psi=None) -> np.ndarray:
        """``M_omega h + M_O v + M psi`` for any subset of the three forces."""
        out = 0.0
        if h is not None:
            out = out + self.M_omega.matvec(h)
        if v is not None:
            out = out + self.M_O.matvec(v)
        if psi is not None:
            out = out + self.M.matvec(psi)
        if np.isscalar(out):
            raise ValueError("no force given")
        return out

    def coupling_load(self, z: np.ndarray, ell: float, gamma: float) -> np.ndarray:
        """Load of the robust pair ``v = -z/ell^2 on O``, ``psi = z/gamma^2``."""
        return -self.M_O.matvec(z) / ell**2 + self.M.matvec(z) / gamma**2


def _zeros(mesh, grid):
    return np.zeros((grid.n_steps + 1, mesh.n_nodes))


def solve_coupled_uz(mesh: Mesh1D, grid: TimeGrid, u0, h, u_d, cfg: CoupledSolveConfig,
                     omega: Subdomain | None = None, z_init=None, ops: ControlOperators | None = None):
    """Fixed point of the state equation driven by the robust pair and its adjoint.

    Picard iteration with relaxation ``r`` (halved whenever the change grows).
    Returns ``(u, z, iterations)``. The returned z is the adjoint of the
    returned u.
    """
    ops = ops or ControlOperators(mesh, cfg.O, cfg.O_d, omega)
    h = _zeros(mesh, grid) if h is None else np.asarray(h, dtype=float)
    u_d = _zeros(mesh, grid) if u_d is None else np.asarray(u_d, dtype=float)
    base = ops.control_load(h=h)
    z = _zeros(mesh, grid) if z_init is None else np.array(z_init, dtype=float)
    r = cfg.relaxation
    history: list[float] = []
    u_prev = None
    for k in range(1, cfg.picard_max + 1):
        prob = ForwardProblem(mesh, grid, u0, cfg.theta, forcing=base + ops.coupling_load(z, cfg.ell, cfg.gamma))
        u, _ = solve_forward(prob)
        z_new = solve_adjoint_z(AdjointProblem(mesh, grid, u, ops.M_Od.matvec(u - u_d), cfg.theta))
        du = spacetime_norm(mesh, grid, u if u_prev is None else u - u_prev, ops.M)
        dz = spacetime_norm(mesh, grid, z_new - z, ops.M)
        scale = spacetime_norm(mesh, grid, u, ops.M) + spacetime_norm(mesh, grid, z_new, ops.M)
        rel = (du + dz) / scale if scale > 0 else 0.0
        history.append(rel)
        if rel <= cfg.picard_tol:
            return u, z_new, k
        if len(history) > 1 and rel > history[-2]:
            r = max(0.5 * r, 1.0 / 64.0)
        z = (1.0 - r) * z + r * z_new
        u_prev = u
    raise PicardDiverged(
        f"coupled (u, z) iteration did not reach {cfg.picard_tol:g} in {cfg.picard_max} sweeps "
        f"(last change {history[-1]:.3e})",
        iterations=cfg.picard_max,
        history=history,
    )


def solve_adjoint_pair(mesh: Mesh1D, grid: TimeGrid, u, z, terminal_phi1, cfg: CoupledSolveConfig,
                       ops: ControlOperators | None = None):
    """Adjoint pair of the leader functional through the coupled (u, z) system.

    phi1 runs backward from ``terminal_phi1`` (normally ``-beta (u(T) - u_bar(T))``)
    and phi2 runs forward from zero. Each sweep is linear; the two are
    coupled through O_d (phi2 -> phi1) and the weights ell, gamma
    (phi1 -> phi2), and iterated to a fixed point. The L2(Q) gradient of the
    leader functional is ``(h - phi1) 1_omega``.

    Returns ``(phi1, phi2, iterations)``.
    """
    ops = ops or ControlOperators(mesh, cfg.O, cfg.O_d)
    sys = step_system(mesh, grid.dt, cfg.theta)
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    c = trapezoid_weights(grid)
    cdt = (c * grid.dt)[:, None]
    nt = grid.n_steps
    # u-row multipliers of the z recursion, needed by its linearisation in u
    lam_z = c[:, None] * z
    r_z = np.zeros_like(z)
    r_z[1:nt] = AB_A * lam_z[2 : nt + 1]
    r_z[1 : nt - 1] += AB_B * lam_z[3 : nt + 1]

    terminal = ops.M.matvec(np.asarray(terminal_phi1, dtype=float))
    phi2 = _zeros(mesh, grid)
    phi1 = _zeros(mesh, grid)
    norm = lambda a: spacetime_norm(mesh, grid, a, ops.M)
    for k in range(1, cfg.picard_max + 1):
        # backward: source -M_Od phi2 + (linearised advection of z) phi2
        src = -cdt * ops.M_Od.matvec(phi2) + grid.dt * nonlinear_hvp(r_z, phi2)
        src[-1] += terminal
        p = backward_sweep(sys, u, src, nonlinear=True)
        phi1_new = p / c[:, None]
        # forward tangent: phi2 driven by (ell^-2 M_O - gamma^-2 M) phi1
        load = ops.M_O.matvec(phi1_new) / cfg.ell**2 - ops.M.matvec(phi1_new) / cfg.gamma**2
        phi2_new, _ = tangent_forward(sys, u, load)
        _check_finite(phi2_new, "phi2 values")
        change = norm(phi1_new - phi1) + norm(phi2_new - phi2)
        scale = norm(phi1_new) + norm(phi2_new)
        phi1, phi2 = phi1_new, phi2_new
        if change <= cfg.picard_tol * scale or scale == 0.0:
            return phi1, phi2, k
    raise PicardDiverged(
        f"adjoint pair did not converge in {cfg.picard_max} sweeps", iterations=cfg.picard_max
    )

