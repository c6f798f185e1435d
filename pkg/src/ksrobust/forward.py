"""Forward solver for u_t + u_xxxx + u_xx + u u_x = f on (-L, L).

The fourth-order operator is split with w = u_xx into two second-order
equations discretised by P1 elements. Time stepping is the theta scheme for
the linear part combined with second-order Adams-Bashforth extrapolation of
the convection term (3/2, -1/2); the first step uses N(u^0) alone.

One step solves, on interior rows,

    M u^{n+1} + dt*theta*(M - K) w^{n+1}
        = M u^n + dt*(theta - 1)*(M - K) w^n - dt*(a N(u^n) + b N(u^{n-1})) + dt*F^{n+1}
    M w^{n+1} + K u^{n+1} = 0

with Dirichlet rows u = 0 and w = w_bc(t) at both ends.

Space-time fields are plain arrays of shape ``(n_steps + 1, n_nodes)``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFinite
from .fem import Mesh1D, assemble_mass, assemble_nonlinear, assemble_stiffness, build_mesh, nonlinear_jvp
from .linalg import BandedLU, BandedMatrix, interleave_blocks

DEFAULT_THETA = 0.75


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError("the two-step scheme needs n_steps >= 2")

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            raise ValueError(f"dt={dt} does not divide T={T}")
        return cls(float(T), n)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    c = np.ones(grid.n_steps + 1)
    c[[0, -1]] = 0.5
    return c


def _dirichlet_rows(B: BandedMatrix, rows, diag: float) -> BandedMatrix:
    out = BandedMatrix(B.n, B.lower_bw, B.upper_bw, B.bands.copy())
    for i in rows:
        for j in range(max(0, i - B.lower_bw), min(B.n, i + B.upper_bw + 1)):
            out.bands[B.upper_bw + i - j, j] = 0.0
        if diag:
            out.bands[B.upper_bw, i] = diag
    return out


class StepSystem:
    """Matrices and factorisations for one (mesh, dt, theta) triple."""

    def __init__(self, mesh: Mesh1D, dt: float, theta: float):
        if not 0.0 < theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {theta}")
        self.mesh = mesh
        self.dt = float(dt)
        self.theta = float(theta)
        n = mesh.n_nodes
        self.n = n
        self.M = assemble_mass(mesh)
        self.K = assemble_stiffness(mesh)
        self.MK = self.M - self.K
        self.interior = np.ones(n, dtype=bool)
        self.interior[[0, -1]] = False
        bnd = (0, n - 1)
        A11 = _dirichlet_rows(self.M, bnd, 1.0)
        A12 = _dirichlet_rows(self.MK.scaled(self.dt * self.theta), bnd, 0.0)
        A21 = _dirichlet_rows(self.K, bnd, 0.0)
        A22 = _dirichlet_rows(self.M, bnd, 1.0)
        self.blocks = (A11, A12, A21, A22)
        self.A = interleave_blocks(A11, A12, A21, A22)
        self.lu = BandedLU(self.A)
        self.w_lu = BandedLU(A22)

    def explicit_part(self, u_n, w_n) -> np.ndarray:
        """``M u^n + dt (theta - 1)(M - K) w^n`` (all rows)."""
        return self.M.matvec(u_n) + (self.dt * (self.theta - 1.0)) * self.MK.matvec(w_n)

    def solve(self, rhs_u: np.ndarray, w_bc=(0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
        """Solve the step system given the u-row right-hand side (interior entries used)."""
        rhs = np.zeros(2 * self.n)
        rhs[0::2] = rhs_u
        rhs[0] = rhs[-2] = 0.0
        rhs[1] = w_bc[0]
        rhs[-1] = w_bc[1]
        x = self.lu.solve(rhs)
        return x[0::2].copy(), x[1::2].copy()

    def solve_transpose(self, src_u: np.ndarray, src_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``A^T lam = src``; returns the multipliers of the u-rows and w-rows."""
        rhs = np.empty(2 * self.n)
        rhs[0::2] = src_u
        rhs[1::2] = src_w
        x = self.lu.solve(rhs, trans=True)
        return x[0::2].copy(), x[1::2].copy()

    def explicit_part_T(self, lam_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Transpose of the explicit operator acting on u-row multipliers."""
        lam = np.where(self.interior, lam_u, 0.0)
        return self.M.matvec(lam), (self.dt * (self.theta - 1.0)) * self.MK.matvec(lam)

    def second_derivative(self, u: np.ndarray, w_bc=(0.0, 0.0)) -> np.ndarray:
        """Weak second derivative: ``M w = -K u`` on interior rows, w = w_bc at the ends."""
        rhs = -self.K.matvec(u)
        rhs[0], rhs[-1] = w_bc
        return self.w_lu.solve(rhs)


_SYSTEMS: OrderedDict = OrderedDict()


def step_system(mesh: Mesh1D, dt: float, theta: float) -> StepSystem:
    key = (mesh.key, float(dt), float(theta))
    sys = _SYSTEMS.get(key)
    if sys is None:
        sys = StepSystem(build_mesh(*mesh.key), dt, theta)
        _SYSTEMS[key] = sys
        if len(_SYSTEMS) > 32:
            _SYSTEMS.popitem(last=False)
    else:
        _SYSTEMS.move_to_end(key)
    return sys


LoadProvider = Callable[[int], np.ndarray]


@dataclass
class ForwardProblem:
    """Everything needed to march the KS equation forward.

    ``forcing`` is either ``None``, an array of load vectors with one row per
    time level, or a callable ``n -> load`` returning ``(f(., t_n), phi_i)``.
    ``w_boundary`` returns the values of w = u_xx at (-L, L) at time t, or is
    an ``(n_steps + 1, 2)`` array of those values per level; ``None`` means
    homogeneous data.
    """

    mesh: Mesh1D
    grid: TimeGrid
    u0: np.ndarray
    theta: float = DEFAULT_THETA
    forcing: LoadProvider | np.ndarray | None = None
    w_boundary: Callable[[float], tuple[float, float]] | np.ndarray | None = None
    nonlinear: bool = True

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.u0.shape != (self.mesh.n_nodes,):
            raise ValueError("initial datum does not match the mesh")
        if abs(self.u0[0]) > 1e-12 or abs(self.u0[-1]) > 1e-12:
            raise ValueError("initial datum must vanish at both ends")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if isinstance(self.forcing, np.ndarray):
            expected = (self.grid.n_steps + 1, self.mesh.n_nodes)
            if self.forcing.shape != expected:
                raise ValueError(f"forcing array has shape {self.forcing.shape}, expected {expected}")
        if isinstance(self.w_boundary, np.ndarray) and self.w_boundary.shape != (self.grid.n_steps + 1, 2):
            raise ValueError(f"w_boundary array has shape {self.w_boundary.shape}, expected {(self.grid.n_steps + 1, 2)}")

    @property
    def system(self) -> StepSystem:
        return step_system(self.mesh, self.grid.dt, self.theta)

    def load(self, n: int) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.mesh.n_nodes)
        if isinstance(self.forcing, np.ndarray):
            return self.forcing[n]
        return np.asarray(self.forcing(n), dtype=float)

    def w_bc(self, n: int) -> tuple[float, float]:
        if self.w_boundary is None:
            return (0.0, 0.0)
        if isinstance(self.w_boundary, np.ndarray):
            return float(self.w_boundary[n, 0]), float(self.w_boundary[n, 1])
        wl, wr = self.w_boundary(n * self.grid.dt)
        return float(wl), float(wr)


def _advance(prob: ForwardProblem, u_n, w_n, nl, load, n_next):
    sys = prob.system
    rhs = sys.explicit_part(u_n, w_n) + sys.dt * (load - nl)
    return sys.solve(rhs, prob.w_bc(n_next))


def tab2_step(prob: ForwardProblem, u_n, u_nm1, w_n, f_np1, n_next: int = 2):
    """One two-step update; ``f_np1`` is the load vector at the new level."""
    if prob.nonlinear:
        nl = 1.5 * assemble_nonlinear(prob.mesh, u_n) - 0.5 * assemble_nonlinear(prob.mesh, u_nm1)
    else:
        nl = 0.0
    return _advance(prob, u_n, w_n, nl, np.asarray(f_np1, dtype=float), n_next)


def bootstrap_step(prob: ForwardProblem, u_0, w_0, f_1):
    """First step: as :func:`tab2_step` with the convection term taken at level 0 only."""
    nl = assemble_nonlinear(prob.mesh, u_0) if prob.nonlinear else 0.0
    return _advance(prob, u_0, w_0, nl, np.asarray(f_1, dtype=float), 1)


def initial_w(mesh: Mesh1D, u0: np.ndarray, w_bc=(0.0, 0.0)) -> np.ndarray:
    # dt/theta are irrelevant for this solve; any cached system on the mesh will do
    sys = step_system(mesh, 1.0, DEFAULT_THETA)
    return sys.second_derivative(np.asarray(u0, dtype=float), w_bc)


def solve_forward(prob: ForwardProblem, trajectory: bool = True):
    """March from t = 0 to T.

    Returns ``(u, w)``, each ``(n_steps + 1, n_nodes)``; with
    ``trajectory=False`` only the final levels are kept and returned as vectors.
    """
    mesh, grid = prob.mesh, prob.grid
    sys = prob.system
    nt, nn = grid.n_steps, mesh.n_nodes
    dt = sys.dt
    rows = nt + 1 if trajectory else 2
    u = np.empty((rows, nn))
    w = np.empty((rows, nn))
    u[0] = prob.u0
    w[0] = sys.second_derivative(prob.u0, prob.w_bc(0))
    N_prev = assemble_nonlinear(mesh, u[0]) if prob.nonlinear else None
    for n in range(nt):
        i, j = (n, n + 1) if trajectory else (n % 2, (n + 1) % 2)
        if prob.nonlinear:
            N_cur = N_prev if n == 0 else assemble_nonlinear(mesh, u[i])
            nl = N_cur if n == 0 else 1.5 * N_cur - 0.5 * N_prev
            N_prev = N_cur
        else:
            nl = 0.0
        rhs = sys.explicit_part(u[i], w[i]) + dt * (prob.load(n + 1) - nl)
        u[j], w[j] = sys.solve(rhs, prob.w_bc(n + 1))
        if not (np.isfinite(u[j]).all() and np.isfinite(w[j]).all()):
            raise NonFinite(f"non-finite values after step {n + 1} (t={(n + 1) * dt:g})", step=n + 1)
    if trajectory:
        return u, w
    last = nt % 2
    return u[last].copy(), w[last].copy()


def spacetime_inner(mesh: Mesh1D, grid: TimeGrid, a: np.ndarray, b: np.ndarray, M: BandedMatrix | None = None) -> float:
    """L2(Q) inner product: mass matrix in space, trapezoid in time."""
    M = assemble_mass(mesh) if M is None else M
    c = trapezoid_weights(grid) * grid.dt
    return float(np.sum(c * np.einsum("ij,ij->i", np.asarray(a, dtype=float), M.matvec(b))))


def spacetime_norm(mesh: Mesh1D, grid: TimeGrid, a: np.ndarray, M: BandedMatrix | None = None) -> float:
    return float(np.sqrt(max(spacetime_inner(mesh, grid, a, a, M), 0.0)))


def tangent_forward(sys: StepSystem, u: np.ndarray, loads: np.ndarray, nonlinear: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Linearisation of :func:`solve_forward` about the trajectory ``u``.

    ``loads[n]`` perturbs the load at level n (row 0 is ignored); the initial
    perturbation is zero. Returns ``(du, dw)``.
    """
    nt = u.shape[0] - 1
    du = np.zeros_like(u)
    dw = np.zeros_like(u)
    for m in range(1, nt + 1):
        rhs = sys.explicit_part(du[m - 1], dw[m - 1]) + sys.dt * loads[m]
        # du^0 = 0, so the starter step contributes nothing here
        if nonlinear and m >= 2:
            lin = 1.5 * nonlinear_jvp(u[m - 1], du[m - 1]) - 0.5 * nonlinear_jvp(u[m - 2], du[m - 2])
            rhs = rhs - sys.dt * lin
        du[m], dw[m] = sys.solve(rhs)
    return du, dw
