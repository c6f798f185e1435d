"""Leader problem: steer u(., T) towards a target trajectory through h on omega.

For every leader h the follower and the disturbance play the robust saddle,
characterised by the coupled (u, z) system. The leader minimises

    G(h) = beta/2 ||u(., T) - u_bar(., T)||^2 + 1/2 ||h||^2_{omega x (0,T)}

by steepest descent with Armijo backtracking. The gradient is
``(h - phi1) 1_omega`` with phi1 from the adjoint pair.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .adjoint import ControlOperators, CoupledSolveConfig, solve_adjoint_pair, solve_coupled_uz
from .errors import KSError, MaxIterReached
from .fem import Mesh1D, Subdomain, indicator_mask
from .forward import TimeGrid, spacetime_inner, spacetime_norm
from .report import IterRecord, RunReport

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 30


@dataclass(frozen=True)
class RscConfig:
    beta: float
    cfg: CoupledSolveConfig
    omega: Subdomain | None = None
    tol: float = 1e-6
    rtol: float = 0.0
    max_outer: int = 50
    target: np.ndarray | None = field(default=None, repr=False, compare=False)
    continuation: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.tol < 0 or self.rtol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.max_outer < 0:
            raise ValueError("max_outer must be >= 0")


@dataclass
class RscState:
    h: np.ndarray
    u: np.ndarray
    z: np.ndarray
    phi1: np.ndarray | None
    phi2: np.ndarray | None
    terminal_error: float
    G: float


def _target(rsc: RscConfig, mesh: Mesh1D, grid: TimeGrid) -> np.ndarray:
    shape = (grid.n_steps + 1, mesh.n_nodes)
    if rsc.target is None:
        return np.zeros(shape)
    target = np.asarray(rsc.target, dtype=float)
    if target.shape != shape:
        raise ValueError(f"target has shape {target.shape}, expected {shape}")
    return target


def terminal_error(mesh: Mesh1D, u, u_bar, ops: ControlOperators) -> float:
    e = np.asarray(u)[-1] - np.asarray(u_bar)[-1]
    return float(np.sqrt(max(e @ ops.M.matvec(e), 0.0)))


def eval_G(mesh: Mesh1D, grid: TimeGrid, h, u, rsc: RscConfig, ops: ControlOperators | None = None) -> float:
    """Penalised leader functional for a state ``u`` already solved for ``h``."""
    ops = ops or ControlOperators(mesh, rsc.cfg.O, rsc.cfg.O_d, rsc.omega)
    err = terminal_error(mesh, u, _target(rsc, mesh, grid), ops)
    return 0.5 * rsc.beta * err**2 + 0.5 * spacetime_inner(mesh, grid, h, h, ops.M_omega)


def grad_G(mesh: Mesh1D, h, phi1, omega: Subdomain | None) -> np.ndarray:
    return np.where(indicator_mask(mesh, omega), np.asarray(h) - np.asarray(phi1), 0.0)


def line_search_alpha(objective: Callable, h, direction, G0: float, dir_norm_sq: float):
    """Armijo backtracking from alpha = 1.

    ``objective(h)`` returns ``(G, payload)``. Returns ``(alpha, G, payload)``;
    alpha is 0 (payload ``None``) if 30 halvings give no sufficient decrease,
    and 1 when the direction vanishes.
    """
    if dir_norm_sq == 0.0:
        return 1.0, G0, None
    alpha = 1.0
    for _ in range(MAX_HALVINGS + 1):
        G, payload = objective(h - alpha * direction)
        if G <= G0 - ARMIJO_C1 * alpha * dir_norm_sq:
            return alpha, G, payload
        alpha *= 0.5
    return 0.0, G0, None


def _run_single(mesh, grid, u0, u_d, rsc: RscConfig, h0, report: RunReport, iter_offset: int):
    cfg = rsc.cfg
    ops = ControlOperators(mesh, cfg.O, cfg.O_d, rsc.omega)
    u_bar = _target(rsc, mesh, grid)
    u_d = u_bar if u_d is None else np.asarray(u_d, dtype=float)
    shape = (grid.n_steps + 1, mesh.n_nodes)
    h = np.zeros(shape) if h0 is None else np.where(ops.mask_omega, h0, 0.0)

    def solve(hh, z_init=None):
        try:
            u, z, _ = solve_coupled_uz(mesh, grid, u0, hh, u_d, cfg, omega=rsc.omega, z_init=z_init, ops=ops)
        except KSError as exc:
            exc.args = (f"outer iteration {iter_offset + n}: {exc.args[0]}",) + exc.args[1:]
            raise
        return eval_G(mesh, grid, hh, u, rsc, ops), (u, z)

    n = 0
    G, (u, z) = solve(h)
    g0 = None
    phi1 = phi2 = None
    alpha = None
    for n in range(rsc.max_outer + 1):
        phi1, phi2, _ = solve_adjoint_pair(mesh, grid, u, z, -rsc.beta * (u[-1] - u_bar[-1]), cfg, ops=ops)
        d = grad_G(mesh, h, phi1, rsc.omega)
        dn = spacetime_norm(mesh, grid, d, ops.M)
        g0 = dn if g0 is None else g0
        err = terminal_error(mesh, u, u_bar, ops)
        report.append(IterRecord(iter_offset + n, G=G, terminal_error=err, alpha=alpha, grad_G_norm=dn))
        if dn <= max(rsc.tol, rsc.rtol * g0):
            report.converged, report.reason = True, "gradient norm below tol"
            break
        if n == rsc.max_outer:
            report.reason = f"max_outer={rsc.max_outer} reached"
            break
        alpha, G_new, payload = line_search_alpha(lambda hh: solve(hh, z), h, d, G, dn**2)
        if alpha == 0.0:
            report.reason = "line search stalled"
            break
        h = h - alpha * d
        G = G_new
        u, z = payload
    state = RscState(h, u, z, phi1, phi2, terminal_error(mesh, u, u_bar, ops), G)
    return state


def run_rsc(mesh: Mesh1D, grid: TimeGrid, u0, u_d, rsc: RscConfig, h0=None,
            raise_on_maxiter: bool = False) -> tuple[RscState, RunReport]:
    """Steepest descent on G over the leader control.

    ``u_d`` defaults to the target trajectory (tracked on O_d only). With
    ``rsc.continuation`` the run is repeated with 10 beta and 100 beta, each
    warm-started from the previous leader.
    """
    t_start = time.perf_counter()
    report = RunReport()
    report.notes["u_d"] = "target trajectory" if u_d is None else "given"
    betas = [rsc.beta * 10.0**j for j in range(3)] if rsc.continuation else [rsc.beta]
    h = h0
    for b in betas:
        report.converged, report.reason = False, ""
        stage = replace(rsc, beta=b)
        state = _run_single(mesh, grid, u0, u_d, stage, h, report, len(report.rows))
        h = state.h
    report.elapsed = time.perf_counter() - t_start
    if not report.converged and raise_on_maxiter and report.reason.startswith("max_outer"):
        raise MaxIterReached(report.reason, state=state, report=report)
    return state, report
