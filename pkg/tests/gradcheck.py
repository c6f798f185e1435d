"""Central finite-difference checks of the reduced-functional gradients."""

import numpy as np

from ksrobust.adjoint import AdjointProblem, ControlOperators, CoupledSolveConfig, solve_adjoint_pair, solve_adjoint_z, solve_coupled_uz
from ksrobust.fem import Subdomain, build_mesh
from ksrobust.forward import ForwardProblem, TimeGrid, solve_forward, spacetime_inner, spacetime_norm
from ksrobust.robust import eval_Jr, grad_psi, grad_v
from ksrobust.stackelberg import RscConfig, eval_G, grad_G

FD_EPS = 1e-3


def coarse_instance(n_elems=32, n_steps=20, ell=40.0, gamma=40.0):
    mesh = build_mesh(30.0, n_elems)
    grid = TimeGrid(1.0, n_steps)
    cfg = CoupledSolveConfig(ell, gamma, Subdomain(2, 5), Subdomain(-10, 10), picard_tol=1e-13, picard_max=200)
    u0 = np.sin(np.pi * mesh.nodes / 30) ** 2
    return mesh, grid, cfg, u0


def random_field(rng, mesh, grid, mask=None):
    """Smooth-in-time random field with unit L2(Q) norm, zero at x = +-L."""
    x = mesh.nodes
    t = grid.times[:, None]
    f = np.zeros((grid.n_steps + 1, mesh.n_nodes))
    for _ in range(4):
        k = rng.integers(1, 8)
        f += rng.standard_normal() * np.sin(k * np.pi * (x + mesh.L) / (2 * mesh.L)) * np.cos(rng.uniform(0, 3) * t)
    f += 0.1 * rng.standard_normal(f.shape)
    f[:, [0, -1]] = 0.0
    if mask is not None:
        f = np.where(mask, f, 0.0)
    return f / spacetime_norm(mesh, grid, f)


def _central(fun, x, d, eps):
    return (fun(x + eps * d) - fun(x - eps * d)) / (2 * eps)


def robust_gradient_errors(n_dirs=5, seed=0):
    """Relative errors of <grad_v, d> and <grad_psi, d> against central FD of J_r."""
    mesh, grid, cfg, u0 = coarse_instance()
    ops = ControlOperators(mesh, cfg.O, cfg.O_d)
    rng = np.random.default_rng(seed)
    u_d = 0.5 * np.sin(np.pi * mesh.nodes / 30) ** 2 * (1 + grid.times[:, None])
    v = 0.01 * random_field(rng, mesh, grid, ops.mask_O)
    psi = 0.01 * random_field(rng, mesh, grid)

    def J(vv, pp):
        u, _ = solve_forward(ForwardProblem(mesh, grid, u0, forcing=ops.control_load(v=vv, psi=pp)))
        return eval_Jr(mesh, grid, u, vv, pp, u_d, cfg, ops).total

    u, _ = solve_forward(ForwardProblem(mesh, grid, u0, forcing=ops.control_load(v=v, psi=psi)))
    z = solve_adjoint_z(AdjointProblem(mesh, grid, u, ops.M_Od.matvec(u - u_d)))
    gv, gp = grad_v(mesh, z, v, cfg.ell, cfg.O), grad_psi(z, psi, cfg.gamma)
    out = {"grad_v": [], "grad_psi": []}
    for _ in range(n_dirs):
        dv = random_field(rng, mesh, grid, ops.mask_O)
        dp = random_field(rng, mesh, grid)
        fd_v = _central(lambda a: J(a, psi), v, dv, FD_EPS)
        fd_p = _central(lambda a: J(v, a), psi, dp, FD_EPS)
        an_v = spacetime_inner(mesh, grid, gv, dv)
        an_p = spacetime_inner(mesh, grid, gp, dp)
        out["grad_v"].append(abs(fd_v - an_v) / abs(fd_v))
        out["grad_psi"].append(abs(fd_p - an_p) / abs(fd_p))
    return out


def leader_gradient_errors(n_dirs=5, seed=1, beta=1e-7):
    """Relative errors of grad_G against central FD of G.

    ``grad_G`` checks the whole gradient; ``phi1`` checks only the terminal
    part, where FD of G - 1/2 ||h||^2 must equal -<phi1 1_omega, d>.
    """
    mesh, grid, cfg, u0 = coarse_instance()
    u0 = 1e-3 * np.exp(-mesh.nodes**2)
    omega = Subdomain(-3, 1)
    rsc = RscConfig(beta, cfg, omega)
    ops = ControlOperators(mesh, cfg.O, cfg.O_d, omega)
    rng = np.random.default_rng(seed)
    h = 1e-3 * random_field(rng, mesh, grid, ops.mask_omega)

    def solve(hh):
        return solve_coupled_uz(mesh, grid, u0, hh, None, cfg, omega=omega, ops=ops)

    def G(hh):
        return eval_G(mesh, grid, hh, solve(hh)[0], rsc, ops)

    def terminal(hh):
        return G(hh) - 0.5 * spacetime_inner(mesh, grid, hh, hh, ops.M_omega)

    u, z, _ = solve(h)
    phi1, _, _ = solve_adjoint_pair(mesh, grid, u, z, -beta * u[-1], cfg, ops=ops)
    g = grad_G(mesh, h, phi1, omega)
    out = {"grad_G": [], "phi1": []}
    for _ in range(n_dirs):
        d = random_field(rng, mesh, grid, ops.mask_omega)
        fd = _central(G, h, d, FD_EPS)
        fd_t = _central(terminal, h, d, FD_EPS)
        an = spacetime_inner(mesh, grid, g, d)
        an_t = -spacetime_inner(mesh, grid, np.where(ops.mask_omega, phi1, 0.0), d)
        out["grad_G"].append(abs(fd - an) / abs(fd))
        out["phi1"].append(abs(fd_t - an_t) / abs(fd_t))
    return out
