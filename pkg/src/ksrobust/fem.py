"""P1 finite elements on a uniform mesh of (-L, L).

Nodal vectors always include both boundary nodes. Members of the discrete
space with homogeneous Dirichlet data simply carry zeros at index 0 and -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidMesh
from .linalg import BandedMatrix

# 3-point Gauss-Legendre on [-1, 1]
_GAUSS3_X = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GAUSS3_W = np.array([5.0, 8.0, 5.0]) / 9.0


@dataclass(frozen=True)
class Mesh1D:
    L: float
    n_elems: int
    nodes: np.ndarray = field(repr=False, compare=False)

    @property
    def hx(self) -> float:
        return 2.0 * self.L / self.n_elems

    @property
    def n_nodes(self) -> int:
        return self.n_elems + 1

    @property
    def key(self) -> tuple[float, int]:
        return (float(self.L), int(self.n_elems))


def build_mesh(L: float, n_elems: int) -> Mesh1D:
    if not np.isfinite(L) or L <= 0:
        raise InvalidMesh(f"half-length must be positive, got {L}")
    if int(n_elems) != n_elems or n_elems < 2:
        raise InvalidMesh(f"need at least 2 elements, got {n_elems}")
    n_elems = int(n_elems)
    nodes = -L + (2.0 * L / n_elems) * np.arange(n_elems + 1)
    nodes[-1] = L
    nodes.setflags(write=False)
    return Mesh1D(float(L), n_elems, nodes)


@dataclass(frozen=True)
class Subdomain:
    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"empty interval ({self.a}, {self.b})")

    def check_within(self, mesh: Mesh1D):
        if self.a < -mesh.L - 1e-12 or self.b > mesh.L + 1e-12:
            raise ValueError(f"interval ({self.a}, {self.b}) leaves the domain (-{mesh.L}, {mesh.L})")

    def __str__(self):
        return f"{self.a:g},{self.b:g}"


def full_domain(mesh: Mesh1D) -> Subdomain:
    return Subdomain(-mesh.L, mesh.L)


def assemble_mass(mesh: Mesh1D) -> BandedMatrix:
    h, n = mesh.hx, mesh.n_nodes
    diag = np.full(n, 2.0 * h / 3.0)
    diag[[0, -1]] = h / 3.0
    off = np.full(n - 1, h / 6.0)
    return BandedMatrix.from_diagonals({-1: off, 0: diag, 1: off}, n)


def assemble_stiffness(mesh: Mesh1D) -> BandedMatrix:
    h, n = mesh.hx, mesh.n_nodes
    diag = np.full(n, 2.0 / h)
    diag[[0, -1]] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return BandedMatrix.from_diagonals({-1: off, 0: diag, 1: off}, n)


# The convection vector N(u)_i = (u u_x, phi_i) is a quadratic form in the
# nodal values. On an element with end values (a, b) it contributes
#   (b - a)(2a + b)/6  to the left node,  (b - a)(a + 2b)/6  to the right,
# exactly (the integrand is a quadratic polynomial). The mesh size cancels.


def assemble_nonlinear(mesh: Mesh1D, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    a, b = u[..., :-1], u[..., 1:]
    d = (b - a) / 6.0
    out = np.zeros_like(u)
    out[..., :-1] += d * (2.0 * a + b)
    out[..., 1:] += d * (a + 2.0 * b)
    return out


def nonlinear_jvp(u: np.ndarray, du: np.ndarray) -> np.ndarray:
    """Directional derivative ``N'(u) du``."""
    a, b = u[..., :-1], u[..., 1:]
    da, db = du[..., :-1], du[..., 1:]
    out = np.zeros(np.broadcast_shapes(u.shape, du.shape))
    out[..., :-1] += ((b - 4.0 * a) * da + (a + 2.0 * b) * db) / 6.0
    out[..., 1:] += (-(b + 2.0 * a) * da + (4.0 * b - a) * db) / 6.0
    return out


def nonlinear_hvp(r: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``H(r) q`` with ``H(r)`` the (symmetric) Hessian of ``u -> r . N(u)``.

    Because N is quadratic, ``N'(u)^T r == H(r) u``; the same routine gives
    the transposed Jacobian needed by the adjoint sweeps.
    """
    rl, rr = r[..., :-1], r[..., 1:]
    qa, qb = q[..., :-1], q[..., 1:]
    out = np.zeros(np.broadcast_shapes(r.shape, q.shape))
    cross = (rl - rr) / 6.0
    out[..., :-1] += (-(4.0 * rl + 2.0 * rr) / 6.0) * qa + cross * qb
    out[..., 1:] += cross * qa + ((2.0 * rl + 4.0 * rr) / 6.0) * qb
    return out


def nonlinear_vjp(u: np.ndarray, r: np.ndarray) -> np.ndarray:
    """``N'(u)^T r``."""
    return nonlinear_hvp(r, u)


def quadrature_points(mesh: Mesh1D) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-element 3-point Gauss data: points ``(n_elems, 3)``, weights, local shape values."""
    left = mesh.nodes[:-1, None]
    xi = 0.5 * (_GAUSS3_X + 1.0)
    pts = left + mesh.hx * xi[None, :]
    w = 0.5 * mesh.hx * _GAUSS3_W
    return pts, w, xi


def assemble_load(mesh: Mesh1D, f) -> np.ndarray:
    """``(f, phi_i)`` by 3-point Gauss per element. ``f`` is vectorised in x."""
    pts, w, xi = quadrature_points(mesh)
    fq = np.broadcast_to(np.asarray(f(pts), dtype=float), pts.shape)
    out = np.zeros(mesh.n_nodes)
    out[:-1] += fq @ (w * (1.0 - xi))
    out[1:] += fq @ (w * xi)
    return out


def indicator_mask(mesh: Mesh1D, sub: Subdomain | None) -> np.ndarray:
    """Nodes lying in the closed interval ``[a, b]``; ``None`` means the whole domain."""
    if sub is None:
        return np.ones(mesh.n_nodes, dtype=bool)
    sub.check_within(mesh)
    tol = 1e-12 * max(1.0, mesh.L)
    return (mesh.nodes >= sub.a - tol) & (mesh.nodes <= sub.b + tol)


def restrict_indicator(mesh: Mesh1D, sub: Subdomain | None, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return np.where(indicator_mask(mesh, sub), g, 0.0)


class MaskedMass:
    """``R M R`` for a nodal mask ``R``: the mass matrix seen through ``1_S``."""

    def __init__(self, M: BandedMatrix, mask: np.ndarray):
        self.M = M
        self.mask = np.asarray(mask, dtype=bool)
        self.full = bool(self.mask.all())

    def matvec(self, x):
        if self.full:
            return self.M.matvec(x)
        return np.where(self.mask, self.M.matvec(np.where(self.mask, x, 0.0)), 0.0)

    __matmul__ = matvec


def norms(mesh: Mesh1D, g: np.ndarray, M: BandedMatrix | None = None) -> tuple[float, float]:
    g = np.asarray(g, dtype=float)
    if g.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {g.shape}, mesh has {mesh.n_nodes} nodes")
    M = assemble_mass(mesh) if M is None else M
    linf = float(np.max(np.abs(g))) if g.size else 0.0
    l2 = float(np.sqrt(max(g @ M.matvec(g), 0.0)))
    return linf, l2


def assemble_load_batch(mesh: Mesh1D, f, times: np.ndarray) -> np.ndarray:
    """:func:`assemble_load` for ``f(x, t)`` at many times; one row per time."""
    pts, w, xi = quadrature_points(mesh)
    times = np.asarray(times, dtype=float)
    fq = np.broadcast_to(np.asarray(f(pts[None], times[:, None, None]), dtype=float), (times.size,) + pts.shape)
    out = np.zeros((times.size, mesh.n_nodes))
    out[:, :-1] += fq @ (w * (1.0 - xi))
    out[:, 1:] += fq @ (w * xi)
    return out
