"""Manufactured-solution accuracy study.

The forcing that reproduces a prescribed u(x, t) is obtained numerically
from u alone (central differences of order 8), so no hand-derived formula
enters the convergence runs. Errors are measured at the final time.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import KSError
from .fem import assemble_load_batch, build_mesh, norms
from .forward import DEFAULT_THETA, ForwardProblem, TimeGrid, solve_forward

# default difference steps per derivative, relative to a length scale of 1;
# the fourth derivative needs a wide step to keep roundoff (eps/h^4) small
FD_STEPS = {"t": 1e-2, 1: 1e-2, 2: 5e-2, 4: 1e-1}
FD_ACCURACY = 8
_MEMO_TOL = 1e-8


def central_weights(order: int, accuracy: int = FD_ACCURACY) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the central stencil for d^order/dx^order."""
    m = (order + 1) // 2 - 1 + accuracy // 2
    offsets = np.arange(-m, m + 1)
    V = np.vander(offsets.astype(float), increasing=True).T
    rhs = np.zeros(offsets.size)
    rhs[order] = math.factorial(order)
    return offsets, np.linalg.solve(V, rhs)


def fd_derivative(fn: Callable, order: int, step: float, axis: str = "x") -> Callable:
    offsets, weights = central_weights(order)

    def d(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        acc = 0.0
        for k, wk in zip(offsets, weights):
            if wk == 0.0:
                continue
            val = fn(x + k * step, t) if axis == "x" else fn(x, t + k * step)
            acc = acc + wk * val
        return acc / step**order

    return d


class _Memo:
    """Caches whole vectorised queries keyed on (x, t) rounded to 1e-8."""

    def __init__(self, fn, maxsize=64):
        self.fn = fn
        self.maxsize = maxsize
        self.store: OrderedDict = OrderedDict()

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        key = (
            x.shape,
            t.shape,
            np.round(x / _MEMO_TOL).astype(np.int64).tobytes(),
            np.round(t / _MEMO_TOL).astype(np.int64).tobytes(),
        )
        hit = self.store.get(key)
        if hit is not None:
            self.store.move_to_end(key)
            return hit
        val = self.fn(x, t)
        self.store[key] = val
        if len(self.store) > self.maxsize:
            self.store.popitem(last=False)
        return val


def derive_forcing(u_exact: Callable, length_scale: float = 1.0) -> Callable:
    """f = u_t + u_xxxx + u_xx + u u_x for a smooth ``u_exact(x, t)``.

    Derivatives are 8th-order central differences; ``length_scale`` multiplies
    the default steps in ``FD_STEPS``.
    """
    s = float(length_scale)
    ut = fd_derivative(u_exact, 1, FD_STEPS["t"] * s, axis="t")
    ux = fd_derivative(u_exact, 1, FD_STEPS[1] * s)
    uxx = fd_derivative(u_exact, 2, FD_STEPS[2] * s)
    uxxxx = fd_derivative(u_exact, 4, FD_STEPS[4] * s)

    def f(x, t):
        return ut(x, t) + uxxxx(x, t) + uxx(x, t) + u_exact(x, t) * ux(x, t)

    return _Memo(f)


@dataclass
class ManufacturedCase:
    u_exact: Callable
    L: float
    T: float
    f: Callable | None = None
    length_scale: float = 1.0
    name: str = ""

    def __post_init__(self):
        ts = np.linspace(0.0, self.T, 100)
        ends = np.abs(np.concatenate([self.u_exact(-self.L, ts), self.u_exact(self.L, ts)]))
        if ends.max() > 1e-12:
            raise ValueError(f"exact solution does not vanish at x = +-L (max {ends.max():.2e})")
        if self.f is None:
            self.f = derive_forcing(self.u_exact, self.length_scale)
        self._uxx = fd_derivative(self.u_exact, 2, FD_STEPS[2] * self.length_scale)

    def w_boundary(self, t: float) -> tuple[float, float]:
        """u_xx at both ends, used as boundary data for w."""
        return float(self._uxx(-self.L, t)), float(self._uxx(self.L, t))

    def w_boundary_table(self, times) -> np.ndarray:
        """``w_boundary`` at many times at once, shape ``(len(times), 2)``."""
        ends = np.array([-self.L, self.L])
        return self._uxx(ends[None, :], np.asarray(times, dtype=float)[:, None])


def reference_case() -> ManufacturedCase:
    a = math.pi / 30.0
    return ManufacturedCase(lambda x, t: (t + 1.0) * np.sin(a * x) ** 2, L=30.0, T=1.0,
                            length_scale=1.0, name="(t+1) sin^2(pi x/30)")


@dataclass(frozen=True)
class ErrorRow:
    dt: float
    n_elems: int
    linf_error: float
    l2_error: float
    l2_error_squared: float
    failure: str | None = None


class _ChunkedLoads:
    """Load vectors of ``f(., t_n)`` computed in blocks of time levels on demand."""

    def __init__(self, mesh, f, times, chunk):
        self.mesh, self.f, self.times, self.chunk = mesh, f, times, chunk
        self.start = -1
        self.block = None

    def __call__(self, n):
        if self.block is None or not self.start <= n < self.start + len(self.block):
            self.start = n
            self.block = assemble_load_batch(self.mesh, self.f, self.times[n : n + self.chunk])
        return self.block[n - self.start]


def run_case(case: ManufacturedCase, n_elems: int, dt: float, theta: float = DEFAULT_THETA,
             chunk: int = 2048) -> ErrorRow:
    """Solve with the manufactured forcing and compare with u_exact at t = T.

    w takes the exact u_xx as boundary data, so the only error sources are
    the discretisation and the forcing derivation.
    """
    mesh = build_mesh(case.L, n_elems)
    grid = TimeGrid.from_dt(case.T, dt)
    loads = _ChunkedLoads(mesh, case.f, grid.times, chunk)
    prob = ForwardProblem(mesh, grid, case.u_exact(mesh.nodes, 0.0), theta, forcing=loads,
                          w_boundary=case.w_boundary_table(grid.times))
    u_T, _ = solve_forward(prob, trajectory=False)
    err = u_T - case.u_exact(mesh.nodes, case.T)
    linf, l2 = norms(mesh, err)
    return ErrorRow(dt, n_elems, linf, l2, l2 * l2)


def convergence_table(case: ManufacturedCase, dt_list, n_list, theta: float = DEFAULT_THETA) -> list[ErrorRow]:
    """Sweep dt (outer) and n_elems (inner); failing rows carry NaN errors and a message."""
    rows = []
    for dt in dt_list:
        for n in n_list:
            try:
                rows.append(run_case(case, n, dt, theta))
            except (KSError, ValueError) as exc:
                rows.append(ErrorRow(dt, n, math.nan, math.nan, math.nan, failure=f"{type(exc).__name__}: {exc}"))
    return rows


def convergence_slope(rows: list[ErrorRow]) -> float:
    """Least-squares slope of log(linf) against log(h) over the rows."""
    n = np.array([r.n_elems for r in rows], dtype=float)
    e = np.array([r.linf_error for r in rows])
    return float(np.polyfit(np.log(1.0 / n), np.log(e), 1)[0])
