"""Banded storage and direct solvers for the 1D P1 systems.

Band storage follows the LAPACK/scipy "diagonal ordered" layout: for a
matrix with ``lower_bw`` sub- and ``upper_bw`` super-diagonals,
``bands[upper_bw + i - j, j] == A[i, j]``. Entries of ``bands`` that do
not correspond to a matrix position are kept at zero.

Factorisation goes through LAPACK ``?gbtrf``/``?gbtrs`` (partial pivoting),
so a factor can be reused for many right-hand sides, and solves with the
transpose come for free. The time loops rely on both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import SingularMatrix

PIVOT_RTOL = 1e-14


@dataclass
class BandedMatrix:
    n: int
    lower_bw: int
    upper_bw: int
    bands: np.ndarray

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=float)
        if self.n < 1:
            raise ValueError("matrix dimension must be >= 1")
        for bw in (self.lower_bw, self.upper_bw):
            if bw < 0 or (bw >= self.n and bw != 0):
                raise ValueError("bandwidths must lie in [0, n)")
        shape = (self.lower_bw + self.upper_bw + 1, self.n)
        if self.bands.shape != shape:
            raise ValueError(f"band storage has shape {self.bands.shape}, expected {shape}")

    @classmethod
    def zeros(cls, n, lower_bw, upper_bw):
        return cls(n, lower_bw, upper_bw, np.zeros((lower_bw + upper_bw + 1, n)))

    @classmethod
    def from_diagonals(cls, diagonals: dict[int, np.ndarray], n: int) -> "BandedMatrix":
        """Build from ``{offset: values}``; offset ``k`` holds ``A[i, i + k]``."""
        lower = max([-k for k in diagonals if k < 0], default=0)
        upper = max([k for k in diagonals if k > 0], default=0)
        A = cls.zeros(n, lower, upper)
        for k, vals in diagonals.items():
            vals = np.broadcast_to(np.asarray(vals, dtype=float), (n - abs(k),))
            if k >= 0:
                A.bands[upper - k, k:] = vals
            else:
                A.bands[upper - k, : n + k] = vals
        return A

    @classmethod
    def from_dense(cls, A, lower_bw, upper_bw) -> "BandedMatrix":
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("dense matrix must be square")
        i, j = np.nonzero(A)
        if np.any(j - i > upper_bw) or np.any(i - j > lower_bw):
            raise ValueError("dense matrix has entries outside the declared band")
        out = cls.zeros(n, lower_bw, upper_bw)
        out.bands[upper_bw + i - j, j] = A[i, j]
        return out

    def diagonal(self, k=0) -> np.ndarray:
        if k >= 0:
            return self.bands[self.upper_bw - k, k:].copy()
        return self.bands[self.upper_bw - k, : self.n + k].copy()

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for k in range(-self.lower_bw, self.upper_bw + 1):
            d = self.diagonal(k)
            if d.size:
                idx = np.arange(d.size)
                if k >= 0:
                    A[idx, idx + k] = d
                else:
                    A[idx - k, idx] = d
        return A

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``A @ x`` along the last axis of ``x`` (batched over leading axes)."""
        x = np.asarray(x, dtype=float)
        n, u = self.n, self.upper_bw
        y = np.zeros(np.broadcast_shapes(x.shape, (n,)))
        for k in range(-self.lower_bw, u + 1):
            row = self.bands[u - k]
            if k >= 0:
                y[..., : n - k] += row[k:] * x[..., k:]
            else:
                y[..., -k:] += row[: n + k] * x[..., : n + k]
        return y

    __matmul__ = matvec

    def transpose(self) -> "BandedMatrix":
        out = BandedMatrix.zeros(self.n, self.upper_bw, self.lower_bw)
        for k in range(-self.lower_bw, self.upper_bw + 1):
            d = self.diagonal(k)
            if k >= 0:
                out.bands[out.upper_bw + k, : self.n - k] = d
            else:
                out.bands[out.upper_bw + k, -k:] = d
        return out

    @property
    def T(self) -> "BandedMatrix":
        return self.transpose()

    def scaled(self, alpha: float) -> "BandedMatrix":
        return BandedMatrix(self.n, self.lower_bw, self.upper_bw, alpha * self.bands)

    def __add__(self, other: "BandedMatrix") -> "BandedMatrix":
        if other.n != self.n:
            raise ValueError("dimension mismatch")
        lo = max(self.lower_bw, other.lower_bw)
        up = max(self.upper_bw, other.upper_bw)
        out = BandedMatrix.zeros(self.n, lo, up)
        for M in (self, other):
            out.bands[up - M.upper_bw : up + M.lower_bw + 1] += M.bands
        return out

    def __sub__(self, other: "BandedMatrix") -> "BandedMatrix":
        return self + other.scaled(-1.0)


class BandedLU:
    """Reusable LU factorisation of a :class:`BandedMatrix`."""

    def __init__(self, A: BandedMatrix):
        self.n = A.n
        self.kl = A.lower_bw
        self.ku = A.upper_bw
        ab = np.zeros((2 * self.kl + self.ku + 1, A.n))
        ab[self.kl :] = A.bands
        lu, piv, info = lapack.dgbtrf(ab, self.kl, self.ku)
        if info < 0:
            raise ValueError(f"dgbtrf: illegal argument {-info}")
        scale = _max_row_sum(A)
        pivots = np.abs(lu[self.kl + self.ku])
        if info > 0 or np.any(pivots <= PIVOT_RTOL * scale):
            bad = int(np.argmin(pivots))
            raise SingularMatrix(
                f"pivot {pivots[bad]:.3e} at row {bad} below {PIVOT_RTOL:g} x max row norm {scale:.3e}"
            )
        self._lu = lu
        self._piv = piv

    def solve(self, b, trans: bool = False) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has length {b.shape[0]}, expected {self.n}")
        rhs = b.reshape(self.n, -1)
        x, info = lapack.dgbtrs(self._lu, self.kl, self.ku, rhs, self._piv, trans=1 if trans else 0)
        if info != 0:
            raise ValueError(f"dgbtrs failed with info={info}")
        return x.reshape(b.shape)


def _max_row_sum(A: BandedMatrix) -> float:
    n, u = A.n, A.upper_bw
    rows = np.zeros(n)
    for k in range(-A.lower_bw, u + 1):
        d = np.abs(A.bands[u - k])
        if k >= 0:
            rows[: n - k] += d[k:]
        else:
            rows[-k:] += d[: n + k]
    return float(rows.max())


def solve_banded(A: BandedMatrix, b) -> np.ndarray:
    """Solve ``A x = b``. ``A`` is left untouched."""
    return BandedLU(A).solve(b)


@dataclass
class BlockSystem2x2:
    A11: BandedMatrix
    A12: BandedMatrix
    A21: BandedMatrix
    A22: BandedMatrix
    rhs1: np.ndarray
    rhs2: np.ndarray

    def __post_init__(self):
        n = self.A11.n
        if any(B.n != n for B in (self.A12, self.A21, self.A22)):
            raise ValueError("all blocks must share the same dimension")
        self.rhs1 = np.asarray(self.rhs1, dtype=float)
        self.rhs2 = np.asarray(self.rhs2, dtype=float)
        if self.rhs1.shape != (n,) or self.rhs2.shape != (n,):
            raise ValueError("right-hand sides must have length n")

    @property
    def n(self) -> int:
        return self.A11.n


def interleave_blocks(A11, A12, A21, A22) -> BandedMatrix:
    """Assemble the 2n x 2n matrix with unknowns ordered (x1_0, x2_0, x1_1, ...).

    Row ``2i`` is row ``i`` of the first block row, row ``2i + 1`` row ``i``
    of the second. Tridiagonal blocks give bandwidth 3 on each side.
    """
    blocks = ((A11, 0, 0), (A12, 0, 1), (A21, 1, 0), (A22, 1, 1))
    n = A11.n
    lo = 2 * max(B.lower_bw for B, _, _ in blocks) + 1
    up = 2 * max(B.upper_bw for B, _, _ in blocks) + 1
    big = BandedMatrix.zeros(2 * n, lo, up)
    for B, r, c in blocks:
        for k in range(-B.lower_bw, B.upper_bw + 1):
            K = 2 * k + c - r
            # column j of the block's band row maps to big column 2j + c
            big.bands[up - K, c::2] += B.bands[B.upper_bw - k]
    return big


def solve_block2x2(system: BlockSystem2x2) -> tuple[np.ndarray, np.ndarray]:
    A = interleave_blocks(system.A11, system.A12, system.A21, system.A22)
    rhs = np.empty(2 * system.n)
    rhs[0::2] = system.rhs1
    rhs[1::2] = system.rhs2
    x = solve_banded(A, rhs)
    return x[0::2].copy(), x[1::2].copy()
