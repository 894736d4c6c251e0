"""Dense real matrix kernel: quadratic-form builders, Lyapunov equations, eigenvalue helpers.

Everything here works on plain ``numpy.ndarray`` matrices and is shared by
the LFR, scaling and verification layers. All operations are pure.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg


class DimensionError(ValueError):
    """Matrix block dimensions are mutually inconsistent."""


class StabilityError(ValueError):
    """A matrix required to be Hurwitz is not."""


class NumericalError(RuntimeError):
    """A linear-algebra kernel produced an unacceptable residual."""


def as_matrix(a, rows=None, cols=None) -> np.ndarray:
    """Coerce to a 2-D float array, optionally checking the shape."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    if rows is not None and m.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {cols} cols, got {m.shape[1]}")
    return m


def sym(a, tol: float = 1e-8) -> np.ndarray:
    """Canonicalize a nearly-symmetric matrix to exact symmetry.

    Raises if the asymmetry is larger than ``tol`` relative to the norm.
    """
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"symmetric matrix must be square, got {m.shape}")
    gap = np.max(np.abs(m - m.T)) if m.size else 0.0
    scale = 1.0 + (np.max(np.abs(m)) if m.size else 0.0)
    if gap > tol * scale:
        raise ValueError(f"matrix is not symmetric: asymmetry {gap:.3e}")
    return 0.5 * (m + m.T)


def he(m) -> np.ndarray:
    """Return M + M^T for a square matrix M."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"he() needs a square matrix, got {m.shape}")
    return m + m.T


def min_eig(s) -> float:
    """Smallest eigenvalue of a symmetric matrix (0-dim matrices give +inf)."""
    s = sym(s)
    if s.shape[0] == 0:
        return np.inf
    return float(np.linalg.eigvalsh(s)[0])


def max_eig(s) -> float:
    """Largest eigenvalue of a symmetric matrix (0-dim matrices give -inf)."""
    s = sym(s)
    if s.shape[0] == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(s)[-1])


def is_hurwitz(a, margin: float = 0.0) -> bool:
    a = as_matrix(a)
    if a.shape[0] == 0:
        return True
    return bool(np.max(np.linalg.eigvals(a).real) < -margin)


def solve_lyapunov(a, q) -> np.ndarray:
    """Solve A^T X + X A + Q = 0 for symmetric Q and Hurwitz A.

    Uses the Schur-form (Bartels-Stewart) method; the residual is always
    checked against 1e-10 * (1 + ||Q||).
    """
    a = as_matrix(a)
    q = sym(q)
    if a.shape[0] != a.shape[1] or a.shape[0] != q.shape[0]:
        raise DimensionError(f"incompatible shapes {a.shape} and {q.shape}")
    if a.shape[0] == 0:
        return np.zeros((0, 0))
    if not is_hurwitz(a):
        raise StabilityError("A is not Hurwitz; the Lyapunov equation has no stabilizing solution")
    # scipy solves A X + X A^H = Q, so pass A^T and -Q.
    x = scipy.linalg.solve_continuous_lyapunov(a.T, -q)
    x = 0.5 * (x + x.T)
    residual = np.max(np.abs(a.T @ x + x @ a + q))
    bound = 1e-10 * (1.0 + np.max(np.abs(q)) if q.size else 1.0)
    if residual > max(bound, 1e-10):
        raise NumericalError(f"Lyapunov residual {residual:.3e} exceeds tolerance {bound:.3e}")
    return x


@dataclass(frozen=True)
class BlockSpec:
    """Ordered partition of a dimension into named or anonymous block sizes."""

    sizes: tuple

    def __init__(self, sizes: Sequence[int]):
        sizes = tuple(int(s) for s in sizes)
        if any(s < 0 for s in sizes):
            raise DimensionError(f"block sizes must be >= 0, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    def offsets(self):
        off = [0]
        for s in self.sizes:
            off.append(off[-1] + s)
        return off

    def slice(self, i: int) -> slice:
        off = self.offsets()
        return slice(off[i], off[i + 1])

    def slice_range(self, i: int, j: int) -> slice:
        """Contiguous slice covering blocks i..j-1."""
        off = self.offsets()
        return slice(off[i], off[j])


def block(rows) -> np.ndarray:
    """np.block with empty-block tolerance (0-sized blocks are fine)."""
    return np.block([[as_matrix(b) for b in row] for row in rows])


def _stacked_outer(a11, a12, a21, a22, b1=None, b2=None, c1=None, c2=None, d=None, sub=False):
    a11, a12 = as_matrix(a11), as_matrix(a12)
    a21, a22 = as_matrix(a21), as_matrix(a22)
    n, w = a11.shape[0], a12.shape[1]
    z = a21.shape[0]
    if a11.shape != (n, n) or a12.shape != (n, w) or a21.shape != (z, n) or a22.shape != (z, w):
        raise DimensionError("inconsistent A blocks")
    c1, c2 = as_matrix(c1), as_matrix(c2)
    p = c1.shape[0]
    if c1.shape != (p, n) or c2.shape != (p, w):
        raise DimensionError("inconsistent C blocks")
    if sub:
        b1 = np.zeros((n, 0))
        b2 = np.zeros((z, 0))
        d = np.zeros((p, 0))
        q = 0
    else:
        b1, b2, d = as_matrix(b1), as_matrix(b2), as_matrix(d)
        q = b1.shape[1]
        if b1.shape != (n, q) or b2.shape != (z, q) or d.shape != (p, q):
            raise DimensionError("inconsistent B/D blocks")
    i_n, i_w, i_q = np.eye(n), np.eye(w), np.eye(q)
    z_nw, z_nq = np.zeros((n, w)), np.zeros((n, q))
    outer = block([
        [i_n, z_nw, z_nq],
        [a11, a12, b1],
        [np.zeros((w, n)), i_w, np.zeros((w, q))],
        [a21, a22, b2],
        [np.zeros((q, n)), np.zeros((q, w)), i_q],
        [c1, c2, d],
    ])
    return outer, (n, w, z, q, p)


def _weight(x, r, s, dims):
    n, w, z, q, p = dims
    x, r, s = sym(x), sym(r), sym(s)
    if x.shape[0] != 2 * n:
        raise DimensionError(f"X must be {2 * n}x{2 * n}, got {x.shape}")
    if r.shape[0] != w + z:
        raise DimensionError(f"R must be {(w + z)}x{(w + z)}, got {r.shape}")
    if s.shape[0] != q + p:
        raise DimensionError(f"S must be {(q + p)}x{(q + p)}, got {s.shape}")
    return scipy.linalg.block_diag(x, r, s)


def l_form(x, r, s, a11, a12, a21, a22, b1, b2, c1, c2, d) -> np.ndarray:
    """Congruence of diag(X, R, S) with the stacked selector/dynamics factor.

    The outer factor stacks pairs (state selector, state map), (channel
    selector, channel map), (input selector, output map); X weighs the first
    pair, R the second and S the third.  The channel may be non-square:
    R then has dimension (channel inputs + channel outputs).
    """
    outer, dims = _stacked_outer(a11, a12, a21, a22, b1, b2, c1, c2, d, sub=False)
    return sym(outer.T @ _weight(x, r, s, dims) @ outer, tol=1e-7)


def l_sub_form(x, r, s, a11, a12, a21, a22, c1, c2, q_in: int = 0) -> np.ndarray:
    """Variant of :func:`l_form` with the B/D columns removed.

    ``q_in`` gives the number of dropped input columns so that the same S
    weight (dimension q_in + outputs) can be reused; its first q_in
    rows/columns then meet only zero rows.
    """
    outer, dims = _stacked_outer(a11, a12, a21, a22, c1=c1, c2=c2, sub=True)
    n, w, z, _, p = dims
    outer = np.vstack([
        outer[: 2 * n + w + z],
        np.zeros((q_in, n + w)),
        outer[2 * n + w + z:],
    ])
    weight = _weight(x, r, s, (n, w, z, q_in, p))
    return sym(outer.T @ weight @ outer, tol=1e-7)
