"""Block-structured LMI problem model with a primal-dual interior-point backend.

The modeling layer scalarizes named matrix variables (symmetric or
rectangular, with optional forced-zero masks) and lets callers build affine
symmetric-matrix expressions with a small operator DSL::

    p = LmiProblem()
    x = p.add_matrix_variable("x", 2)              # symmetric 2x2
    expr = he(a @ x) + const(q)                    # affine in x
    p.add_lmi(expr, "lyap")                        # expr <= -eps*I
    p.minimize(gamma)

Each LMI block ``F(x) = F0 + sum_k x_k Fk`` is required negative
semidefinite with a per-block strictness shift, and the solver result is
always re-verified by dense eigenvalue computation outside the backend.
The numerical core is cvxopt's primal-dual interior-point cone solver.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .matkit import DimensionError, as_matrix, max_eig, sym

__all__ = [
    "AffineMatrix",
    "LmiProblem",
    "SolveResult",
    "SolverOptions",
    "const",
    "he_expr",
    "blockmat",
    "schur_linearize",
]


class _Term:
    """One affine term: left @ VAR @ right (optionally VAR^T), or scalar VAR * coef."""

    __slots__ = ("var", "left", "right", "transpose", "scalar_coef")

    def __init__(self, var, left=None, right=None, transpose=False, scalar_coef=None):
        self.var = var
        self.left = left
        self.right = right
        self.transpose = transpose
        self.scalar_coef = scalar_coef  # matrix C meaning x * C for a 1x1 var

    def shape(self):
        if self.scalar_coef is not None:
            return self.scalar_coef.shape
        return (self.left.shape[0], self.right.shape[1])

    def transposed(self):
        if self.scalar_coef is not None:
            return _Term(self.var, scalar_coef=self.scalar_coef.T)
        return _Term(self.var, self.right.T, self.left.T, not self.transpose)

    def embedded(self, sel_rows, sel_cols):
        if self.scalar_coef is not None:
            return _Term(self.var, scalar_coef=sel_rows @ self.scalar_coef @ sel_cols)
        return _Term(self.var, sel_rows @ self.left, self.right @ sel_cols, self.transpose)

    def eval(self, value: np.ndarray) -> np.ndarray:
        if self.scalar_coef is not None:
            return float(value[0, 0]) * self.scalar_coef
        v = value.T if self.transpose else value
        return self.left @ v @ self.right

    def coefficient(self, basis: np.ndarray) -> np.ndarray:
        return self.eval(basis)


class MatrixVariable:
    """A registered matrix variable; scalarized into basis matrices."""

    def __init__(self, name, rows, cols, symmetric, mask):
        self.name = name
        self.rows = rows
        self.cols = cols
        self.symmetric = symmetric
        self.mask = mask
        self.entries: List[tuple] = []
        if symmetric:
            if rows != cols:
                raise DimensionError("symmetric variable must be square")
            for i in range(rows):
                for j in range(i, cols):
                    if mask is not None and mask[i, j]:
                        continue
                    self.entries.append((i, j))
        else:
            for i in range(rows):
                for j in range(cols):
                    if mask is not None and mask[i, j]:
                        continue
                    self.entries.append((i, j))

    @property
    def size(self) -> int:
        return len(self.entries)

    def basis(self, k: int) -> np.ndarray:
        i, j = self.entries[k]
        e = np.zeros((self.rows, self.cols))
        e[i, j] = 1.0
        if self.symmetric and i != j:
            e[j, i] = 1.0
        return e

    def assemble(self, x: np.ndarray) -> np.ndarray:
        m = np.zeros((self.rows, self.cols))
        for k, (i, j) in enumerate(self.entries):
            m[i, j] = x[k]
            if self.symmetric and i != j:
                m[j, i] = x[k]
        return m

    def expr(self) -> "AffineMatrix":
        shape = (self.rows, self.cols)
        return AffineMatrix(
            shape,
            np.zeros(shape),
            [_Term(self, np.eye(self.rows), np.eye(self.cols))],
        )


class AffineMatrix:
    """Matrix-valued expression, affine in the registered variables."""

    __array_ufunc__ = None  # force numpy to defer to the reflected operators

    def __init__(self, shape, constant, terms):
        self.shape = tuple(int(s) for s in shape)
        constant = np.asarray(constant, dtype=float)
        if constant.shape != self.shape:
            constant = constant.reshape(self.shape)
        self.constant = constant
        self.terms = terms

    # -- algebra -----------------------------------------------------------
    @property
    def T(self) -> "AffineMatrix":
        return AffineMatrix(
            (self.shape[1], self.shape[0]),
            self.constant.T,
            [t.transposed() for t in self.terms],
        )

    def __add__(self, other):
        other = _as_affine(other, self.shape)
        if other.shape != self.shape:
            raise DimensionError(f"cannot add shapes {self.shape} and {other.shape}")
        return AffineMatrix(self.shape, self.constant + other.constant, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return -1.0 * self

    def __sub__(self, other):
        return self + (-_as_affine(other, self.shape))

    def __rsub__(self, other):
        return _as_affine(other, self.shape) + (-self)

    def __mul__(self, scalar):
        scalar = float(scalar)
        terms = []
        for t in self.terms:
            if t.scalar_coef is not None:
                terms.append(_Term(t.var, scalar_coef=scalar * t.scalar_coef))
            else:
                terms.append(_Term(t.var, scalar * t.left, t.right, t.transpose))
        return AffineMatrix(self.shape, scalar * self.constant, terms)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, AffineMatrix):
            if other.terms and self.terms:
                raise ValueError("product of two variable expressions is not affine")
            if other.terms:
                return other.__rmatmul__(self.constant)
            other = other.constant
        return self.right_mul(other)

    def __rmatmul__(self, other):
        other = np.atleast_2d(np.asarray(other, dtype=float))
        if other.shape[1] != self.shape[0]:
            raise DimensionError(f"cannot multiply {other.shape} @ {self.shape}")
        shape = (other.shape[0], self.shape[1])
        terms = []
        for t in self.terms:
            if t.scalar_coef is not None:
                terms.append(_Term(t.var, scalar_coef=other @ t.scalar_coef))
            else:
                terms.append(_Term(t.var, other @ t.left, t.right, t.transpose))
        return AffineMatrix(shape, other @ self.constant, terms)

    def right_mul(self, other) -> "AffineMatrix":
        """expr @ constant-matrix (explicit because ndarray hijacks __matmul__)."""
        other = np.atleast_2d(np.asarray(other, dtype=float))
        if self.shape[1] != other.shape[0]:
            raise DimensionError(f"cannot multiply {self.shape} @ {other.shape}")
        shape = (self.shape[0], other.shape[1])
        terms = []
        for t in self.terms:
            if t.scalar_coef is not None:
                terms.append(_Term(t.var, scalar_coef=t.scalar_coef @ other))
            else:
                terms.append(_Term(t.var, t.left, t.right @ other, t.transpose))
        return AffineMatrix(shape, self.constant @ other, terms)

    def scaled_identity(self, dim: int) -> "AffineMatrix":
        """x * I_dim for a 1x1 expression (used for the gamma term)."""
        if self.shape != (1, 1):
            raise DimensionError("scaled_identity needs a 1x1 expression")
        return self.times_matrix(np.eye(dim))

    def times_matrix(self, coef) -> "AffineMatrix":
        """x * C for a 1x1 expression and a constant matrix C."""
        if self.shape != (1, 1):
            raise DimensionError("times_matrix needs a 1x1 expression")
        coef = as_matrix(coef)
        terms = []
        for t in self.terms:
            if t.scalar_coef is not None:
                terms.append(_Term(t.var, scalar_coef=float(t.scalar_coef[0, 0]) * coef))
            else:
                # left (1xr) VAR right (cx1): only sensible for 1x1 variables
                scale = float(t.left[0, 0]) * float(t.right[0, 0])
                terms.append(_Term(t.var, scalar_coef=scale * coef))
        return AffineMatrix(coef.shape, float(self.constant[0, 0]) * coef, terms)

    # -- evaluation / extraction -------------------------------------------
    def eval(self, assignment: Dict[str, np.ndarray]) -> np.ndarray:
        out = self.constant.copy()
        for t in self.terms:
            out = out + t.eval(np.atleast_2d(assignment[t.var.name]))
        return out

    def variables(self):
        seen = {}
        for t in self.terms:
            seen[t.var.name] = t.var
        return seen

    def trace(self) -> "LinearScalar":
        if self.shape[0] != self.shape[1]:
            raise DimensionError("trace needs a square expression")
        lin = LinearScalar(float(np.trace(self.constant)), {})
        for t in self.terms:
            var = t.var
            for k in range(var.size):
                c = float(np.trace(t.coefficient(var.basis(k))))
                if c != 0.0:
                    lin.coeffs[(var.name, k)] = lin.coeffs.get((var.name, k), 0.0) + c
        return lin


def _as_affine(x, shape) -> AffineMatrix:
    if isinstance(x, AffineMatrix):
        return x
    if isinstance(x, MatrixVariable):
        return x.expr()
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if shape is not None and m.shape == (1, 1) and shape != (1, 1):
        raise DimensionError("scalar constant in matrix expression; wrap explicitly")
    return AffineMatrix(m.shape, m, [])


def const(m) -> AffineMatrix:
    return _as_affine(np.atleast_2d(np.asarray(m, dtype=float)), None)


def he_expr(expr) -> AffineMatrix:
    expr = _as_affine(expr, None)
    if expr.shape[0] != expr.shape[1]:
        raise DimensionError("he_expr needs a square expression")
    return expr + expr.T


def blockmat(rows: List[List]) -> AffineMatrix:
    """Assemble an affine block matrix from affine/constant blocks."""
    rows = [[_as_affine(b, None) for b in row] for row in rows]
    heights = [row[0].shape[0] for row in rows]
    widths = [b.shape[1] for b in rows[0]]
    for row in rows:
        if [b.shape[1] for b in row] != widths:
            raise DimensionError("ragged block widths")
        if len({b.shape[0] for b in row}) != 1:
            raise DimensionError("ragged block heights")
    total = (sum(heights), sum(widths))
    row_off = np.cumsum([0] + heights)
    col_off = np.cumsum([0] + widths)
    constant = np.zeros(total)
    terms: List[_Term] = []
    for i, row in enumerate(rows):
        for j, b in enumerate(row):
            rs = slice(row_off[i], row_off[i + 1])
            cs = slice(col_off[j], col_off[j + 1])
            constant[rs, cs] = b.constant
            if b.terms:
                sel_r = np.zeros((total[0], b.shape[0]))
                sel_r[rs, :] = np.eye(b.shape[0])
                sel_c = np.zeros((b.shape[1], total[1]))
                sel_c[:, cs] = np.eye(b.shape[1])
                terms.extend(t.embedded(sel_r, sel_c) for t in b.terms)
    return AffineMatrix(total, constant, terms)


def schur_linearize(phi: AffineMatrix, c: AffineMatrix, z) -> AffineMatrix:
    """Replace Phi + C^T Z^{-1} C < 0 (with Z > 0 elsewhere) by the affine block
    [[Phi, C^T], [C, -Z]] < 0."""
    phi = _as_affine(phi, None)
    c = _as_affine(c, None)
    z = _as_affine(z, None)
    if phi.shape[0] != phi.shape[1]:
        raise DimensionError("Phi must be square")
    if c.shape[1] != phi.shape[0]:
        raise DimensionError("C columns must match Phi dimension")
    if z.shape != (c.shape[0], c.shape[0]):
        raise DimensionError("Z must match C rows")
    return blockmat([[phi, c.T], [c, -z]])


@dataclass
class LinearScalar:
    """Affine scalar: constant + sum of coefficients on scalarized entries."""

    constant: float
    coeffs: Dict[tuple, float]


@dataclass
class SolverOptions:
    eps_strict_base: float = 1e-6
    abstol: float = 1e-18  # rely on the relative-gap criterion
    reltol: float = 1e-7
    feastol: float = 1e-8
    max_iterations: int = 200
    verbose: bool = False
    # independent feasibility gate applied to the returned point: every block
    # must verify min_eig(F(x)) <= -eps_strict + feas_gate * scale
    feas_gate: float = 1e-8


@dataclass
class SolveResult:
    status: str  # "optimal" | "infeasible" | "numerical-failure"
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    block_margins: Dict[str, float] = field(default_factory=dict)
    objective: Optional[float] = None
    iterations: int = 0
    eps_strict: Dict[str, float] = field(default_factory=dict)
    infeasibility: Optional[Dict[str, float]] = None
    message: str = ""
    relative_gap: Optional[float] = None
    solver_residual: Optional[float] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class LmiProblem:
    """min  objective(x)  s.t.  each block F0 + sum_k x_k Fk <= -eps_strict*I."""

    def __init__(self):
        self._vars: Dict[str, MatrixVariable] = {}
        self._order: List[MatrixVariable] = []
        self._lmis: List[tuple] = []  # (name, AffineMatrix)
        self._linear: List[tuple] = []  # (LinearScalar, rhs) meaning lin <= rhs
        self._objective: Optional[LinearScalar] = None

    # -- variables -----------------------------------------------------------
    def add_matrix_variable(self, name, rows, cols=None, symmetric=True, mask=None) -> MatrixVariable:
        if name in self._vars:
            raise ValueError(f"duplicate variable name {name!r}")
        rows = int(rows)
        cols = rows if cols is None else int(cols)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (rows, cols):
                raise DimensionError(f"mask shape {mask.shape} does not match variable ({rows},{cols})")
            if symmetric and not np.array_equal(mask, mask.T):
                raise DimensionError("mask of a symmetric variable must be symmetric")
        var = MatrixVariable(name, rows, cols, symmetric, mask)
        self._vars[name] = var
        self._order.append(var)
        return var

    def add_scalar_variable(self, name) -> MatrixVariable:
        return self.add_matrix_variable(name, 1, 1, symmetric=True)

    def variable(self, name) -> MatrixVariable:
        return self._vars[name]

    @property
    def num_scalars(self) -> int:
        return sum(v.size for v in self._order)

    # -- constraints -----------------------------------------------------------
    def add_lmi(self, expr, name: str) -> None:
        """Require expr(x) <= -eps_strict(block) * I (negative definite with shift)."""
        expr = _as_affine(expr, None)
        if expr.shape[0] != expr.shape[1]:
            raise DimensionError("LMI block must be square")
        if any(bname == name for bname, _ in self._lmis):
            raise ValueError(f"duplicate LMI block name {name!r}")
        for v in expr.variables():
            if v not in self._vars:
                raise ValueError(f"expression uses unregistered variable {v!r}")
        self._lmis.append((name, expr))

    def add_psd(self, expr, name: str) -> None:
        """Require expr(x) >= eps_strict(block) * I."""
        self.add_lmi(-_as_affine(expr, None), name)

    def add_linear_le(self, lin: LinearScalar, rhs: float) -> None:
        self._linear.append((lin, float(rhs)))

    def add_entry_box(self, var: MatrixVariable, bound) -> None:
        """|every free entry of var| <= bound, where bound is a scalar
        variable (1x1) or a constant."""
        for k in range(var.size):
            key = (var.name, k)
            if isinstance(bound, MatrixVariable):
                bkey = (bound.name, 0)
                self._linear.append((LinearScalar(0.0, {key: 1.0, bkey: -1.0}), 0.0))
                self._linear.append((LinearScalar(0.0, {key: -1.0, bkey: -1.0}), 0.0))
            else:
                b = float(bound)
                self._linear.append((LinearScalar(0.0, {key: 1.0}), b))
                self._linear.append((LinearScalar(0.0, {key: -1.0}), b))

    def minimize(self, target) -> None:
        if isinstance(target, MatrixVariable):
            target = target.expr()
        if isinstance(target, AffineMatrix):
            target = target.trace()
        self._objective = target

    # -- scalarization -----------------------------------------------------------
    def _scalar_index(self):
        index = {}
        pos = 0
        for var in self._order:
            for k in range(var.size):
                index[(var.name, k)] = pos
                pos += 1
        return index, pos

    def block_matrices(self, name=None):
        """Dense (F0, [Fk]) per block; Fk ordered by the scalarized variables."""
        index, n = self._scalar_index()
        out = {}
        for bname, expr in self._lmis:
            if name is not None and bname != name:
                continue
            f0 = sym(expr.constant, tol=1e-6)
            fk = [np.zeros(expr.shape) for _ in range(n)]
            for t in expr.terms:
                var = t.var
                for k in range(var.size):
                    c = t.coefficient(var.basis(k))
                    fk[index[(var.name, k)]] = fk[index[(var.name, k)]] + c
            fk = [sym(f, tol=1e-6) for f in fk]
            out[bname] = (f0, fk)
        return out

    def eps_strict_for(self, expr: AffineMatrix, base: float) -> float:
        f0_norm = np.max(np.abs(expr.constant)) if expr.constant.size else 0.0
        return base * (1.0 + f0_norm)

    # -- solve -----------------------------------------------------------
    def solve(self, options: Optional[SolverOptions] = None) -> SolveResult:
        import cvxopt
        import cvxopt.solvers

        options = options or SolverOptions()
        if not self._lmis:
            raise ValueError("problem has no LMI constraints")
        index, n = self._scalar_index()
        if n == 0:
            raise ValueError("problem has no decision variables")

        c = np.zeros(n)
        obj_const = 0.0
        if self._objective is not None:
            obj_const = self._objective.constant
            for key, coef in self._objective.coeffs.items():
                c[index[key]] += coef

        gs, hs, eps_map = [], [], {}
        blocks = self.block_matrices()
        for bname, expr in self._lmis:
            f0, fk = blocks[bname]
            dim = f0.shape[0]
            eps = self.eps_strict_for(expr, options.eps_strict_base)
            eps_map[bname] = eps
            g = np.zeros((dim * dim, n))
            for k in range(n):
                g[:, k] = fk[k].flatten(order="F")
            gs.append(cvxopt.matrix(g))
            hs.append(cvxopt.matrix(-(f0 + eps * np.eye(dim))))

        gl_rows, hl_vals = [], []
        for lin, rhs in self._linear:
            row = np.zeros(n)
            for key, coef in lin.coeffs.items():
                row[index[key]] += coef
            gl_rows.append(row)
            hl_vals.append(rhs - lin.constant)
        gl = cvxopt.matrix(np.array(gl_rows)) if gl_rows else None
        hl = cvxopt.matrix(np.array(hl_vals)) if hl_vals else None

        # tolerance ladder: ask for the target precision first; the phase-IV
        # iterates of the interior-point method can diverge when a residual
        # target is unreachable, so retry once with the conservative profile
        profiles = [
            {"reltol": options.reltol, "feastol": options.feastol, "abstol": options.abstol},
            {"reltol": max(options.reltol, 1e-7), "feastol": max(options.feastol, 1e-7),
             "abstol": 1e-18},
            {"reltol": 1e-6, "feastol": 1e-7, "abstol": 1e-7},
        ]
        seen = set()
        sol = None
        last_message = ""
        old = dict(cvxopt.solvers.options)
        try:
            for profile in profiles:
                key = tuple(sorted(profile.items()))
                if key in seen:
                    continue
                seen.add(key)
                cvxopt.solvers.options.clear()
                cvxopt.solvers.options.update({
                    "show_progress": options.verbose,
                    "maxiters": options.max_iterations,
                    **profile,
                })
                try:
                    if gl is None:
                        attempt = cvxopt.solvers.sdp(cvxopt.matrix(c), Gs=gs, hs=hs)
                    else:
                        attempt = cvxopt.solvers.sdp(cvxopt.matrix(c), Gl=gl, hl=hl,
                                                     Gs=gs, hs=hs)
                except (ZeroDivisionError, ValueError, ArithmeticError) as exc:
                    last_message = f"interior-point failure: {exc}"
                    continue
                if attempt["status"] in ("optimal", "primal infeasible"):
                    sol = attempt
                    break
                last_message = f"solver stopped with status {attempt['status']!r}"
                if attempt["status"] == "dual infeasible":
                    sol = attempt
                    break
        finally:
            cvxopt.solvers.options.clear()
            cvxopt.solvers.options.update(old)

        if sol is None:
            return SolveResult(status="numerical-failure", message=last_message,
                               eps_strict=eps_map)

        status = sol["status"]
        iterations = int(sol.get("iterations", 0))
        if status == "primal infeasible":
            weights = {}
            zs = sol.get("zs")
            for (bname, _), z in zip(self._lmis, zs or []):
                weights[bname] = float(np.abs(np.array(z)).max())
            return SolveResult(status="infeasible", iterations=iterations,
                               infeasibility=weights, eps_strict=eps_map,
                               message="dual improving ray found")
        if status != "optimal":
            return SolveResult(status="numerical-failure", iterations=iterations,
                               eps_strict=eps_map,
                               message=f"solver stopped with status {status!r}")

        x = np.array(sol["x"]).ravel()
        values = {}
        pos = 0
        for var in self._order:
            values[var.name] = var.assemble(x[pos: pos + var.size])
            pos += var.size

        # independent feasibility gate, outside the solver
        margins = {}
        gate_ok = True
        for bname, expr in self._lmis:
            margins[bname] = -max_eig(sym(expr.eval(values), tol=1e-6))
            scale = 1.0 + (np.max(np.abs(expr.constant)) if expr.constant.size else 0.0)
            if margins[bname] < eps_map[bname] - options.feas_gate * scale:
                gate_ok = False
        objective = obj_const + float(c @ x)
        result = SolveResult(status="optimal", values=values, block_margins=margins,
                             objective=objective, iterations=iterations,
                             eps_strict=eps_map,
                             relative_gap=sol.get("relative gap"),
                             solver_residual=sol.get("primal infeasibility"))
        if not gate_ok:
            result.status = "numerical-failure"
            result.message = "returned point fails the independent feasibility gate"
        return result

    # -- export -----------------------------------------------------------
    def to_json_dict(self) -> dict:
        """Documented dump: per block, F0 and the Fk stacked per scalar variable."""
        index, _ = self._scalar_index()
        names = [None] * len(index)
        for (vname, k), pos in index.items():
            names[pos] = f"{vname}[{k}]"
        blocks = {}
        for bname, (f0, fk) in self.block_matrices().items():
            blocks[bname] = {
                "f0": f0.tolist(),
                "coefficients": {names[i]: f.tolist() for i, f in enumerate(fk) if np.any(f)},
            }
        doc = {
            "variables": {
                v.name: {
                    "rows": v.rows, "cols": v.cols, "symmetric": v.symmetric,
                    "entries": [list(e) for e in v.entries],
                }
                for v in self._order
            },
            "objective": (
                {"constant": self._objective.constant,
                 "coefficients": {f"{k[0]}[{k[1]}]": v for k, v in self._objective.coeffs.items()}}
                if self._objective else None
            ),
            "lmi_blocks": blocks,
            "linear_le": [
                {"coefficients": {f"{k[0]}[{k[1]}]": c for k, c in lin.coeffs.items()},
                 "constant": lin.constant, "rhs": rhs}
                for lin, rhs in self._linear
            ],
        }
        return doc

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
