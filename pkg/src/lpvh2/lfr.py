"""Structured plant / controller / closed-loop LFR data model.

The plant is stored as one dense matrix over the signal partition

    rows:  x | z1 z2 | zp | y      cols:  x | w1 w2 | wp | u

because the zero pattern that makes the closed-loop performance channel
feedthrough vanish lives in that partition.  The merged (channel-level)
blocks used by interconnection and lifting are contiguous slices of it.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .matkit import BlockSpec, DimensionError, as_matrix, block


class WellPosednessError(RuntimeError):
    """I - Delta(V) A22 is singular (or numerically so) at the requested V."""


# ---------------------------------------------------------------------------
# value sets
# ---------------------------------------------------------------------------

class ValueSet:
    """Polytope Co{V_1..V_N} of channel matrices, required to contain 0."""

    def __init__(self, u_hat: int, v_hat: int, vertices: Sequence, check_zero: bool = True):
        self.u_hat = int(u_hat)
        self.v_hat = int(v_hat)
        self.vertices = [as_matrix(v, self.u_hat, self.v_hat) for v in vertices]
        if not self.vertices:
            raise ValueError("a value set needs at least one vertex")
        if check_zero and not self.contains_zero():
            raise ValueError("the zero matrix is not in the convex hull of the vertices")

    def __len__(self):
        return len(self.vertices)

    def contains_zero(self, tol: float = 1e-9) -> bool:
        """LP check that 0 is a convex combination of the vertices."""
        if self.u_hat * self.v_hat == 0:
            return True
        a_eq = np.vstack([
            np.column_stack([v.ravel() for v in self.vertices]),
            np.ones((1, len(self.vertices))),
        ])
        b_eq = np.concatenate([np.zeros(self.u_hat * self.v_hat), [1.0]])
        res = scipy.optimize.linprog(
            np.zeros(len(self.vertices)), A_eq=a_eq, b_eq=b_eq,
            bounds=(0, None), method="highs",
        )
        if not res.success:
            return False
        return float(np.max(np.abs(a_eq @ res.x - b_eq))) <= tol

    def sample_hull(self, count: int, rng) -> List[np.ndarray]:
        """Pseudo-random convex combinations of the vertices (seedable)."""
        out = []
        for _ in range(count):
            w = rng.exponential(size=len(self.vertices))
            w = w / w.sum()
            out.append(sum(wi * v for wi, v in zip(w, self.vertices)))
        return out

    def scaled(self, factor: float) -> "ValueSet":
        return ValueSet(self.u_hat, self.v_hat, [factor * v for v in self.vertices],
                        check_zero=False)


# ---------------------------------------------------------------------------
# plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlantDims:
    """Partition data of the structured plant LFR."""

    n: int          # state dimension
    u1: int         # first channel-input block (w1)
    u2: int         # second channel-input block (w2)
    v1: int         # first channel-output block (z1)
    v2: int         # second channel-output block (z2)
    q_in: int       # performance inputs (wp)
    q_out: int      # performance outputs (zp)
    m: int          # control inputs (u)
    k: int          # measurements (y)

    @property
    def u_hat(self) -> int:
        return self.u1 + self.u2

    @property
    def v_hat(self) -> int:
        return self.v1 + self.v2

    @property
    def r_s(self) -> int:
        return self.u_hat + self.v_hat

    def row_spec(self) -> BlockSpec:
        return BlockSpec([self.n, self.v1, self.v2, self.q_out, self.k])

    def col_spec(self) -> BlockSpec:
        return BlockSpec([self.n, self.u1, self.u2, self.q_in, self.m])


_PLANT_ROWS = ("x", "z1", "z2", "zp", "y")
_PLANT_COLS = ("x", "w1", "w2", "wp", "u")
# blocks that must be identically zero for the structured representation
PLANT_ZERO_BLOCKS = (("z1", "w2"), ("z1", "wp"), ("zp", "w2"), ("zp", "wp"), ("y", "u"))


class StructuredPlantLfr:
    """Plant LFR with the partitioned zero pattern stored explicitly."""

    def __init__(self, dims: PlantDims, matrix):
        self.dims = dims
        self.rows = dims.row_spec()
        self.cols = dims.col_spec()
        self.m = as_matrix(matrix, self.rows.total, self.cols.total)

    @classmethod
    def from_blocks(cls, dims: PlantDims, blocks: dict) -> "StructuredPlantLfr":
        """Build from named blocks keyed 'row,col' (missing blocks are zero)."""
        rows = dims.row_spec()
        cols = dims.col_spec()
        m = np.zeros((rows.total, cols.total))
        known = {f"{r},{c}" for r in _PLANT_ROWS for c in _PLANT_COLS}
        for key, value in blocks.items():
            if key not in known:
                raise KeyError(f"unknown plant block {key!r}")
            r, c = key.split(",")
            ri, ci = _PLANT_ROWS.index(r), _PLANT_COLS.index(c)
            m[rows.slice(ri), cols.slice(ci)] = as_matrix(
                value, rows.sizes[ri], cols.sizes[ci])
        return cls(dims, m)

    def block(self, row: str, col: str) -> np.ndarray:
        ri, ci = _PLANT_ROWS.index(row), _PLANT_COLS.index(col)
        return self.m[self.rows.slice(ri), self.cols.slice(ci)]

    def named_blocks(self) -> dict:
        return {f"{r},{c}": self.block(r, c) for r in _PLANT_ROWS for c in _PLANT_COLS}

    # merged channel-level slices (rows x | z | zp | y, cols x | w | wp | u)
    @property
    def a11(self):
        return self.m[self.rows.slice(0), self.cols.slice(0)]

    @property
    def a12(self):
        return self.m[self.rows.slice(0), self.cols.slice_range(1, 3)]

    @property
    def a21(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice(0)]

    @property
    def a22(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice_range(1, 3)]

    @property
    def b1_p(self):
        return self.m[self.rows.slice(0), self.cols.slice(3)]

    @property
    def b2_p(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice(3)]

    @property
    def b1_u(self):
        return self.m[self.rows.slice(0), self.cols.slice(4)]

    @property
    def b2_u(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice(4)]

    @property
    def c1_p(self):
        return self.m[self.rows.slice(3), self.cols.slice(0)]

    @property
    def c2_p(self):
        return self.m[self.rows.slice(3), self.cols.slice_range(1, 3)]

    @property
    def d_pp(self):
        return self.m[self.rows.slice(3), self.cols.slice(3)]

    @property
    def d_pu(self):
        return self.m[self.rows.slice(3), self.cols.slice(4)]

    @property
    def c1_y(self):
        return self.m[self.rows.slice(4), self.cols.slice(0)]

    @property
    def c2_y(self):
        return self.m[self.rows.slice(4), self.cols.slice_range(1, 3)]

    @property
    def d_yp(self):
        return self.m[self.rows.slice(4), self.cols.slice(3)]

    @property
    def d_yu(self):
        return self.m[self.rows.slice(4), self.cols.slice(4)]


@dataclass
class BlockViolation:
    row: str
    col: str
    max_abs: float


@dataclass
class PlantReport:
    valid: bool
    violations: List[BlockViolation] = field(default_factory=list)

    def __str__(self):
        if self.valid:
            return "plant structure: OK"
        lines = [f"  block ({v.row},{v.col}): max|entry| = {v.max_abs:.3e}" for v in self.violations]
        return "plant structure: VIOLATED\n" + "\n".join(lines)


def validate_plant(plant: StructuredPlantLfr) -> PlantReport:
    """Check the zero-pattern invariants; report each violated block."""
    violations = []
    for row, col in PLANT_ZERO_BLOCKS:
        b = plant.block(row, col)
        if b.size and np.max(np.abs(b)) > 0.0:
            violations.append(BlockViolation(row, col, float(np.max(np.abs(b)))))
    return PlantReport(valid=not violations, violations=violations)


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControllerDims:
    n: int          # controller state dimension
    r1: int         # first scheduling block
    r2: int         # second scheduling block
    k: int          # measurement inputs (y)
    m: int          # control outputs (u)

    @property
    def r(self) -> int:
        return self.r1 + self.r2

    def row_spec(self) -> BlockSpec:
        return BlockSpec([self.n, self.r1, self.r2, self.m])

    def col_spec(self) -> BlockSpec:
        return BlockSpec([self.n, self.r1, self.r2, self.k])


_CTRL_ROWS = ("xc", "zc1", "zc2", "u")
_CTRL_COLS = ("xc", "wc1", "wc2", "y")
CONTROLLER_ZERO_BLOCKS = (("zc1", "wc2"), ("zc1", "y"), ("u", "wc2"), ("u", "y"))


class GainScheduledController:
    """Controller LFR plus its (lower block-triangular) scheduling function."""

    def __init__(self, dims: ControllerDims, matrix, scheduling=None):
        self.dims = dims
        self.rows = dims.row_spec()
        self.cols = dims.col_spec()
        self.m = as_matrix(matrix, self.rows.total, self.cols.total)
        if scheduling is None and dims.r > 0:
            raise ValueError("a controller with a scheduling channel needs a scheduling function")
        self.scheduling = scheduling

    @classmethod
    def from_blocks(cls, dims: ControllerDims, blocks: dict, scheduling=None):
        rows = dims.row_spec()
        cols = dims.col_spec()
        m = np.zeros((rows.total, cols.total))
        known = {f"{r},{c}" for r in _CTRL_ROWS for c in _CTRL_COLS}
        for key, value in blocks.items():
            if key not in known:
                raise KeyError(f"unknown controller block {key!r}")
            r, c = key.split(",")
            ri, ci = _CTRL_ROWS.index(r), _CTRL_COLS.index(c)
            m[rows.slice(ri), cols.slice(ci)] = as_matrix(
                value, rows.sizes[ri], cols.sizes[ci])
        return cls(dims, m, scheduling)

    def block(self, row: str, col: str) -> np.ndarray:
        ri, ci = _CTRL_ROWS.index(row), _CTRL_COLS.index(col)
        return self.m[self.rows.slice(ri), self.cols.slice(ci)]

    def named_blocks(self) -> dict:
        return {f"{r},{c}": self.block(r, c) for r in _CTRL_ROWS for c in _CTRL_COLS}

    @property
    def a11(self):
        return self.m[self.rows.slice(0), self.cols.slice(0)]

    @property
    def a12(self):
        return self.m[self.rows.slice(0), self.cols.slice_range(1, 3)]

    @property
    def a21(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice(0)]

    @property
    def a22(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice_range(1, 3)]

    @property
    def b1(self):
        return self.m[self.rows.slice(0), self.cols.slice(3)]

    @property
    def b2(self):
        return self.m[self.rows.slice_range(1, 3), self.cols.slice(3)]

    @property
    def c1(self):
        return self.m[self.rows.slice(3), self.cols.slice(0)]

    @property
    def c2(self):
        return self.m[self.rows.slice(3), self.cols.slice_range(1, 3)]

    @property
    def d(self):
        return self.m[self.rows.slice(3), self.cols.slice(3)]

    def validate(self) -> PlantReport:
        violations = []
        for row, col in CONTROLLER_ZERO_BLOCKS:
            b = self.block(row, col)
            if b.size and np.max(np.abs(b)) > 0.0:
                violations.append(BlockViolation(row, col, float(np.max(np.abs(b)))))
        return PlantReport(valid=not violations, violations=violations)

    def delta_c(self, v) -> np.ndarray:
        if self.dims.r == 0:
            return np.zeros((0, 0))
        return self.scheduling(v)


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@dataclass
class FrozenLti:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def transfer(self, s: complex) -> np.ndarray:
        n = self.a.shape[0]
        return self.c @ np.linalg.solve(s * np.eye(n) - self.a, self.b) + self.d


class ClosedLoopLfr:
    """Closed-loop LFR: state block, scheduling channel, performance channel."""

    def __init__(self, a11, a12, a21, a22, b1, b2, c1, c2, d,
                 scheduling: Callable[[np.ndarray], np.ndarray],
                 kind: str,
                 plant=None, controller=None):
        self.a11 = as_matrix(a11)
        self.a12 = as_matrix(a12)
        self.a21 = as_matrix(a21)
        self.a22 = as_matrix(a22)
        self.b1 = as_matrix(b1)
        self.b2 = as_matrix(b2)
        self.c1 = as_matrix(c1)
        self.c2 = as_matrix(c2)
        self.d = as_matrix(d)
        self.scheduling = scheduling
        self.kind = kind  # "original" | "lifted"
        self.plant = plant
        self.controller = controller
        self.n = self.a11.shape[0]
        self.w_dim = self.a22.shape[1]
        self.z_dim = self.a22.shape[0]
        self.q_in = self.b1.shape[1]
        self.q_out = self.c1.shape[0]

    def loop_matrix(self, v) -> np.ndarray:
        """I - Delta(V) A22 (the well-posedness pencil, channel-input side)."""
        delta = self.scheduling(v)
        if delta.shape != (self.w_dim, self.z_dim):
            raise DimensionError(
                f"scheduling value has shape {delta.shape}, expected {(self.w_dim, self.z_dim)}")
        return np.eye(self.w_dim) - delta @ self.a22


def _interconnect(p_blocks: dict, kc: GainScheduledController):
    """Standard LFT output-feedback interconnection on (state, channel) blocks."""
    a = p_blocks["a"]
    bp = p_blocks["bp"]
    bu = p_blocks["bu"]
    cp = p_blocks["cp"]
    cy = p_blocks["cy"]
    d_pp, d_pu, d_yp = p_blocks["d_pp"], p_blocks["d_pu"], p_blocks["d_yp"]
    ac = {(1, 1): kc.a11, (1, 2): kc.a12, (2, 1): kc.a21, (2, 2): kc.a22}
    bc = {1: kc.b1, 2: kc.b2}
    cc = {1: kc.c1, 2: kc.c2}
    dc = kc.d

    def cl_a(i, j):
        return block([
            [a[(i, j)] + bu[i] @ dc @ cy[j], bu[i] @ cc[j]],
            [bc[i] @ cy[j], ac[(i, j)]],
        ])

    def cl_b(i):
        return block([[bp[i] + bu[i] @ dc @ d_yp], [bc[i] @ d_yp]])

    def cl_c(j):
        return block([[cp[j] + d_pu @ dc @ cy[j], d_pu @ cc[j]]])

    cl_d = d_pp + d_pu @ dc @ d_yp
    return (cl_a(1, 1), cl_a(1, 2), cl_a(2, 1), cl_a(2, 2),
            cl_b(1), cl_b(2), cl_c(1), cl_c(2), cl_d)


def close_loop_original(plant: StructuredPlantLfr, controller: GainScheduledController) -> ClosedLoopLfr:
    """Interconnect the structured plant with the controller; scheduled by
    diag(V, Delta_c(V))."""
    if controller.dims.m != plant.dims.m or controller.dims.k != plant.dims.k:
        raise DimensionError(
            f"control channel mismatch: plant (m={plant.dims.m}, k={plant.dims.k}) vs "
            f"controller (m={controller.dims.m}, k={controller.dims.k})")
    p_blocks = _channel_blocks(plant)
    blocks = _interconnect(p_blocks, controller)

    def scheduling(v):
        v = as_matrix(v, plant.dims.u_hat, plant.dims.v_hat)
        return scipy.linalg.block_diag(v, controller.delta_c(v))

    return ClosedLoopLfr(*blocks, scheduling=scheduling, kind="original",
                         plant=plant, controller=controller)


def close_loop_lifted(lifted_plant, controller: GainScheduledController) -> ClosedLoopLfr:
    """Interconnect the lifted plant with the controller; scheduled by
    diag(Delta_l(V), Delta_c(V))."""
    if controller.dims.m != lifted_plant.dims.m or controller.dims.k != lifted_plant.dims.k:
        raise DimensionError("control channel mismatch between lifted plant and controller")
    from .lifting import delta_lift

    p_blocks = _channel_blocks(lifted_plant)
    blocks = _interconnect(p_blocks, controller)
    u_hat, v_hat = lifted_plant.dims.u_hat, lifted_plant.dims.v_hat

    def scheduling(v):
        v = as_matrix(v, u_hat, v_hat)
        return scipy.linalg.block_diag(delta_lift(v), controller.delta_c(v))

    return ClosedLoopLfr(*blocks, scheduling=scheduling, kind="lifted",
                         plant=lifted_plant, controller=controller)


def _channel_blocks(plant) -> dict:
    """Channel-level block dictionary shared by both interconnections."""
    return {
        "a": {(1, 1): plant.a11, (1, 2): plant.a12, (2, 1): plant.a21, (2, 2): plant.a22},
        "bp": {1: plant.b1_p, 2: plant.b2_p},
        "bu": {1: plant.b1_u, 2: plant.b2_u},
        "cp": {1: plant.c1_p, 2: plant.c2_p},
        "cy": {1: plant.c1_y, 2: plant.c2_y},
        "d_pp": plant.d_pp, "d_pu": plant.d_pu, "d_yp": plant.d_yp,
    }


def freeze(cl: ClosedLoopLfr, v, tol: float = 1e-12) -> FrozenLti:
    """Eliminate the scheduling channel at a frozen parameter value.

    For structurally valid plant/controller pairs (and value sets whose
    upper-right coupling block vanishes) the resulting feedthrough is zero;
    it is returned as computed.
    """
    delta = cl.scheduling(v)
    pencil = cl.loop_matrix(v)
    sigma_min = np.linalg.svd(pencil, compute_uv=False)[-1] if pencil.size else 1.0
    if pencil.size and sigma_min <= tol * max(1.0, np.max(np.abs(pencil))):
        raise WellPosednessError(
            f"I - Delta(V) A22 is singular (min singular value {sigma_min:.3e})")
    rhs = delta @ np.hstack([cl.a21, cl.b2])
    w_gain = np.linalg.solve(pencil, rhs) if pencil.size else rhs
    w_a = w_gain[:, : cl.n]
    w_b = w_gain[:, cl.n:]
    return FrozenLti(
        a=cl.a11 + cl.a12 @ w_a,
        b=cl.b1 + cl.a12 @ w_b,
        c=cl.c1 + cl.c2 @ w_a,
        d=cl.d + cl.c2 @ w_b,
    )


@dataclass
class WellPosednessReport:
    min_singular_value: float
    worst_v: Optional[np.ndarray]
    vertex_values: List[float]
    sample_values: List[float]

    @property
    def well_posed(self) -> bool:
        return self.min_singular_value > 1e-9


def well_posed(cl: ClosedLoopLfr, value_set: ValueSet, samples: int = 100,
               seed: int = 0) -> WellPosednessReport:
    """Sample-based well-posedness evidence: vertices plus hull samples.

    A passing report is evidence, not proof; the scaling certificate is the
    actual guarantee.
    """
    rng = np.random.default_rng(seed)
    points = list(value_set.vertices)
    n_vertices = len(points)
    points += value_set.sample_hull(samples, rng)
    values = []
    worst = (np.inf, None)
    for v in points:
        pencil = cl.loop_matrix(v)
        s = float(np.linalg.svd(pencil, compute_uv=False)[-1]) if pencil.size else 1.0
        values.append(s)
        if s < worst[0]:
            worst = (s, v)
    return WellPosednessReport(
        min_singular_value=worst[0] if points else 1.0,
        worst_v=worst[1],
        vertex_values=values[:n_vertices],
        sample_values=values[n_vertices:],
    )
