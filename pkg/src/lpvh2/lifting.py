"""Lifting of the uncertainty channel to a passivity form, and the
back-translation of a passive scaling into a full block scaling for the
original representation."""

from dataclasses import dataclass

import numpy as np

from .lfr import PlantDims, StructuredPlantLfr, validate_plant
from .matkit import BlockSpec, DimensionError, as_matrix, block, he, sym


def delta_lift(v) -> np.ndarray:
    """Lifted channel block [[-I, 2V], [0, I]] for a channel value V."""
    v = as_matrix(v)
    u_hat, v_hat = v.shape
    return block([
        [-np.eye(u_hat), 2.0 * v],
        [np.zeros((v_hat, u_hat)), np.eye(v_hat)],
    ])


class LiftedPlantLfr:
    """Plant LFR with a square channel in passivity form.

    rows: x | z (u_hat + v_hat) | zp | y,  cols: x | w (u_hat + v_hat) | wp | u.
    The z-rows carry the fixed pattern [0, I, 0, 0, 0] / [2*, 2*, -I, 2*, 2*].
    """

    def __init__(self, dims: PlantDims, matrix):
        self.dims = dims
        self.rows = BlockSpec([dims.n, dims.r_s, dims.q_out, dims.k])
        self.cols = BlockSpec([dims.n, dims.r_s, dims.q_in, dims.m])
        self.m = as_matrix(matrix, self.rows.total, self.cols.total)

    @property
    def r_s(self) -> int:
        return self.dims.r_s

    @property
    def a11(self):
        return self.m[self.rows.slice(0), self.cols.slice(0)]

    @property
    def a12(self):
        return self.m[self.rows.slice(0), self.cols.slice(1)]

    @property
    def a21(self):
        return self.m[self.rows.slice(1), self.cols.slice(0)]

    @property
    def a22(self):
        return self.m[self.rows.slice(1), self.cols.slice(1)]

    @property
    def b1_p(self):
        return self.m[self.rows.slice(0), self.cols.slice(2)]

    @property
    def b2_p(self):
        return self.m[self.rows.slice(1), self.cols.slice(2)]

    @property
    def b1_u(self):
        return self.m[self.rows.slice(0), self.cols.slice(3)]

    @property
    def b2_u(self):
        return self.m[self.rows.slice(1), self.cols.slice(3)]

    @property
    def c1_p(self):
        return self.m[self.rows.slice(2), self.cols.slice(0)]

    @property
    def c2_p(self):
        return self.m[self.rows.slice(2), self.cols.slice(1)]

    @property
    def d_pp(self):
        return self.m[self.rows.slice(2), self.cols.slice(2)]

    @property
    def d_pu(self):
        return self.m[self.rows.slice(2), self.cols.slice(3)]

    @property
    def c1_y(self):
        return self.m[self.rows.slice(3), self.cols.slice(0)]

    @property
    def c2_y(self):
        return self.m[self.rows.slice(3), self.cols.slice(1)]

    @property
    def d_yp(self):
        return self.m[self.rows.slice(3), self.cols.slice(2)]

    @property
    def d_yu(self):
        return self.m[self.rows.slice(3), self.cols.slice(3)]

    def check_structure(self, source: StructuredPlantLfr) -> bool:
        """Bit-exact pattern check against the source plant."""
        d = self.dims
        u_hat, v_hat = d.u_hat, d.v_hat
        z_rows = self.m[self.rows.slice(1), :]
        top = z_rows[:u_hat, :]
        bottom = z_rows[u_hat:, :]
        cs = self.cols
        ok = (
            np.array_equal(top[:, cs.slice(1)][:, :u_hat], np.eye(u_hat))
            and not np.any(top[:, cs.slice(0)])
            and not np.any(top[:, cs.slice(1)][:, u_hat:])
            and not np.any(top[:, cs.slice(2)])
            and not np.any(top[:, cs.slice(3)])
            and np.array_equal(bottom[:, cs.slice(1)][:, u_hat:], -np.eye(v_hat))
            and np.array_equal(bottom[:, cs.slice(0)], 2.0 * source.a21)
            and np.array_equal(bottom[:, cs.slice(1)][:, :u_hat], 2.0 * source.a22)
            and np.array_equal(bottom[:, cs.slice(2)], 2.0 * source.b2_p)
            and np.array_equal(bottom[:, cs.slice(3)], 2.0 * source.b2_u)
        )
        return bool(ok)


def lift_plant(plant: StructuredPlantLfr) -> LiftedPlantLfr:
    """Rearrange the uncertainty channel of a structured plant into the
    passivity form with the square lifted block."""
    report = validate_plant(plant)
    if not report.valid:
        raise ValueError(f"cannot lift a structurally invalid plant:\n{report}")
    d = plant.dims
    u_hat, v_hat = d.u_hat, d.v_hat
    z_w = np.zeros((d.n, v_hat))
    m = block([
        [plant.a11, plant.a12, z_w, plant.b1_p, plant.b1_u],
        [np.zeros((u_hat, d.n)), np.eye(u_hat), np.zeros((u_hat, v_hat)),
         np.zeros((u_hat, d.q_in)), np.zeros((u_hat, d.m))],
        [2.0 * plant.a21, 2.0 * plant.a22, -np.eye(v_hat), 2.0 * plant.b2_p, 2.0 * plant.b2_u],
        [plant.c1_p, plant.c2_p, np.zeros((d.q_out, v_hat)), plant.d_pp, plant.d_pu],
        [plant.c1_y, plant.c2_y, np.zeros((d.k, v_hat)), plant.d_yp, plant.d_yu],
    ])
    return LiftedPlantLfr(d, m)


def primal_passivity_margin(p, v) -> float:
    """min eig of He(P * Delta_l(V)); positive for all V in the value set
    exactly when P is a primal scaling."""
    from .matkit import min_eig

    return min_eig(he(as_matrix(p) @ delta_lift(v)))


def dual_passivity_margin(p, v) -> float:
    """min eig of He(P * Delta_l(V)^T); the dual-class passivity form."""
    from .matkit import min_eig

    return min_eig(he(as_matrix(p) @ delta_lift(v).T))


def he_congruence_identity_check(q, s, r, a, b, c) -> float:
    """Residual of the doubling identity
    He([A;C]^T [[Q,S^T],[S,R]] [A;B]) = (*)^T [[2Q,S^T,S^T],[S,0,R],[S,R,0]] [A;B;C].
    Returns the max-abs difference (test utility; the identity is exact)."""
    q, r = sym(q), sym(r)
    a, b, c, s = as_matrix(a), as_matrix(b), as_matrix(c), as_matrix(s)
    if b.shape != c.shape or s.shape != (b.shape[0], a.shape[0]):
        raise DimensionError("inconsistent identity-check dimensions")
    w = block([[q, s.T], [s, r]])
    left_outer = np.vstack([a, c])
    right_outer = np.vstack([a, b])
    lhs = he(left_outer.T @ w @ right_outer)
    big = block([
        [2.0 * q, s.T, s.T],
        [s, np.zeros((s.shape[0], s.shape[0])), r],
        [s, r, np.zeros((r.shape[0], r.shape[0]))],
    ])
    stacked = np.vstack([a, b, c])
    rhs = stacked.T @ big @ stacked
    return float(np.max(np.abs(lhs - rhs))) if lhs.size else 0.0


@dataclass
class HatScaling:
    """Full block scaling for the original closed loop, with its partition
    (u_hat, r_c, v_hat, r_c)."""

    matrix: np.ndarray
    u_hat: int
    v_hat: int
    r_c: int

    @property
    def dim(self) -> int:
        return self.u_hat + self.v_hat + 2 * self.r_c

    def blocks(self):
        spec = BlockSpec([self.u_hat, self.r_c, self.v_hat, self.r_c])
        return spec


def build_hat_scaling(p_passive, u_hat: int, v_hat: int, r_c: int) -> HatScaling:
    """Assemble the full block scaling for the original loop from a passive
    scaling of the lifted loop (doubling identity plus a permutation).

    The passive scaling is partitioned into Q (lifted-channel square block,
    split u_hat/v_hat), S (coupling) and R (controller-channel block); the
    result is the 4x4 arrangement whose congruence with diag(V, Delta_c(V))
    stacked over the identity is positive definite whenever the passivity
    condition held.
    """
    r_s = u_hat + v_hat
    p = sym(p_passive)
    if p.shape[0] != r_s + r_c:
        raise DimensionError(
            f"passive scaling must have dimension {r_s + r_c}, got {p.shape[0]}")
    q = p[:r_s, :r_s]
    s = p[r_s:, :r_s]
    r = p[r_s:, r_s:]
    q11, q12 = q[:u_hat, :u_hat], q[:u_hat, u_hat:]
    q21, q22 = q[u_hat:, :u_hat], q[u_hat:, u_hat:]
    s1, s2 = s[:, :u_hat], s[:, u_hat:]
    z_rc = np.zeros((r_c, r_c))
    hat = block([
        [2.0 * q11, s1.T, 2.0 * q12, s1.T],
        [s1, z_rc, s2, r],
        [2.0 * q21, s2.T, 2.0 * q22, s2.T],
        [s1, r, s2, z_rc],
    ])
    # the display looks asymmetric but symmetry follows from Q = Q^T
    hat = sym(hat, tol=1e-9)
    return HatScaling(matrix=hat, u_hat=u_hat, v_hat=v_hat, r_c=r_c)
