"""Scaling classes: membership checks and LMI constraint generation.

Five classes appear in the design flow: the primal and dual vertex classes
on the plant channel, the passive class on the lifted closed-loop channel,
and the full block classes (plain and doubly-constrained) on the original
closed-loop channel.  Vertex checks are exact for the primal/dual classes;
for scalings paired with a (generally rational) scheduling function the
hull is additionally sampled and both margins are reported separately.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg

from .lfr import ValueSet
from .lifting import HatScaling, delta_lift
from .matkit import DimensionError, as_matrix, block, he, min_eig, sym

MEMBERSHIP_EPS = 1e-9  # strictness threshold: member means margin > this


@dataclass
class MarginReport:
    """Raw margins of a membership check; `member` applies the strictness rule."""

    margin: float
    vertex_margins: List[float] = field(default_factory=list)
    sample_margin: Optional[float] = None
    details: dict = field(default_factory=dict)

    @property
    def member(self) -> bool:
        return self.margin > MEMBERSHIP_EPS


def _outer_primal(v):
    v = as_matrix(v)
    return np.vstack([v, np.eye(v.shape[1])])


def _outer_dual(v):
    v = as_matrix(v)
    return np.vstack([np.eye(v.shape[0]), -v.T])


def check_primal(p, value_set: ValueSet) -> MarginReport:
    """Primal class: (*)^T P [I;0] < 0 and (*)^T P [V;I] > 0 at every vertex."""
    p = sym(p)
    u_hat, v_hat = value_set.u_hat, value_set.v_hat
    if p.shape[0] != u_hat + v_hat:
        raise DimensionError(f"scaling must be {u_hat + v_hat} dimensional")
    corner = min_eig(-p[:u_hat, :u_hat])
    vertex_margins = [min_eig(_outer_primal(v).T @ p @ _outer_primal(v))
                      for v in value_set.vertices]
    margin = min([corner] + vertex_margins)
    return MarginReport(margin=margin, vertex_margins=vertex_margins,
                        details={"corner_margin": corner})


def check_dual(p, value_set: ValueSet) -> MarginReport:
    """Dual class: (*)^T P [0;I] > 0 and (*)^T P [I;-V^T] < 0 at every vertex."""
    p = sym(p)
    u_hat, v_hat = value_set.u_hat, value_set.v_hat
    if p.shape[0] != u_hat + v_hat:
        raise DimensionError(f"scaling must be {u_hat + v_hat} dimensional")
    corner = min_eig(p[u_hat:, u_hat:])
    vertex_margins = [min_eig(-(_outer_dual(v).T @ p @ _outer_dual(v)))
                      for v in value_set.vertices]
    margin = min([corner] + vertex_margins)
    return MarginReport(margin=margin, vertex_margins=vertex_margins,
                        details={"corner_margin": corner})


def _lifted_closed_block(v, delta_c):
    dl = delta_lift(v)
    dc = delta_c(v) if delta_c is not None else np.zeros((0, 0))
    return scipy.linalg.block_diag(dl, np.atleast_2d(dc))


def check_passive(p, delta_c, value_set: ValueSet, hull_samples: int = 200,
                  seed: int = 0) -> MarginReport:
    """Passive class on the lifted closed-loop channel:
    He(P * diag(Delta_l(V), Delta_c(V))) > 0.

    The vertex margin is necessary; because the synthesized scheduling
    function is rational in V the hull is additionally sampled (seedable)
    and the sampled minimum is reported alongside.
    """
    p = sym(p)
    vertex_margins = [min_eig(he(p @ _lifted_closed_block(v, delta_c)))
                      for v in value_set.vertices]
    rng = np.random.default_rng(seed)
    sample_margin = None
    if hull_samples > 0:
        samples = value_set.sample_hull(hull_samples, rng)
        sample_margin = min(
            (min_eig(he(p @ _lifted_closed_block(v, delta_c))) for v in samples),
            default=None,
        )
    margin = min(vertex_margins)
    return MarginReport(margin=margin, vertex_margins=vertex_margins,
                        sample_margin=sample_margin)


def _hat_outer(v, delta_c, v_hat, r_c):
    dc = delta_c(v) if delta_c is not None else np.zeros((r_c, r_c))
    delta_ex = scipy.linalg.block_diag(as_matrix(v), np.atleast_2d(dc))
    return np.vstack([delta_ex, np.eye(v_hat + r_c)])


def check_hat(hat, delta_c, value_set: ValueSet, hull_samples: int = 200,
              seed: int = 0) -> MarginReport:
    """Full block class: (*)^T Phat [diag(V, Delta_c(V)); I] > 0 at vertices
    (plus sampled hull evidence, same caveat as :func:`check_passive`)."""
    if isinstance(hat, HatScaling):
        mat, v_hat, r_c = hat.matrix, hat.v_hat, hat.r_c
    else:
        raise TypeError("check_hat needs a HatScaling (matrix with partition)")
    mat = sym(mat)
    vertex_margins = []
    for v in value_set.vertices:
        t = _hat_outer(v, delta_c, v_hat, r_c)
        vertex_margins.append(min_eig(t.T @ mat @ t))
    rng = np.random.default_rng(seed)
    sample_margin = None
    if hull_samples > 0:
        vals = []
        for v in value_set.sample_hull(hull_samples, rng):
            t = _hat_outer(v, delta_c, v_hat, r_c)
            vals.append(min_eig(t.T @ mat @ t))
        sample_margin = min(vals) if vals else None
    return MarginReport(margin=min(vertex_margins), vertex_margins=vertex_margins,
                        sample_margin=sample_margin)


def check_hat_full(hat, delta_c, value_set: ValueSet, hull_samples: int = 200,
                   seed: int = 0) -> MarginReport:
    """Doubly-constrained full block class: the plain condition plus
    negativity/positivity of the two corner blocks."""
    base = check_hat(hat, delta_c, value_set, hull_samples, seed)
    mat = sym(hat.matrix)
    n_in = hat.u_hat + hat.r_c
    neg_corner = min_eig(-mat[:n_in, :n_in])
    pos_corner = min_eig(mat[n_in:, n_in:])
    margin = min(base.margin, neg_corner, pos_corner)
    return MarginReport(
        margin=margin,
        vertex_margins=base.vertex_margins,
        sample_margin=base.sample_margin,
        details={"neg_corner": neg_corner, "pos_corner": pos_corner},
    )


def doubly_lifted_passivity_margin(p, delta_c, v) -> float:
    """He(P * diag(Delta_l(V), Delta_l(Delta_c(V)))) margin: the passivity
    constraint of the lifted plant/lifted controller comparison (test utility)."""
    p = sym(p)
    dl = delta_lift(v)
    dlc = delta_lift(delta_c(v))
    return min_eig(he(p @ scipy.linalg.block_diag(dl, dlc)))


# ---------------------------------------------------------------------------
# constraint generation for the SDP backend
# ---------------------------------------------------------------------------

def vertex_constraints_primal(var, value_set: ValueSet):
    """Affine (in the entries of P) blocks, each required negative definite:
    (*)^T P [I;0] and -(*)^T P [V_i;I] per vertex."""
    expr = var.expr() if hasattr(var, "expr") else var
    u_hat, v_hat = value_set.u_hat, value_set.v_hat
    e_u = np.vstack([np.eye(u_hat), np.zeros((v_hat, u_hat))])
    out = [("corner", e_u.T @ expr @ e_u)]
    for i, v in enumerate(value_set.vertices):
        t = _outer_primal(v)
        out.append((f"vertex{i}", -(t.T @ expr @ t)))
    return out


def vertex_constraints_dual(var, value_set: ValueSet):
    """Dual analog: -(*)^T P [0;I] and (*)^T P [I;-V_i^T] per vertex."""
    expr = var.expr() if hasattr(var, "expr") else var
    u_hat, v_hat = value_set.u_hat, value_set.v_hat
    e_v = np.vstack([np.zeros((u_hat, v_hat)), np.eye(v_hat)])
    out = [("corner", -(e_v.T @ expr @ e_v))]
    for i, v in enumerate(value_set.vertices):
        t = _outer_dual(v)
        out.append((f"vertex{i}", t.T @ expr @ t))
    return out


# ---------------------------------------------------------------------------
# masks (restricted-scaling conservatism harness)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingMask:
    """Forced-zero patterns over the free entries of the three scaling
    variables of the synthesis problem (True = entry pinned to zero)."""

    q2: np.ndarray
    q3: np.ndarray
    q1t: np.ndarray
    name: str = "mask"

    def __post_init__(self):
        for pattern in (self.q2, self.q3, self.q1t):
            p = np.asarray(pattern, dtype=bool)
            if p.ndim != 2 or p.shape[0] != p.shape[1]:
                raise DimensionError("mask patterns must be square")
            if not np.array_equal(p, p.T):
                raise DimensionError("mask patterns must be symmetric")

    @property
    def r_s(self) -> int:
        return self.q2.shape[0]

    @classmethod
    def unrestricted(cls, r_s: int) -> "ScalingMask":
        z = np.zeros((r_s, r_s), dtype=bool)
        return cls(z, z, z, name="full")

    @classmethod
    def diagonal_only(cls, r_s: int) -> "ScalingMask":
        """Restricts all three scaling variables to diagonal matrices."""
        p = ~np.eye(r_s, dtype=bool)
        return cls(p, p, p, name="diag")

    @classmethod
    def block_diagonal(cls, sizes) -> "ScalingMask":
        """Restricts to a block-diagonal pattern with the given block sizes."""
        r_s = sum(sizes)
        p = np.ones((r_s, r_s), dtype=bool)
        off = 0
        for s in sizes:
            p[off:off + s, off:off + s] = False
            off += s
        return cls(p, p, p, name="blockdiag")
