"""Controller reconstruction from a feasible synthesis solution: Lyapunov
certificate, passive scaling, explicit triangular scheduling function, and
controller matrices.

Zero blocks that the theory guarantees are produced as structural zeros
(block-wise arithmetic with exact-zero factors), not as small numbers, so
the returned controller and scheduling function satisfy their patterns
bit-exactly.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import scalings as sc
from .lfr import ControllerDims, GainScheduledController, ValueSet, close_loop_lifted
from .lifting import LiftedPlantLfr, delta_lift
from .matkit import block, he, min_eig, sym
from .synthesis import SynthesisOptions, SynthesisSolution


class ReconstructionError(RuntimeError):
    pass


class StructureAssertionError(ReconstructionError):
    """A block the construction guarantees to vanish did not (upstream bug)."""


def _inv_with_cond(mat, label: str, warnings: list, cond_limit: float = 1e12):
    if mat.shape[0] == 0:
        return mat.copy()
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond):
        raise ReconstructionError(f"{label} is singular")
    if cond > cond_limit:
        warnings.append(f"{label} condition number {cond:.3e}")
    return np.linalg.inv(mat)


def _lower_block_inverse(a, c, d, label, warnings):
    """Inverse of [[A, 0], [C, D]] with a structural zero upper-right block."""
    ia = _inv_with_cond(a, f"{label}[1,1]", warnings)
    idd = _inv_with_cond(d, f"{label}[2,2]", warnings)
    return ia, -idd @ c @ ia, idd


@dataclass
class StateFactorization:
    """State-block factorization: U1 = I, V1 = I - X1 Y1, and the assembled
    Lyapunov certificate for the closed loop."""

    x1: np.ndarray
    y1: np.ndarray
    u1: np.ndarray
    v1: np.ndarray
    x_big: np.ndarray          # the closed-loop Lyapunov matrix
    residual: float
    warnings: list = field(default_factory=list)

    @property
    def y_cal(self):
        n = self.x1.shape[0]
        return block([[self.y1, np.eye(n)], [self.v1, np.zeros((n, n))]])

    @property
    def z_cal(self):
        n = self.x1.shape[0]
        return block([[np.eye(n), self.x1], [np.zeros((n, n)), self.u1]])


@dataclass
class ChannelFactorization:
    """Channel-block factorization built from T1 = Q2 - Q1t^-1, T2 = Q3 - Q2.

    Stores the effective (possibly perturbed) scaling variables along with
    the triangular factors; the passive scaling for the lifted loop is
    `p_big`.
    """

    q2: np.ndarray
    q3: np.ndarray
    q1t: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    p_big: np.ndarray
    u2: np.ndarray
    v2: np.ndarray
    s11t: np.ndarray
    s21t: np.ndarray
    s22t: np.ndarray
    residual: float
    perturbations: Dict[str, float] = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def r_s(self) -> int:
        return self.q2.shape[0]

    @property
    def y_cal(self):
        r = self.r_s
        return block([
            [np.hstack([self.q1t, np.eye(r)]), np.eye(r)],
            [self.v2, np.zeros((2 * r, r))],
        ])

    @property
    def z_cal(self):
        r = self.r_s
        return block([
            [np.eye(r), np.hstack([self.q2, self.q3])],
            [np.zeros((2 * r, r)), self.u2],
        ])


def build_factorizations(solution: SynthesisSolution,
                         options: Optional[SynthesisOptions] = None,
                         t_shift: float = 0.0):
    """Both factorizations of the sufficiency construction.

    ``t_shift`` adds delta*I to T1 and T2 (realized by shifting the scaling
    variables consistently); the caller escalates it when the unshifted
    factors are too close to singular.
    """
    options = options or SynthesisOptions()
    warnings: list = []
    n = solution.n_s
    r = solution.r_s

    # ---- state block -------------------------------------------------------
    x1, y1 = solution.x1, solution.y1
    coupling_margin = min_eig(solution.coupling)
    if coupling_margin <= 0:
        raise ReconstructionError(
            f"coupling block [[Y1, I], [I, X1]] is not positive definite "
            f"(min eig {coupling_margin:.3e})")
    u1 = np.eye(n)
    v1 = np.eye(n) - x1 @ y1
    f1 = StateFactorization(x1=x1, y1=y1, u1=u1, v1=v1, x_big=np.zeros((0, 0)),
                            residual=0.0, warnings=warnings)
    y_cal = f1.y_cal
    z_cal = f1.z_cal
    cond = np.linalg.cond(y_cal)
    if cond > 1e12:
        warnings.append(f"state factor condition number {cond:.3e}")
    x_big = sym(np.linalg.solve(y_cal.T, z_cal.T).T, tol=1e-6)
    f1.x_big = x_big
    f1.residual = float(np.max(np.abs(x_big @ y_cal - z_cal))
                        / (1.0 + np.max(np.abs(z_cal))))
    if f1.residual > 1e-9:
        raise ReconstructionError(f"state factorization residual {f1.residual:.3e}")
    if min_eig(x_big) <= 0:
        raise ReconstructionError("closed-loop Lyapunov matrix is not positive definite")

    # ---- channel block ------------------------------------------------------
    perturbations: Dict[str, float] = {}
    q2, q3, q1t = solution.q2.copy(), solution.q3.copy(), solution.q1t.copy()
    if t_shift:
        # shifting q3 shifts T2; shifting q2 and q3 together shifts T1
        q2 = q2 + t_shift * np.eye(r)
        q3 = q3 + 2.0 * t_shift * np.eye(r)
        perturbations["t_shift"] = t_shift
    q1t_inv = _inv_with_cond(q1t, "dual scaling", warnings)
    t1 = q2 - q1t_inv
    t2 = q3 - q2
    for label, t in (("t1", t1), ("t2", t2)):
        scale = 1.0 + np.max(np.abs(t), initial=0.0)
        if t.size and np.linalg.svd(t, compute_uv=False)[-1] <= 1e-12 * scale:
            raise ReconstructionError(f"{label} singular; caller should escalate t_shift")

    t1_inv = _inv_with_cond(t1, "t1", warnings)
    t2_inv = _inv_with_cond(t2, "t2", warnings)
    i_r = np.eye(r)
    z_r = np.zeros((r, r))
    p_big = sym(block([
        [q3, i_r, i_r],
        [i_r, t1_inv, z_r],
        [i_r, z_r, t2_inv],
    ]), tol=1e-6)
    # first block-column of the inverse provides the lower factor of V2
    first_col = np.linalg.solve(p_big, np.vstack([i_r, z_r, z_r]))
    q1t_check = sym(first_col[:r], tol=1e-6)
    s11t = first_col[r:2 * r]
    s21t = first_col[2 * r:]
    s22t = -t2
    u2 = block([[i_r, i_r], [z_r, i_r]])
    v2 = block([[s11t, z_r], [s21t, s22t]])

    f2 = ChannelFactorization(q2=q2, q3=q3, q1t=q1t, t1=t1, t2=t2, p_big=p_big,
                              u2=u2, v2=v2, s11t=s11t, s21t=s21t, s22t=s22t,
                              residual=0.0, perturbations=perturbations,
                              warnings=warnings)
    resid = np.max(np.abs(p_big @ f2.y_cal - f2.z_cal)) / (1.0 + np.max(np.abs(f2.z_cal)))
    f2.residual = float(resid)
    if f2.residual > 1e-9:
        raise ReconstructionError(f"channel factorization residual {f2.residual:.3e}")
    if np.max(np.abs(q1t_check - q1t)) > 1e-6 * (1.0 + np.max(np.abs(q1t))):
        raise ReconstructionError("inverse of the assembled passive scaling does not "
                                  "reproduce the dual scaling block")
    return f1, f2


class TriangularScheduling:
    """Closed-form lower block-triangular scheduling function.

    Evaluation is block-wise, so the upper-right block of every value is a
    structural zero.  The defining data (Q2, Q3, Q1t, U2, V2) serializes to
    JSON so consumers can reproduce the map bit-exactly.
    """

    def __init__(self, q2, q3, q1t, u2, v2):
        self.q2 = np.asarray(q2, dtype=float)
        self.q3 = np.asarray(q3, dtype=float)
        self.q1t = np.asarray(q1t, dtype=float)
        self.u2 = np.asarray(u2, dtype=float)
        self.v2 = np.asarray(v2, dtype=float)
        r = self.q2.shape[0]
        self.r_s = r
        warnings: list = []
        # U2 is upper block-triangular, so U2^T is lower; invert block-wise
        e11, e21, e22 = _lower_block_inverse(
            self.u2[:r, :r].T, self.u2[:r, r:].T, self.u2[r:, r:].T,
            "u2^T", warnings)
        f11, f21, f22 = _lower_block_inverse(
            self.v2[:r, :r], self.v2[r:, :r], self.v2[r:, r:], "v2", warnings)
        self._e = (e11, e21, e22)
        self._f = (f11, f21, f22)
        self.warnings = warnings

    @property
    def block_sizes(self):
        return (self.r_s, self.r_s)

    def core_blocks(self, v):
        """Lower-triangular core [[Q2 Dl Q1t + Dl^T, 0], [Q3 Dl Q1t + Dl^T,
        Q3 Dl + Dl^T Q2]] evaluated at V."""
        dl = delta_lift(v)
        c11 = self.q2 @ dl @ self.q1t + dl.T
        c21 = self.q3 @ dl @ self.q1t + dl.T
        c22 = self.q3 @ dl + dl.T @ self.q2
        return c11, c21, c22

    def __call__(self, v) -> np.ndarray:
        c11, c21, c22 = self.core_blocks(v)
        e11, e21, e22 = self._e
        f11, f21, f22 = self._f
        r = self.r_s
        out = np.zeros((2 * r, 2 * r))
        out[:r, :r] = -(e11 @ c11 @ f11)
        out[r:, :r] = -(e21 @ c11 @ f11 + e22 @ c21 @ f11 + e22 @ c22 @ f21)
        out[r:, r:] = -(e22 @ c22 @ f22)
        return out

    def to_dict(self) -> dict:
        return {
            "q2": self.q2.tolist(), "q3": self.q3.tolist(), "q1t": self.q1t.tolist(),
            "u2": self.u2.tolist(), "v2": self.v2.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TriangularScheduling":
        return cls(data["q2"], data["q3"], data["q1t"], data["u2"], data["v2"])


def scheduling_map(f2: ChannelFactorization, q2=None, q3=None, q1t=None) -> TriangularScheduling:
    """Scheduling function from the channel factorization (the scaling
    variables default to the factorization's effective ones)."""
    return TriangularScheduling(
        q2 if q2 is not None else f2.q2,
        q3 if q3 is not None else f2.q3,
        q1t if q1t is not None else f2.q1t,
        f2.u2, f2.v2,
    )


def controller_matrices(solution: SynthesisSolution, plant: LiftedPlantLfr,
                        f1: StateFactorization, f2: ChannelFactorization) -> GainScheduledController:
    """Recover the controller matrices by inverting the parameter
    transformation; asserts (and produces exactly) the structured zero
    pattern."""
    n, r = solution.n_s, solution.r_s
    d = plant.dims
    if (n, r) != (d.n, d.r_s):
        raise ReconstructionError("solution dimensions do not match the plant")
    warnings = list(f2.warnings)
    kb = solution.kbar
    q2, q3, q1t = f2.q2, f2.q3, f2.q1t

    pin = q2.T @ plant.a22
    k = {
        (1, 1): kb["k11"],
        (1, 2): np.hstack([kb["k12"], kb["k13"]]),
        (2, 1): np.vstack([kb["k21"], kb["k31"]]),
        (2, 2): block([[kb["k22"], pin], [kb["k32"], kb["k33"]]]),
    }
    l = {1: kb["l1"], 2: np.vstack([np.zeros((r, d.k)), kb["l3"]])}
    m = {1: kb["m1"], 2: np.hstack([kb["m2"], np.zeros((d.m, r))])}

    sched = scheduling_map(f2)
    u2t_inv = np.zeros((2 * r, 2 * r))
    u2t_inv[:r, :r], u2t_inv[r:, :r], u2t_inv[r:, r:] = sched._e
    v2_inv = np.zeros((2 * r, 2 * r))
    v2_inv[:r, :r], v2_inv[r:, :r], v2_inv[r:, r:] = sched._f

    u1t_inv = np.linalg.inv(f1.u1.T)
    v1_inv = _inv_with_cond(f1.v1, "v1", warnings)
    ut_inv = {1: u1t_inv, 2: u2t_inv}
    v_inv = {1: v1_inv, 2: v2_inv}
    x_t = {1: f1.x1.T, 2: np.vstack([q2.T, q3.T])}
    y = {1: f1.y1, 2: np.hstack([q1t, np.eye(r)])}
    u_t = {1: f1.u1.T, 2: f2.u2.T}
    v_fac = {1: f1.v1, 2: f2.v2}
    a_p = {(1, 1): plant.a11, (1, 2): plant.a12, (2, 1): plant.a21, (2, 2): plant.a22}
    bu = {1: plant.b1_u, 2: plant.b2_u}
    cy = {1: plant.c1_y, 2: plant.c2_y}

    b_c = {i: ut_inv[i] @ l[i] for i in (1, 2)}
    c_c = {j: m[j] @ v_inv[j] for j in (1, 2)}

    # the (1,2) block of X2^T A22 Y2 must reuse the pin array bit-exactly so
    # that the subtraction against the pinned entry of K cancels to hard zero
    def xt_a_y(i, j):
        if (i, j) != (2, 2):
            return x_t[i] @ a_p[(i, j)] @ y[j]
        q3a = q3.T @ plant.a22
        return block([[pin @ q1t, pin], [q3a @ q1t, q3a]])

    a_c = {}
    for i in (1, 2):
        for j in (1, 2):
            g = (k[(i, j)] - xt_a_y(i, j)
                 - x_t[i] @ bu[i] @ (c_c[j] @ v_fac[j])
                 - (u_t[i] @ b_c[i]) @ cy[j] @ y[j])
            a_c[(i, j)] = ut_inv[i] @ g @ v_inv[j]

    # structural zero pattern (guaranteed by the triangular factors and pins)
    zero_checks = {
        "a22_c upper-right": a_c[(2, 2)][:r, r:],
        "b2_c top": b_c[2][:r, :],
        "c2_c right": c_c[2][:, r:],
    }
    for label, blk in zero_checks.items():
        if blk.size and np.max(np.abs(blk)) != 0.0:
            raise StructureAssertionError(
                f"{label} is {np.max(np.abs(blk)):.3e} instead of a structural zero")

    dims = ControllerDims(n=n, r1=r, r2=r, k=d.k, m=d.m)
    rows, cols = dims.row_spec(), dims.col_spec()
    mat = np.zeros((rows.total, cols.total))
    mat[rows.slice(0), cols.slice(0)] = a_c[(1, 1)]
    mat[rows.slice(0), cols.slice_range(1, 3)] = a_c[(1, 2)]
    mat[rows.slice_range(1, 3), cols.slice(0)] = a_c[(2, 1)]
    mat[rows.slice_range(1, 3), cols.slice_range(1, 3)] = a_c[(2, 2)]
    mat[rows.slice(0), cols.slice(3)] = b_c[1]
    mat[rows.slice_range(1, 3), cols.slice(3)] = b_c[2]
    mat[rows.slice(3), cols.slice(0)] = c_c[1]
    mat[rows.slice(3), cols.slice_range(1, 3)] = c_c[2]
    # direct feedthrough is identically zero by construction
    controller = GainScheduledController(dims, mat, scheduling=sched)
    report = controller.validate()
    if not report.valid:
        raise StructureAssertionError(f"recovered controller violates the pattern:\n{report}")
    return controller


@dataclass
class ReconstructionResult:
    controller: GainScheduledController
    f1: StateFactorization
    f2: ChannelFactorization
    x_big: np.ndarray
    p_big: np.ndarray
    z: np.ndarray
    gamma: float
    passive_margin: float
    t_shift: float
    warnings: list
    polished: bool = False


def polish_certificate(cl, p_big, z0, gamma, eps_base: float = 1e-6,
                       entry_cap: Optional[float] = None,
                       value_set: Optional[ValueSet] = None,
                       membership_samples: int = 64, seed: int = 0):
    """Re-optimize an analysis certificate for a fixed closed loop and level.

    The analysis inequalities are affine in (X1, Z) once the scaling and the
    controller are fixed, so a small margin-maximization program recovers
    the best certificate the constructed scaling admits.  With a value set
    given, the scaling itself is optimized as well, constrained by the
    passivity condition at the vertices plus a fixed grid of hull samples
    (vertex certification is kept; hull coverage is then evidence, which the
    downstream checks report separately).  Returns ``(x1, p, z, margin)`` or
    ``None`` when the polish step has numerical trouble.
    """
    from .sdp import LmiProblem, SolverOptions, blockmat, const, he_expr

    n = cl.n
    q_in, q_out = cl.q_in, cl.q_out
    r = cl.w_dim
    p_big = sym(p_big)

    prob = LmiProblem()
    x1 = prob.add_matrix_variable("x1", n)
    z = prob.add_matrix_variable("z", q_out)
    tau = prob.add_scalar_variable("tau")
    if value_set is not None:
        p_var = prob.add_matrix_variable("p", r)
        pa21 = p_var.expr().right_mul(cl.a21)
        pa22 = he_expr(p_var.expr().right_mul(cl.a22))
        pb2 = p_var.expr().right_mul(cl.b2)
    else:
        pa21 = const(p_big @ cl.a21)
        pa22 = const(he(p_big @ cl.a22))
        pb2 = const(p_big @ cl.b2)

    def pad(expr, dim):
        return expr + tau.expr().times_matrix(np.eye(dim))

    # first inequality, Schur-linearized in Z
    phi = blockmat([
        [pad(-x1.expr(), n), pa21.T],
        [pa21, pad(pa22, r)],
    ])
    cmat = const(np.hstack([cl.c1, cl.c2]))
    ineq1 = blockmat([[phi, cmat.T], [cmat, -z.expr()]])
    prob.add_lmi(ineq1, "analysis_z")

    xa11 = he_expr(x1.expr().right_mul(cl.a11))
    top_mid = x1.expr().right_mul(cl.a12) + pa21.T
    ineq2 = blockmat([
        [pad(xa11, n), top_mid, x1.expr().right_mul(cl.b1)],
        [top_mid.T, pad(pa22, r), pb2],
        [x1.expr().right_mul(cl.b1).T, pb2.T,
         pad(const(-gamma * np.eye(q_in)), q_in)],
    ])
    prob.add_lmi(ineq2, "analysis_gamma")
    prob.add_lmi(pad(-x1.expr(), n), "x1_pos")
    prob.add_lmi(pad(-z.expr(), q_out), "z_pos")
    prob.add_linear_le(z.expr().trace(), 1.0 - eps_base)
    cap = entry_cap
    if cap is None:
        cap = 1e3 * (1.0 + float(max(np.max(np.abs(p_big)), gamma, np.max(np.abs(z0)))))
    prob.add_entry_box(x1, cap)
    prob.add_entry_box(z, cap)
    if value_set is not None:
        rng = np.random.default_rng(seed + 987654321)
        points = list(value_set.vertices) + value_set.sample_hull(membership_samples, rng)
        for i, v in enumerate(points):
            dlc = cl.scheduling(v)
            blk = pad(-he_expr(p_var.expr().right_mul(dlc)), r)
            prob.add_lmi(blk, f"passive_{i}")
        prob.add_entry_box(p_var, cap)
    prob.minimize((-1.0) * tau.expr())
    # the tau padding provides the strictness here; a data-scaled shift
    # would dwarf the attainable margins
    res = prob.solve(SolverOptions(eps_strict_base=1e-12))
    if res.status != "optimal" or float(res.values["tau"][0, 0]) <= 0.0:
        return None
    p_out = sym(res.values["p"]) if value_set is not None else p_big
    return (sym(res.values["x1"]), p_out, sym(res.values["z"]),
            float(res.values["tau"][0, 0]))


def reconstruct(solution: SynthesisSolution, plant: LiftedPlantLfr,
                value_set: ValueSet,
                options: Optional[SynthesisOptions] = None,
                polish: bool = True) -> ReconstructionResult:
    """Full sufficiency pipeline with the perturbation-escalation policy.

    Retries with a doubled T-shift while the factors are near singular;
    after a successful build the passive-scaling membership of the
    certificate is re-verified at the vertices.  ``polish=False`` skips the
    certificate re-optimization (used by cheap candidate scoring).
    """
    from .verify import check_lifted_analysis

    options = options or SynthesisOptions()
    t_norm = 1.0 + float(np.max(np.abs(solution.q3 - solution.q2), initial=0.0))
    shift = 0.0
    last_error = None
    best_margin = -np.inf
    for _ in range(options.max_perturbation_retries + 1):
        try:
            f1, f2 = build_factorizations(solution, options, t_shift=shift)
            controller = controller_matrices(solution, plant, f1, f2)
            report = sc.check_passive(f2.p_big, controller.delta_c, value_set,
                                      hull_samples=0)
            if report.margin <= 0:
                raise ReconstructionError(
                    f"passive-scaling vertex margin {report.margin:.3e} not positive")
            # re-verify the analysis inequalities end to end per retry; the
            # certificate is polished for the fixed loop when that improves
            # its worst margin (the constructed one always stays available)
            cl = close_loop_lifted(plant, controller)
            candidates = [(f1.x_big, f2.p_big, solution.z, False)]
            if polish:
                fixed_p = polish_certificate(cl, f2.p_big, solution.z, solution.gamma,
                                             eps_base=options.eps_strict_base)
                if fixed_p is not None:
                    candidates.append((fixed_p[0], fixed_p[1], fixed_p[2], True))
                joint = polish_certificate(cl, f2.p_big, solution.z, solution.gamma,
                                           eps_base=options.eps_strict_base,
                                           value_set=value_set, seed=options.seed)
                if joint is not None:
                    candidates.append((joint[0], joint[1], joint[2], True))

            def worst_margin(cert):
                vals = list(cert.ineq_margins)
                for extra in (cert.scaling_vertex_margin, cert.scaling_sample_margin):
                    if extra is not None:
                        vals.append(extra)
                return min(vals)

            scored = []
            n_score = 48 if polish else 0
            for x_c, p_c, z_c, pol in candidates:
                cert = check_lifted_analysis(cl, x_c, p_c, z_c, solution.gamma,
                                             value_set=value_set, hull_samples=n_score,
                                             seed=options.seed + 1)
                scored.append((worst_margin(cert), cert, x_c, p_c, z_c, pol))
            final_margin, cert, x_big, p_used, z_used, polished = max(
                scored, key=lambda item: item[0])
            if min(cert.ineq_margins) <= 0:
                raise ReconstructionError(
                    f"analysis-inequality margins {cert.ineq_margins} not positive "
                    f"after reconstruction")
            if final_margin < 0.5 * best_margin:
                raise ReconstructionError(
                    "perturbation destroyed more than half of the certificate margin")
            return ReconstructionResult(
                controller=controller, f1=f1, f2=f2, x_big=x_big, p_big=p_used,
                z=z_used, gamma=solution.gamma,
                passive_margin=report.margin, t_shift=shift,
                warnings=f1.warnings + f2.warnings, polished=polished)
        except ReconstructionError as exc:
            last_error = exc
            if isinstance(exc, StructureAssertionError):
                raise
            best_margin = max(best_margin, getattr(exc, "margin", -np.inf))
            shift = 1e-8 * t_norm if shift == 0.0 else 2.0 * shift
    raise ReconstructionError(
        f"reconstruction failed after {options.max_perturbation_retries} retries: {last_error}")
