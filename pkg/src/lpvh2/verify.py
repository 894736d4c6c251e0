"""Closed-loop verification: analysis inequalities on both representations,
frozen-parameter H2 norms, time-domain simulation, and the restricted-mask
conservatism sweep."""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .lfr import ClosedLoopLfr, ValueSet, freeze
from .lifting import HatScaling
from .matkit import (StabilityError, as_matrix, block, he, l_form, l_sub_form,
                     max_eig, min_eig, solve_lyapunov, sym)

__all__ = [
    "AnalysisCertificate",
    "check_lifted_analysis",
    "check_original_analysis",
    "frozen_h2",
    "simulate",
    "SimulationReport",
    "piecewise_constant_delta",
    "conservatism_sweep",
    "SweepCell",
]


@dataclass
class AnalysisCertificate:
    kind: str                                # "lifted" | "original"
    gamma: float
    ineq_margins: Tuple[float, float]        # the two analysis inequalities
    x1_margin: float
    z_margin: float
    trace_slack: float                       # 1 - tr(Z)
    scaling_vertex_margin: Optional[float] = None
    scaling_sample_margin: Optional[float] = None
    feedthrough_abs: float = 0.0

    @property
    def valid(self) -> bool:
        values = [self.ineq_margins[0], self.ineq_margins[1], self.x1_margin,
                  self.z_margin, self.trace_slack]
        if self.scaling_vertex_margin is not None:
            values.append(self.scaling_vertex_margin)
        if self.scaling_sample_margin is not None:
            values.append(self.scaling_sample_margin)
        return all(v > 0.0 for v in values)

    def summary(self) -> str:
        lines = [
            f"{self.kind} analysis certificate at gamma = {self.gamma:.6g}:",
            f"  inequality margins: {self.ineq_margins[0]:.3e}, {self.ineq_margins[1]:.3e}",
            f"  lyapunov margin:    {self.x1_margin:.3e}",
            f"  z margin / trace slack: {self.z_margin:.3e} / {self.trace_slack:.3e}",
        ]
        if self.scaling_vertex_margin is not None:
            lines.append(f"  scaling vertex margin:  {self.scaling_vertex_margin:.3e}")
        if self.scaling_sample_margin is not None:
            lines.append(f"  scaling sampled margin: {self.scaling_sample_margin:.3e}")
        lines.append(f"  verdict: {'VALID' if self.valid else 'INVALID'}")
        return "\n".join(lines)


def _analysis_margins(cl: ClosedLoopLfr, x1, r_weight, z, gamma):
    """Dense evaluation of the two analysis inequalities for a closed loop,
    with the scaling already embedded into the channel weight."""
    x1 = sym(x1)
    z = sym(z)
    n = cl.n
    if x1.shape[0] != n:
        raise ValueError(f"Lyapunov matrix must be {n}x{n}")
    z_inv = np.linalg.inv(z)
    q_in, q_out = cl.q_in, cl.q_out
    x_first = block([[-x1, np.zeros((n, n))], [np.zeros((n, n)), np.zeros((n, n))]])
    s_first = scipy.linalg.block_diag(np.zeros((q_in, q_in)), z_inv)
    first = l_sub_form(x_first, r_weight, s_first,
                       cl.a11, cl.a12, cl.a21, cl.a22, cl.c1, cl.c2, q_in=q_in)
    x_second = block([[np.zeros((n, n)), x1], [x1, np.zeros((n, n))]])
    s_second = scipy.linalg.block_diag(-gamma * np.eye(q_in), np.zeros((q_out, q_out)))
    second = l_form(x_second, r_weight, s_second,
                    cl.a11, cl.a12, cl.a21, cl.a22,
                    cl.b1, cl.b2, cl.c1, cl.c2, cl.d)
    return -max_eig(first), -max_eig(second)


def check_lifted_analysis(cl: ClosedLoopLfr, x1, p, z, gamma,
                          value_set: Optional[ValueSet] = None,
                          hull_samples: int = 200, seed: int = 0) -> AnalysisCertificate:
    """Analysis inequalities for the lifted closed loop with the passive
    scaling embedded anti-diagonally, plus class membership at the vertices
    (and sampled over the hull when a value set is given)."""
    p = sym(p)
    r = cl.w_dim
    if cl.z_dim != r or p.shape[0] != r:
        raise ValueError("scaling dimension does not match the lifted channel")
    r_weight = block([[np.zeros((r, r)), p], [p, np.zeros((r, r))]])
    m1, m2 = _analysis_margins(cl, x1, r_weight, z, gamma)
    vertex_margin = sample_margin = None
    if value_set is not None:
        vertex_margin = min(min_eig(he(p @ cl.scheduling(v))) for v in value_set.vertices)
        if hull_samples > 0:
            rng = np.random.default_rng(seed)
            sample_margin = min(min_eig(he(p @ cl.scheduling(v)))
                                for v in value_set.sample_hull(hull_samples, rng))
    return AnalysisCertificate(
        kind="lifted", gamma=float(gamma), ineq_margins=(m1, m2),
        x1_margin=min_eig(x1), z_margin=min_eig(z),
        trace_slack=float(1.0 - np.trace(z)),
        scaling_vertex_margin=vertex_margin, scaling_sample_margin=sample_margin,
        feedthrough_abs=float(np.max(np.abs(cl.d), initial=0.0)),
    )


def check_original_analysis(cl: ClosedLoopLfr, x1, hat: HatScaling, z, gamma,
                            value_set: Optional[ValueSet] = None,
                            hull_samples: int = 200, seed: int = 0) -> AnalysisCertificate:
    """Analysis inequalities for the original closed loop with a full block
    scaling, plus the scaling positivity condition at vertices/samples."""
    mat = sym(hat.matrix)
    if mat.shape[0] != cl.w_dim + cl.z_dim:
        raise ValueError("full block scaling does not match the closed-loop channel")
    m1, m2 = _analysis_margins(cl, x1, mat, z, gamma)
    vertex_margin = sample_margin = None
    if value_set is not None:
        def pos_margin(v):
            delta = cl.scheduling(v)
            outer = np.vstack([delta, np.eye(cl.z_dim)])
            return min_eig(outer.T @ mat @ outer)

        vertex_margin = min(pos_margin(v) for v in value_set.vertices)
        if hull_samples > 0:
            rng = np.random.default_rng(seed)
            sample_margin = min(pos_margin(v)
                                for v in value_set.sample_hull(hull_samples, rng))
    return AnalysisCertificate(
        kind="original", gamma=float(gamma), ineq_margins=(m1, m2),
        x1_margin=min_eig(x1), z_margin=min_eig(z),
        trace_slack=float(1.0 - np.trace(z)),
        scaling_vertex_margin=vertex_margin, scaling_sample_margin=sample_margin,
        feedthrough_abs=float(np.max(np.abs(cl.d), initial=0.0)),
    )


def frozen_h2(cl: ClosedLoopLfr, v, feedthrough_tol: float = 1e-9) -> float:
    """Squared H2 norm of the frozen closed loop via the controllability
    Gramian; requires a Hurwitz frozen matrix and vanishing feedthrough."""
    fr = freeze(cl, v)
    d_abs = float(np.max(np.abs(fr.d), initial=0.0))
    if d_abs > feedthrough_tol:
        raise ValueError(
            f"frozen feedthrough {d_abs:.3e} is nonzero; the squared H2 norm is unbounded")
    gram = solve_lyapunov(fr.a.T, fr.b @ fr.b.T)  # A X + X A^T + B B^T = 0
    return float(np.trace(fr.c @ gram @ fr.c.T))


def piecewise_constant_delta(value_set: ValueSet, dwell: float, seed: int = 0,
                             vertices_only: bool = False) -> Callable[[float], np.ndarray]:
    """Seeded piecewise-constant parameter trajectory over the hull (or the
    vertex set); constant on intervals of length ``dwell``."""
    rng = np.random.default_rng(seed)
    cache: dict = {}

    def draw(idx: int) -> np.ndarray:
        if idx not in cache:
            local = np.random.default_rng(hash((seed, idx)) % (2 ** 32))
            if vertices_only:
                cache[idx] = value_set.vertices[local.integers(len(value_set.vertices))]
            else:
                w = local.exponential(size=len(value_set.vertices))
                w = w / w.sum()
                cache[idx] = sum(wi * vi for wi, vi in zip(w, value_set.vertices))
        return cache[idx]

    return lambda t: draw(int(np.floor(t / dwell)))


@dataclass
class SimulationReport:
    times: np.ndarray
    state_norms: np.ndarray
    decay_rate: float
    envelope_gain: float
    impulse_energies: List[float] = field(default_factory=list)

    @property
    def total_impulse_energy(self) -> float:
        return float(sum(self.impulse_energies))

    def envelope_dominates(self) -> bool:
        """The fitted envelope K * exp(-alpha t) * ||x(0)|| majorizes the run."""
        if self.state_norms.size == 0 or self.state_norms[0] == 0.0:
            return True
        env = (self.envelope_gain * self.state_norms[0]
               * np.exp(-self.decay_rate * self.times))
        return bool(np.all(self.state_norms <= env * (1.0 + 1e-9)))


def _rk4_run(cl: ClosedLoopLfr, delta_traj, horizon: float, x0: np.ndarray,
             step: float):
    """Fixed-step RK4 on the frozen-at-t closure; returns times, states, zp."""
    steps = max(1, int(np.ceil(horizon / step)))
    h = horizon / steps
    times = np.linspace(0.0, horizon, steps + 1)
    states = np.empty((steps + 1, cl.n))
    outputs = np.empty((steps + 1, cl.q_out))
    x = np.asarray(x0, dtype=float).ravel().copy()
    cache: dict = {}

    def a_of(t):
        v = np.atleast_2d(delta_traj(t))
        key = v.tobytes()
        if key not in cache:
            cache[key] = freeze(cl, v)
        return cache[key]

    fr = a_of(0.0)
    for i, t in enumerate(times):
        states[i] = x
        outputs[i] = fr.c @ x
        if i == steps:
            break
        # piecewise-constant parameter: refresh the frozen matrices per step
        k1 = fr.a @ x
        fr_mid = a_of(t + 0.5 * h)
        k2 = fr_mid.a @ (x + 0.5 * h * k1)
        k3 = fr_mid.a @ (x + 0.5 * h * k2)
        fr_end = a_of(t + h)
        k4 = fr_end.a @ (x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        fr = fr_end
    return times, states, outputs


def simulate(cl: ClosedLoopLfr, delta_traj, horizon: float,
             x0=None, impulse: bool = True, step: Optional[float] = None,
             value_set: Optional[ValueSet] = None) -> SimulationReport:
    """Integrate the time-varying closure with fixed-step RK4.

    The step is bounded by a tenth of the fastest frozen time constant
    (sampled at the trajectory's initial value and, when provided, the
    vertex set).  With ``impulse`` set, each performance input is impulsed
    in turn and the output energies are recorded.
    """
    probe_points = [delta_traj(0.0)]
    if value_set is not None:
        probe_points += list(value_set.vertices)
    lam_max = 0.0
    for v in probe_points:
        fr = freeze(cl, v)
        if fr.a.size:
            lam_max = max(lam_max, float(np.max(np.abs(np.linalg.eigvals(fr.a)))))
    step_bound = 0.1 / lam_max if lam_max > 0 else horizon / 100.0
    h = min(step if step is not None else step_bound, step_bound)
    if horizon <= 0.0:
        report = SimulationReport(times=np.zeros(0), state_norms=np.zeros(0),
                                  decay_rate=0.0, envelope_gain=1.0)
        return report

    if x0 is None:
        x0 = np.ones(cl.n)
    times, states, _ = _rk4_run(cl, delta_traj, horizon, x0, h)
    norms = np.linalg.norm(states, axis=1)

    # least-squares exponent on the trailing 80% of the horizon
    tail = times >= 0.2 * horizon
    safe = norms[tail] > 0
    if np.count_nonzero(safe) >= 2:
        tt = times[tail][safe]
        yy = np.log(norms[tail][safe])
        slope, intercept = np.polyfit(tt, yy, 1)
        decay = -float(slope)
    else:
        decay = 0.0
    # envelope gain chosen so that the envelope dominates the whole run
    if norms.size and norms[0] > 0:
        env_ratio = norms / (norms[0] * np.exp(-decay * times))
        gain = float(np.max(env_ratio))
    else:
        gain = 1.0

    energies: List[float] = []
    if impulse and cl.q_in > 0:
        fr0 = freeze(cl, delta_traj(0.0))
        for i in range(cl.q_in):
            xi = fr0.b[:, i]
            t_i, s_i, z_i = _rk4_run(cl, delta_traj, horizon, xi, h)
            power = np.sum(z_i * z_i, axis=1)
            energies.append(float(np.trapezoid(power, t_i)))

    return SimulationReport(times=times, state_norms=norms, decay_rate=decay,
                            envelope_gain=gain, impulse_energies=energies)


# ---------------------------------------------------------------------------
# conservatism sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepCell:
    parameter: float
    mask_id: str
    status: str            # "optimal" | "infeasible" | "numerical-failure"
    gamma: Optional[float]
    margin: Optional[float]
    solve_time: float


def conservatism_sweep(family, grid: Sequence[float], masks=None,
                       options=None, jobs: int = 1) -> List[SweepCell]:
    """Run synthesis over a plant family for each grid point and each mask.

    ``family`` maps the scalar parameter to a (plant, value set) pair; mask
    id "full" is the unrestricted run.  Cells are independent solves; the
    output order is deterministic regardless of ``jobs``.
    """
    from .lifting import lift_plant
    from .synthesis import (InfeasibleProblem, NumericalFailure, SynthesisOptions,
                            synthesize)

    options = options or SynthesisOptions()
    mask_list = [("full", None)] + list(masks or [])

    def run_cell(args):
        a, mask_id, mask = args
        plant, value_set = family(a)
        local = SynthesisOptions(**{**options.__dict__, "mask": mask})
        begin = time.perf_counter()
        try:
            sol = synthesize(lift_plant(plant), value_set, local)
            elapsed = time.perf_counter() - begin
            margin = min(sol.margins.values()) if sol.margins else None
            return SweepCell(a, mask_id, "optimal", sol.gamma, margin, elapsed)
        except InfeasibleProblem:
            return SweepCell(a, mask_id, "infeasible", None, None,
                             time.perf_counter() - begin)
        except NumericalFailure:
            return SweepCell(a, mask_id, "numerical-failure", None, None,
                             time.perf_counter() - begin)

    tasks = [(float(a), mask_id, mask) for a in grid for mask_id, mask in mask_list]
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(run_cell, tasks))
    else:
        cells = [run_cell(t) for t in tasks]
    return cells
