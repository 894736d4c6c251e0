"""Desk-scale plant builders: a fixed reference plant, seeded random
structured plants, and a parameterized family for conservatism sweeps."""

import numpy as np

from .lfr import PlantDims, StructuredPlantLfr, ValueSet


def desk1():
    """Fixed two-state reference plant (scalar channel and scalar
    performance/control signals) with the structured zero pattern.

    Both the control-to-performance and the noise-to-measurement paths are
    non-minimum-phase so the H2 optimum is regular (attained with a bounded
    controller); square minimum-phase paths would make the cheap-control /
    perfect-estimation limits degenerate.
    """
    dims = PlantDims(n=2, u1=1, u2=0, v1=1, v2=0, q_in=1, q_out=1, m=1, k=1)
    plant = StructuredPlantLfr.from_blocks(dims, {
        "x,x": [[0.0, 1.0], [-2.0, -1.0]],
        "x,w1": [[0.5], [0.0]],
        "x,wp": [[0.0], [1.0]],
        "x,u": [[0.0], [1.0]],
        "z1,x": [[1.0, 0.0]],
        "z1,w1": [[0.1]],
        "z1,u": [[0.2]],
        "zp,x": [[1.0, -1.0]],
        "zp,w1": [[0.1]],
        "zp,u": [[0.1]],
        "y,x": [[1.0, -2.0]],
        "y,w1": [[0.05]],
        "y,wp": [[1.0]],
    })
    value_set = ValueSet(1, 1, [[[-0.5]], [[0.5]]])
    return plant, value_set


def stable_matrix(rng, n: int, margin: float = 0.5) -> np.ndarray:
    """Random matrix with spectral abscissa pushed below -margin."""
    a = rng.normal(size=(n, n))
    if n == 0:
        return a
    shift = float(np.max(np.linalg.eigvals(a).real))
    return a - (shift + margin) * np.eye(n)


def random_structured_plant(rng, n_max: int = 4, uv_max: int = 2,
                            channel_scale: float = 0.4) -> StructuredPlantLfr:
    """Seeded random plant obeying the structured zero pattern.

    Channel couplings are kept moderate so that frozen evaluations stay
    well-posed over the unit-ball-sized value sets used in tests.
    """
    n = int(rng.integers(1, n_max + 1))
    u_hat = int(rng.integers(1, uv_max + 1))
    v_hat = int(rng.integers(1, uv_max + 1))
    u1 = int(rng.integers(0, u_hat + 1))
    v1 = int(rng.integers(0, v_hat + 1))
    dims = PlantDims(n=n, u1=u1, u2=u_hat - u1, v1=v1, v2=v_hat - v1,
                     q_in=int(rng.integers(1, 3)), q_out=int(rng.integers(1, 3)),
                     m=int(rng.integers(1, 3)), k=int(rng.integers(1, 3)))
    rows = dims.row_spec()
    cols = dims.col_spec()
    m = rng.normal(size=(rows.total, cols.total))
    # pull the channel square block down to keep I - V*A22 invertible on tests
    m[rows.slice_range(1, 3), cols.slice_range(1, 3)] *= channel_scale
    plant = StructuredPlantLfr(dims, m)
    from .lfr import PLANT_ZERO_BLOCKS, _PLANT_COLS, _PLANT_ROWS

    for r, c in PLANT_ZERO_BLOCKS:
        ri, ci = _PLANT_ROWS.index(r), _PLANT_COLS.index(c)
        plant.m[rows.slice(ri), cols.slice(ci)] = 0.0
    return plant


def random_value_set(rng, u_hat: int, v_hat: int, radius: float = 0.6,
                     structured: bool = False, u1: int = 0, v1: int = 0) -> ValueSet:
    """Random symmetric vertex set (so 0 is in the hull by construction).

    With ``structured=True`` the upper-right (u1 x (v_hat - v1)) block of
    every vertex is zeroed, which is what keeps the closed-loop performance
    feedthrough identically zero through the channel path.
    """
    count = int(rng.integers(1, 3))
    vertices = []
    for _ in range(count):
        v = radius * rng.uniform(-1.0, 1.0, size=(u_hat, v_hat))
        if structured:
            v[:u1, v1:] = 0.0
        vertices.append(v)
        vertices.append(-v)
    return ValueSet(u_hat, v_hat, vertices)


def random_desk_instance(seed: int, two_block: bool = False):
    """Seeded feasible-by-construction synthesis instance (plant, value set).

    Stable dynamics, moderate channel coupling, and a two-channel
    performance setup (independent process and measurement noise, state
    plus control-effort outputs) so the H2 optimum is regular and bounded
    away from zero.  ``two_block`` draws a split channel with
    block-diagonal vertices instead of a scalar one.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    if two_block:
        dims = PlantDims(n=n, u1=1, u2=1, v1=1, v2=1, q_in=2, q_out=2, m=1, k=1)
    else:
        dims = PlantDims(n=n, u1=1, u2=0, v1=1, v2=0, q_in=2, q_out=2, m=1, k=1)
    rows, cols = dims.row_spec(), dims.col_spec()
    m = np.zeros((rows.total, cols.total))
    plant = StructuredPlantLfr(dims, m)

    def put(row, col, value):
        ri = ("x", "z1", "z2", "zp", "y").index(row)
        ci = ("x", "w1", "w2", "wp", "u").index(col)
        blockv = np.asarray(value, dtype=float).reshape(rows.sizes[ri], cols.sizes[ci])
        plant.m[rows.slice(ri), cols.slice(ci)] = blockv

    # wp = (process noise, measurement noise); zp = (state cost, control cost)
    put("x", "x", stable_matrix(rng, n, margin=0.8))
    put("x", "w1", 0.3 * rng.normal(size=(n, dims.u1)))
    put("x", "wp", np.hstack([rng.normal(size=(n, 1)), np.zeros((n, 1))]))
    put("x", "u", rng.normal(size=(n, 1)) + np.sign(rng.normal()) * np.ones((n, 1)))
    put("z1", "x", 0.4 * rng.normal(size=(dims.v1, n)))
    put("z1", "w1", 0.2 * rng.normal(size=(dims.v1, dims.u1)))
    put("z1", "u", 0.2 * rng.normal(size=(dims.v1, 1)))
    if two_block:
        put("x", "w2", 0.3 * rng.normal(size=(n, dims.u2)))
        put("z2", "x", 0.4 * rng.normal(size=(dims.v2, n)))
        put("z2", "w1", 0.2 * rng.normal(size=(dims.v2, dims.u1)))
        put("z2", "w2", 0.2 * rng.normal(size=(dims.v2, dims.u2)))
        put("z2", "wp", np.hstack([0.3 * rng.normal(size=(dims.v2, 1)),
                                   np.zeros((dims.v2, 1))]))
        put("z2", "u", 0.2 * rng.normal(size=(dims.v2, 1)))
    put("zp", "x", np.vstack([rng.normal(size=(1, n)), np.zeros((1, n))]))
    put("zp", "w1", np.vstack([0.2 * rng.normal(size=(1, dims.u1)),
                               np.zeros((1, dims.u1))]))
    put("zp", "u", np.array([[0.0], [0.3 + rng.uniform(0.0, 0.3)]]))
    put("y", "x", rng.normal(size=(1, n)))
    put("y", "w1", 0.2 * rng.normal(size=(1, dims.u1)))
    if two_block:
        put("y", "w2", 0.2 * rng.normal(size=(1, dims.u2)))
    put("y", "wp", np.array([[0.0, 0.3 + rng.uniform(0.0, 0.3)]]))

    radius = 0.4 + rng.uniform(0.0, 0.2)
    if two_block:
        corners = [np.diag([s1 * radius, s2 * radius])
                   for s1 in (-1.0, 1.0) for s2 in (-1.0, 1.0)]
        value_set = ValueSet(2, 2, corners)
    else:
        value_set = ValueSet(1, 1, [[[-radius]], [[radius]]])
    return plant, value_set


def unstabilizable_plant():
    """Unstable mode unreachable from the control input: no stabilizing
    controller exists, so synthesis must report infeasibility."""
    dims = PlantDims(n=2, u1=1, u2=0, v1=1, v2=0, q_in=1, q_out=1, m=1, k=1)
    plant = StructuredPlantLfr.from_blocks(dims, {
        "x,x": [[1.0, 0.0], [0.0, -1.0]],   # +1 mode is uncontrollable
        "x,wp": [[1.0], [1.0]],
        "x,u": [[0.0], [1.0]],
        "zp,x": [[1.0, 1.0]],
        "zp,u": [[0.5]],
        "y,x": [[1.0, 1.0]],
        "y,wp": [[0.5]],
    })
    value_set = ValueSet(1, 1, [[[-0.1]], [[0.1]]])
    return plant, value_set


def desk_family(a: float, coupling: float = 1.0):
    """Sweep family: two-state plant with a two-parameter diagonal channel
    whose interaction gain scales affinely with the sweep parameter ``a``.

    Performance channels follow the regular two-input/two-output layout
    (independent process and measurement noise, state plus control cost).
    """
    dims = PlantDims(n=2, u1=1, u2=1, v1=1, v2=1, q_in=2, q_out=2, m=1, k=1)
    plant = StructuredPlantLfr.from_blocks(dims, {
        "x,x": [[0.0, 1.0], [-1.0, -0.4]],
        "x,w1": [[0.0], [a]],
        "x,w2": [[a], [0.0]],
        "x,wp": [[0.0, 0.0], [1.0, 0.0]],
        "x,u": [[0.0], [1.0]],
        "z1,x": [[coupling, 0.0]],
        "z1,w1": [[0.0]],
        "z1,u": [[0.0]],
        "z2,x": [[0.0, coupling]],
        "z2,w1": [[0.3]],
        "z2,w2": [[0.0]],
        "z2,u": [[0.0]],
        "zp,x": [[1.0, 0.0], [0.0, 0.0]],
        "zp,u": [[0.0], [0.4]],
        "y,x": [[1.0, 0.0]],
        "y,wp": [[0.0, 0.4]],
    })
    value_set = ValueSet(2, 2, [
        np.diag([s1 * 0.8, s2 * 0.6]) for s1 in (-1, 1) for s2 in (-1, 1)
    ])
    return plant, value_set
