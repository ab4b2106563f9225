"""Recovery maps: lift a surface configuration to a tube configuration.

The lift is linear in the fiber coordinate, f(x, xi) = F(x) + qperp(x) xi.
Its derivative has the closed form

    dF(Xpar) + qperp(Xperp) + (grad_{Xpar} qperp)(xi)

assembled columnwise against the orthonormal frame of the base point, which
is exposed for validation and the rigidity experiments.
"""

from __future__ import annotations

import numpy as np

from .energy3d import BulkState
from .geometry import ConfigurationError, TubularGrid
from .reduced import ReducedState, chart_dF, covariant_derivative_qperp


def build_recovery(state: ReducedState, grid: TubularGrid) -> BulkState:
    """Nodal tube values f(x_i, xi_j) = F(x_i) + qperp(x_i) xi_j."""
    if grid.base is not state.mesh:
        if grid.base.n_nodes != state.mesh.n_nodes or not np.array_equal(
            grid.base.nodes, state.mesh.nodes
        ):
            raise ConfigurationError("recovery requires grid.base == state.mesh")
    values = state.F[:, None, :] + np.einsum(
        "ncu,ju->njc", state.qperp, grid.normal_nodes
    )
    return BulkState(values, grid)


def recovery_differential(state: ReducedState, scenario, node, xi, frame="sigma"):
    """Closed-form derivative of the recovery map at a mesh node and offset.

    ``node`` is a surface node index; ``xi`` the fiber offset (k,).  Columns
    are indexed by the orthonormal tangent frame directions followed by the
    normal frame directions.  With ``frame="chart"`` the tangential columns
    are raw chart partial derivatives instead (what a finite difference of
    the nodal recovery values computes; the two differ by the
    normal-connection term when the connection is nonzero).
    """
    mesh = state.mesh
    if scenario is None:
        scenario = mesh.scenario
    m = scenario.m
    xi = np.asarray(xi, dtype=float)
    dF = chart_dF(state)[node]                       # (n, m)
    D = covariant_derivative_qperp(state, scenario)[node]  # (n, m, k)
    cols = np.empty((scenario.dim_ambient, scenario.dim_ambient))
    if frame == "sigma":
        Lg = mesh.frame[node]
        cols[:, :m] = dF @ Lg + np.einsum("cau,ab,u->cb", D, Lg, xi)
    elif frame == "chart":
        A = np.asarray(scenario.normal_connection_fn(mesh.nodes[node]), dtype=float)
        raw = D + np.einsum("auv,cv->cau", A, state.qperp[node])
        cols[:, :m] = dF + np.einsum("cau,u->ca", raw, xi)
    else:
        raise ValueError(f"unknown frame {frame!r}")
    cols[:, m:] = state.qperp[node]
    return cols


def reduced_convergence_metrics(state: ReducedState, grid: TubularGrid):
    """The two reduced-convergence discrepancies for the recovery of a state.

    Returns ``(mean_sq_value, mean_sq_derivative)``: the tube-averaged
    squared deviation of f from F o pi and of the frame-reduced derivative
    from dF (+) qperp.  Both are O(h^2) for smooth states.
    """
    from .energy3d import _assemble_df

    bulk = build_recovery(state, grid)
    w = grid.bulk_weights
    wtot = float(np.sum(w))

    dev = bulk.values - state.F[:, None, :]
    val_ms = float(np.einsum("ij,ijc->", w, dev**2) / wtot)

    mesh = state.mesh
    scenario = grid.scenario
    m = scenario.m
    df = _assemble_df(bulk)                          # chart columns at (x, xi)
    base_cols = np.empty_like(df)
    dF = chart_dF(state)
    base_cols[:, :, :, :m] = (dF @ mesh.frame)[:, None, :, :]
    base_cols[:, :, :, m:] = state.qperp[:, None, :, :]
    # express tangential df columns in the base orthonormal frame
    dfh = np.empty_like(df)
    dfh[..., m:] = df[..., m:]
    dfh[..., :m] = np.einsum("sjca,sab->sjcb", df[..., :m], mesh.frame)
    diff = dfh - base_cols
    der_ms = float(np.einsum("ij,ijcb->", w, diff**2) / wtot)
    return val_ms, der_ms
