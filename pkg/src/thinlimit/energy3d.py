"""Rescaled full elastic energy of a tube configuration.

The energy of a nodal map f on a tubular grid of half-thickness h is

    (1/h^2) * (sum_nodes w * dist^2(df, SO(n))) / (sum_nodes w),

with df the finite-difference derivative matrix at each quadrature node
expressed against the local orthonormal frame of the bulk metric.  The
value is zero exactly when df is an orientation-preserving local isometry
at every node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import TubularGrid
from .report import EnergyReport
from .rotations import dist_so_sq_batch, dist_so_sq_value_and_grad_batch


class EvaluationError(RuntimeError):
    """Non-finite state values or inconsistent shapes."""


@dataclass
class BulkState:
    """Nodal map values on a tubular grid: values[i, j] in R^n for surface
    node i and fiber node j."""

    values: np.ndarray
    grid: TubularGrid

    def __post_init__(self):
        n = self.grid.scenario.dim_ambient
        expected = (self.grid.n_surface, self.grid.n_normal, n)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != expected:
            raise EvaluationError(
                f"bulk state shape {self.values.shape} does not match grid {expected}"
            )

    def copy(self) -> "BulkState":
        return BulkState(self.values.copy(), self.grid)


def apply_mean_zero(state: BulkState) -> BulkState:
    """Shift values so the weighted mean vanishes (rigid-translation gauge)."""
    w = state.grid.bulk_weights
    mean = np.einsum("ij,ijc->c", w, state.values) / np.sum(w)
    return BulkState(state.values - mean, state.grid)


def _assemble_df(state: BulkState) -> np.ndarray:
    """Finite-difference derivative matrices (Ns, Nn, n, n) in chart columns
    (m surface directions, then k fiber directions)."""
    grid = state.grid
    mesh = grid.base
    scenario = grid.scenario
    m, n = scenario.m, scenario.dim_ambient
    ns, nn = grid.n_surface, grid.n_normal
    vals = state.values

    df = np.empty((ns, nn, n, n))
    flat = vals.reshape(ns, -1)
    for a, op in enumerate(mesh.diff_ops):
        df[:, :, :, a] = (op @ flat).reshape(ns, nn, n)
    for u, taps in enumerate(grid.normal_taps):
        df[:, :, :, m + u] = taps.apply(vals)
    return df


def eval_Eh(state: BulkState, scenario=None, with_grad=False):
    """Evaluate the rescaled tube energy; optionally also its gradient.

    Returns an :class:`EnergyReport`, or ``(report, grad)`` with ``grad``
    shaped like the nodal values when ``with_grad`` is set.
    """
    grid = state.grid
    if scenario is None:
        scenario = grid.scenario
    if not np.all(np.isfinite(state.values)):
        raise EvaluationError("bulk state contains non-finite values")

    df = _assemble_df(state)
    ns, nn, n, _ = df.shape
    flat_df = df.reshape(-1, n, n)
    frames = grid.frame.reshape(-1, n, n)
    w = grid.bulk_weights.reshape(-1)
    wtot = float(np.sum(w))
    inv_h2 = 1.0 / grid.h**2

    if with_grad:
        d2, grad_df, flagged = dist_so_sq_value_and_grad_batch(flat_df, frames)
    else:
        d2, _, _, flagged = dist_so_sq_batch(flat_df, frames)

    mean_d2 = float(np.dot(w, d2) / wtot)
    value = inv_h2 * mean_d2
    report = EnergyReport(
        value=value,
        terms={"mean_dist_sq": mean_d2},
        violation_mean=None,
        violation_max=float(np.sqrt(max(d2.max(), 0.0))) if d2.size else 0.0,
        flagged_nodes=list(np.flatnonzero(flagged)[:32]),
        meta={"h": grid.h, "n_surface": ns, "n_normal": nn},
    )
    if not with_grad:
        return report

    sens = (inv_h2 / wtot) * w[:, None, None] * grad_df
    sens = sens.reshape(ns, nn, n, n)
    grad = np.zeros_like(state.values)
    mesh = grid.base
    m = scenario.m
    for a, op in enumerate(mesh.diff_ops):
        grad += (op.T @ sens[:, :, :, a].reshape(ns, -1)).reshape(ns, nn, n)
    for u, taps in enumerate(grid.normal_taps):
        grad += taps.apply_adjoint(sens[:, :, :, m + u])
    return report, grad


def grad_Eh(state: BulkState, scenario=None) -> np.ndarray:
    """Gradient of eval_Eh with respect to the nodal values."""
    _, grad = eval_Eh(state, scenario, with_grad=True)
    return grad
