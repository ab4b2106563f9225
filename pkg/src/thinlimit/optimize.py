"""Minimization of the reduced and tube energies.

The driver is a limited-memory quasi-Newton (L-BFGS two-loop) descent with
Armijo backtracking; accepted iterates never increase the objective.  The
rotation constraint of the reduced energy is handled by quadratic penalty
continuation: after each stage the nodal frames are projected to the
nearest rotations and the immersion is re-derived from the projected
tangent part by weighted least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy3d import BulkState, apply_mean_zero, eval_Eh
from .geometry import SurfaceMesh, TubularGrid
from .recovery import build_recovery
from .reduced import ReducedState, assemble_q, eval_Elim
from .report import EnergyReport, TraceRow
from .rotations import project_rotations_batch


class OptimizeError(RuntimeError):
    """Line-search breakdown away from a stationary point."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class OptimizeOptions:
    max_iter: int = 5000
    grad_tol: float = 1e-8
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_linesearch: int = 40
    memory: int = 10
    penalty_beta0: float = 1e3
    penalty_growth: float = 10.0
    penalty_beta_max: float = 1e6
    constraint_tol: float = 1e-6
    init_noise: float = 1e-2

    @classmethod
    def from_dict(cls, raw: dict) -> "OptimizeOptions":
        allowed = {f.name for f in fields(cls)}
        unknown = set(raw) - allowed
        if unknown:
            raise ValueError(f"unknown optimize options: {sorted(unknown)}")
        return cls(**raw)

    def stages(self):
        betas = []
        b = self.penalty_beta0
        while b <= self.penalty_beta_max * (1 + 1e-12):
            betas.append(b)
            b *= self.penalty_growth
        return betas


def _lbfgs(value_grad, x0, max_iter, grad_tol, armijo, backtrack, max_linesearch,
           memory, trace, trace_extra, iter_offset=0):
    """Two-loop L-BFGS with Armijo backtracking.

    ``value_grad(x) -> (f, g, extra)``; ``trace_extra(extra) -> violation``
    fills the trace rows.  Returns ``(x, f, g, extra, status)``.
    """
    x = x0.copy()
    f, g, extra = value_grad(x)
    s_hist, y_hist, rho_hist = [], [], []
    status = "max_iter"
    it = 0
    gnorm = float(np.linalg.norm(g))
    trace.append(TraceRow(iter_offset, f, gnorm, trace_extra(extra)))
    f_best = f
    since_improved = 0
    while it < max_iter:
        if gnorm <= grad_tol:
            status = "converged"
            break
        if since_improved >= 80:
            status = "stalled"
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(np.dot(s, q))
            q -= a * y
            alphas.append(a)
        if y_hist:
            gamma = float(np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1]))
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * float(np.dot(y, q))
            q += (a - b) * s
        d = -q
        slope = float(np.dot(g, d))
        if slope >= 0:  # secant model lost descent; restart from steepest
            d = -g
            slope = -gnorm * gnorm
            s_hist, y_hist, rho_hist = [], [], []

        t = 1.0
        accepted = False
        for _ in range(max_linesearch):
            x_new = x + t * d
            f_new, g_new, extra_new = value_grad(x_new)
            if f_new <= f + armijo * t * slope:
                accepted = True
                break
            t *= backtrack
        if not accepted:
            # no decrease at the smallest step: stationary to working precision
            if gnorm <= 1e3 * grad_tol or f_new >= f:
                status = "stalled"
                break
            raise OptimizeError(
                f"line search failed at iteration {it} (f={f}, |g|={gnorm})", trace
            )

        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(np.dot(s_vec, y_vec))
        if sy > 1e-12 * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)) + 1e-300:
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, f, g, extra = x_new, f_new, g_new, extra_new
        gnorm = float(np.linalg.norm(g))
        if f < f_best - max(1e-13 * abs(f_best), 1e-18):
            f_best = f
            since_improved = 0
        else:
            since_improved += 1
        it += 1
        trace.append(TraceRow(iter_offset + it, f, gnorm, trace_extra(extra)))
    return x, f, g, extra, status, it


class _FSolver:
    """Cached weighted least-squares solve for F from target chart gradients.

    Minimizes sum_a sum_i w_i |(D_a F)_i - G_a,i|^2 with node 0 pinned
    (rigid-translation gauge).
    """

    def __init__(self, mesh: SurfaceMesh):
        w = sp.diags(mesh.quad_weights)
        A = None
        for op in mesh.diff_ops:
            term = op.T @ w @ op
            A = term if A is None else A + term
        A = A.tolil()
        scale = abs(A.diagonal()).max()
        pin = sp.lil_matrix(A.shape)
        pin[0, 0] = 1e4 * scale
        self.pin_coeff = 1e4 * scale
        self.mesh = mesh
        self.solver = spla.splu(sp.csc_matrix(A + pin.tocsr()))

    def solve(self, targets, pin_value):
        """targets: (m, N, n) chart-gradient targets; pin_value: (n,)."""
        mesh = self.mesh
        rhs = np.zeros((mesh.n_nodes, targets.shape[2]))
        w = mesh.quad_weights[:, None]
        for a, op in enumerate(mesh.diff_ops):
            rhs += op.T @ (w * targets[a])
        rhs[0] += self.pin_coeff * pin_value
        return self.solver.solve(rhs)


def project_feasible(state: ReducedState, fsolver: _FSolver | None = None) -> ReducedState:
    """Project nodal frames onto rotations and re-derive F by least squares."""
    mesh = state.mesh
    m = mesh.scenario.m
    q, _, _ = assemble_q(state)
    qproj, _ = project_rotations_batch(q)
    qperp_new = qproj[:, :, m:].copy()
    # chart gradient targets: frame columns mapped back by the inverse frame
    Linv = np.linalg.inv(mesh.frame)
    dF_target = np.einsum("nib,nba->nia", qproj[:, :, :m], Linv)  # (N, n, m)
    if fsolver is None:
        fsolver = _FSolver(mesh)
    targets = np.moveaxis(dF_target, (1, 2), (2, 0))  # (m, N, n)
    F_new = fsolver.solve(np.ascontiguousarray(targets), state.F[0])
    return ReducedState(F_new, qperp_new, mesh)


def default_reduced_init(scenario, mesh: SurfaceMesh, rng=None, noise=1e-2) -> ReducedState:
    """Chart embedding plus seeded Gaussian noise (rod scenarios should
    initialize from the rod solver instead)."""
    n, m = scenario.dim_ambient, scenario.m
    F = np.zeros((mesh.n_nodes, n))
    F[:, :m] = mesh.nodes
    qperp = np.zeros((mesh.n_nodes, n, scenario.codim))
    for u in range(scenario.codim):
        qperp[:, m + u, u] = 1.0
    if rng is not None and noise > 0:
        F = F + noise * rng.standard_normal(F.shape)
        qperp = qperp + noise * rng.standard_normal(qperp.shape)
    return ReducedState(F, qperp, mesh)


def minimize_reduced(scenario, mesh: SurfaceMesh, init: ReducedState,
                     options: OptimizeOptions | None = None):
    """Penalty-continuation minimization of the reduced energy.

    Returns ``(state, report)``; the report's value is the energy content
    (bending + perpendicular terms) of the final projected state, with the
    remaining constraint violation reported alongside.
    """
    options = options or OptimizeOptions()
    if not (np.all(np.isfinite(init.F)) and np.all(np.isfinite(init.qperp))):
        raise ValueError("initial reduced state must be finite")
    nF = init.F.size
    shapeF, shapeQ = init.F.shape, init.qperp.shape
    fsolver = _FSolver(mesh)
    betas = options.stages()
    # the first stage does the geometric work; later stages tighten the
    # constraint from a near-feasible start and need far fewer iterations
    if len(betas) > 1:
        first = options.max_iter // 2
        rest = max((options.max_iter - first) // (len(betas) - 1), 1)
        budgets = [first] + [rest] * (len(betas) - 1)
    else:
        budgets = [options.max_iter]
    trace: list[TraceRow] = []
    state = init.copy()
    offset = 0
    for beta, per_stage in zip(betas, budgets):
        def value_grad(x, beta=beta):
            st = ReducedState(x[:nF].reshape(shapeF), x[nF:].reshape(shapeQ), mesh)
            rep, gF, gq = eval_Elim(st, scenario, mode="penalized", beta=beta, with_grad=True)
            return rep.value, np.concatenate([gF.ravel(), gq.ravel()]), rep

        x0 = np.concatenate([state.F.ravel(), state.qperp.ravel()])
        x, f, g, rep, status, used = _lbfgs(
            value_grad, x0, per_stage, options.grad_tol, options.armijo,
            options.backtrack, options.max_linesearch, options.memory,
            trace, lambda r: r.violation_mean, iter_offset=offset,
        )
        offset += used + 1
        state = ReducedState(x[:nF].reshape(shapeF), x[nF:].reshape(shapeQ), mesh)
        state = project_feasible(state, fsolver)

    final = eval_Elim(state, scenario, mode="penalized", beta=betas[-1])
    value = final.terms["bending"] + final.terms["perp"]
    report = EnergyReport(
        value=value,
        terms=dict(final.terms),
        violation_mean=final.violation_mean,
        violation_max=final.violation_max,
        grad_norm=float(np.linalg.norm(np.concatenate(
            [arr.ravel() for arr in eval_Elim(state, scenario, mode="penalized",
                                              beta=betas[-1], with_grad=True)[1:]]))),
        trace=trace,
        meta={"status": status, "beta_final": betas[-1], "stages": len(betas),
              "constraint_tol": options.constraint_tol},
    )
    return state, report


def minimize_bulk(scenario, grid: TubularGrid, init: BulkState,
                  options: OptimizeOptions | None = None):
    """Quasi-Newton minimization of the tube energy (mean-zero gauge)."""
    options = options or OptimizeOptions()
    shape = init.values.shape

    def value_grad(x):
        st = BulkState(x.reshape(shape), grid)
        rep, g = eval_Eh(st, scenario, with_grad=True)
        return rep.value, g.ravel(), rep

    trace: list[TraceRow] = []
    x0 = apply_mean_zero(init).values.ravel()
    x, f, g, rep, status, _ = _lbfgs(
        value_grad, x0, options.max_iter, options.grad_tol, options.armijo,
        options.backtrack, options.max_linesearch, options.memory,
        trace, lambda r: 0.0,
    )
    state = apply_mean_zero(BulkState(x.reshape(shape), grid))
    final = eval_Eh(state, scenario)
    report = EnergyReport(
        value=final.value,
        terms=dict(final.terms),
        grad_norm=float(np.linalg.norm(g)),
        trace=trace,
        meta={"status": status, "h": grid.h},
    )
    return state, report


def default_bulk_init(scenario, grid: TubularGrid, reduced_state=None,
                      rng=None, noise=0.0) -> BulkState:
    """Recovery of a reduced state when given, else the chart embedding."""
    if reduced_state is not None:
        st = build_recovery(reduced_state, grid)
    else:
        mesh = grid.base
        m = scenario.m
        vals = np.zeros((grid.n_surface, grid.n_normal, scenario.dim_ambient))
        vals[:, :, :m] = mesh.nodes[:, None, :]
        vals[:, :, m:] = grid.normal_nodes[None, :, :]
        st = BulkState(vals, grid)
    if rng is not None and noise > 0:
        st = BulkState(st.values + noise * rng.standard_normal(st.values.shape), grid)
    return apply_mean_zero(st)
