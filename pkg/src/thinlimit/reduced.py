"""The dimensionally-reduced (limit) energy of a surface configuration.

A reduced state is a nodal immersion F of the chart together with nodal
normal data qperp (one R^n column per normal frame direction).  With
q = dF (+) qperp assembled against an orthonormal frame, the energy is

    (kappa/2) * avg_S( 2 |Ppar_q . grad qperp - II|^2 + |Pperp_q . grad qperp|^2 )

where kappa = 1/(k+2) is the second moment of the uniform unit k-ball
(avg over the ball of xi_u xi_v = delta_uv / (k+2); 1/3 for k = 1, 1/4 for
k = 2).  In strict mode the value is infinite when any node is farther than
``tol`` from the rotation group; penalized mode adds beta times the mean
squared distance instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SurfaceMesh
from .report import EnergyReport
from .rotations import dist_so_sq_batch, dist_so_sq_value_and_grad_batch

DEFAULT_STRICT_TOL = 1e-6
DEFAULT_PENALTY_BETA = 1e3
_SINGULAR_RTOL = 1e-12


@dataclass
class ReducedState:
    """Nodal immersion and normal data on a surface mesh.

    ``F``: (N, n) points; ``qperp``: (N, n, k) normal columns.
    """

    F: np.ndarray
    qperp: np.ndarray
    mesh: SurfaceMesh

    def __post_init__(self):
        scen = self.mesh.scenario
        n, k = scen.dim_ambient, scen.codim
        self.F = np.asarray(self.F, dtype=float)
        self.qperp = np.asarray(self.qperp, dtype=float)
        if self.F.shape != (self.mesh.n_nodes, n):
            raise ValueError(f"F must have shape {(self.mesh.n_nodes, n)}")
        if self.qperp.shape != (self.mesh.n_nodes, n, k):
            raise ValueError(f"qperp must have shape {(self.mesh.n_nodes, n, k)}")

    def copy(self) -> "ReducedState":
        return ReducedState(self.F.copy(), self.qperp.copy(), self.mesh)


def kappa(k: int) -> float:
    """Second moment of the uniform unit k-ball: 1/(k+2)."""
    if k < 1:
        raise ValueError("codimension must be >= 1")
    return 1.0 / (k + 2)


def chart_dF(state: ReducedState) -> np.ndarray:
    """Chart partial derivatives of F as (N, n, m) column matrices."""
    g = state.mesh.gradient(state.F)  # (N, m, n)
    return np.swapaxes(g, 1, 2)


def assemble_q(state: ReducedState):
    """Assemble q = dF (+) qperp against the orthonormal surface frame.

    Returns ``(q, qinv, singular_nodes)`` with q of shape (N, n, n): the
    first m columns are dF expressed in the orthonormal tangent frame, the
    rest are the qperp columns.  Singular nodes get a pseudo-inverse and are
    reported; strict-mode evaluation rejects them.
    """
    mesh = state.mesh
    dF = chart_dF(state)
    q = np.concatenate([dF @ mesh.frame, state.qperp], axis=2)
    det = np.linalg.det(q)
    scale = np.einsum("nij,nij->n", q, q) / q.shape[-1] + 1e-300
    singular = np.abs(det) < _SINGULAR_RTOL * scale ** (q.shape[-1] / 2)
    qinv = np.empty_like(q)
    ok = ~singular
    if np.any(ok):
        qinv[ok] = np.linalg.inv(q[ok])
    if np.any(singular):
        qinv[singular] = np.linalg.pinv(q[singular])
    return q, qinv, np.flatnonzero(singular)


def covariant_derivative_qperp(state: ReducedState, scenario=None) -> np.ndarray:
    """Covariant derivative of the normal data, (N, n, m, k) in chart
    directions: D[:, :, a, u] = d_a qperp_u - A_a[u, v] qperp_v.

    The R^n target needs no Christoffel correction; only the normal
    connection enters.  Boundary nodes use one-sided stencils (flagged via
    ``mesh.boundary_mask``).
    """
    mesh = state.mesh
    if scenario is None:
        scenario = mesh.scenario
    grad = mesh.gradient(state.qperp)        # (N, m, n, k)
    D = np.ascontiguousarray(np.moveaxis(grad, 1, 2))  # (N, n, m, k)
    A = np.asarray(scenario.normal_connection_fn(mesh.nodes), dtype=float)  # (N, m, k, k)
    D -= np.einsum("nauv,ncv->ncau", A, state.qperp)
    return D


def _frame_quantities(state: ReducedState, scenario):
    """Shared assembly for the energy and its gradient."""
    mesh = state.mesh
    m = scenario.m
    q, qinv, singular = assemble_q(state)
    D = covariant_derivative_qperp(state, scenario)           # (N, n, m, k)
    Dhat = np.einsum("ncau,nab->ncbu", D, mesh.frame)          # frame directions
    T = np.einsum("nci,nibu->ncbu", qinv, Dhat)                # frame components
    II = np.asarray(scenario.ii_fn(mesh.nodes), dtype=float)   # (N, k, m, m)
    IIf = np.einsum("nab,nuac,ncd->nubd", mesh.frame, II, mesh.frame)
    R = T.copy()
    R[:, :m] -= np.moveaxis(IIf, 1, 3)  # IIf[n,u,b,a] -> subtract at [n,b,a,u]
    return q, qinv, singular, D, Dhat, T, R


def eval_Elim(state: ReducedState, scenario=None, mode="strict",
              tol=DEFAULT_STRICT_TOL, beta=DEFAULT_PENALTY_BETA,
              with_grad=False):
    """Evaluate the reduced energy.

    ``mode="strict"``: returns a tagged infinite report when any node is
    farther than ``tol`` from the rotation group (or has singular q).
    ``mode="penalized"``: adds ``beta`` times the mean squared distance.
    With ``with_grad`` (penalized mode) returns ``(report, grad_F,
    grad_qperp)``.
    """
    mesh = state.mesh
    if scenario is None:
        scenario = mesh.scenario
    if mode not in ("strict", "penalized"):
        raise ValueError(f"unknown mode {mode!r}")
    if with_grad and mode != "penalized":
        raise ValueError("gradients are only defined for the penalized mode")
    if not (np.all(np.isfinite(state.F)) and np.all(np.isfinite(state.qperp))):
        raise ValueError("reduced state contains non-finite values")

    m, k = scenario.m, scenario.codim
    kap = kappa(k)
    w = mesh.quad_weights
    wtot = float(np.sum(w))

    q, qinv, singular, D, Dhat, T, R = _frame_quantities(state, scenario)

    if with_grad and mode == "penalized":
        d2, grad_q, _ = dist_so_sq_value_and_grad_batch(q)
    else:
        d2, _, _, _ = dist_so_sq_batch(q)
    viol_mean = float(np.dot(w, d2) / wtot)
    viol_max = float(np.sqrt(max(d2.max(), 0.0)))

    bending_nodes = np.einsum("ncau,ncau->n", R[:, :m], R[:, :m])
    perp_nodes = np.einsum("ncau,ncau->n", R[:, m:], R[:, m:])
    bending = kap * float(np.dot(w, bending_nodes) / wtot)
    perp = 0.5 * kap * float(np.dot(w, perp_nodes) / wtot)
    terms = {"bending": bending, "perp": perp}

    if mode == "strict":
        if singular.size or viol_max > tol:
            return EnergyReport(
                value=np.inf,
                terms=terms,
                violation_mean=viol_mean,
                violation_max=viol_max,
                is_infinite=True,
                flagged_nodes=list(singular[:32]),
                meta={"mode": "strict", "tol": tol,
                      "reason": "singular q" if singular.size else "constraint violation"},
            )
        value = bending + perp
        report = EnergyReport(value=value, terms=terms, violation_mean=viol_mean,
                              violation_max=viol_max, flagged_nodes=list(singular[:32]),
                              meta={"mode": "strict", "tol": tol})
        return report

    penalty = beta * viol_mean
    terms["penalty"] = penalty
    value = bending + perp + penalty
    report = EnergyReport(value=value, terms=terms, violation_mean=viol_mean,
                          violation_max=viol_max, flagged_nodes=list(singular[:32]),
                          meta={"mode": "penalized", "beta": beta})
    if not with_grad:
        return report

    # --- gradient ---------------------------------------------------------
    # Sensitivities w.r.t. T (frame components of qinv . covariant derivative)
    wfac = (w / wtot)[:, None, None, None]
    S = np.empty_like(T)
    S[:, :m] = 2.0 * kap * R[:, :m]
    S[:, m:] = kap * R[:, m:]
    S *= wfac

    # through Dhat: P = qinv^T S, mapped back to chart directions
    Phat = np.einsum("nci,ncbu->nibu", qinv, S)
    P = np.einsum("nibu,nab->niau", Phat, mesh.frame)
    # through qinv: Z = S contracted with Dhat; G_q = -qinv^T Z qinv^T
    Z = np.einsum("ncbu,nibu->nci", S, Dhat)
    Gq = -np.swapaxes(qinv, 1, 2) @ Z @ np.swapaxes(qinv, 1, 2)
    # penalty part acts on q directly
    Gq += (beta / wtot) * w[:, None, None] * grad_q

    # scatter: qperp gets the direct q-columns, the stencil term and the
    # connection term; F gets the tangential q-columns through the stencils.
    grad_qperp = Gq[:, :, m:].copy()
    A = np.asarray(scenario.normal_connection_fn(mesh.nodes), dtype=float)
    grad_qperp -= np.einsum("nauv,ncau->ncv", A, P)
    grad_qperp += mesh.gradient_adjoint(np.moveaxis(P, 2, 1))  # (N, m, n, k) sens

    GdF = np.einsum("nib,nab->nia", Gq[:, :, :m], mesh.frame)  # (N, n, m)
    grad_F = mesh.gradient_adjoint(np.moveaxis(GdF, 2, 1))     # (N, m, n) sens
    return report, grad_F, grad_qperp


def grad_Elim(state: ReducedState, scenario=None, mode="penalized",
              beta=DEFAULT_PENALTY_BETA):
    """Gradient of the (penalized) reduced energy w.r.t. F and qperp."""
    _, gF, gq = eval_Elim(state, scenario, mode="penalized", beta=beta, with_grad=True)
    return gF, gq


def reduced_density_indexform(state: ReducedState, scenario=None) -> np.ndarray:
    """Per-node energy density evaluated via the raw index formula.

    Independent code path used to cross-check :func:`eval_Elim`: both agree
    (to machine precision) at nodes where q is exactly a rotation of the
    frame and the parallel part of the shifted derivative is symmetric.
    """
    mesh = state.mesh
    if scenario is None:
        scenario = mesh.scenario
    m, k = scenario.m, scenario.codim
    kap = kappa(k)

    dF = chart_dF(state)
    q_chart = np.concatenate([dF, state.qperp], axis=2)
    qinv_chart = np.linalg.inv(q_chart)
    D = covariant_derivative_qperp(state, scenario)            # (N, n, m, k)
    g = mesh.metric
    ginv = np.linalg.inv(g)
    II = np.asarray(scenario.ii_fn(mesh.nodes), dtype=float)    # (N, k, m, m)
    II_up = np.einsum("ncd,nuda->ncau", ginv, II)               # II^c_{a u}

    M1 = D - np.einsum("nic,ncau->niau", dF, II_up)             # (N, n, m, k)
    term1 = np.einsum("nab,niau,nibu->n", ginv, M1, M1)

    Nm = np.einsum("nbi,niau->nbau", qinv_chart[:, :m, :], D) - II_up
    # Nm[b, a, u]; the second term contracts with the (a, b) slots swapped
    term2 = np.einsum("nbau,nabu->n", Nm, Nm)
    return 0.5 * kap * (term1 + term2)
