"""Intrinsic geometry of a slender body and quadrature meshes over it.

A scenario prescribes the mid-surface chart, its metric, the target
curvature data (second fundamental form and normal connection) and how the
surrounding tube carries its metric.  Meshes are structured tensor grids on
the chart; derivative stencils are second-order central differences with
one-sided closures at the boundary.

Sign convention: ``ii_fn`` returns, per unit normal direction ``u``, the
matrix with entries ``<d_a nu_u, d_b F>`` (derivative of the normal paired
with the surface tangents).  For the unit cylinder with outward normal this
gives ``diag(+1, 0)``, and a configuration whose normal field satisfies the
tangential derivative relation attains zero reduced energy.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp


class GeometryError(RuntimeError):
    """Raised when scenario data is geometrically inconsistent (e.g. a tube
    too thick for its curvature produces a non-SPD bulk metric)."""


class DomainError(ValueError):
    """Chart point outside the scenario's chart domain."""


class ConfigurationError(ValueError):
    """Mesh or scenario parameters that violate a precondition."""


class BulkMode(enum.Enum):
    EMBEDDED = "embedded"
    PRODUCT_PLATE = "product_plate"
    SYNTHETIC_EXPANSION = "synthetic_expansion"


# Finite-difference step for metric derivatives, relative to domain extent.
FD_STEP_REL = 1e-5


@dataclass(frozen=True)
class ScenarioSpec:
    """Analytic description of the slender body.

    ``chart_domain`` is an ``(m, 2)`` array of per-axis bounds.  The chart
    callables accept arrays of shape ``(..., m)`` and return batched values:
    ``metric_fn -> (..., m, m)``, ``ii_fn -> (..., k, m, m)`` and
    ``normal_connection_fn -> (..., m, k, k)`` (skew in the last two axes).
    All quantities are dimensionless; chart extents are O(1).
    """

    name: str
    dim_ambient: int
    codim: int
    chart_domain: np.ndarray
    metric_fn: Callable
    ii_fn: Callable
    normal_connection_fn: Callable
    bulk_mode: BulkMode
    embedding_fn: Optional[Callable] = None
    embedding_jac_fn: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        dom = np.asarray(self.chart_domain, dtype=float)
        if dom.ndim != 2 or dom.shape[1] != 2:
            raise ConfigurationError("chart_domain must have shape (m, 2)")
        if np.any(dom[:, 1] <= dom[:, 0]):
            raise ConfigurationError("chart_domain bounds must be increasing")
        object.__setattr__(self, "chart_domain", dom)
        if self.codim not in (1, 2):
            raise ConfigurationError(f"codim must be 1 or 2, got {self.codim}")
        if self.dim_ambient - self.codim != dom.shape[0]:
            raise ConfigurationError("chart dimension must equal dim_ambient - codim")
        if self.bulk_mode == BulkMode.EMBEDDED and self.embedding_fn is None:
            raise ConfigurationError("embedded bulk mode requires an embedding")

    @property
    def m(self) -> int:
        return self.dim_ambient - self.codim

    @property
    def extents(self) -> np.ndarray:
        return self.chart_domain[:, 1] - self.chart_domain[:, 0]

    def contains(self, x, rtol=1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        slack = rtol * self.extents
        return bool(
            np.all(x >= self.chart_domain[:, 0] - slack)
            and np.all(x <= self.chart_domain[:, 1] + slack)
        )


def eval_metric(scenario: ScenarioSpec, x) -> np.ndarray:
    """Surface metric at a chart point (or batch of points)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single and not scenario.contains(x):
        raise DomainError(f"chart point {x} outside domain of '{scenario.name}'")
    g = np.asarray(scenario.metric_fn(x), dtype=float)
    return g


def metric_frame(g: np.ndarray) -> np.ndarray:
    """Orthonormalizing factor L with L^T g L = I (inverse Cholesky transpose).

    Batched over leading axes; deterministic.
    """
    c = np.linalg.cholesky(g)
    return np.linalg.inv(np.swapaxes(c, -1, -2))


def christoffel(scenario: ScenarioSpec, x, fd_step=None):
    """Christoffel symbols Gamma^a_{bc} of the surface metric by finite
    differences.

    Returns ``(gamma, one_sided)`` where ``one_sided`` flags that at least
    one derivative needed a one-sided boundary stencil.
    """
    x = np.asarray(x, dtype=float)
    if not scenario.contains(x):
        raise DomainError(f"chart point {x} outside domain of '{scenario.name}'")
    m = scenario.m
    lo, hi = scenario.chart_domain[:, 0], scenario.chart_domain[:, 1]
    steps = (scenario.extents * FD_STEP_REL) if fd_step is None else np.full(m, fd_step)

    dg = np.empty((m, m, m))  # dg[d] = d g / d x_d
    one_sided = False
    for d in range(m):
        e = np.zeros(m)
        e[d] = steps[d]
        if x[d] - steps[d] >= lo[d] and x[d] + steps[d] <= hi[d]:
            dg[d] = (scenario.metric_fn(x + e) - scenario.metric_fn(x - e)) / (2 * steps[d])
        elif x[d] + 2 * steps[d] <= hi[d]:
            one_sided = True
            dg[d] = (
                -3.0 * scenario.metric_fn(x)
                + 4.0 * scenario.metric_fn(x + e)
                - scenario.metric_fn(x + 2 * e)
            ) / (2 * steps[d])
        else:
            one_sided = True
            dg[d] = (
                3.0 * scenario.metric_fn(x)
                - 4.0 * scenario.metric_fn(x - e)
                + scenario.metric_fn(x - 2 * e)
            ) / (2 * steps[d])

    ginv = np.linalg.inv(scenario.metric_fn(x))
    # Gamma^a_{bc} = 1/2 g^{ad} (d_b g_{dc} + d_c g_{db} - d_d g_{bc})
    lowered = np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg
    gamma = 0.5 * np.einsum("ad,dbc->abc", ginv, lowered)
    return gamma, one_sided


def _blockdiag(g: np.ndarray, k: int) -> np.ndarray:
    """blockdiag(g, I_k) batched over leading axes of g."""
    m = g.shape[-1]
    n = m + k
    out = np.zeros(g.shape[:-2] + (n, n))
    out[..., :m, :m] = g
    idx = np.arange(m, n)
    out[..., idx, idx] = 1.0
    return out


def bulk_metric_batch(scenario: ScenarioSpec, xs, xis) -> np.ndarray:
    """Bulk metric at chart points ``xs (..., m)`` with normal offsets
    ``xis (..., k)``, as ``(..., n, n)`` matrices in chart (x, xi) coordinates.
    """
    xs = np.asarray(xs, dtype=float)
    xis = np.asarray(xis, dtype=float)
    k = scenario.codim
    m = scenario.m
    if scenario.bulk_mode == BulkMode.PRODUCT_PLATE:
        g = np.asarray(scenario.metric_fn(xs), dtype=float)
        return _blockdiag(g, k)
    if scenario.bulk_mode == BulkMode.SYNTHETIC_EXPANSION:
        g = np.asarray(scenario.metric_fn(xs), dtype=float)
        II = np.asarray(scenario.ii_fn(xs), dtype=float)
        A = np.asarray(scenario.normal_connection_fn(xs), dtype=float)
        B = np.einsum("...u,...umn->...mn", xis, II)
        ginvB = np.linalg.solve(g, B)
        G = _blockdiag(g + 2.0 * B + B @ ginvB, k)
        cross = np.einsum("...u,...auv->...av", xis, A)
        G[..., :m, m:] = cross
        G[..., m:, :m] = np.swapaxes(cross, -1, -2)
        return G
    # Embedded: exact pullback of the tubular embedding.
    J = embedding_jacobian(scenario, xs, xis)
    return np.swapaxes(J, -1, -2) @ J


def embedding_jacobian(scenario: ScenarioSpec, xs, xis) -> np.ndarray:
    """Jacobian of the tubular embedding, columns ordered (chart, normal).

    Uses the scenario's closed form when available, otherwise central
    differences of the embedding.
    """
    if scenario.embedding_fn is None:
        raise ConfigurationError(f"scenario '{scenario.name}' has no embedding")
    xs = np.asarray(xs, dtype=float)
    xis = np.asarray(xis, dtype=float)
    if scenario.embedding_jac_fn is not None:
        return np.asarray(scenario.embedding_jac_fn(xs, xis), dtype=float)
    m, k, n = scenario.m, scenario.codim, scenario.dim_ambient
    J = np.empty(xs.shape[:-1] + (n, n))
    hx = scenario.extents * FD_STEP_REL
    for a in range(m):
        e = np.zeros(m)
        e[a] = hx[a]
        J[..., :, a] = (scenario.embedding_fn(xs + e, xis) - scenario.embedding_fn(xs - e, xis)) / (2 * hx[a])
    hxi = max(float(np.max(np.abs(xis))), 1e-2) * FD_STEP_REL
    for u in range(k):
        e = np.zeros(k)
        e[u] = hxi
        J[..., :, m + u] = (scenario.embedding_fn(xs, xis + e) - scenario.embedding_fn(xs, xis - e)) / (2 * hxi)
    return J


def eval_bulk_metric(scenario: ScenarioSpec, x, xi) -> np.ndarray:
    """Bulk metric at a single (chart point, normal offset); SPD-checked."""
    G = bulk_metric_batch(scenario, np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise GeometryError(
            f"bulk metric not positive definite at x={x}, xi={xi} "
            f"(tube too thick for the curvature of '{scenario.name}')"
        )
    return G


def _diff_matrix_1d(npts: int, spacing: float) -> sp.csr_matrix:
    """Second-order first-derivative matrix on a uniform 1-D grid.

    Central differences inside, one-sided three-point stencils at the ends.
    """
    if npts < 3:
        raise ConfigurationError("need at least 3 points per axis for stencils")
    rows, cols, vals = [], [], []
    inv2h = 1.0 / (2.0 * spacing)
    for i in range(1, npts - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-inv2h, inv2h]
    rows += [0, 0, 0]
    cols += [0, 1, 2]
    vals += [-3.0 * inv2h, 4.0 * inv2h, -1.0 * inv2h]
    rows += [npts - 1, npts - 1, npts - 1]
    cols += [npts - 1, npts - 2, npts - 3]
    vals += [3.0 * inv2h, -4.0 * inv2h, 1.0 * inv2h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(npts, npts))


def _axis_diff_ops(shape, spacing) -> list:
    """Per-axis sparse derivative operators on the raveled (C-order) grid."""
    ops = []
    for a, (npts, h) in enumerate(zip(shape, spacing)):
        d1 = _diff_matrix_1d(npts, h)
        left = 1
        for s in shape[:a]:
            left *= s
        right = 1
        for s in shape[a + 1:]:
            right *= s
        op = sp.kron(sp.identity(left, format="csr"), sp.kron(d1, sp.identity(right, format="csr")))
        ops.append(sp.csr_matrix(op))
    return ops


@dataclass
class SurfaceMesh:
    """Structured quadrature mesh on the mid-surface chart."""

    scenario: ScenarioSpec
    shape: tuple
    axes: list
    nodes: np.ndarray          # (N, m)
    spacing: np.ndarray        # (m,)
    chart_weights: np.ndarray  # (N,) flat trapezoid cell measure
    quad_weights: np.ndarray   # (N,) chart_weights * sqrt(det g)
    boundary_mask: np.ndarray  # (N,) bool
    metric: np.ndarray         # (N, m, m)
    frame: np.ndarray          # (N, m, m); frame^T g frame = I
    sqrt_det: np.ndarray       # (N,)
    diff_ops: list             # per-axis sparse first-derivative operators

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.quad_weights))

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Chart partial derivatives of nodal values: (N, ...) -> (N, m, ...)."""
        flat = values.reshape(self.n_nodes, -1)
        out = np.empty((self.n_nodes, len(self.diff_ops)) + values.shape[1:])
        for a, op in enumerate(self.diff_ops):
            out[:, a] = (op @ flat).reshape((self.n_nodes,) + values.shape[1:])
        return out

    def gradient_adjoint(self, sens: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`gradient`: (N, m, ...) -> (N, ...)."""
        out = np.zeros((self.n_nodes,) + sens.shape[2:])
        for a, op in enumerate(self.diff_ops):
            out += (op.T @ sens[:, a].reshape(self.n_nodes, -1)).reshape(out.shape)
        return out


def _trapezoid_weights(npts: int, spacing: float) -> np.ndarray:
    w = np.full(npts, spacing)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _simpson_weights(npts: int, spacing: float) -> np.ndarray:
    # Composite Simpson; requires an odd number of points.
    if npts < 3 or npts % 2 == 0:
        raise ConfigurationError("fiber quadrature requires an odd node count >= 3")
    w = np.ones(npts)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (spacing / 3.0)


def build_surface_mesh(scenario: ScenarioSpec, resolution) -> SurfaceMesh:
    """Tensor-product mesh with ``resolution`` cells per axis.

    ``resolution`` may be an int or a per-axis sequence.  Node metrics are
    validated SPD wherever the quadrature weight is nonzero.
    """
    m = scenario.m
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (m,))
    if np.any(res < 4):
        raise ConfigurationError("resolution must be >= 4 cells per axis")
    axes = [
        np.linspace(scenario.chart_domain[a, 0], scenario.chart_domain[a, 1], res[a] + 1)
        for a in range(m)
    ]
    shape = tuple(len(ax) for ax in axes)
    spacing = np.array([ax[1] - ax[0] for ax in axes])
    grids = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)

    w1d = [_trapezoid_weights(shape[a], spacing[a]) for a in range(m)]
    chart_w = w1d[0]
    for a in range(1, m):
        chart_w = np.multiply.outer(chart_w, w1d[a])
    chart_w = chart_w.ravel()

    metric = np.asarray(scenario.metric_fn(nodes), dtype=float)
    if metric.shape != (nodes.shape[0], m, m):
        metric = np.broadcast_to(metric, (nodes.shape[0], m, m)).copy()
    det = np.linalg.det(metric)
    if np.any(det < 0):
        raise GeometryError(f"negative metric determinant on '{scenario.name}'")
    sqrt_det = np.sqrt(det)
    quad_w = chart_w * sqrt_det

    live = quad_w > 0
    eigs = np.linalg.eigvalsh(metric[live])
    if eigs.size and eigs.min() <= 1e-10:
        bad = int(np.argmin(eigs[:, 0]))
        raise GeometryError(
            f"surface metric not SPD on '{scenario.name}' "
            f"(min eigenvalue {eigs.min():.3e} near node {bad})"
        )
    frame = np.zeros_like(metric)
    frame[live] = metric_frame(metric[live])
    if not np.all(live):
        # degenerate zero-weight nodes get an identity placeholder frame
        frame[~live] = np.eye(m)

    bmask = np.zeros(shape, dtype=bool)
    for a in range(m):
        idx = [slice(None)] * m
        idx[a] = 0
        bmask[tuple(idx)] = True
        idx[a] = -1
        bmask[tuple(idx)] = True

    return SurfaceMesh(
        scenario=scenario,
        shape=shape,
        axes=axes,
        nodes=nodes,
        spacing=spacing,
        chart_weights=chart_w,
        quad_weights=quad_w,
        boundary_mask=bmask.ravel(),
        metric=metric,
        frame=frame,
        sqrt_det=sqrt_det,
        diff_ops=_axis_diff_ops(shape, spacing),
    )


def _quarter_disk_area(x, y, r):
    """Area of [0,x] x [0,y] intersected with the disk of radius r (x,y >= 0)."""
    x = np.minimum(x, r)
    y = np.minimum(y, r)

    def G(t):
        t = np.clip(t, 0.0, r)
        return 0.5 * (t * np.sqrt(np.maximum(r * r - t * t, 0.0)) + r * r * np.arcsin(np.clip(t / r, -1.0, 1.0)))

    tstar = np.sqrt(np.maximum(r * r - y * y, 0.0))
    inside = x <= tstar
    return np.where(inside, x * y, tstar * y + G(x) - G(tstar))


def _rect_disk_area(x0, x1, y0, y1, r):
    """Area of [x0,x1] x [y0,y1] intersected with the centered disk of radius r."""
    def F(x, y):
        return np.sign(x) * np.sign(y) * _quarter_disk_area(np.abs(x), np.abs(y), r)

    return F(x1, y1) - F(x0, y1) - F(x1, y0) + F(x0, y0)


class _NormalTaps:
    """Finite-difference operator along one normal axis of a (possibly
    masked) tensor fiber grid, stored as an (Nn, Nn) sparse matrix."""

    def __init__(self, matrix: sp.csr_matrix, first_order: np.ndarray):
        self.matrix = matrix
        self.first_order = first_order

    def apply(self, values: np.ndarray) -> np.ndarray:
        # values: (Ns, Nn, ...) -> derivative along this fiber axis
        ns, nn = values.shape[:2]
        flat = values.transpose(1, 0, *range(2, values.ndim)).reshape(nn, -1)
        out = (self.matrix @ flat).reshape((nn, ns) + values.shape[2:])
        return out.transpose(1, 0, *range(2, values.ndim))

    def apply_adjoint(self, sens: np.ndarray) -> np.ndarray:
        ns, nn = sens.shape[:2]
        flat = sens.transpose(1, 0, *range(2, sens.ndim)).reshape(nn, -1)
        out = (self.matrix.T @ flat).reshape((nn, ns) + sens.shape[2:])
        return out.transpose(1, 0, *range(2, sens.ndim))


def _line_taps(order_index, coords, spacing):
    """Build 3-tap stencil rows for a set of points along one line.

    ``order_index`` maps sorted position -> node id.  Returns list of
    (node, taps, coefs, first_order).
    """
    out = []
    npts = len(order_index)
    inv2h = 1.0 / (2.0 * spacing)
    for j, node in enumerate(order_index):
        has_prev = j > 0 and abs(coords[j] - coords[j - 1] - spacing) < 1e-9 * spacing + 1e-15
        has_next = j < npts - 1 and abs(coords[j + 1] - coords[j] - spacing) < 1e-9 * spacing + 1e-15
        if has_prev and has_next:
            out.append((node, (order_index[j - 1], order_index[j + 1], node), (-inv2h, inv2h, 0.0), False))
        elif has_next and j + 2 < npts and abs(coords[j + 2] - coords[j] - 2 * spacing) < 1e-8 * spacing + 1e-15:
            out.append((node, (node, order_index[j + 1], order_index[j + 2]),
                        (-3.0 * inv2h, 4.0 * inv2h, -inv2h), False))
        elif has_prev and j - 2 >= 0 and abs(coords[j] - coords[j - 2] - 2 * spacing) < 1e-8 * spacing + 1e-15:
            out.append((node, (node, order_index[j - 1], order_index[j - 2]),
                        (3.0 * inv2h, -4.0 * inv2h, inv2h), False))
        elif has_next:
            out.append((node, (order_index[j + 1], node, node), (2 * inv2h, -2 * inv2h, 0.0), True))
        elif has_prev:
            out.append((node, (node, order_index[j - 1], node), (2 * inv2h, -2 * inv2h, 0.0), True))
        else:
            out.append((node, (node, node, node), (0.0, 0.0, 0.0), True))
    return out


@dataclass
class TubularGrid:
    """Quadrature grid on the tube of half-thickness ``h`` over a surface mesh.

    For codimension 1 the fiber is a symmetric Simpson-weighted segment; for
    codimension 2 it is a tensor grid clipped to the disk ``|xi| <= h`` with
    exact cell-disk overlap areas as weights.
    """

    base: SurfaceMesh
    h: float
    normal_nodes: np.ndarray    # (Nn, k)
    normal_weights: np.ndarray  # (Nn,) flat fiber measure
    bulk_weights: np.ndarray    # (Ns, Nn) includes sqrt(det G)
    bulk_metric: np.ndarray     # (Ns, Nn, n, n)
    frame: np.ndarray           # (Ns, Nn, n, n)
    normal_taps: list           # per normal axis, _NormalTaps
    flagged_normal_nodes: np.ndarray  # fiber nodes with first-order stencils

    @property
    def scenario(self) -> ScenarioSpec:
        return self.base.scenario

    @property
    def n_surface(self) -> int:
        return self.base.n_nodes

    @property
    def n_normal(self) -> int:
        return self.normal_nodes.shape[0]

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.bulk_weights))


def _disk_grid(h: float, npts: int):
    """Tensor fiber grid on the square [-h,h]^2 clipped to the disk |xi|<=h.

    Returns (nodes (Nn,2), weights (Nn,), taps-per-axis).  Dual-cell areas
    are exact circle-rectangle overlaps; overlap belonging to cells of
    dropped outside nodes is reassigned to the nearest kept node so the
    total is exactly pi h^2.
    """
    axis = np.linspace(-h, h, npts)
    delta = axis[1] - axis[0]
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    r2 = np.sum(pts**2, axis=1)
    keep2d = (r2 <= h * h * (1 + 1e-12)).reshape(npts, npts)
    # a node must have an in-disk neighbor along every axis or its stencil
    # degenerates; drop offenders (their cell overlap is reassigned below)
    changed = True
    while changed:
        changed = False
        padded = np.zeros((npts + 2, npts + 2), dtype=bool)
        padded[1:-1, 1:-1] = keep2d
        ok = (padded[:-2, 1:-1] | padded[2:, 1:-1]) & (padded[1:-1, :-2] | padded[1:-1, 2:])
        trimmed = keep2d & ok
        if not np.array_equal(trimmed, keep2d):
            keep2d = trimmed
            changed = True
    keep = keep2d.ravel()
    kept_ids = np.flatnonzero(keep)
    id_map = -np.ones(pts.shape[0], dtype=int)
    id_map[kept_ids] = np.arange(kept_ids.size)

    areas = _rect_disk_area(pts[:, 0] - delta / 2, pts[:, 0] + delta / 2,
                            pts[:, 1] - delta / 2, pts[:, 1] + delta / 2, h)
    areas = np.maximum(areas, 0.0)
    weights = areas[keep].copy()
    # reassign orphaned overlap to the nearest kept node (deterministic)
    orphan = np.flatnonzero(~keep & (areas > 0))
    if orphan.size:
        kp = pts[keep]
        for o in orphan:
            d2 = np.sum((kp - pts[o]) ** 2, axis=1)
            weights[int(np.argmin(d2))] += areas[o]

    nodes = pts[keep]
    taps = []
    full_shape = (npts, npts)
    for ax in range(2):
        rows, cols, vals = [], [], []
        flag = np.zeros(kept_ids.size, dtype=bool)
        other = 1 - ax
        lines = {}
        for kid in kept_ids:
            ij = np.unravel_index(kid, full_shape)
            lines.setdefault(ij[other], []).append((ij[ax], kid))
        for _, entries in sorted(lines.items()):
            entries.sort()
            order = [int(id_map[kid]) for _, kid in entries]
            coords = [axis[i] for i, _ in entries]
            for node, tap_ids, tap_coefs, fo in _line_taps(order, coords, delta):
                for tid, tc in zip(tap_ids, tap_coefs):
                    if tc != 0.0:
                        rows.append(node)
                        cols.append(tid)
                        vals.append(tc)
                flag[node] = fo
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(kept_ids.size, kept_ids.size))
        taps.append(_NormalTaps(mat, flag))
    return nodes, weights, taps


def build_tubular_grid(mesh: SurfaceMesh, h: float, normal_resolution: int) -> TubularGrid:
    """Quadrature grid on the tube of half-thickness h over ``mesh``."""
    if h <= 0:
        raise ConfigurationError("half-thickness h must be positive")
    scenario = mesh.scenario
    k = scenario.codim
    if k == 1:
        if normal_resolution < 3:
            raise ConfigurationError("normal resolution must be >= 3")
        npts = int(normal_resolution)
        if npts % 2 == 0:
            npts += 1  # odd count keeps the fiber rule symmetric and exact on quadratics
        line = np.linspace(-h, h, npts)
        nodes = line[:, None]
        weights = _simpson_weights(npts, line[1] - line[0])
        taps = [_NormalTaps(_diff_matrix_1d(npts, line[1] - line[0]), np.zeros(npts, dtype=bool))]
    elif k == 2:
        if normal_resolution < 5:
            raise ConfigurationError("normal resolution must be >= 5 for codimension 2")
        nodes, weights, taps = _disk_grid(h, int(normal_resolution))
    else:
        raise ConfigurationError(f"unsupported codimension {k}")

    xs = np.repeat(mesh.nodes, nodes.shape[0], axis=0)
    xis = np.tile(nodes, (mesh.n_nodes, 1))
    G = bulk_metric_batch(scenario, xs, xis).reshape(mesh.n_nodes, nodes.shape[0],
                                                     scenario.dim_ambient, scenario.dim_ambient)
    det = np.linalg.det(G)
    if np.any(det <= 0):
        si, ni = np.unravel_index(int(np.argmin(det)), det.shape)
        raise GeometryError(
            f"bulk metric not SPD at surface node {si} (x={mesh.nodes[si]}), "
            f"fiber node {ni} (xi={nodes[ni]}): tube too thick for '{scenario.name}'"
        )
    try:
        frame = metric_frame(G)
    except np.linalg.LinAlgError:
        raise GeometryError(f"bulk metric not SPD on '{scenario.name}' (h={h})")

    bulk_w = mesh.chart_weights[:, None] * weights[None, :] * np.sqrt(det)
    flagged = np.flatnonzero(np.any([t.first_order for t in taps], axis=0))
    return TubularGrid(
        base=mesh,
        h=float(h),
        normal_nodes=nodes,
        normal_weights=weights,
        bulk_weights=bulk_w,
        bulk_metric=G,
        frame=frame,
        normal_taps=taps,
        flagged_normal_nodes=flagged,
    )
