"""Builtin scenario families and scenario-file loading.

Scenario files are TOML: a top-level ``family`` key naming one of the
builtin families plus a ``[params]`` table.  An optional ``[optimize]``
table carries solver options for the CLI.  Unknown families, parameters or
top-level keys are rejected.

Schema (all parameters optional, defaults below)::

    family = "cylinder_shell"       # euclid_plate | hyperbolic_plate |
                                    # cylinder_shell | sphere_cap_shell | rod
    [params]
    radius = 1.0
    angle  = 1.5707963267948966
    height = 1.0

    [optimize]
    max_iter = 2000

Families and parameters:

* ``euclid_plate``: flat unit metric on ``[0, extent_x] x [0, extent_y]``,
  zero target curvature, embedded slab bulk.
* ``hyperbolic_plate``: metric ``diag(1, cosh^2(sqrt(c) x))`` of constant
  Gauss curvature ``-c`` (parameter ``curvature`` = c) on a centered chart,
  zero target curvature, product bulk.
* ``cylinder_shell``: arclength chart on a cylinder of ``radius``; target
  curvature ``diag(1/radius, 0)``; embedded tube bulk (exact offset metric).
* ``sphere_cap_shell``: spherical chart (theta, phi) on a cap of ``radius``;
  target curvature ``g/radius``; embedded tube bulk.
* ``rod``: arclength interval of ``length`` with curvature vector
  ``curvature`` (scalar or pair) and normal-connection ``torsion``;
  codimension 2, second-order expansion bulk.
"""

from __future__ import annotations

import math

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .geometry import BulkMode, ConfigurationError, ScenarioSpec

FAMILIES = ("euclid_plate", "hyperbolic_plate", "cylinder_shell", "sphere_cap_shell", "rod")


def _const(x, mat):
    """Broadcast a constant matrix over the batch shape of chart points x."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    out = np.broadcast_to(mat, batch + mat.shape)
    return np.ascontiguousarray(out)


def _zeros_ii(x, k, m):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1] + (k, m, m))


def _zeros_conn(x, k, m):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1] + (m, k, k))


def euclid_plate(extent_x=1.0, extent_y=1.0) -> ScenarioSpec:
    dom = np.array([[0.0, float(extent_x)], [0.0, float(extent_y)]])

    def embed(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        return np.concatenate([x, xi[..., :1]], axis=-1)

    def embed_jac(x, xi):
        x = np.asarray(x, dtype=float)
        return _const(x, np.eye(3))

    return ScenarioSpec(
        name="euclid_plate",
        dim_ambient=3,
        codim=1,
        chart_domain=dom,
        metric_fn=lambda x: _const(x, np.eye(2)),
        ii_fn=lambda x: _zeros_ii(x, 1, 2),
        normal_connection_fn=lambda x: _zeros_conn(x, 1, 2),
        bulk_mode=BulkMode.EMBEDDED,
        embedding_fn=embed,
        embedding_jac_fn=embed_jac,
        params={"extent_x": float(extent_x), "extent_y": float(extent_y)},
    )


def hyperbolic_plate(curvature=1.0, extent_x=1.0, extent_y=1.0) -> ScenarioSpec:
    c = float(curvature)
    if c <= 0:
        raise ConfigurationError("hyperbolic_plate needs curvature > 0 (Gauss curvature is -curvature)")
    sq = math.sqrt(c)
    dom = np.array([[-0.5 * extent_x, 0.5 * extent_x], [0.0, float(extent_y)]])

    def metric(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1.0
        g[..., 1, 1] = np.cosh(sq * x[..., 0]) ** 2
        return g

    return ScenarioSpec(
        name="hyperbolic_plate",
        dim_ambient=3,
        codim=1,
        chart_domain=dom,
        metric_fn=metric,
        ii_fn=lambda x: _zeros_ii(x, 1, 2),
        normal_connection_fn=lambda x: _zeros_conn(x, 1, 2),
        bulk_mode=BulkMode.PRODUCT_PLATE,
        params={"curvature": c, "extent_x": float(extent_x), "extent_y": float(extent_y)},
    )


def cylinder_shell(radius=1.0, angle=math.pi / 2, height=1.0, bulk_mode="embedded") -> ScenarioSpec:
    r = float(radius)
    if r <= 0:
        raise ConfigurationError("cylinder radius must be positive")
    dom = np.array([[0.0, r * float(angle)], [0.0, float(height)]])

    def ii(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (1, 2, 2))
        out[..., 0, 0, 0] = 1.0 / r
        return out

    def embed(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        ang = x[..., 0] / r
        rad = r + xi[..., 0]
        return np.stack([rad * np.cos(ang), rad * np.sin(ang), x[..., 1]], axis=-1)

    def embed_jac(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        ang = x[..., 0] / r
        rad = r + xi[..., 0]
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = -(rad / r) * np.sin(ang)
        J[..., 1, 0] = (rad / r) * np.cos(ang)
        J[..., 2, 1] = 1.0
        J[..., 0, 2] = np.cos(ang)
        J[..., 1, 2] = np.sin(ang)
        return J

    return ScenarioSpec(
        name="cylinder_shell",
        dim_ambient=3,
        codim=1,
        chart_domain=dom,
        metric_fn=lambda x: _const(x, np.eye(2)),
        ii_fn=ii,
        normal_connection_fn=lambda x: _zeros_conn(x, 1, 2),
        bulk_mode=BulkMode(bulk_mode) if not isinstance(bulk_mode, BulkMode) else bulk_mode,
        embedding_fn=embed,
        embedding_jac_fn=embed_jac,
        params={"radius": r, "angle": float(angle), "height": float(height)},
    )


def sphere_cap_shell(radius=1.0, theta_min=math.pi / 6, theta_max=math.pi / 3,
                     phi_max=math.pi / 2, bulk_mode="embedded") -> ScenarioSpec:
    R = float(radius)
    if not 0.0 <= theta_min < theta_max <= math.pi / 2:
        raise ConfigurationError("need 0 <= theta_min < theta_max <= pi/2")
    dom = np.array([[float(theta_min), float(theta_max)], [0.0, float(phi_max)]])

    def metric(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = R * R
        g[..., 1, 1] = (R * np.sin(x[..., 0])) ** 2
        return g

    def ii(x):
        g = metric(x)
        return (g / R)[..., None, :, :].reshape(g.shape[:-2] + (1, 2, 2))

    def _nhat(x):
        th, ph = x[..., 0], x[..., 1]
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    def embed(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        return (R + xi[..., :1]) * _nhat(x)

    def embed_jac(x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        th, ph = x[..., 0], x[..., 1]
        rad = R + xi[..., 0]
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 0, 0] = rad * np.cos(th) * np.cos(ph)
        J[..., 1, 0] = rad * np.cos(th) * np.sin(ph)
        J[..., 2, 0] = -rad * np.sin(th)
        J[..., 0, 1] = -rad * np.sin(th) * np.sin(ph)
        J[..., 1, 1] = rad * np.sin(th) * np.cos(ph)
        J[..., :, 2] = _nhat(x)
        return J

    return ScenarioSpec(
        name="sphere_cap_shell",
        dim_ambient=3,
        codim=1,
        chart_domain=dom,
        metric_fn=metric,
        ii_fn=ii,
        normal_connection_fn=lambda x: _zeros_conn(x, 1, 2),
        bulk_mode=BulkMode(bulk_mode) if not isinstance(bulk_mode, BulkMode) else bulk_mode,
        embedding_fn=embed,
        embedding_jac_fn=embed_jac,
        params={"radius": R, "theta_min": float(theta_min), "theta_max": float(theta_max),
                "phi_max": float(phi_max)},
    )


def rod(length=2 * math.pi, curvature=1.0, torsion=0.0) -> ScenarioSpec:
    L = float(length)
    kvec = np.atleast_1d(np.asarray(curvature, dtype=float))
    if kvec.size == 1:
        kvec = np.array([float(kvec[0]), 0.0])
    if kvec.size != 2:
        raise ConfigurationError("rod curvature must be a scalar or a pair")
    tau = float(torsion)
    dom = np.array([[0.0, L]])

    def ii(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 1, 1))
        out[..., 0, 0, 0] = kvec[0]
        out[..., 1, 0, 0] = kvec[1]
        return out

    def conn(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (1, 2, 2))
        out[..., 0, 0, 1] = tau
        out[..., 0, 1, 0] = -tau
        return out

    return ScenarioSpec(
        name="rod",
        dim_ambient=3,
        codim=2,
        chart_domain=dom,
        metric_fn=lambda x: _const(x, np.eye(1)),
        ii_fn=ii,
        normal_connection_fn=conn,
        bulk_mode=BulkMode.SYNTHETIC_EXPANSION,
        params={"length": L, "curvature": [float(kvec[0]), float(kvec[1])], "torsion": tau},
    )


_BUILDERS = {
    "euclid_plate": euclid_plate,
    "hyperbolic_plate": hyperbolic_plate,
    "cylinder_shell": cylinder_shell,
    "sphere_cap_shell": sphere_cap_shell,
    "rod": rod,
}

_ALLOWED_PARAMS = {
    "euclid_plate": {"extent_x", "extent_y"},
    "hyperbolic_plate": {"curvature", "extent_x", "extent_y"},
    "cylinder_shell": {"radius", "angle", "height", "bulk_mode"},
    "sphere_cap_shell": {"radius", "theta_min", "theta_max", "phi_max", "bulk_mode"},
    "rod": {"length", "curvature", "torsion"},
}

_ALLOWED_TOP = {"family", "params", "optimize"}


def scenario_from_config(config: dict) -> ScenarioSpec:
    """Build a scenario from a parsed config dict (strict: unknown keys fail)."""
    unknown = set(config) - _ALLOWED_TOP
    if unknown:
        raise ConfigurationError(f"unknown top-level keys in scenario file: {sorted(unknown)}")
    family = config.get("family")
    if family not in _BUILDERS:
        raise ConfigurationError(f"unknown scenario family {family!r}; expected one of {FAMILIES}")
    params = dict(config.get("params", {}))
    bad = set(params) - _ALLOWED_PARAMS[family]
    if bad:
        raise ConfigurationError(f"unknown parameters for {family}: {sorted(bad)}")
    return _BUILDERS[family](**params)


def load_scenario(path) -> tuple:
    """Load a scenario file; returns ``(scenario, optimize_options_dict)``."""
    with open(path, "rb") as fh:
        config = tomllib.load(fh)
    scenario = scenario_from_config(config)
    return scenario, dict(config.get("optimize", {}))
