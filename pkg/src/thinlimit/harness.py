"""Experiment harness: convergence sweeps, the rigidity probe, rate fits,
the invariant check suite, and deterministic file output.

Reproducibility contract: every run is a pure function of (scenario
config, options, seed).  All randomness flows from one seeded generator;
files are written with shortest round-trip float formatting and fixed key
order, so identical inputs give byte-identical outputs.  Wall-clock
timings never go into output files.
"""

from __future__ import annotations

import concurrent.futures
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from . import scenarios
from .energy3d import BulkState, eval_Eh
from .optimize import (OptimizeOptions, default_bulk_init, default_reduced_init,
                       minimize_bulk, minimize_reduced)
from .recovery import build_recovery
from .reduced import ReducedState, eval_Elim, kappa
from .rotations import (FramePair, dist_SO, dist_so_sq_batch, nearest_rotation,
                        project_rotations_batch, sym_linearized)

DEFAULT_SEED = 42


class FitError(ValueError):
    """rate_fit needs positive values."""


def fmt(x) -> str:
    """Shortest round-trip decimal for floats (bit-exact file output)."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def rate_fit(pairs):
    """Least-squares slope/intercept/R^2 of log(value) against log(h)."""
    pairs = [(float(h), float(v)) for h, v in pairs]
    if len(pairs) < 3:
        raise FitError("rate_fit needs at least 3 pairs")
    if any(h <= 0 or v <= 0 for h, v in pairs):
        raise FitError("rate_fit needs positive h and values")
    lh = np.log([h for h, _ in pairs])
    lv = np.log([v for _, v in pairs])
    slope, intercept = np.polyfit(lh, lv, 1)
    pred = slope * lh + intercept
    ss_res = float(np.sum((lv - pred) ** 2))
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


@dataclass
class GammaRow:
    h: float
    min_Eh: float
    Elim_star: float
    gap: float
    recovery_Eh: float
    runtime: float
    resolution: int

    def __post_init__(self):
        for name in ("h", "min_Eh", "Elim_star", "gap", "recovery_Eh"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"GammaRow.{name} must be finite")
        if self.gap < 0:
            raise ValueError("GammaRow.gap must be nonnegative")


def _worker_count() -> int:
    env = os.environ.get("THINLIMIT_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def interpolate_reduced(state: ReducedState, target_mesh) -> ReducedState:
    """Interpolate a reduced state onto another mesh of the same chart
    (separable cubic splines along each axis)."""
    from scipy.interpolate import CubicSpline

    src = state.mesh
    if src.shape == target_mesh.shape:
        return ReducedState(state.F.copy(), state.qperp.copy(), target_mesh)

    def interp(values):
        arr = values.reshape(src.shape + values.shape[1:])
        for a, (src_ax, dst_ax) in enumerate(zip(src.axes, target_mesh.axes)):
            arr = np.moveaxis(arr, a, 0)
            spline = CubicSpline(src_ax, arr, axis=0)
            arr = np.moveaxis(spline(dst_ax), 0, a)
        return arr.reshape((-1,) + values.shape[1:])

    return ReducedState(interp(state.F), interp(state.qperp), target_mesh)


def gamma_sweep(scenario, h_list, options: OptimizeOptions | None = None,
                base_resolution=12, normal_resolution=5, reduced_resolution=24,
                resolution_cap=96, seed=DEFAULT_SEED, bulk_max_iter=None,
                parallel=True):
    """One reduced minimization plus one tube minimization per thickness.

    The surface resolution of row ``h`` scales like ``base_resolution *
    h_list[0] / h`` (capped) so the discretization error stays subordinate
    to the thickness effects being measured.  Rows run concurrently (worker
    count capped by ``THINLIMIT_THREADS``); determinism is preserved by
    per-row seeds spawned from the master seed and fixed assembly order.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3 or any(h2 >= h1 for h1, h2 in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing with >= 3 entries")
    options = options or OptimizeOptions()

    rng = np.random.default_rng(seed)
    mesh0 = geo.build_surface_mesh(scenario, reduced_resolution)
    init = default_reduced_init(scenario, mesh0, rng, noise=options.init_noise)
    red_state, red_report = minimize_reduced(scenario, mesh0, init, options)
    elim_star = red_report.value

    child_seeds = np.random.SeedSequence(seed).spawn(len(h_list))
    bulk_iters = bulk_max_iter if bulk_max_iter is not None else options.max_iter

    def run_row(i):
        from .optimize import project_feasible

        t0 = time.perf_counter()
        h = h_list[i]
        res = int(min(round(base_resolution * h_list[0] / h), resolution_cap))
        mesh = geo.build_surface_mesh(scenario, res)
        grid = geo.build_tubular_grid(mesh, h, normal_resolution)
        warm = project_feasible(interpolate_reduced(red_state, mesh))
        bulk_init = default_bulk_init(scenario, grid, reduced_state=warm)
        recovery_eh = eval_Eh(bulk_init).value
        row_opts = OptimizeOptions(**{**options.__dict__, "max_iter": bulk_iters})
        _, rep = minimize_bulk(scenario, grid, bulk_init, row_opts)
        return GammaRow(
            h=h, min_Eh=rep.value, Elim_star=elim_star,
            gap=abs(rep.value - elim_star), recovery_Eh=recovery_eh,
            runtime=time.perf_counter() - t0, resolution=res,
        )

    workers = min(_worker_count(), len(h_list)) if parallel else 1
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_row, range(len(h_list))))
    else:
        rows = [run_row(i) for i in range(len(h_list))]
    return rows, red_state, red_report


def relative_gap(rows) -> float:
    """Final gap relative to the larger of the initial gap and the limit
    energy (covers both compatible scenarios, where everything is near
    zero, and residually stressed ones)."""
    ref = max(rows[0].gap, abs(rows[-1].Elim_star))
    if ref == 0:
        return 0.0
    return rows[-1].gap / ref


def write_gamma_csv(rows, path):
    """Deterministic CSV (timings deliberately excluded)."""
    lines = ["h,resolution,min_Eh,Elim_star,gap,recovery_Eh"]
    for r in rows:
        lines.append(",".join([fmt(r.h), str(r.resolution), fmt(r.min_Eh),
                               fmt(r.Elim_star), fmt(r.gap), fmt(r.recovery_Eh)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace(trace, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,energy,grad_norm,violation\n")
        for row in trace:
            fh.write(row.as_line() + "\n")


def write_mesh_dump(state: ReducedState, path):
    """Vertex list plus quad face indices for external visualization."""
    mesh = state.mesh
    lines = [f"vertices {mesh.n_nodes}"]
    for p in state.F:
        lines.append(" ".join(fmt(c) for c in p))
    if len(mesh.shape) == 2:
        n1, n2 = mesh.shape
        faces = []
        for i in range(n1 - 1):
            for j in range(n2 - 1):
                a = i * n2 + j
                faces.append((a, a + n2, a + n2 + 1, a + 1))
        lines.append(f"faces {len(faces)}")
        for f in faces:
            lines.append(" ".join(str(v) for v in f))
    elif len(mesh.shape) == 1:
        lines.append(f"segments {mesh.shape[0] - 1}")
        for i in range(mesh.shape[0] - 1):
            lines.append(f"{i} {i + 1}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class RigidityReport:
    qh: np.ndarray          # per-surface-node rotation field
    lhs: float              # tube-average |df o Pi - pi* q_h|^2
    ratio: float            # lhs / (h^2 (E_h + 1))
    grad_qh_mean_sq: float  # surface-average |grad q_h|^2
    grad_ratio: float       # grad bound ratio against (E_h + 1)
    eh: float


def rigidity_probe(bulk_state: BulkState, grid=None, scenario=None) -> RigidityReport:
    """Empirical probe of the rigidity bounds.

    Per surface node, q_h is the nearest rotation to the fiber-averaged
    frame-reduced derivative.  Reports the mean squared deviation of the
    derivative from q_h, its ratio against h^2 (E_h + 1), and the averaged
    squared surface gradient of q_h against (E_h + 1).
    """
    from .energy3d import _assemble_df

    grid = grid or bulk_state.grid
    scenario = scenario or grid.scenario
    mesh = grid.base
    m = scenario.m

    df = _assemble_df(bulk_state)                     # chart columns
    dfh = np.empty_like(df)
    dfh[..., m:] = df[..., m:]
    dfh[..., :m] = np.einsum("sjca,sab->sjcb", df[..., :m], mesh.frame)

    w = grid.bulk_weights
    wtot = float(np.sum(w))
    fiber_avg = np.einsum("sj,sjcb->scb", w, dfh) / np.sum(w, axis=1)[:, None, None]
    qh, _ = project_rotations_batch(fiber_avg)

    dev = dfh - qh[:, None, :, :]
    lhs = float(np.einsum("sj,sjcb->", w, dev**2) / wtot)
    eh = eval_Eh(bulk_state, scenario).value
    ratio = lhs / (grid.h**2 * (eh + 1.0))

    dq = mesh.gradient(qh.reshape(mesh.n_nodes, -1))  # (N, m, 9)
    dq_frame = np.einsum("nak,nab->nbk", dq, mesh.frame)
    sw = mesh.quad_weights
    grad_ms = float(np.einsum("n,nbk->", sw, dq_frame**2) / np.sum(sw))
    return RigidityReport(qh=qh, lhs=lhs, ratio=ratio,
                          grad_qh_mean_sq=grad_ms,
                          grad_ratio=grad_ms / (eh + 1.0), eh=eh)


# ---------------------------------------------------------------------------
# invariant check suite
# ---------------------------------------------------------------------------

def _random_rotations(rng, count):
    qs, _ = np.linalg.qr(rng.standard_normal((count, 3, 3)))
    det = np.linalg.det(qs)
    qs[det < 0, :, 0] *= -1.0
    return qs


def run_check(seed=DEFAULT_SEED, verbose=True):
    """Fast invariant suite; returns a list of (name, passed, detail)."""
    rng = np.random.default_rng(seed)
    results = []

    def record(name, passed, detail):
        results.append((name, bool(passed), detail))
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

    # SPD metrics at quadrature nodes of every shipped scenario
    worst = np.inf
    for build in (scenarios.euclid_plate, scenarios.hyperbolic_plate,
                  scenarios.cylinder_shell, scenarios.sphere_cap_shell, scenarios.rod):
        scen = build()
        mesh = geo.build_surface_mesh(scen, 8 if scen.codim == 1 else 32)
        live = mesh.quad_weights > 0
        worst = min(worst, float(np.linalg.eigvalsh(mesh.metric[live]).min()))
        grid = geo.build_tubular_grid(mesh, 0.05, 5)
        worst = min(worst, float(np.linalg.eigvalsh(grid.bulk_metric.reshape(-1, 3, 3)).min()))
    record("spd_metrics", worst > 1e-10, f"min eigenvalue {worst:.3e}")

    # right-invariance of dist_SO under rotations
    A = rng.standard_normal((1000, 3, 3))
    R = _random_rotations(rng, 1000)
    d0, _, _, _ = dist_so_sq_batch(A)
    d1, _, _, _ = dist_so_sq_batch(A @ R)
    err = float(np.abs(np.sqrt(d0) - np.sqrt(d1)).max())
    record("dist_right_invariance", err <= 1e-12, f"max deviation {err:.3e} (1000 trials)")

    # projection optimality: |A - nearest| <= |A - R| for random rotations
    A = rng.standard_normal((1000, 3, 3))
    proj, _ = project_rotations_batch(A)
    dproj = np.linalg.norm(A - proj, axis=(1, 2))
    R = _random_rotations(rng, 1000)
    dsamp = np.linalg.norm(A[:, None] - R[None, :], axis=(2, 3)).min(axis=1)
    margin = float((dproj - dsamp).max())
    record("projection_optimality", margin <= 1e-12,
           f"max(|A-proj| - min sample) = {margin:.3e} (1000x1000)")

    # quadratic linearization of the distance near the identity
    ratios = []
    for t in (1e-1, 1e-2, 1e-3):
        errs = []
        for _ in range(40):
            B = rng.standard_normal((3, 3))
            B /= np.linalg.norm(B)
            errs.append(abs(dist_SO(np.eye(3) + t * B) - t * sym_linearized(B)))
        ratios.append(max(errs) / t**2)
    stable = max(ratios) <= 3.0 * min(ratios) and max(ratios) < 10.0
    record("linearized_distance", stable,
           f"err/t^2 ratios {['%.3f' % r for r in ratios]}")

    # frame indifference of both energies under rigid motions
    plate = scenarios.euclid_plate()
    mesh = geo.build_surface_mesh(plate, 8)
    grid = geo.build_tubular_grid(mesh, 0.1, 5)
    vals = np.zeros((mesh.n_nodes, grid.n_normal, 3))
    vals[:, :, :2] = mesh.nodes[:, None, :]
    vals[:, :, 2:] = grid.normal_nodes[None, :, :]
    vals += 0.02 * rng.standard_normal(vals.shape)
    Rm = _random_rotations(rng, 1)[0]
    c = rng.standard_normal(3)
    e0 = eval_Eh(BulkState(vals, grid)).value
    e1 = eval_Eh(BulkState(vals @ Rm.T + c, grid)).value
    err_h = abs(e0 - e1) / max(e0, 1e-300)
    F = np.concatenate([mesh.nodes, np.zeros((mesh.n_nodes, 1))], axis=1)
    F += 0.02 * rng.standard_normal(F.shape)
    qp = np.tile(np.array([0.0, 0.0, 1.0])[None, :, None], (mesh.n_nodes, 1, 1))
    qp += 0.02 * rng.standard_normal(qp.shape)
    st = ReducedState(F, qp, mesh)
    st2 = ReducedState(F @ Rm.T + c, np.einsum("ij,njk->nik", Rm, qp), mesh)
    r0 = eval_Elim(st, plate, mode="penalized")
    r1 = eval_Elim(st2, plate, mode="penalized")
    err_lim = abs(r0.value - r1.value) / max(r0.value, 1e-300)
    ok = err_h <= 1e-12 and err_lim <= 1e-12
    record("frame_indifference", ok, f"relative changes {err_h:.2e} (tube), {err_lim:.2e} (reduced)")

    # kappa moment identity by Monte Carlo (3 sigma)
    n_samp = 10**7
    details = []
    ok = True
    for k in (1, 2):
        if k == 1:
            xi = rng.uniform(-1, 1, n_samp)
            vals_mc = xi**2
        else:
            rho = np.sqrt(rng.uniform(0, 1, n_samp))
            theta = rng.uniform(0, 2 * math.pi, n_samp)
            vals_mc = (rho * np.cos(theta)) ** 2
        mean = float(vals_mc.mean())
        sigma = float(vals_mc.std(ddof=1) / math.sqrt(n_samp))
        dev = abs(mean - kappa(k))
        ok = ok and dev <= 3 * sigma
        details.append(f"k={k}: |{mean:.6f} - {kappa(k):.6f}| = {dev:.2e} (3s = {3*sigma:.2e})")
    record("kappa_moment", ok, "; ".join(details))

    # gradients against directional finite differences on random states
    worst_rel = 0.0
    small = geo.build_surface_mesh(plate, 6)
    sgrid = geo.build_tubular_grid(small, 0.1, 3)
    for trial in range(10):
        base = np.zeros((small.n_nodes, sgrid.n_normal, 3))
        base[:, :, :2] = small.nodes[:, None, :]
        base[:, :, 2:] = sgrid.normal_nodes[None, :, :]
        base += 0.03 * rng.standard_normal(base.shape)
        st = BulkState(base, sgrid)
        _, g = eval_Eh(st, with_grad=True)
        v = rng.standard_normal(base.shape)
        v /= np.linalg.norm(v)
        eps = 1e-6
        fd = (eval_Eh(BulkState(base + eps * v, sgrid)).value
              - eval_Eh(BulkState(base - eps * v, sgrid)).value) / (2 * eps)
        worst_rel = max(worst_rel, abs(fd - float(np.sum(g * v))) / max(abs(fd), 1e-300))
    for trial in range(10):
        F = np.concatenate([small.nodes, np.zeros((small.n_nodes, 1))], axis=1)
        F += 0.03 * rng.standard_normal(F.shape)
        qp = np.tile(np.array([0.0, 0.0, 1.0])[None, :, None], (small.n_nodes, 1, 1))
        qp += 0.03 * rng.standard_normal(qp.shape)
        st = ReducedState(F, qp, small)
        _, gF, gq = eval_Elim(st, plate, mode="penalized", beta=100.0, with_grad=True)
        vF = rng.standard_normal(F.shape)
        vq = rng.standard_normal(qp.shape)
        nrm = math.sqrt(float(np.sum(vF**2) + np.sum(vq**2)))
        vF /= nrm
        vq /= nrm
        eps = 1e-6
        fp = eval_Elim(ReducedState(F + eps * vF, qp + eps * vq, small), plate,
                       mode="penalized", beta=100.0).value
        fm = eval_Elim(ReducedState(F - eps * vF, qp - eps * vq, small), plate,
                       mode="penalized", beta=100.0).value
        fd = (fp - fm) / (2 * eps)
        an = float(np.sum(gF * vF) + np.sum(gq * vq))
        worst_rel = max(worst_rel, abs(fd - an) / max(abs(fd), 1e-300))
    record("gradient_fd", worst_rel <= 1e-5, f"worst relative deviation {worst_rel:.2e} (20 states)")

    return results
