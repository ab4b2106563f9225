"""Distance to the rotation group, nearest-rotation projection, and the
quadratic linearization of that distance.

Frames generalize the operations to sources carrying a non-Euclidean metric
G: with L the cached orthonormalizing factor (L^T G L = I), every frame
computation reduces to the Euclidean one applied to A @ L.

The distance is defined for all matrices: with singular values s_1 >= ... >=
s_n of the frame-reduced matrix, dist^2 = sum (s_i - 1)^2, the smallest
singular value entering with a flipped sign when the determinant is
negative.  The projection returned for det <= 0 is the constrained
Procrustes solution U diag(1, ..., 1, det(UV^T)) V^T; ties between the two
smallest singular values make it non-unique there, and such points are
flagged so energy gradients can fall back to finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import metric_frame

# Singular-value gap below which the det<=0 projection is flagged non-smooth.
SV_TIE_TOL = 1e-8
_NEWTON_TOL = 1e-13
_NEWTON_MAX_ITER = 30


@dataclass(frozen=True)
class FramePair:
    """Pointwise pairing of a source metric with the Euclidean target."""

    source_metric: np.ndarray
    frame: np.ndarray = field(default=None)  # L with L^T G L = I

    def __post_init__(self):
        G = np.asarray(self.source_metric, dtype=float)
        object.__setattr__(self, "source_metric", G)
        if self.frame is None:
            L = metric_frame(G)
            object.__setattr__(self, "frame", L)
        resid = self.frame.T @ G @ self.frame - np.eye(G.shape[-1])
        if np.max(np.abs(resid)) > 1e-12:
            raise ValueError("orthonormalizing factor fails L^T G L = I at 1e-12")

    @classmethod
    def euclidean(cls, n: int) -> "FramePair":
        return cls(np.eye(n), np.eye(n))

    @property
    def n(self) -> int:
        return self.source_metric.shape[-1]


def _inv3(X):
    """Batched inverse of (N,3,3) matrices via the adjugate (no LAPACK calls)."""
    a, b, c = X[:, 0, 0], X[:, 0, 1], X[:, 0, 2]
    d, e, f = X[:, 1, 0], X[:, 1, 1], X[:, 1, 2]
    g, h, i = X[:, 2, 0], X[:, 2, 1], X[:, 2, 2]
    A = e * i - f * h
    B = -(d * i - f * g)
    C = d * h - e * g
    det = a * A + b * B + c * C
    out = np.empty_like(X)
    out[:, 0, 0] = A
    out[:, 1, 0] = B
    out[:, 2, 0] = C
    out[:, 0, 1] = -(b * i - c * h)
    out[:, 1, 1] = a * i - c * g
    out[:, 2, 1] = -(a * h - b * g)
    out[:, 0, 2] = b * f - c * e
    out[:, 1, 2] = -(a * f - c * d)
    out[:, 2, 2] = a * e - b * d
    return out / det[:, None, None], det


def _svd_project(A):
    """Nearest special-orthogonal matrix via SVD, plus tie flags.

    Works for every matrix; the deterministic tie-break is whatever the
    fixed LAPACK SVD returns.
    """
    U, s, Vt = np.linalg.svd(A)
    detuv = np.linalg.det(U @ Vt)
    D = np.ones(A.shape[:-1])
    D[..., -1] = np.sign(detuv) + (detuv == 0)  # det==0 cannot occur for orthogonal U,V
    R = (U * D[..., None, :]) @ Vt
    flipped = detuv < 0
    tie = flipped & (s[..., -2] - s[..., -1] < SV_TIE_TOL)
    return R, tie


def project_rotations_batch(A: np.ndarray):
    """Nearest rotations for a batch (N, n, n) of Euclidean-frame matrices.

    Returns ``(R, flagged)``; ``flagged`` marks matrices where the
    projection is non-unique (negative determinant with tied smallest
    singular values) and the distance is not differentiable.

    Uses a scaled Newton polar iteration on the well-conditioned positive
    determinant part (pure arithmetic, fast for 3x3 batches) and SVD
    elsewhere.
    """
    A = np.asarray(A, dtype=float)
    N, n = A.shape[0], A.shape[-1]
    R = np.empty_like(A)
    flagged = np.zeros(N, dtype=bool)
    if n != 3:
        R[:], flagged[:] = _svd_project(A)
        return R, flagged

    scale = np.sqrt(np.einsum("nij,nij->n", A, A) / n) + 1e-300
    det = np.linalg.det(A)
    newton = det > 1e-9 * scale**n
    if np.any(newton):
        X = A[newton] / scale[newton, None, None]
        ok = np.zeros(X.shape[0], dtype=bool)
        for _ in range(_NEWTON_MAX_ITER):
            Xinv, d = _inv3(X)
            gamma = np.abs(d) ** (-1.0 / 3.0)
            X_next = 0.5 * (gamma[:, None, None] * X + np.swapaxes(Xinv, 1, 2) / gamma[:, None, None])
            resid = np.einsum("nij,nik->njk", X_next, X_next)
            resid[:, 0, 0] -= 1.0
            resid[:, 1, 1] -= 1.0
            resid[:, 2, 2] -= 1.0
            X = X_next
            ok = np.max(np.abs(resid), axis=(1, 2)) < _NEWTON_TOL
            if bool(np.all(ok)):
                break
        good = ok & np.all(np.isfinite(X), axis=(1, 2))
        sub = np.flatnonzero(newton)
        R[sub[good]] = X[good]
        newton[sub[~good]] = False
    rest = ~newton
    if np.any(rest):
        R[rest], flagged[rest] = _svd_project(A[rest])
    return R, flagged


def dist_so_sq_batch(A: np.ndarray, frame_factor=None):
    """Squared distance to SO(n) for a batch, with projections and flags.

    ``frame_factor``: optional (..., n, n) orthonormalizing factors; the
    batch is frame-reduced before projecting.  Returns ``(d2, Ahat, R,
    flagged)``.
    """
    A = np.asarray(A, dtype=float)
    Ahat = A if frame_factor is None else A @ frame_factor
    R, flagged = project_rotations_batch(Ahat)
    diff = Ahat - R
    d2 = np.einsum("...ij,...ij->...", diff, diff)
    return d2, Ahat, R, flagged


def dist_SO(A, frame: FramePair | None = None) -> float:
    """Distance of a single matrix to the rotation group of its frame."""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("dist_SO requires a finite matrix")
    L = None if frame is None else frame.frame
    d2, _, _, _ = dist_so_sq_batch(A[None], None if L is None else L[None])
    return float(np.sqrt(max(d2[0], 0.0)))


def nearest_rotation(A, frame: FramePair | None = None) -> np.ndarray:
    """Nearest rotation Q (in frame coordinates) with |A - Q| = dist_SO(A).

    For a non-Euclidean frame the norm is |(A - Q) L|_F and Q satisfies
    Q^T-compatibility with the source metric: (QL)^T (QL) = I.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("nearest_rotation requires a finite matrix")
    if frame is None:
        R, _ = _svd_project(A[None])
        return R[0]
    Ahat = A @ frame.frame
    R, _ = _svd_project(Ahat[None])
    return R[0] @ np.linalg.inv(frame.frame)


def sym_linearized(A) -> float:
    """Frobenius norm of the symmetric part (A + A^T)/2.

    First-order model of dist_SO(I + A) for small A, Euclidean frame.
    """
    A = np.asarray(A, dtype=float)
    S = 0.5 * (A + A.T)
    return float(np.linalg.norm(S))


def dist_so_sq_value_and_grad_batch(A: np.ndarray, frame_factor=None):
    """Batched d^2 = dist_SO^2 and its gradient w.r.t. the raw matrices.

    Away from flagged points the gradient is the exact closed form
    2 (Ahat - R) L^T; flagged points (non-unique projection) use central
    finite differences of d^2 in the frame-reduced entries.
    """
    d2, Ahat, R, flagged = dist_so_sq_batch(A, frame_factor)
    grad_hat = 2.0 * (Ahat - R)
    if np.any(flagged):
        idx = np.flatnonzero(flagged)
        eps = 1e-7
        for i in idx:
            Gi = np.empty_like(Ahat[i])
            for p in range(Ahat.shape[-2]):
                for q in range(Ahat.shape[-1]):
                    Ap = Ahat[i].copy()
                    Ap[p, q] += eps
                    Am = Ahat[i].copy()
                    Am[p, q] -= eps
                    dp, _, _, _ = dist_so_sq_batch(Ap[None])
                    dm, _, _, _ = dist_so_sq_batch(Am[None])
                    Gi[p, q] = (dp[0] - dm[0]) / (2 * eps)
            grad_hat[i] = Gi
    if frame_factor is None:
        return d2, grad_hat, flagged
    return d2, grad_hat @ np.swapaxes(frame_factor, -1, -2), flagged
