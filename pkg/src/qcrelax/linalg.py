"""Exact small-matrix linear algebra for 2x2 and 3x3 deformation gradients.

Everything here is a pure function of its arguments.  Matrices are plain
``numpy`` arrays of shape ``(n, n)``; the batched helpers accept stacks of
shape ``(..., 2, 2)``.

The minors vector has a fixed layout that the rest of the package relies on:

* ``n = 2``: ``(F11, F12, F21, F22, det F)``
* ``n = 3``: the nine entries row-major, the nine cofactor entries row-major,
  then ``det F``.
"""

import math

import numpy as np

JACOBI_TOL = 1e-14


def as_matrix(F):
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1] or F.shape[0] not in (2, 3):
        raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError("matrix entries must be finite")
    return F


def determinant(F):
    """Cofactor-expansion determinant."""
    F = as_matrix(F)
    if F.shape[0] == 2:
        return F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
    return (F[0, 0] * (F[1, 1] * F[2, 2] - F[1, 2] * F[2, 1])
            - F[0, 1] * (F[1, 0] * F[2, 2] - F[1, 2] * F[2, 0])
            + F[0, 2] * (F[1, 0] * F[2, 1] - F[1, 1] * F[2, 0]))


def cofactor(F):
    """Cofactor matrix, so that ``cof(F) @ F.T == det(F) * I``."""
    F = as_matrix(F)
    if F.shape[0] == 2:
        return np.array([[F[1, 1], -F[1, 0]], [-F[0, 1], F[0, 0]]])
    C = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            rows = [r for r in range(3) if r != i]
            cols = [c for c in range(3) if c != j]
            sub = F[np.ix_(rows, cols)]
            C[i, j] = (-1) ** (i + j) * (sub[0, 0] * sub[1, 1] - sub[0, 1] * sub[1, 0])
    return C


def minors(F):
    """All minors of ``F`` in the documented fixed order."""
    F = as_matrix(F)
    if F.shape[0] == 2:
        return np.concatenate([F.ravel(), [determinant(F)]])
    return np.concatenate([F.ravel(), cofactor(F).ravel(), [determinant(F)]])


def _jacobi_eigvalsh(S, tol=JACOBI_TOL, max_sweeps=64):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    A = np.array(S, dtype=float)
    n = A.shape[0]
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(A[i, j] ** 2 for i in range(n) for j in range(n) if i != j))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
    return np.sort(np.diag(A))


def singular_values(F):
    """Singular values in nondecreasing order.

    For ``n = 2`` they follow from ``|F|^2`` and ``det F``; for ``n = 3`` from a
    Jacobi eigen-decomposition of ``F^T F``.
    """
    F = as_matrix(F)
    if F.shape[0] == 2:
        s = sv2(F[None])[0]
        return s
    ev = np.clip(_jacobi_eigvalsh(F.T @ F), 0.0, None)
    return np.sqrt(ev)


def sv2(F):
    """Batched 2x2 singular values, shape ``(..., 2)`` sorted ascending.

    Uses ``s1 + s2 = sqrt(|F|^2 + 2|det|)`` and ``s2 - s1 = sqrt(|F|^2 - 2|det|)``.
    """
    F = np.asarray(F, dtype=float)
    fro2 = np.einsum("...ij,...ij->...", F, F)
    d = np.abs(F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0])
    plus = np.sqrt(np.maximum(fro2 + 2.0 * d, 0.0))
    minus = np.sqrt(np.maximum(fro2 - 2.0 * d, 0.0))
    return np.stack([0.5 * (plus - minus), 0.5 * (plus + minus)], axis=-1)


def det2(F):
    F = np.asarray(F, dtype=float)
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def cof2(F):
    """Batched 2x2 cofactor; this is also ``d det / dF``."""
    F = np.asarray(F, dtype=float)
    C = np.empty_like(F)
    C[..., 0, 0] = F[..., 1, 1]
    C[..., 0, 1] = -F[..., 1, 0]
    C[..., 1, 0] = -F[..., 0, 1]
    C[..., 1, 1] = F[..., 0, 0]
    return C


def rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def signed_singular_sum(M):
    """``max_{R in SO(n)} tr(R^T M)``: singular values with the smallest one
    carrying the sign of ``det M``."""
    M = as_matrix(M)
    if M.shape[0] == 2:
        return math.hypot(M[0, 0] + M[1, 1], M[1, 0] - M[0, 1])
    s = singular_values(M)
    return s[1] + s[2] + math.copysign(1.0, determinant(M)) * s[0]


def dist_sq_to_SO_n_well(F, U):
    """Squared Frobenius distance from ``F`` to the well ``SO(n) U``.

    ``|F - RU|^2 = |F|^2 + |U|^2 - 2 tr(R^T F U^T)``, maximised over rotations.
    """
    F = as_matrix(F)
    U = as_matrix(U)
    if F.shape != U.shape:
        raise ValueError("F and U must have the same dimension")
    if determinant(U) <= 0:
        raise ValueError("well matrix U must have positive determinant")
    val = np.sum(F * F) + np.sum(U * U) - 2.0 * signed_singular_sum(F @ U.T)
    return max(val, 0.0)


def dist_sq_to_SO2_well_batch(F, U):
    """Batched version of :func:`dist_sq_to_SO_n_well` for ``n = 2``."""
    F = np.asarray(F, dtype=float)
    M = F @ np.asarray(U, dtype=float).T
    conf = np.hypot(M[..., 0, 0] + M[..., 1, 1], M[..., 1, 0] - M[..., 0, 1])
    val = np.einsum("...ij,...ij->...", F, F) + np.sum(U * U) - 2.0 * conf
    return np.maximum(val, 0.0)


def nearest_rotation_2d(M):
    """Rotation maximising ``tr(R^T M)`` for a batch of 2x2 matrices."""
    M = np.asarray(M, dtype=float)
    a = M[..., 0, 0] + M[..., 1, 1]
    b = M[..., 1, 0] - M[..., 0, 1]
    r = np.hypot(a, b)
    pos = r > 0
    r = np.where(pos, r, 1.0)
    # any rotation is optimal when the conformal part vanishes; pick the identity
    c, s = np.where(pos, a / r, 1.0), np.where(pos, b / r, 0.0)
    R = np.empty_like(M)
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    return R
