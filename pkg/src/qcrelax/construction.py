"""Explicit microstructures: twinning solutions, rank-one pairs and laminate
test maps with affine boundary data on a disc.

Laminate geometry
-----------------
Write ``x = xi * n + zeta * n_perp`` on the unit disc.  For ``F = tA + (1-t)B``
with ``B - A = a (x) n`` put ``b = F^{-1} a`` and let ``s`` be the zero-mean
sawtooth of period ``P = 2/k`` (slope ``-(1-t)`` on a fraction ``t`` of each
period, ``t`` elsewhere, ``s = 0`` on period boundaries).  In the bulk

    v(x) = x + b s(x . n),   D(Fv) = F + s' a (x) n  in  {A, B}.

Each period is a column of the inscribed polygon.  Near the top and bottom
chords a cap of height ``cap_height * P`` brings ``v`` back to the identity.
The across-layer part of the cap is the area-preserving map generated by a
C1 Powell-Sabin interpolant of the blended sawtooth potential, so it is
piecewise affine with ``det = 1`` on every cell; an along-layer shift (only
present when ``det A != det B``) is blended in on top.  Columns too short for
two caps keep ``v = id``.  Everything is done
once on the unit disc and rescaled, which is why patches reuse templates.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import brentq

from . import linalg
from .mesh import MeshField, triangle_areas


class TwinningError(ValueError):
    pass


class ConstructionError(RuntimeError):
    pass


# -- rank-one connections -----------------------------------------------------

@dataclass(frozen=True)
class TwinSolution:
    Q: np.ndarray
    a: np.ndarray
    n: np.ndarray
    angle: float

    def residual(self, U1, U2):
        return float(np.linalg.norm(self.Q @ U1 - U2 - np.outer(self.a, self.n)))


def _rank_one_factor(M):
    u, s, vt = np.linalg.svd(M)
    n = vt[0]
    if n[0] < 0 or (n[0] == 0 and n[1] < 0):
        n = -n
    return M @ n, n, s


def solve_twinning(U1, U2, tol=1e-10):
    """All rotations ``Q`` and vectors ``a, n`` (``|n| = 1``) with
    ``Q U1 - U2 = a (x) n``.

    ``det(Q(theta) U1 - U2)`` is a trigonometric polynomial
    ``alpha cos(theta) + beta sin(theta) + c`` whose roots are found in closed form.
    """
    U1 = linalg.as_matrix(U1)
    U2 = linalg.as_matrix(U2)
    if U1.shape != (2, 2) or U2.shape != (2, 2):
        raise ValueError("twinning is implemented for 2x2 wells")
    d1, d2 = linalg.determinant(U1), linalg.determinant(U2)
    if d1 <= 0 or d2 <= 0:
        raise ValueError("wells need positive determinant")
    scale = max(1.0, np.abs(U1).max(), np.abs(U2).max())
    if np.allclose(U1, U2, atol=tol * scale, rtol=0):
        raise TwinningError("wells identical")
    if abs(d1 - d2) > 1e-9 * scale**2:
        raise TwinningError("wells with different determinants are not rank-one connected by a rotation")

    def f(th):
        return linalg.determinant(linalg.rotation(th) @ U1 - U2)

    f0, fpi, fhalf = f(0.0), f(math.pi), f(math.pi / 2)
    c = 0.5 * (f0 + fpi)
    alpha = 0.5 * (f0 - fpi)
    beta = fhalf - c
    R = math.hypot(alpha, beta)
    if R == 0.0 or abs(c) > R * (1.0 + 1e-12):
        raise TwinningError("no rank-one connection")
    phi = math.atan2(beta, alpha)
    delta = math.acos(max(-1.0, min(1.0, -c / R)))
    sols = []
    for th in sorted({(phi + delta) % (2 * math.pi), (phi - delta) % (2 * math.pi)}):
        Q = linalg.rotation(th)
        M = Q @ U1 - U2
        a, n, s = _rank_one_factor(M)
        if np.linalg.norm(a) <= tol * scale:
            continue
        resid = np.linalg.norm(M - np.outer(a, n))
        if resid > tol * scale:
            raise TwinningError(f"no rank-one connection (residual {resid:.2e})")
        if any(abs(th - s0.angle) < 1e-12 for s0 in sols):
            continue
        sols.append(TwinSolution(Q, a, n, th))
    if not sols:
        raise TwinningError("wells identical up to rotation")
    return sols


def twin_angle_sweep(U1, U2, step=1e-4):
    """Brute-force reference: rotation angles where ``det(Q U1 - U2)``
    changes sign on a uniform angle grid."""
    th = np.arange(0.0, 2 * math.pi, step)
    c, s = np.cos(th), np.sin(th)
    Q = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    d = linalg.det2(Q @ np.asarray(U1, float) - np.asarray(U2, float))
    idx = np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))
    return th[idx] + 0.5 * step, d


@dataclass
class LaminateSpec:
    """Simple laminate between ``A`` (volume fraction ``t``) and ``B``."""

    A: np.ndarray
    B: np.ndarray
    t: float
    a: np.ndarray
    n: np.ndarray
    k: int = 16
    cap_height: float = 1.0
    cap_resolution: int = 4

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        self.B = np.asarray(self.B, float)
        self.a = np.asarray(self.a, float)
        self.n = np.asarray(self.n, float)
        nn = np.linalg.norm(self.n)
        if nn == 0:
            raise ValueError("normal must be nonzero")
        self.a, self.n = self.a * nn, self.n / nn
        D = self.B - self.A
        if np.linalg.norm(D - np.outer(self.a, self.n)) > 1e-10 * max(1.0, np.linalg.norm(D)):
            raise ValueError("B - A must equal a (x) n")
        s = np.linalg.svd(D, compute_uv=False)
        if s[1] > 1e-10 * max(s[0], 1e-300):
            raise ValueError("B - A must have rank one")
        if not 0.0 < self.t <= 1.0:
            raise ValueError("volume fraction must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be positive")

    @property
    def F(self):
        return self.t * self.A + (1.0 - self.t) * self.B

    def with_k(self, k):
        return LaminateSpec(self.A, self.B, self.t, self.a, self.n, k, self.cap_height,
                            self.cap_resolution)


def twin_laminate(W, t, k=16, solution=0, **kw):
    """Laminate between the wells of a two-well density along a twin."""
    sols = solve_twinning(W.U1, W.U2)
    sol = sols[solution]
    A = W.U2
    B = sol.Q @ W.U1
    return LaminateSpec(A, B, t, sol.a, sol.n, k, **kw)


def twin_segment_point(W, t, solution=0):
    """``F_t = t A + (1 - t) B`` on a twin segment of a two-well density."""
    return twin_laminate(W, t, solution=solution).F


def rank_one_segment_in_set(F, direction_of, level, target, normals=180, s_max=50.0):
    """Rank-one pair through ``F`` on the level set ``level(.) = target``.

    ``direction_of(n)`` gives the rank-one direction used with normal ``n``;
    along ``F + s D`` the function ``level`` must cross ``target`` once on each
    side of ``s = 0``.  The normal giving the shortest segment is returned as
    ``(A, B, t, a, n)`` with ``F = tA + (1 - t)B``.
    """
    F = np.asarray(F, float)
    if level(F) >= target:
        raise ConstructionError("F must lie strictly below the target level")
    best = None
    for phi in np.linspace(0.0, math.pi, normals, endpoint=False):
        n = np.array([math.cos(phi), math.sin(phi)])
        D = direction_of(F, n)

        def g(s):
            return level(F + s * D) - target

        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
            if hi > s_max:
                break
        lo = -1.0
        while g(lo) < 0:
            lo *= 2.0
            if lo < -s_max:
                break
        if g(hi) < 0 or g(lo) < 0:
            continue
        sp = brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-15)
        sm = brentq(g, lo, 0.0, xtol=1e-15, rtol=1e-15)
        length = (sp - sm) * np.linalg.norm(D)
        if best is None or length < best[0]:
            best = (length, sm, sp, D, n)
    if best is None:
        raise ConstructionError("no rank-one segment found")
    _, sm, sp, D, n = best
    A = F + sm * D
    B = F + sp * D
    t = sp / (sp - sm)
    a = (sp - sm) * (D @ n)
    return A, B, t, a, n


def nematic_laminate(F, gamma2, k=16, **kw):
    """Laminate with det-one rank-one directions ``F (n_perp (x) n)`` between
    two matrices with ``lambda_2 = gamma2`` (zero set of the relaxed density
    when ``lambda_2(F) < gamma2``)."""
    F = linalg.as_matrix(F)
    if abs(linalg.determinant(F) - 1.0) > 1e-9:
        raise ConstructionError("F must have determinant one")

    def direction_of(F, n):
        return np.outer(F @ np.array([-n[1], n[0]]), n)

    def level(G):
        return linalg.sv2(G)[1]

    A, B, t, a, n = rank_one_segment_in_set(F, direction_of, level, gamma2)
    return LaminateSpec(A, B, t, a, n, k, **kw)


# -- triangulation helpers ----------------------------------------------------

def _triangulate_strip(A, B, P, axis):
    """Triangulate the region between two vertex chains ordered by coordinate
    ``axis`` (the chains may share their end points).  Triangles are counter
    clockwise and use every vertex, so neighbouring pieces stay conforming."""
    out = []
    i = j = 0

    def emit(a, b, c):
        if len({a, b, c}) < 3:
            return
        e1, e2 = P[b] - P[a], P[c] - P[a]
        ar = e1[0] * e2[1] - e1[1] * e2[0]
        if ar == 0:
            raise ConstructionError("degenerate strip triangle")
        out.append((a, b, c) if ar > 0 else (a, c, b))

    while i < len(A) - 1 or j < len(B) - 1:
        if j == len(B) - 1 or (i < len(A) - 1 and P[A[i + 1], axis] <= P[B[j + 1], axis]):
            emit(A[i], A[i + 1], B[j])
            i += 1
        else:
            emit(A[i], B[j + 1], B[j])
            j += 1
    return out


# -- laminate template ---------------------------------------------------------

@dataclass
class LaminateTemplate:
    """``v`` on the polygon inscribed in the unit disc, as a pair of vertex
    arrays (preimage ``X``, image ``Y``) sharing one triangulation."""

    spec: LaminateSpec
    X: np.ndarray
    Y: np.ndarray
    triangles: np.ndarray
    polygon: np.ndarray
    layer_mask: np.ndarray
    active_columns: int
    equiareal: bool
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def areas(self):
        return triangle_areas(self.X, self.triangles)

    @property
    def polygon_area(self):
        P = self.polygon
        return 0.5 * float(np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1]))

    @property
    def layer_fraction(self):
        """Share of the unit disc where ``Dv`` is not one of the two
        laminate gradients (caps, idle columns and the outer slivers)."""
        return float((np.sum(self.areas[self.layer_mask]) + math.pi - self.polygon_area) / math.pi)

    def Dv(self):
        if "Dv" not in self._cache:
            from .mesh import edge_matrix, inv2
            self._cache["Dv"] = (edge_matrix(self.Y, self.triangles)
                                 @ inv2(edge_matrix(self.X, self.triangles)))
        return self._cache["Dv"]

    def det_Dv(self):
        return linalg.det2(self.Dv())

    def field(self, center=(0.0, 0.0), radius=1.0, G=None):
        """``phi = G v`` on the scaled polygon; ``G`` defaults to ``F``."""
        G = self.spec.F if G is None else np.asarray(G, float)
        c = np.asarray(center, float)
        Xs = c + radius * self.X
        Ys = c + radius * self.Y
        return MeshField(Xs, self.triangles, Ys @ G.T)

    def v_field(self, center=(0.0, 0.0), radius=1.0):
        c = np.asarray(center, float)
        return MeshField(c + radius * self.X, self.triangles, c + radius * self.Y)

    def mean_energy(self, W, G=None):
        """Average of ``W(G Dv)`` over the unit disc (slivers outside the
        polygon carry ``W(G)``)."""
        G = self.spec.F if G is None else np.asarray(G, float)
        key = ("energy", id(W), G.tobytes())
        if key not in self._cache:
            w = W.batch(G @ self.Dv())
            tot = float(np.sum(self.areas * w))
            sliver = math.pi - self.polygon_area
            tot += sliver * float(W.batch(G[None])[0]) if sliver > 0 else 0.0
            self._cache[key] = tot / math.pi
        return self._cache[key]


def _sawtooth(u, t, P):
    """Zero-mean sawtooth on one period ``u in [0, P]``."""
    b1, b2 = 0.5 * t * P, P - 0.5 * t * P
    return np.where(u <= b1, -(1 - t) * u,
                    np.where(u <= b2, -(1 - t) * b1 + t * (u - b1), (1 - t) * (P - u)))


def _sawtooth_integral(u, t, P):
    """Antiderivative of :func:`_sawtooth` vanishing at ``u = 0`` (and, by zero
    mean, at ``u = P``)."""
    b1, b2 = 0.5 * t * P, P - 0.5 * t * P
    s1 = -(1 - t) * b1
    I1 = -0.5 * (1 - t) * np.minimum(u, b1) ** 2
    v = np.clip(u - b1, 0.0, b2 - b1)
    I2 = s1 * v + 0.5 * t * v**2
    r = np.clip(P - u, 0.0, b1)
    I3 = np.where(u > b2, 0.5 * (1 - t) * (b1**2 - r**2), 0.0)
    return I1 + I2 + I3


# -- volume-preserving caps ----------------------------------------------------

def powell_sabin(V, tri, f, grad, boundary_midpoint=True):
    """Gradient of the C1 piecewise-quadratic Powell-Sabin interpolant.

    ``V`` are macro vertices, ``tri`` counter-clockwise macro triangles and
    ``f``, ``grad`` the Hermite data at the vertices.  Every macro triangle is
    split into six about its incenter; interior edges are split where the
    segment joining the two incenters crosses them, boundary edges at their
    midpoint.  The gradient is affine on every sub-triangle, so it is returned
    at the sub-triangle vertices: ``(points, gradients, subtriangles, kind)``
    with ``kind`` 0 for macro vertices, 1 for edge points and 2 for incenters.
    """
    V = np.asarray(V, float)
    tri = np.asarray(tri, dtype=np.int64)
    f = np.asarray(f, float)
    grad = np.asarray(grad, float)
    nv = len(V)
    a = np.linalg.norm(V[tri[:, 1]] - V[tri[:, 2]], axis=1)
    b = np.linalg.norm(V[tri[:, 2]] - V[tri[:, 0]], axis=1)
    c = np.linalg.norm(V[tri[:, 0]] - V[tri[:, 1]], axis=1)
    Z = (a[:, None] * V[tri[:, 0]] + b[:, None] * V[tri[:, 1]] + c[:, None] * V[tri[:, 2]]) / (a + b + c)[:, None]
    edges = {}
    for ti, (i0, i1, i2) in enumerate(tri):
        for u, v in ((i0, i1), (i1, i2), (i2, i0)):
            edges.setdefault((min(u, v), max(u, v)), []).append(ti)
    pts = list(V)
    grads = list(grad)
    kind = [0] * nv
    edge_pt = {}
    for (u, v), ts in edges.items():
        d = V[v] - V[u]
        if len(ts) == 2:
            z0, z1 = Z[ts[0]], Z[ts[1]]
            M = np.column_stack([d, z0 - z1])
            lam = np.linalg.solve(M, z0 - V[u])[0]
        elif len(ts) == 1:
            if not boundary_midpoint:
                raise ValueError("boundary edge split must be the midpoint")
            lam = 0.5
        else:
            raise ValueError("non-manifold macro triangulation")
        if not 0.0 < lam < 1.0:
            raise ConstructionError("Powell-Sabin split point outside its edge")
        R = V[u] + lam * d
        Du, Dv = grad[u] @ d, grad[v] @ d
        cu = f[u] + 0.5 * lam * Du
        cv = f[v] - 0.5 * (1.0 - lam) * Dv
        along = 2.0 * (cv - cu)
        gint = (1.0 - lam) * grad[u] + lam * grad[v]
        zref = Z[ts[0]]
        M = np.vstack([d, zref - R])
        gR = np.linalg.solve(M, np.array([along, gint @ (zref - R)]))
        edge_pt[(u, v)] = len(pts)
        pts.append(R)
        grads.append(gR)
        kind.append(1)
    sub = []
    for ti, vs in enumerate(tri):
        Pm = np.array([0.5 * (Z[ti] + V[v]) for v in vs])
        cm = np.array([f[v] + 0.5 * grad[v] @ (Z[ti] - V[v]) for v in vs])
        A = np.column_stack([np.ones(3), Pm])
        coef = np.linalg.solve(A, cm)
        zi = len(pts)
        pts.append(Z[ti])
        grads.append(coef[1:])
        kind.append(2)
        for u, v in ((vs[0], vs[1]), (vs[1], vs[2]), (vs[2], vs[0])):
            r = edge_pt[(u, v)] if (u, v) in edge_pt else edge_pt[(v, u)]
            sub.append((u, r, zi))
            sub.append((r, v, zi))
    return np.array(pts), np.array(grads), np.array(sub, dtype=np.int64), np.array(kind)


def generating_map(points, grads):
    """Preimage and image of the area-preserving map generated by ``phi``:
    ``X = (x, y + phi_x)``, ``Y = (x + phi_y, y)``.  On a sub-triangle where
    ``grad phi`` is affine both are affine with the same Jacobian determinant
    ``1 + phi_xy``, so ``Y o X^{-1}`` preserves every cell area exactly."""
    X = np.column_stack([points[:, 0], points[:, 1] + grads[:, 0]])
    Y = np.column_stack([points[:, 0] + grads[:, 1], points[:, 1]])
    return X, Y


def _cap_nodes(t, P, m):
    edges = [0.0, 0.5 * t * P, P - 0.5 * t * P, P]
    u = [0.0]
    for e in range(3):
        ln = edges[e + 1] - edges[e]
        if ln <= 1e-12 * P:
            continue
        cnt = max(1, int(math.ceil(ln / (P / m) - 1e-9)))
        u += list(edges[e] + ln * np.arange(1, cnt + 1) / cnt)
    u = np.array(u)
    u[-1] = P
    return u


def reference_cap(t, P, H, m, bzeta, bxi=0.0, slope=0.0):
    """Transition from the sheared bulk to the identity on the rectangle
    ``[0, P] x [0, H]`` in cap coordinates (``u`` across the layers, ``y`` up).

    Returns ``(X, Y, sub, bottom, side)``: vertex arrays, sub-triangles,
    indices of the bottom polyline ordered by ``u`` and a dict mapping side
    vertices to ``(0 or 1, level index in 0..2m)``.  The bottom preimage is
    ``y = -bzeta s(u)``, mapped to ``y = 0`` plus the along-layer shift.
    """
    u = _cap_nodes(t, P, m)
    yl = H * np.arange(m + 1) / m
    nx = len(u)
    Vm = np.array([(uu, yy) for uu in u for yy in yl])
    tri = []
    for p in range(nx - 1):
        for q in range(m):
            v00 = p * (m + 1) + q
            v10, v01, v11 = v00 + m + 1, v00 + 1, v00 + m + 2
            tri += [(v00, v10, v11), (v00, v11, v01)]
    eta = Vm[:, 1] / H
    w = 1.0 - (3 * eta**2 - 2 * eta**3)
    dw = -(6 * eta - 6 * eta**2) / H
    s = _sawtooth(Vm[:, 0], t, P)
    S = _sawtooth_integral(Vm[:, 0], t, P)
    f = -bzeta * S * w
    g = np.column_stack([-bzeta * s * w, -bzeta * S * dw])
    pts, grads, sub, kind = powell_sabin(Vm, tri, f, g)
    X, Y = generating_map(pts, grads)
    if bxi != 0.0:
        e = pts[:, 1] / H
        ww = 1.0 - (3 * e**2 - 2 * e**3)
        shift = bxi * _sawtooth(pts[:, 0], t, P) * ww
        Y = Y + shift[:, None] * np.array([1.0, -slope])
    tol = 1e-12 * P
    bottom = np.flatnonzero(np.abs(pts[:, 1]) < tol)
    bottom = bottom[np.argsort(pts[bottom, 0])]
    side = {}
    for i in np.flatnonzero((np.abs(pts[:, 0]) < tol) | (np.abs(pts[:, 0] - P) < tol)):
        side[int(i)] = (0 if pts[i, 0] < 0.5 * P else 1, int(round(pts[i, 1] / H * 2 * m)))
    return X, Y, sub, bottom, side


class _Registry:
    """Vertices keyed by their combinatorial role, so points shared by
    neighbouring pieces are created once."""

    def __init__(self):
        self.X, self.Y, self.index = [], [], {}

    def add(self, key, x, y):
        if key not in self.index:
            self.index[key] = len(self.X)
            self.X.append(np.asarray(x, float))
            self.Y.append(np.asarray(y, float))
        return self.index[key]


def build_template(spec):
    """Construct the laminate map on the unit disc for ``spec``."""
    F = spec.F
    if linalg.determinant(F) <= 0:
        raise ConstructionError("average gradient must have positive determinant")
    n = spec.n
    nperp = np.array([-n[1], n[0]])
    R = np.column_stack([n, nperp])  # local (xi, zeta) -> global
    b_glob = np.linalg.solve(F, spec.a)
    bxi, bzeta = float(b_glob @ n), float(b_glob @ nperp)
    b_loc = np.array([bxi, bzeta])
    equi = abs(bxi) <= 1e-12 * max(1.0, np.linalg.norm(b_loc))
    if equi:
        bxi = 0.0
    k, t = spec.k, spec.t
    P = 2.0 / k
    H = spec.cap_height * P
    m = spec.cap_resolution
    # symmetric column boundaries, so the map is exactly odd
    xs = np.array([-1.0 + P * i if 2 * i <= k else 1.0 - P * (k - i) for i in range(k + 1)])
    T = np.sqrt(np.maximum(1.0 - xs**2, 0.0))
    amp = abs(bzeta) * (1.0 - t) * 0.5 * t * P
    active = [t < 1.0 and min(T[j], T[j + 1]) - H - amp > 0.25 * H for j in range(k)]
    reg = _Registry()
    tris, layer = [], []

    def side_key(j, level, sign):
        if T[j] == 0.0:
            return ("S", j, "tip")
        return ("S", j, level, sign)

    def side_point(j, level, sign):
        """Vertex on the boundary line ``xi = xs[j]``: ``level`` in half
        steps of the cap grid, counted from the cap bottom ``T - H``."""
        z = sign * (T[j] - H + level * H / (2 * m))
        return reg.add(side_key(j, level, sign), (xs[j], z), (xs[j], z))

    caps = {}
    for j in range(k):
        if not active[j]:
            continue
        slope = (T[j + 1] - T[j]) / P
        Xc, Yc, sub, bottom, side = reference_cap(t, P, H, m, bzeta, bxi, slope)

        def to_local(Z):
            return np.column_stack([xs[j] + Z[:, 0], T[j] - H + slope * Z[:, 0] + Z[:, 1]])

        caps[j] = (to_local(Xc), to_local(Yc), sub, bottom, side)

    def cap_ids(j, sign):
        """Register the top cap of column ``j`` (``sign = 1``) or its point
        reflection, the bottom cap of column ``k - 1 - j``."""
        Xl, Yl, sub, bottom, side = caps[j]
        col = j if sign > 0 else k - 1 - j
        ids = np.empty(len(Xl), dtype=np.int64)
        for i in range(len(Xl)):
            if i in side:
                which, level = side[i]
                line = j + which if sign > 0 else k - j - which
                ids[i] = side_point(line, level, sign)
            else:
                ids[i] = reg.add(("C", col, sign, i), sign * Xl[i], sign * Yl[i])
        for tr in sub:
            tris.append(tuple(ids[tr]))
            layer.append(True)
        out = ids[bottom]
        return out if sign > 0 else out[::-1]

    for j in range(k):
        if active[j]:
            top = list(cap_ids(j, 1.0))
            bot = list(cap_ids(k - 1 - j, -1.0))  # ordered by increasing xi
            Xa = np.array(reg.X)
            b1, b2 = xs[j] + 0.5 * t * P, xs[j + 1] - 0.5 * t * P
            cuts = [xs[j], b1, b2, xs[j + 1]]
            for e in range(3):
                x0, x1 = cuts[e], cuts[e + 1]
                if x1 - x0 <= 1e-12 * P:
                    continue
                eps = 1e-9 * P
                lo = [i for i in bot if x0 - eps <= Xa[i, 0] <= x1 + eps]
                hi = [i for i in top if x0 - eps <= Xa[i, 0] <= x1 + eps]
                for tr in _triangulate_strip(lo, hi, Xa, 0):
                    tris.append(tr)
                    layer.append(False)
        else:
            chains = []
            for line in (j, j + 1):
                near = any(0 <= c < k and active[c] for c in (line - 1, line))
                lv = list(range(2 * m + 1)) if near else [2 * m]
                ch = [side_point(line, l, -1.0) for l in lv[::-1]] + [side_point(line, l, 1.0) for l in lv]
                chains.append([q for i, q in enumerate(ch) if i == 0 or q != ch[i - 1]])
            Xa = np.array(reg.X)
            for tr in _triangulate_strip(chains[0], chains[1], Xa, 1):
                tris.append(tr)
                layer.append(True)
    Xl = np.array(reg.X)
    Yl = np.array(reg.Y)
    X = Xl @ R.T
    Y = Yl @ R.T
    tri = np.array(tris, dtype=np.int64)
    poly = [(xs[j], -T[j]) for j in range(k + 1)] + [(xs[j], T[j]) for j in range(k - 1, 0, -1)]
    poly = np.array(poly) @ R.T
    tpl = LaminateTemplate(spec, X, Y, tri, poly, np.array(layer), int(sum(active)), equi)
    if np.any(tpl.areas <= 0) or np.any(triangle_areas(Y, tri) <= 0):
        raise ConstructionError("laminate mesh is not orientation preserving")
    if abs(tpl.areas.sum() - tpl.polygon_area) > 1e-12:
        raise ConstructionError("laminate mesh does not tile the polygon")
    return tpl

_TEMPLATES = {}


def laminate_template(spec):
    key = (spec.A.tobytes(), spec.B.tobytes(), spec.t, spec.a.tobytes(), spec.n.tobytes(),
           spec.k, spec.cap_height, spec.cap_resolution)
    if key not in _TEMPLATES:
        _TEMPLATES[key] = build_template(spec)
    return _TEMPLATES[key]


def build_laminate(spec, center=(0.0, 0.0), radius=1.0, resolution=None):
    """Piecewise-affine laminate ``phi`` with ``phi(x) = F x`` on the
    boundary of the inscribed polygon of ``B(center, radius)``.

    ``resolution`` (smallest cell size allowed for the stripes) guards
    against asking for more stripes than the mesh can carry.
    """
    if resolution is not None and 2.0 * radius / spec.k * min(spec.t, 1 - spec.t) / 2 < resolution:
        raise ConstructionError("resolution too coarse for k stripes")
    tpl = laminate_template(spec)
    c = np.asarray(center, float)
    fld = tpl.field(center=c, radius=radius)
    # phi(x) = F v(x) with v(x) = c + radius * vhat((x - c)/radius)
    return fld, tpl
