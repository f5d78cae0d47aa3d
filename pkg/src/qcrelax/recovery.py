"""Recovery sequences assembled from laminates.

The pieces are the translation selection for the composed laminate, the exact
composition ``z = u o v`` of a piecewise-affine field with a laminate map, a
raster-driven disjoint-ball cover, and the round-by-round recovery loop that
combines them.

Coordinates: a laminate template lives on the polygon inscribed in the unit
disc.  A patch of radius ``rho`` centred at ``a0`` is the map

    v(x) = a0 + rho * vhat((x - a0) / rho),

which fixes the polygon boundary, and ``z = u o v`` there.  Outside the patch
polygon ``z = u``.
"""

from dataclasses import dataclass, field
import csv
import math

import numba
import numpy as np
from scipy import ndimage, optimize
from scipy.signal import correlate
import shapely

from . import linalg
from .construction import (ConstructionError, LaminateSpec, laminate_template, nematic_laminate,
                           solve_twinning)
from .energies import INF, NematicEnergy, TwoWellEnergy, make_theta_zero
from .mesh import MeshField, edge_matrix, inv2, triangle_areas

ORIENTATION = "orientation"
INCOMPRESSIBLE = "incompressible"
SUBMULTIPLICATIVE = "submultiplicative"
MODES = (ORIENTATION, INCOMPRESSIBLE, SUBMULTIPLICATIVE)
DISC_SEGMENTS = 64


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")


def disc_polygon(center, radius, quad_segs=DISC_SEGMENTS):
    return shapely.Point(float(center[0]), float(center[1])).buffer(radius, quad_segs=quad_segs)


def cell_polygons(mesh, cells=None):
    tri = mesh.triangles if cells is None else mesh.triangles[cells]
    return shapely.polygons(mesh.vertices[tri])


def _cells_near(mesh, center, radius):
    P = mesh.vertices[mesh.triangles]
    lo, hi = P.min(axis=1), P.max(axis=1)
    c = np.asarray(center, float)
    return np.flatnonzero(np.all(lo <= c + radius, axis=1) & np.all(hi >= c - radius, axis=1))


def overlap_areas(mesh, region, cells=None):
    """Cells of ``mesh`` meeting the shapely ``region`` and their overlap areas."""
    if cells is None:
        b = region.bounds
        c = 0.5 * np.array([b[0] + b[2], b[1] + b[3]])
        cells = _cells_near(mesh, c, 0.5 * max(b[2] - b[0], b[3] - b[1]))
    polys = cell_polygons(mesh, cells)
    a = shapely.area(shapely.intersection(polys, region))
    keep = a > 0
    return cells[keep], a[keep]


# -- translation selection ----------------------------------------------------

@dataclass
class CellFunction:
    """A nonnegative function, constant on each cell of ``mesh``."""

    mesh: MeshField
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.shape != (len(self.mesh.triangles),):
            raise ValueError("one value per cell is required")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("cell function must be finite and nonnegative")

    def integral(self, region=None):
        if region is None:
            return float(np.sum(self.mesh.areas * self.values))
        cells, a = overlap_areas(self.mesh, region)
        return float(np.sum(a * self.values[cells]))

    def rasterize(self, center, h, half, region):
        """Pixel averages ``int_{pixel and region} f / h^2`` on the pixels
        centred at ``center + h (i, j)``, ``|i|, |j| <= half``; array index
        ``[i + half, j + half]``."""
        n = 2 * half + 1
        out = np.zeros((n, n))
        b = region.bounds
        near = _cells_near(self.mesh, 0.5 * np.array([b[0] + b[2], b[1] + b[3]]),
                           0.5 * max(b[2] - b[0], b[3] - b[1]))
        if not np.any(self.values[near] > 0):
            return out
        cells, _ = overlap_areas(self.mesh, region, near)
        cells = cells[self.values[cells] > 0]
        pieces = shapely.intersection(cell_polygons(self.mesh, cells), region)
        idx = np.arange(-half, half + 1)
        I, J = np.meshgrid(idx, idx, indexing="ij")
        cx = center[0] + h * I.ravel()
        cy = center[1] + h * J.ravel()
        boxes = shapely.box(cx - h / 2, cy - h / 2, cx + h / 2, cy + h / 2)
        tree = shapely.STRtree(pieces)
        bi, pi = tree.query(boxes, predicate="intersects")
        a = shapely.area(shapely.intersection(boxes[bi], pieces[pi]))
        out.ravel()[:] = np.bincount(bi, weights=a * self.values[cells][pi], minlength=n * n)
        return out / (h * h)


_LATTICES = {}


def candidate_lattice(r, max_points=1000):
    """Square lattice ``h Z^2`` restricted to the open disc of radius ``r``.

    The spacing is the smallest one (from ``r sqrt(pi / max_points)`` up)
    with at most ``max_points`` points and ``N h^2 >= pi r^2``; the second
    condition makes the lattice average of the translated integrals sit below
    the continuous bound.  Points are returned in lexicographic order of
    their integer coordinates.
    """
    if max_points not in _LATTICES:
        _LATTICES[max_points] = _unit_lattice(max_points)
    s, offsets = _LATTICES[max_points]
    return s * r, offsets


def _unit_lattice(max_points):
    h0 = math.sqrt(math.pi / max_points)
    for i in range(2000):
        h = h0 * (1.0 + 5e-4 * i)
        L = int(math.ceil(1.0 / h))
        g = np.arange(-L, L + 1)
        I, J = np.meshgrid(g, g, indexing="ij")
        inside = (I * I + J * J) * h * h < 1.0
        N = int(inside.sum())
        if N <= max_points and N * h * h >= math.pi:
            return h, np.column_stack([I[inside], J[inside]])
    raise ConstructionError("could not build a translation lattice")


@dataclass
class Quadrature:
    """Points ``psi(x')``, weights and ``g(x')`` describing ``int g(x') f(psi(x') + a0) dx'``."""

    points: np.ndarray
    weights: np.ndarray
    g: np.ndarray

    @property
    def g_integral(self):
        return float(np.sum(self.weights * self.g))


def psi_quadrature(psi, g_cells):
    """Centroid rule on a MeshField ``psi`` (vertices ``x'``, values ``psi(x')``)."""
    pts = psi.values[psi.triangles].mean(axis=1)
    return Quadrature(pts, psi.areas.copy(), np.asarray(g_cells, float))


@dataclass
class TranslationResult:
    a0: np.ndarray
    index: int
    value: float
    bound: float
    discrete_bound: float
    mean_value: float
    f_norm: float
    g_norm: float
    spacing: float
    candidates: np.ndarray
    values: np.ndarray

    @property
    def qualifying(self):
        return self.values <= self.bound * (1 + 1e-12) + 1e-300


def translated_integrals(f_pix, quad, h, offsets):
    """``h(a0) = sum_i w_i g_i f_pix(psi_i + a0 - x0)`` for all lattice offsets."""
    half = (f_pix.shape[0] - 1) // 2
    b = np.floor(quad.points / h + 0.5).astype(np.int64)
    K = int(np.abs(b).max(initial=0))
    L = int(np.abs(offsets).max(initial=0))
    if K + L > half:
        raise ConstructionError("quadrature points leave the raster of f")
    acc = np.zeros((2 * K + 1, 2 * K + 1))
    np.add.at(acc, (b[:, 0] + K, b[:, 1] + K), quad.weights * quad.g)
    sub = f_pix[half - K - L:half + K + L + 1, half - K - L:half + K + L + 1]
    if not np.any(sub):
        return np.zeros(len(offsets))
    full = correlate(sub, acc, mode="valid")
    return full[offsets[:, 0] + L, offsets[:, 1] + L]


def select_translation(f, quad, x0, r, max_candidates=1000):
    """First lattice ``a0 in B(x0, r)`` with

        int_{B(a0, r)} f(psi(x - a0) + a0) g(x - a0) dx <= |B_r|^{-1} ||f||_{L1(B(x0, 2r))} ||g||_{L1(B_r)}.

    ``f`` is a :class:`CellFunction` averaged onto pixels of the candidate
    lattice, ``quad`` a :class:`Quadrature` of ``g`` and ``psi`` on ``B_r``
    (centred at the origin, ``|psi| <= r``).  Each quadrature point visits
    every pixel at most once as ``a0`` runs over the lattice, so the lattice
    mean of the integrals is at most ``||f|| ||g|| / (N h^2)``, which the
    lattice choice keeps below the bound: a qualifying ``a0`` always exists.
    """
    x0 = np.asarray(x0, float)
    if np.any(np.linalg.norm(quad.points, axis=1) > r * (1 + 1e-9)):
        raise ConstructionError("range of psi leaves the closed ball")
    h, offsets = candidate_lattice(r, max_candidates)
    half = int(math.ceil(2 * r / h)) + 2
    region = disc_polygon(x0, 2 * r)
    f_pix = f.rasterize(x0, h, half, region)
    f_norm = float(f_pix.sum() * h * h)
    vals = translated_integrals(f_pix, quad, h, offsets)
    g_norm = quad.g_integral
    bound = f_norm * g_norm / (math.pi * r * r)
    dbound = f_norm * g_norm / (len(offsets) * h * h)
    ok = vals <= bound * (1 + 1e-12) + 1e-300
    if not np.any(ok):
        raise ConstructionError(f"no candidate meets bound: min {vals.min():.6g} > {bound:.6g}")
    i = int(np.argmax(ok))
    return TranslationResult(x0 + h * offsets[i], i, float(vals[i]), bound, dbound,
                             float(vals.mean()), f_norm, g_norm, h, x0 + h * offsets, vals)


def translation_trial(seed, r=0.1, mesh_n=16, max_candidates=1000):
    """A seeded ``(f, g, psi)`` instance of the translation selection.

    ``f`` is a sparse spiky cell function on ``square_mesh(mesh_n)``, ``psi``
    a randomly oriented twin laminate scaled to ``B_r`` with a random
    positive ``g`` per cell, and ``x0`` a random point with ``B(x0, 2r)``
    inside the unit square.
    """
    from .energies import make_theta_default, make_two_well
    from .construction import twin_laminate
    from .mesh import square_mesh

    rng = np.random.default_rng(seed)
    mesh = square_mesh(mesh_n)
    vals = rng.exponential(1.0, len(mesh.triangles)) * (rng.random(len(mesh.triangles)) < 0.3)
    vals[rng.integers(len(vals))] += 50.0
    f = CellFunction(mesh, vals)
    W = make_two_well(float(rng.uniform(1.2, 2.5)), make_theta_default())
    spec = twin_laminate(W, float(rng.uniform(0.1, 0.9)), k=int(rng.choice([4, 8, 16])))
    tpl = laminate_template(spec)
    g = rng.uniform(0.1, 3.0, len(tpl.triangles))
    quad = template_quadrature(tpl, r, g, float(rng.uniform(0.1, 3.0)))
    x0 = rng.uniform(2 * r, 1 - 2 * r, 2)
    return select_translation(f, quad, x0, r, max_candidates)


# -- laminate patches ---------------------------------------------------------

def _circular_segments(poly):
    """Centroids and areas of the circular segments between the unit circle
    and the edges of an inscribed polygon."""
    P = np.asarray(poly, float)
    Q = np.roll(P, -1, axis=0)
    c = np.linalg.norm(Q - P, axis=1)
    alpha = 2.0 * np.arcsin(np.clip(c / 2.0, 0.0, 1.0))
    area = 0.5 * (alpha - np.sin(alpha))
    mid = 0.5 * (P + Q)
    nrm = np.linalg.norm(mid, axis=1)
    keep = area > 1e-15
    d = 4.0 * np.sin(alpha[keep] / 2) ** 3 / (3.0 * (alpha[keep] - np.sin(alpha[keep])))
    pts = mid[keep] / nrm[keep, None] * d[:, None]
    return pts, area[keep]


def template_quadrature(tpl, rho, g_cells, g_outside):
    """Quadrature of ``(psi, g)`` for a template scaled to radius ``rho``:
    centroids of the image cells, plus the outer circular segments where
    ``psi`` is the identity."""
    key = "quadrature"
    if key not in tpl._cache:
        sp, sa = _circular_segments(tpl.polygon)
        tpl._cache[key] = (tpl.Y[tpl.triangles].mean(axis=1), tpl.areas, sp, sa)
    pts, w, sp, sa = tpl._cache[key]
    pts, w = rho * pts, rho * rho * w
    return Quadrature(np.vstack([pts, rho * sp]), np.concatenate([w, rho * rho * sa]),
                      np.concatenate([np.asarray(g_cells, float), np.full(len(sa), g_outside)]))


def _template_moment(tpl, key, fn):
    if key not in tpl._cache:
        tpl._cache[key] = fn()
    return tpl._cache[key]


def _affine_drift_sq(tpl, G):
    """``int_{unit polygon} |G (vhat - x)|^2`` by the edge-midpoint rule,
    exact for the piecewise-quadratic integrand."""
    D = (tpl.Y - tpl.X) @ np.asarray(G, float).T
    T = tpl.triangles
    m = 0.5 * (D[T[:, [0, 1, 2]]] + D[T[:, [1, 2, 0]]])
    return float(np.sum(tpl.areas * np.mean(np.sum(m * m, axis=-1), axis=1)))


@dataclass
class Patch:
    """``z = u o v`` on the polygon inscribed in ``B(center, rho)``.

    For an affine base (``G``, ``c`` set) the field is rebuilt on demand from
    the template; otherwise ``z`` holds the composed mesh.
    """

    center: np.ndarray
    rho: float
    template: object
    energy: float
    base_energy: float
    det_z: float
    det_u: float
    drift_sq: float
    min_det: float
    max_det_dev: float
    G: np.ndarray = None
    c: np.ndarray = None
    z: MeshField = None

    @property
    def region(self):
        return shapely.Polygon(self.center + self.rho * self.template.polygon)

    @property
    def area(self):
        return self.rho ** 2 * self.template.polygon_area

    def field(self):
        if self.z is not None:
            return self.z
        X = self.center + self.rho * self.template.X
        Y = self.center + self.rho * self.template.Y
        return MeshField(X, self.template.triangles, Y @ self.G.T + self.c)


def _affine_on(u, center, radius, rtol=1e-13):
    cells = _cells_near(u, center, radius)
    grads = u.gradients()[cells]
    G = grads[0]
    if np.all(np.abs(grads - G) <= rtol * max(1.0, np.abs(G).max())):
        X0 = u.vertices[u.triangles[cells[0], 0]]
        c = u.values[u.triangles[cells[0], 0]] - G @ X0
        return G, c
    return None


def compose(u, phi, a0, F, W=None, tol=1e-9):
    """``z(x) = u(F^{-1} phi(x - a0) + a0)`` on the patch carried by ``phi``.

    ``phi`` is a MeshField centred at the origin with ``phi = F x`` on the
    boundary of its polygon.  The result is exact: where ``u`` is affine on
    the patch it is ``G v + c`` on the mesh of ``phi``; otherwise the image
    of every cell of ``phi`` is intersected with the cells of ``u`` and each
    piece is pulled back by the affine ``v`` of its cell, so the gradient on
    each piece is ``Du(v) Dv`` (chain rule).
    """
    F = linalg.as_matrix(F)
    a0 = np.asarray(a0, float)
    Finv = np.linalg.inv(F)
    rho = float(np.linalg.norm(phi.vertices, axis=1).max())
    Xp = phi.vertices + a0
    Yv = phi.values @ Finv.T + a0
    if np.any(np.linalg.norm(Yv - a0, axis=1) > rho * (1 + tol)):
        raise ConstructionError("range of v leaves the closed ball")
    if np.any(triangle_areas(Yv, phi.triangles) <= 0):
        raise ConstructionError("v is not orientation preserving")
    aff = _affine_on(u, a0, rho)
    if aff is not None:
        G, c = aff
        return MeshField(Xp, phi.triangles, Yv @ G.T + c)
    return _compose_overlay(u, Xp, Yv, phi.triangles, rho)


def _compose_overlay(u, Xp, Yv, tri, rho):
    cells = _cells_near(u, Yv.mean(axis=0), rho * 1.01)
    cpoly = cell_polygons(u, cells)
    img = shapely.polygons(Yv[tri])
    tree = shapely.STRtree(cpoly)
    ti, ci = tree.query(img, predicate="intersects")
    pieces = shapely.intersection(img[ti], cpoly[ci])
    pieces = shapely.orient_polygons(pieces)
    parts, pidx = shapely.get_parts(pieces, return_index=True)
    poly = shapely.get_type_id(parts) == 3
    parts, pidx = parts[poly], pidx[poly]
    keep = shapely.area(parts) > 1e-14 * rho * rho
    parts, pidx = parts[keep], pidx[keep]
    ti, ci = ti[pidx], cells[ci[pidx]]
    coords, owner = shapely.get_coordinates(shapely.get_exterior_ring(parts), return_index=True)
    counts = np.bincount(owner, minlength=len(parts))
    last = np.cumsum(counts) - 1
    drop = np.zeros(len(coords), bool)
    drop[last] = True
    coords, owner = coords[~drop], owner[~drop]
    counts = counts - 1
    start = np.cumsum(counts) - counts
    # pull back each image vertex through the affine v of its template cell
    EX = edge_matrix(Xp, tri)
    EY = edge_matrix(Yv, tri)
    Minv = EX @ inv2(EY)
    T0 = tri[ti[owner], 0]
    pre = Xp[T0] + np.einsum("mij,mj->mi", Minv[ti[owner]], coords - Yv[T0])
    G = u.gradients()[ci]
    U0 = u.values[u.triangles[ci, 0]]
    X0 = u.vertices[u.triangles[ci, 0]]
    vals = U0[owner] + np.einsum("mij,mj->mi", G[owner], coords - X0[owner])
    ntri = counts - 2
    piece = np.repeat(np.arange(len(parts)), ntri)
    k = np.arange(len(piece)) - np.repeat(np.cumsum(ntri) - ntri, ntri) + 1
    s = start[piece]
    T = np.column_stack([s, s + k, s + k + 1])
    a = triangle_areas(pre, T)
    T = T[a > 1e-15 * rho * rho]
    return MeshField(pre, T, vals)


def make_patch(u, tpl, center, rho, F, W, affine=None):
    """Compose ``u`` with the template at ``(center, rho)`` and record the
    integrals the recovery bookkeeping needs."""
    center = np.asarray(center, float)
    F = linalg.as_matrix(F)
    aff = _affine_on(u, center, rho) if affine is None else affine
    poly_area = rho * rho * tpl.polygon_area
    Dv = tpl.Dv()
    if aff is not None:
        G, c = aff
        key = ("patch", id(W), G.tobytes())

        def moments():
            M = G @ Dv
            w = W.batch(M)
            d = linalg.det2(M)
            return (float(np.sum(tpl.areas * w)), float(np.sum(tpl.areas * d)), float(d.min()),
                    float(np.abs(d - 1.0).max()), _affine_drift_sq(tpl, G))
        e, dz, dmin, ddev, drift = _template_moment(tpl, key, moments)
        wG = float(W(G))
        return Patch(center, rho, tpl, rho * rho * e, wG * poly_area, rho * rho * dz,
                     float(linalg.determinant(G)) * poly_area, rho ** 4 * drift, dmin, ddev,
                     G=G, c=c)
    phi = tpl.field(radius=rho, G=F)
    z = compose(u, phi, center, F)
    region = shapely.Polygon(center + rho * tpl.polygon)
    cells, a = overlap_areas(u, region)
    gu = u.gradients()[cells]
    base_e = float(np.sum(a * W.batch(gu)))
    det_u = float(np.sum(a * linalg.det2(gu)))
    dz = z.dets()
    # drift by the centroid rule on the composed pieces
    cen = z.barycenters()
    diff = z.values[z.triangles].mean(axis=1) - u.evaluate(cen)
    drift = float(np.sum(z.areas * np.sum(diff * diff, axis=1)))
    return Patch(center, rho, tpl, z.energy(W), base_e, float(np.sum(z.areas * dz)), det_u,
                 drift, float(dz.min()), float(np.abs(dz - 1.0).max()), z=z)


class PatchedField:
    """A base field ``u`` modified on disjoint patches."""

    def __init__(self, base, patches=None):
        self.base = base
        self.patches = list(patches or [])

    def add(self, patch):
        self.patches.append(patch)

    def snapshot(self):
        return PatchedField(self.base, self.patches)

    def energy(self, W):
        return self.base.energy(W) + sum(p.energy - p.base_energy for p in self.patches)

    def integral_det(self):
        return self.base.integral_det() + sum(p.det_z - p.det_u for p in self.patches)

    def l2_drift(self):
        return math.sqrt(sum(p.drift_sq for p in self.patches))

    def min_det(self):
        m = float(self.base.dets().min())
        return min([m] + [p.min_det for p in self.patches])

    def max_det_dev(self):
        m = float(np.abs(self.base.dets() - 1.0).max())
        return max([m] + [p.max_det_dev for p in self.patches])

    def boundary_values(self):
        b = self.base.boundary_vertices()
        return self.base.vertices[b], self.base.values[b]

    def to_meshfield(self):
        """One MeshField (non-conforming across patch boundaries, continuous
        as a function): base cells clipped by the patches plus patch meshes."""
        if not self.patches:
            return self.base
        holes = shapely.union_all([p.region for p in self.patches])
        polys = cell_polygons(self.base)
        rest = shapely.difference(polys, holes)
        V, T, U = [], [], []
        off = 0
        G = self.base.gradients()
        for c in np.flatnonzero(~shapely.is_empty(rest) & (shapely.area(rest) > 1e-16)):
            tris = shapely.get_parts(shapely.constrained_delaunay_triangles(rest[c]))
            if len(tris) == 0:
                continue
            co = shapely.get_coordinates(shapely.get_exterior_ring(tris)).reshape(len(tris), 4, 2)[:, :3]
            a = 0.5 * ((co[:, 1, 0] - co[:, 0, 0]) * (co[:, 2, 1] - co[:, 0, 1])
                       - (co[:, 1, 1] - co[:, 0, 1]) * (co[:, 2, 0] - co[:, 0, 0]))
            co[a < 0] = co[a < 0][:, ::-1]
            co = co[np.abs(a) > 1e-16]
            pts = co.reshape(-1, 2)
            i0 = self.base.triangles[c, 0]
            val = self.base.values[i0] + (pts - self.base.vertices[i0]) @ G[c].T
            V.append(pts)
            U.append(val)
            T.append(off + np.arange(len(pts)).reshape(-1, 3))
            off += len(pts)
        for p in self.patches:
            f = p.field()
            V.append(f.vertices)
            U.append(f.values)
            T.append(off + f.triangles)
            off += len(f.vertices)
        return MeshField(np.vstack(V), np.vstack(T), np.vstack(U))


def null_lagrangian_defect(patch):
    """``|int (det Dz - det Du)|`` over the patch polygon."""
    return abs(patch.det_z - patch.det_u)


# -- choice of the laminate ---------------------------------------------------

def twin_split(W, F, tol=1e-8):
    """``F = R (t A + (1 - t) B)`` for a twin ``(A, B)`` of a two-well
    density and a rotation ``R``; returns a LaminateSpec or ``None``."""
    F = linalg.as_matrix(F)
    best = None
    for sol in solve_twinning(W.U1, W.U2):
        A, B = W.U2, sol.Q @ W.U1

        def resid(t):
            Ft = t * A + (1 - t) * B
            R = linalg.nearest_rotation_2d(F @ Ft.T)
            return float(np.linalg.norm(F - R @ Ft))
        res = optimize.minimize_scalar(resid, bounds=(0.0, 1.0), method="bounded",
                                       options={"xatol": 1e-14})
        t = float(res.x)
        if best is None or res.fun < best[0]:
            best = (res.fun, t, A, B, sol)
    r, t, A, B, sol = best
    if r > tol * max(1.0, np.linalg.norm(F)) or not 0.0 < t < 1.0:
        return None
    Ft = t * A + (1 - t) * B
    R = linalg.nearest_rotation_2d(F @ Ft.T)
    return LaminateSpec(R @ A, R @ B, t, R @ sol.a, sol.n)


def generic_split(W, F, incompressible=False, normals=12, seed=0):
    """Numerical first-order laminate: minimise ``t W(A) + (1 - t) W(B)``
    over ``A = F - (1 - t) a (x) n``, ``B = F + t a (x) n``.  In the
    incompressible case ``a`` is restricted to ``F n_perp`` multiples so that
    ``det A = det B = det F``."""
    F = linalg.as_matrix(F)
    scale = max(1.0, np.linalg.norm(F))

    def unpack(x):
        n = np.array([math.cos(x[0]), math.sin(x[0])])
        if incompressible:
            a = x[1] * (F @ np.array([-n[1], n[0]]))
            t = 1.0 / (1.0 + math.exp(-x[2]))
        else:
            a = np.array([x[1], x[2]])
            t = 1.0 / (1.0 + math.exp(-x[3]))
        return a, n, t

    def J(x):
        a, n, t = unpack(x)
        D = np.outer(a, n)
        v = W.batch(np.stack([F - (1 - t) * D, F + t * D]))
        if not np.all(np.isfinite(v)):
            return 1e30
        return t * v[0] + (1 - t) * v[1]

    best = None
    for phi in np.linspace(0.0, math.pi, normals, endpoint=False):
        n = np.array([math.cos(phi), math.sin(phi)])
        starts = ([[phi, s * scale, 0.0] for s in (-1.0, 1.0)] if incompressible else
                  [[phi, *(s * scale * (F @ m)), 0.0] for s in (-1.0, 1.0)
                   for m in (n, np.array([-n[1], n[0]]))])
        for x0 in starts:
            res = optimize.minimize(J, x0, method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
            if best is None or res.fun < best.fun:
                best = res
    a, n, t = unpack(best.x)
    D = np.outer(a, n)
    return LaminateSpec(F - (1 - t) * D, F + t * D, t, a, n), float(best.fun)


class LaminateLibrary:
    """Chooses ``phi_eta`` for a matrix ``F``.

    Returns ``None`` (the affine map ``F x``) when ``W(F) <= Wqc(F) + eta``;
    otherwise finds a rank-one split of ``F`` and walks the refinement ladder
    of stripe counts until the mean energy of the laminate is at most
    ``Wqc(F) + eta``.  Results are cached per ``F``.
    """

    def __init__(self, W, Wqc, eta, ladder=(4, 8, 16, 32, 64, 128), cap_height=1.0,
                 cap_resolution=4, incompressible=False):
        self.W, self.Wqc, self.eta = W, Wqc, float(eta)
        self.ladder = tuple(ladder)
        self.cap_height, self.cap_resolution = cap_height, cap_resolution
        self.incompressible = incompressible
        self._cache = {}
        self._values = {}

    def values(self, F):
        """Cached ``(W(F), Wqc(F))``."""
        F = linalg.as_matrix(F)
        key = F.tobytes()
        if key not in self._values:
            self._values[key] = (float(self.W(F)), float(self.Wqc(F)))
        return self._values[key]

    def split(self, F):
        W = self.W
        if isinstance(W, TwoWellEnergy) and W.lam > 1.0:
            spec = twin_split(W, F)
            if spec is not None:
                return spec
        if isinstance(W, NematicEnergy) and W.penalty is None:
            gamma2 = float(W.gamma[1])
            if linalg.sv2(F)[1] < gamma2:
                return nematic_laminate(F, gamma2)
        spec, _ = generic_split(W, F, incompressible=self.incompressible)
        return spec

    def __call__(self, F):
        F = linalg.as_matrix(F)
        key = np.round(F, 13).tobytes()
        if key in self._cache:
            out = self._cache[key]
            if isinstance(out, Exception):
                raise out
            return out
        try:
            out = self._choose(F)
        except ConstructionError as exc:
            self._cache[key] = exc
            raise
        self._cache[key] = out
        return out

    def _choose(self, F):
        w, wq = self.values(F)
        target = wq + self.eta
        if not math.isfinite(target):
            raise ConstructionError("relaxed energy is infinite at F")
        if w <= target:
            return None
        base = self.split(F)
        best = INF
        for k in self.ladder:
            spec = LaminateSpec(base.A, base.B, base.t, base.a, base.n, k, self.cap_height,
                                self.cap_resolution)
            tpl = laminate_template(spec)
            e = tpl.mean_energy(self.W, F)
            best = min(best, e)
            if e <= target:
                return tpl
        raise ConstructionError(f"no laminate reaches Wqc(F) + eta (best mean {best:.4g} > {target:.4g})")


def gamma_threshold(tpl, q=5.0):
    """Determinant level below which the laminate is treated as degenerate:
    the ``q``-th percentile of ``det Dv`` over cells."""
    return float(np.percentile(tpl.det_Dv(), q))


# -- covering -----------------------------------------------------------------

@dataclass
class CoverState:
    """Remaining region ``Omega_j`` and the disjoint balls chosen so far.

    ``dist`` holds, at every pixel centre, the exact distance to the
    complement of ``Omega_j`` (positive inside, clipped at ``cap``), kept up
    to date as closed discs are removed.  ``removed`` lists those discs;
    their union is exactly ``Omega \\ Omega_j``.
    """

    dist: np.ndarray
    origin: np.ndarray
    h: float
    domain_area: float
    cap: float
    balls: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    j: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def from_mesh(cls, mesh, pixels=512, cap=None):
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        h = float((hi - lo).max()) / pixels
        nx, ny = (int(math.ceil((hi[i] - lo[i]) / h - 1e-9)) for i in (0, 1))
        xs = lo[0] + h * (np.arange(nx) + 0.5)
        ys = lo[1] + h * (np.arange(ny) + 0.5)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        cell, _ = mesh.locate(pts)
        E = mesh.vertices[mesh.boundary_edges()]
        cap = float((hi - lo).max()) if cap is None else float(cap)
        d = np.full((nx, ny), cap)
        _segment_distance(d, lo[0], lo[1], h, np.ascontiguousarray(E[:, 0]),
                          np.ascontiguousarray(E[:, 1]))
        d = np.where(cell.reshape(nx, ny) >= 0, d, -1.0)
        return cls(d, lo, h, mesh.total_area, cap)

    @property
    def mask(self):
        return self.dist > 0

    def centres(self):
        nx, ny = self.dist.shape
        xs = self.origin[0] + self.h * (np.arange(nx) + 0.5)
        ys = self.origin[1] + self.h * (np.arange(ny) + 0.5)
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    @property
    def raster_area(self):
        return float(self.mask.sum()) * self.h * self.h

    @property
    def area(self):
        """Exact ``|Omega_j|``: the domain minus the removed closed discs."""
        return self.domain_area - sum(math.pi * r * r for _, r in self.removed)

    def copy(self):
        return CoverState(self.dist.copy(), self.origin, self.h, self.domain_area, self.cap,
                          list(self.balls), list(self.removed), self.j, list(self.history))

    def remove(self, centres, radii):
        if len(radii):
            c = np.asarray(centres, float).reshape(-1, 2)
            _carve(self.dist, self.origin[0], self.origin[1], self.h, c[:, 0].copy(),
                   c[:, 1].copy(), np.asarray(radii, float), float(self.dist.max(initial=0.0)))


@numba.njit(cache=True)
def _segment_distance(D, ox, oy, h, P, Q):
    """``D = min(D, dist(x, [P_k, Q_k]))`` at every pixel centre."""
    nx, ny = D.shape
    for k in range(len(P)):
        ex, ey = Q[k, 0] - P[k, 0], Q[k, 1] - P[k, 1]
        ee = ex * ex + ey * ey
        for i in range(nx):
            px = ox + h * (i + 0.5) - P[k, 0]
            for j in range(ny):
                py = oy + h * (j + 0.5) - P[k, 1]
                t = (px * ex + py * ey) / ee if ee > 0 else 0.0
                t = min(1.0, max(0.0, t))
                dx, dy = px - t * ex, py - t * ey
                v = math.sqrt(dx * dx + dy * dy)
                if v < D[i, j]:
                    D[i, j] = v


@numba.njit(cache=True)
def _carve(D, ox, oy, h, cx, cy, r, cap):
    """``D = min(D, |x - c| - r)`` for every disc, on pixels where it can matter."""
    nx, ny = D.shape
    for k in range(len(r)):
        R = r[k] + cap
        i0 = max(0, int(math.floor((cx[k] - R - ox) / h)))
        i1 = min(nx, int(math.ceil((cx[k] + R - ox) / h)) + 1)
        j0 = max(0, int(math.floor((cy[k] - R - oy) / h)))
        j1 = min(ny, int(math.ceil((cy[k] + R - oy) / h)) + 1)
        for i in range(i0, i1):
            dx = ox + h * (i + 0.5) - cx[k]
            for j in range(j0, j1):
                dy = oy + h * (j + 0.5) - cy[k]
                v = math.sqrt(dx * dx + dy * dy) - r[k]
                if v < D[i, j]:
                    D[i, j] = v


@numba.njit(cache=True)
def _greedy_pack(cx, cy, R, bx, by, br, nb, cell, gx0, gy0, ngx, ngy, head, nxt, target, covered):
    """Largest-first disjoint selection.  ``bx, by, br`` hold the ``nb``
    balls accepted so far, hashed in ``head``/``nxt`` on a grid of size
    ``cell`` (at least twice the largest radius)."""
    for k in range(len(cx)):
        if covered >= target:
            break
        x, y, r = cx[k], cy[k], R[k]
        gi = int((x - gx0) / cell)
        gj = int((y - gy0) / cell)
        ok = True
        for di in range(-1, 2):
            if not ok:
                break
            for dj in range(-1, 2):
                ii, jj = gi + di, gj + dj
                if ii < 0 or jj < 0 or ii >= ngx or jj >= ngy:
                    continue
                q = head[ii * ngy + jj]
                while q >= 0:
                    dx, dy = bx[q] - x, by[q] - y
                    s = br[q] + r
                    if dx * dx + dy * dy < s * s:
                        ok = False
                        break
                    q = nxt[q]
                if not ok:
                    break
        if ok:
            bx[nb], by[nb], br[nb] = x, y, r
            c = gi * ngy + gj
            nxt[nb] = head[c]
            head[c] = nb
            nb += 1
            covered += math.pi * r * r
    return nb, covered


def _radius_values(radius, pts, idx):
    if callable(radius):
        return np.asarray(radius(pts), float)
    r = np.asarray(radius, float)
    if r.ndim == 0:
        return np.full(len(pts), float(r))
    return r.ravel()[idx]


def select_balls(state, radius, fill=0.5, min_pixels=2.0, max_batches=6):
    """Disjoint open balls inside ``Omega_j`` centred at pixel centres,
    covering at least ``fill`` of ``|Omega_j|`` when the resolution allows.

    ``radius`` is a number, an array on the raster, or a callable on points.
    Each batch visits pixels largest-radius-first, where the radius is the
    smaller of ``radius(x)`` and the exact distance to the complement of
    ``Omega_j`` and of the balls already taken; balls smaller than
    ``min_pixels`` pixels are not used.
    """
    h = state.h
    D = state.dist.copy()
    target = fill * state.area
    C = state.centres().reshape(-1, 2)
    out = np.empty((0, 3))
    covered = 0.0
    rmin = min_pixels * h
    idx_all = np.flatnonzero(D.ravel() >= rmin)
    rad_all = _radius_values(radius, C[idx_all], idx_all)
    rmax = None
    for _ in range(max_batches):
        if covered >= target:
            break
        Dv = D.ravel()[idx_all]
        R = np.minimum(rad_all, Dv) * (1.0 - 1e-12)
        keep = R >= rmin
        if not keep.any():
            break
        idx_all, rad_all, R = idx_all[keep], rad_all[keep], R[keep]
        order = np.lexsort((idx_all, -R))
        pts, Rs = C[idx_all[order]], R[order]
        if rmax is None:
            rmax = float(Rs[0])
        cell = 2.0 * rmax
        lo = state.origin - cell
        ngx = int(math.ceil((D.shape[0] * h + 2 * cell) / cell)) + 1
        ngy = int(math.ceil((D.shape[1] * h + 2 * cell) / cell)) + 1
        cap = len(out) + len(Rs)
        bx, by, br = np.zeros(cap), np.zeros(cap), np.zeros(cap)
        head = -np.ones(ngx * ngy, np.int64)
        nxt = -np.ones(cap, np.int64)
        nb = 0
        for x, y, r in out:
            bx[nb], by[nb], br[nb] = x, y, r
            c = int((x - lo[0]) / cell) * ngy + int((y - lo[1]) / cell)
            nxt[nb] = head[c]
            head[c] = nb
            nb += 1
        nb2, covered = _greedy_pack(pts[:, 0].copy(), pts[:, 1].copy(), Rs.copy(), bx, by, br, nb,
                                    cell, lo[0], lo[1], ngx, ngy, head, nxt, target, covered)
        new = np.column_stack([bx[nb:nb2], by[nb:nb2], br[nb:nb2]])
        if len(new) == 0:
            break
        out = np.vstack([out, new])
        _carve(D, state.origin[0], state.origin[1], h, new[:, 0].copy(), new[:, 1].copy(),
               new[:, 2].copy(), float(rmax))
    return out, covered


def vitali_round(state, radius, mode=ORIENTATION, removal=None, fill=0.5, min_pixels=2.0):
    """One covering round: disjoint balls ``B(x_k, r_k)`` in ``Omega_j``
    covering at least ``fill`` of it, then ``Omega_{j+1} = Omega_j`` minus
    the closed discs returned by ``removal(center, r)`` (default
    ``B(x_k, r_k / 2)`` for orientation-preserving covers and ``B(x_k, r_k)``
    for incompressible ones).  ``removal`` may return ``None`` to leave a
    ball in the region.
    """
    if mode not in MODES:
        raise ValueError("unknown cover mode")
    new = state.copy()
    before = state.area
    if not np.any(state.mask):
        new.j += 1
        new.history.append({"round": new.j, "balls": 0, "covered_fraction": 0.0,
                            "area": new.area, "raster_area": 0.0, "removed": 0.0,
                            "shortfall": fill * before})
        return new
    balls, covered = select_balls(state, radius, fill, min_pixels)
    if removal is None:
        factor = 1.0 if mode == INCOMPRESSIBLE else 0.5
        removal = lambda c, r: (c, factor * r)  # noqa: E731
    discs = []
    for x, y, r in balls:
        d = removal(np.array([x, y]), r)
        if d is not None:
            discs.append((np.asarray(d[0], float), float(d[1])))
    new.remove([c for c, _ in discs], [r for _, r in discs])
    new.balls.append(balls)
    new.removed.extend(discs)
    new.j += 1
    frac = covered / before if before > 0 else 0.0
    new.history.append({"round": new.j, "balls": len(balls), "covered_fraction": frac,
                        "area": new.area, "raster_area": new.raster_area,
                        "removed": before - new.area,
                        "shortfall": max(0.0, fill - frac) * before})
    return new


# -- recovery sequence --------------------------------------------------------

@dataclass
class LocalResult:
    ball: tuple
    center: np.ndarray
    rho: float
    status: str
    patch: Patch = None
    translation: TranslationResult = None
    energy: float = 0.0
    reference: float = 0.0
    message: str = ""


def _theta_of(W):
    th = getattr(W, "theta", None)
    return th if th is not None else make_theta_zero()


def qualification_field(u, W, mode, F_cells=None):
    """Cellwise integrand of the smallness test around a cell value ``F``:
    returns ``f(cells, F)``."""
    G = u.gradients()
    d = linalg.det2(G)
    theta = _theta_of(W)
    p = float(getattr(W, "p", 2.0))
    if mode == SUBMULTIPLICATIVE:
        wG = W.batch(G)

        def f(F):
            return (np.linalg.norm(G - F, axis=(1, 2))
                    + np.abs(wG - float(W(F))))
        return f
    tG = theta(d) if mode == ORIENTATION else np.zeros(len(G))

    def f(F):
        val = np.linalg.norm(G - F, axis=(1, 2)) ** p
        if mode == ORIENTATION:
            val = val + np.abs(tG - float(theta(linalg.determinant(F))))
        return val
    return f


@numba.njit(cache=True)
def _qual_radii(G, TH, cellid, use_theta, p, submult, WG, WF, radii, delta, h):
    """Largest ladder radius whose ball averages (and those of all smaller
    ladder radii) of the smallness integrand stay below ``delta``."""
    nx, ny = cellid.shape
    out = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            c = cellid[i, j]
            if c < 0:
                continue
            best = 0.0
            for ri in range(len(radii) - 1, -1, -1):
                r = radii[ri]
                m = int(r / h)
                s = 0.0
                cnt = 0
                for a in range(max(0, i - m), min(nx, i + m + 1)):
                    for b in range(max(0, j - m), min(ny, j + m + 1)):
                        if ((a - i) ** 2 + (b - j) ** 2) * h * h > r * r:
                            continue
                        q = cellid[a, b]
                        if q < 0:
                            continue
                        e = 0.0
                        for k in range(2):
                            for l in range(2):
                                e += (G[q, k, l] - G[c, k, l]) ** 2
                        e = math.sqrt(e)
                        if submult:
                            val = e + abs(WG[q] - WG[c])
                        else:
                            val = e ** p
                            if use_theta:
                                val += abs(TH[q] - TH[c])
                        s += val
                        cnt += 1
                if cnt == 0 or s / cnt > delta:
                    break
                best = r
            out[i, j] = best
    return out


def qualification_radius(u, W, mode, eta, delta, pixels=128, levels=6):
    """Raster of admissible ball radii: the largest ``eta 2^{-i}`` below
    ``eta`` such that the pixel-averaged smallness integrand, taken around
    the gradient of the cell containing the centre, is at most ``delta`` on
    that ball and on all smaller ladder balls."""
    st = CoverState.from_mesh(u, pixels)
    C = st.centres().reshape(-1, 2)
    cell, _ = u.locate(C)
    cell = cell.reshape(st.mask.shape)
    G = u.gradients()
    if np.all(np.abs(G - G[0]) <= 1e-13 * max(1.0, np.abs(G[0]).max())):
        return st, np.where(cell >= 0, eta * (1 - 1e-12), 0.0)
    theta = _theta_of(W)
    d = linalg.det2(G)
    TH = theta(d) if mode == ORIENTATION else np.zeros(len(G))
    TH = np.where(np.isfinite(TH), TH, 1e300)
    WG = W.batch(G) if mode == SUBMULTIPLICATIVE else np.zeros(len(G))
    radii = eta * (1 - 1e-12) * 0.5 ** np.arange(levels)[::-1]
    out = _qual_radii(G, TH, cell.astype(np.int64), mode == ORIENTATION,
                      float(getattr(W, "p", 2.0)), mode == SUBMULTIPLICATIVE, WG, 0.0,
                      radii, float(delta), st.h)
    return st, out


def _sample_raster(coarse_state, values, pts):
    q = np.floor((pts - coarse_state.origin) / coarse_state.h).astype(np.int64)
    nx, ny = values.shape
    q[:, 0] = np.clip(q[:, 0], 0, nx - 1)
    q[:, 1] = np.clip(q[:, 1], 0, ny - 1)
    return values[q[:, 0], q[:, 1]]


def local_construction(u, x0, r, W, Wqc, eta, mode, library, F=None, max_candidates=1000,
                       affine=None, smallness=None):
    """One ball of the recovery: pick ``phi_eta`` for ``F``, translate
    (orientation and submultiplicative modes), compose and check
    ``int_{B'} W(Dz) <= int_{B'} (Wqc(Du) + eta)``.

    The patch is accepted when that bound holds, or when it at least does
    not raise the energy; otherwise it is rejected and ``u`` is kept.
    ``affine`` (``(G, c)`` for a globally affine ``u``) and ``smallness``
    (from :func:`qualification_field`) let callers reuse precomputed data.
    """
    _check_mode(mode)
    x0 = np.asarray(x0, float)
    if F is None:
        F = u.gradient_at(x0[None])[0]
    local_aff = affine if affine is not None else _affine_on(u, x0, r)
    # With Du constant on the ball the translation average is trivially met at
    # a0 = x0, so the whole ball can be patched.
    rho = r if mode == INCOMPRESSIBLE or local_aff is not None else 0.5 * r
    try:
        tpl = library(F)
    except ConstructionError as exc:
        return LocalResult((x0, r), x0, rho, "failed", message=str(exc))
    if tpl is None:
        return LocalResult((x0, r), x0, rho, "affine")
    tr = None
    a0 = x0
    if mode != INCOMPRESSIBLE and local_aff is None:
        fx = (smallness or qualification_field(u, W, mode))(F)
        if mode == SUBMULTIPLICATIVE:
            Dv = tpl.Dv()
            g = 1.0 + W.batch(Dv)
            g_out = 1.0 + float(W(np.eye(2)))
        else:
            theta = _theta_of(W)
            g = 1.0 + theta(tpl.det_Dv())
            g_out = 1.0 + float(theta(1.0))
        quad = template_quadrature(tpl, rho, g, g_out)
        fx = np.where(np.isfinite(fx), fx, 0.0)
        tr = select_translation(CellFunction(u, fx), quad, x0, rho, max_candidates)
        a0 = tr.a0
    try:
        patch = make_patch(u, tpl, a0, rho, F, W, local_aff)
    except ConstructionError as exc:
        return LocalResult((x0, r), a0, rho, "failed", translation=tr, message=str(exc))
    aff = local_aff if local_aff is not None else _affine_on(u, a0, rho)
    if aff is not None:
        wG, wqG = library.values(aff[0])
        sliver = math.pi * rho * rho - patch.area
        e_disc = patch.energy + wG * sliver
        ref = (wqG + eta) * math.pi * rho * rho
        base = wG * math.pi * rho * rho
    else:
        cells, a = overlap_areas(u, disc_polygon(a0, rho))
        gu = u.gradients()[cells]
        wu = W.batch(gu)
        base = float(np.sum(a * wu))
        e_disc = patch.energy - patch.base_energy + base
        ref = float(np.sum(a * (Wqc.batch(gu) + eta)))
    ok_det = patch.min_det > 0 if mode != INCOMPRESSIBLE else patch.max_det_dev <= 1e-9
    if not ok_det or not math.isfinite(e_disc):
        return LocalResult((x0, r), a0, rho, "rejected", translation=tr, energy=e_disc,
                           reference=ref, message="constraint violated")
    if e_disc <= ref or e_disc <= base:
        return LocalResult((x0, r), a0, rho, "laminate", patch, tr, e_disc, ref)
    return LocalResult((x0, r), a0, rho, "rejected", translation=tr, energy=e_disc, reference=ref,
                       message="bound not met")


@dataclass
class TrajectoryRow:
    round: int
    energy: float
    relaxed_energy: float
    volume_remaining: float
    l2_drift: float
    bound: float
    min_det: float
    max_det_dev: float
    patches: int
    skipped: int


TRAJECTORY_COLUMNS = ("round", "energy", "relaxed_energy", "volume_remaining", "l2_drift", "bound",
                      "min_det", "max_det_dev", "patches", "skipped")


@dataclass
class RecoveryResult:
    iterates: list
    trajectory: list
    cover: CoverState
    locals: list
    eta: float
    delta: float
    mode: str

    @property
    def final(self):
        return self.iterates[-1]

    def write_csv(self, path):
        write_trajectory_csv(self.trajectory, path)


def write_trajectory_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            w.writerow([getattr(row, c) if isinstance(getattr(row, c), int) else repr(float(getattr(row, c)))
                        for c in TRAJECTORY_COLUMNS])


def recovery_sequence(u, W, Wqc, eta, mode=ORIENTATION, rounds=40, pixels=1024, delta=None,
                      library=None, fill=1.0, min_volume=0.0, qual_pixels=128, log=None):
    """Round-by-round recovery: each round covers the untouched region by
    disjoint balls of radius below ``eta`` on which ``u`` is close to the
    gradient ``F`` at the centre, replaces ``u`` on each ball by the
    composed laminate for ``F``, and removes the modified discs.

    Returns every iterate (as :class:`PatchedField`) together with the
    trajectory of energies, the relaxed reference ``int Wqc(Du)``, the
    remaining volume and the ``L^2`` distance to ``u``.
    """
    _check_mode(mode)
    if not eta > 0:
        raise ValueError("eta must be positive")
    delta = eta / 10.0 if delta is None else float(delta)
    dets = u.dets()
    if mode == INCOMPRESSIBLE:
        if np.any(np.abs(dets - 1.0) > 1e-9):
            raise ValueError("incompressible recovery needs det Du = 1 on every cell")
    elif np.any(dets <= 0):
        raise ValueError("recovery needs det Du > 0 on every cell")
    E0 = u.energy(W)
    if not math.isfinite(E0):
        raise ValueError("W must be finite on Du")
    if library is None:
        library = LaminateLibrary(W, Wqc, eta, incompressible=(mode == INCOMPRESSIBLE))
    Eqc = float(np.sum(u.areas * Wqc.batch(u.gradients())))
    area = u.total_area
    bound = Eqc + 2 * eta * area
    qstate, qrad = qualification_radius(u, W, mode, eta, delta, qual_pixels)
    state = CoverState.from_mesh(u, pixels)
    fld = PatchedField(u)
    iterates = [fld.snapshot()]
    traj = [TrajectoryRow(0, E0, Eqc, state.area, 0.0, bound, fld.min_det(), fld.max_det_dev(), 0, 0)]
    locals_ = []
    skipped = 0
    cover_mode = INCOMPRESSIBLE if mode == INCOMPRESSIBLE else ORIENTATION
    lo, hi = u.vertices.min(axis=0), u.vertices.max(axis=0)
    affine = _affine_on(u, 0.5 * (lo + hi), float(np.linalg.norm(hi - lo)))
    smallness = qualification_field(u, W, mode)
    radius = lambda pts: _sample_raster(qstate, qrad, pts)  # noqa: E731
    for _ in range(rounds):
        if state.area <= min_volume or state.raster_area <= 0:
            break

        def removal(c, r):
            nonlocal skipped
            res = local_construction(u, c, r, W, Wqc, eta, mode, library, affine=affine,
                                     smallness=smallness)
            locals_.append(res)
            if res.patch is not None:
                fld.add(res.patch)
            elif res.status in ("failed", "rejected"):
                skipped += 1
            return res.center, res.rho

        new = vitali_round(state, radius, cover_mode, removal=removal, fill=fill)
        if new.history[-1]["balls"] == 0:
            break
        state = new
        iterates.append(fld.snapshot())
        traj.append(TrajectoryRow(state.j, fld.energy(W), Eqc, state.area, fld.l2_drift(), bound,
                                  fld.min_det(), fld.max_det_dev(), len(fld.patches), skipped))
        if log is not None:
            log(traj[-1])
    return RecoveryResult(iterates, traj, state, locals_, eta, delta, mode)
