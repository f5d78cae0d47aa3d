"""Piecewise-affine vector fields on triangle meshes of planar domains."""

import json

import numpy as np

from . import linalg


def triangle_areas(X, tri):
    """Signed areas, positive for counter-clockwise triangles."""
    e1 = X[tri[:, 1]] - X[tri[:, 0]]
    e2 = X[tri[:, 2]] - X[tri[:, 0]]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def edge_matrix(X, tri):
    """Columns ``x1 - x0`` and ``x2 - x0`` per triangle, shape ``(m, 2, 2)``."""
    E = np.empty((len(tri), 2, 2))
    E[:, :, 0] = X[tri[:, 1]] - X[tri[:, 0]]
    E[:, :, 1] = X[tri[:, 2]] - X[tri[:, 0]]
    return E


def inv2(M):
    d = linalg.det2(M)
    return linalg.cof2(M).swapaxes(-1, -2) / d[..., None, None]


class MeshField:
    """A map ``u: mesh -> R^2``, affine on every triangle.

    ``structured`` carries ``(lo, hi, n, diagonal)`` for meshes built by
    :func:`square_mesh`, which enables constant-time point location.
    """

    def __init__(self, vertices, triangles, values=None, structured=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.values = self.vertices.copy() if values is None else np.asarray(values, dtype=float)
        if self.values.shape != self.vertices.shape:
            raise ValueError("one value per vertex is required")
        self.structured = structured
        self._areas = None
        self._inv = None
        self._boundary = None

    # geometry ---------------------------------------------------------------
    @property
    def areas(self):
        if self._areas is None:
            a = triangle_areas(self.vertices, self.triangles)
            if np.any(a <= 0):
                raise ValueError("mesh has degenerate or clockwise triangles")
            self._areas = a
        return self._areas

    @property
    def total_area(self):
        return float(self.areas.sum())

    def _inverse_edges(self):
        if self._inv is None:
            self._inv = inv2(edge_matrix(self.vertices, self.triangles))
        return self._inv

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def boundary_edges(self):
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        key = np.sort(e, axis=1)
        uniq, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return uniq[cnt == 1]

    def boundary_vertices(self):
        if self._boundary is None:
            self._boundary = np.unique(self.boundary_edges())
        return self._boundary

    # field quantities -------------------------------------------------------
    def with_values(self, values):
        f = MeshField(self.vertices, self.triangles, values, self.structured)
        f._areas, f._inv, f._boundary = self._areas, self._inv, self._boundary
        return f

    def gradients(self, values=None):
        vals = self.values if values is None else values
        return edge_matrix(vals, self.triangles) @ self._inverse_edges()

    def dets(self):
        return linalg.det2(self.gradients())

    def energy(self, W, per_cell=False):
        w = W.batch(self.gradients())
        if per_cell:
            return w
        return float(np.sum(self.areas * w))

    def integral_det(self):
        return float(np.sum(self.areas * self.dets()))

    def mean_gradient(self):
        return np.einsum("m,mij->ij", self.areas, self.gradients()) / self.total_area

    # evaluation -------------------------------------------------------------
    def locate(self, points):
        """Triangle index and barycentric coordinates for each point; ``-1``
        for points outside the mesh."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        if self.structured is not None:
            return self._locate_structured(P)
        return self._locate_generic(P)

    def _locate_structured(self, P):
        lo, hi, n, diag = self.structured
        lo, hi = np.asarray(lo), np.asarray(hi)
        h = (hi - lo) / n
        q = (P - lo) / h
        inside = np.all((q >= -1e-12) & (q <= n + 1e-12), axis=1)
        ij = np.clip(np.floor(q).astype(np.int64), 0, n - 1)
        fr = q - ij
        if diag == "anti":
            upper = fr[:, 0] + fr[:, 1] > 1.0
        else:
            upper = fr[:, 1] > fr[:, 0]
        cell = 2 * (ij[:, 1] * n + ij[:, 0]) + upper
        cell = np.where(inside, cell, -1)
        bary = self._barycentric(np.where(inside, cell, 0), P)
        return cell, bary

    def _barycentric(self, cell, P):
        tri = self.triangles[cell]
        X0 = self.vertices[tri[:, 0]]
        Minv = self._inverse_edges()[cell]
        lam = np.einsum("mij,mj->mi", Minv, P - X0)
        return np.column_stack([1.0 - lam.sum(axis=1), lam])

    def _locate_generic(self, P, tol=1e-12):
        bb_lo = self.vertices[self.triangles].min(axis=1)
        bb_hi = self.vertices[self.triangles].max(axis=1)
        cell = np.full(len(P), -1, dtype=np.int64)
        order = np.argsort(bb_lo[:, 0])
        for start in range(0, len(P), 4096):
            chunk = P[start:start + 4096]
            lo_idx = np.searchsorted(bb_lo[order, 0], chunk[:, 0] + tol, side="right")
            for r, p in enumerate(chunk):
                cand = order[:lo_idx[r]]
                cand = cand[(bb_hi[cand, 0] >= p[0] - tol) & (bb_lo[cand, 1] <= p[1] + tol)
                            & (bb_hi[cand, 1] >= p[1] - tol)]
                if len(cand) == 0:
                    continue
                b = self._barycentric(cand, np.repeat(p[None], len(cand), 0))
                ok = np.all(b >= -1e-10, axis=1)
                if np.any(ok):
                    cell[start + r] = cand[np.argmax(ok)]
        bary = self._barycentric(np.where(cell >= 0, cell, 0), P)
        return cell, bary

    def evaluate(self, points):
        """Field values at arbitrary points inside the mesh."""
        cell, bary = self.locate(points)
        if np.any(cell < 0):
            raise ValueError("evaluation point outside the mesh")
        tri = self.triangles[cell]
        return np.einsum("mk,mkj->mj", bary, self.values[tri])

    def gradient_at(self, points):
        cell, _ = self.locate(points)
        if np.any(cell < 0):
            raise ValueError("evaluation point outside the mesh")
        return self.gradients()[cell]

    # io ---------------------------------------------------------------------
    def to_dict(self):
        return {"vertices": self.vertices.tolist(), "triangles": self.triangles.tolist(),
                "values": self.values.tolist()}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d):
        return cls(d["vertices"], d["triangles"], d["values"])


def square_mesh(n, lo=(0.0, 0.0), hi=(1.0, 1.0), diagonal="anti"):
    """``n x n`` squares, each cut into two counter-clockwise triangles.

    ``diagonal="anti"`` cuts along ``(1, -1)`` (edges on lines ``x + y = c``),
    ``"main"`` along ``(1, 1)``.
    """
    if diagonal not in ("anti", "main"):
        raise ValueError("diagonal must be 'anti' or 'main'")
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    xs = np.linspace(lo[0], hi[0], n + 1)
    ys = np.linspace(lo[1], hi[1], n + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            if diagonal == "anti":
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
            else:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
    return MeshField(verts, np.array(tris), structured=(tuple(lo), tuple(hi), n, diagonal))


def affine_field(mesh, G, c=(0.0, 0.0)):
    """``x -> G x + c`` sampled on ``mesh``."""
    G = np.asarray(G, dtype=float)
    return mesh.with_values(mesh.vertices @ G.T + np.asarray(c, dtype=float))


def refine_uniform(field):
    """Split every triangle into four; values are interpolated, so the field
    is unchanged as a function."""
    V, T = field.vertices, field.triangles
    vals = field.values
    edges = {}
    newV = list(V)
    newU = list(vals)

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in edges:
            edges[key] = len(newV)
            newV.append(0.5 * (V[a] + V[b]))
            newU.append(0.5 * (vals[a] + vals[b]))
        return edges[key]

    tris = []
    for a, b, c in T:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return MeshField(np.array(newV), np.array(tris), np.array(newU))


def prolong_square(field, diagonal=None):
    """Interpolate a :func:`square_mesh` field onto the mesh with half the
    cell size; nested meshes make this exact."""
    lo, hi, n, diag = field.structured
    fine = square_mesh(2 * n, lo, hi, diagonal or diag)
    return fine.with_values(field.evaluate(fine.vertices))
