"""Discrete minimisation of ``E[u] = sum |T| W(Du|_T) + int f(u)`` over
piecewise-affine maps with Dirichlet data, and the relaxation gap between
``W`` and its envelope.

The energy is extended valued: a trial step that makes any cell leave the
finite region of ``W`` (``det <= 0``, or ``det != 1`` for a hard volume
constraint) has energy ``+inf`` and is rejected by the line search, so every
accepted iterate is admissible.  Incompressible densities are minimised with
the soft penalty ``kappa (det - 1)^2`` and a continuation in ``kappa``.
"""

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from . import linalg
from .energies import INCOMPRESSIBLE, ORIENTATION
from .mesh import MeshField, edge_matrix, prolong_square, square_mesh

FD_STEP = 1e-6
KAPPA_SCHEDULE = (1e2, 1e3, 1e4, 1e5, 1e6)


class SolverError(RuntimeError):
    pass


# -- lower-order terms --------------------------------------------------------

@dataclass(frozen=True)
class LowerOrderTerm:
    """``f(u)`` with its gradient and the growth exponent ``q`` of
    ``|f(t)| <= c (1 + |t|^q)``."""

    fn: object
    grad: object
    q: float
    name: str = "custom"


def squared_norm_term(weight=1.0):
    return LowerOrderTerm(lambda u: weight * np.einsum("...i,...i->...", u, u),
                          lambda u: 2.0 * weight * u, 2.0, f"{weight}*|u|^2")


def linear_term(b):
    b = np.asarray(b, float)
    return LowerOrderTerm(lambda u: u @ b, lambda u: np.broadcast_to(b, u.shape).copy(), 1.0,
                          "b.u")


# -- per-cell derivatives -----------------------------------------------------

def fd_gradient_batch(W, F, step=FD_STEP):
    """Central differences of ``W`` in each matrix entry, step ``step * max(1, |F|)``."""
    F = np.asarray(F, dtype=float)
    h = step * np.maximum(1.0, np.sqrt(np.einsum("...ij,...ij->...", F, F)))
    G = np.empty_like(F)
    for i in range(2):
        for j in range(2):
            E = np.zeros((2, 2))
            E[i, j] = 1.0
            Fp = F + h[..., None, None] * E
            Fm = F - h[..., None, None] * E
            G[..., i, j] = (W.batch(Fp) - W.batch(Fm)) / (2.0 * h)
    return G


def density_gradient(W, F):
    """Analytic gradient where available and finite, finite differences
    elsewhere."""
    try:
        G = np.asarray(W.gradient_batch(F), dtype=float)
    except NotImplementedError:
        return fd_gradient_batch(W, F)
    bad = ~np.all(np.isfinite(G), axis=(-2, -1))
    if np.any(bad):
        G[bad] = fd_gradient_batch(W, np.asarray(F)[bad])
    return G


def gradient_check(W, F, step=FD_STEP):
    """Largest relative deviation between analytic and central-difference
    gradients over the stack ``F``."""
    F = np.asarray(F, dtype=float)
    Ga = np.asarray(W.gradient_batch(F), dtype=float)
    Gf = fd_gradient_batch(W, F, step)
    num = np.sqrt(np.einsum("kij,kij->k", Ga - Gf, Ga - Gf))
    den = np.maximum(1.0, np.sqrt(np.einsum("kij,kij->k", Ga, Ga)))
    return float(np.max(num / den))


# -- problem ------------------------------------------------------------------

@dataclass
class VariationalProblem:
    """``mesh`` is a MeshField whose vertices define the domain; ``dirichlet``
    is a vertex index array (default: all boundary vertices) and ``u0`` the
    boundary data, either a 2x2 matrix (affine data) or a callable on points."""

    mesh: MeshField
    W: object
    u0: object
    f: LowerOrderTerm = None
    dirichlet: np.ndarray = None

    def __post_init__(self):
        if self.dirichlet is None:
            self.dirichlet = self.mesh.boundary_vertices()
        self.dirichlet = np.unique(np.asarray(self.dirichlet, dtype=np.int64))
        if len(self.dirichlet) == 0:
            raise ValueError("the Dirichlet set must be nonempty")
        bnd = set(self.mesh.boundary_vertices().tolist())
        if not set(self.dirichlet.tolist()) <= bnd:
            raise ValueError("Dirichlet vertices must lie on the boundary")
        if self.f is not None and not self.f.q < self.p:
            raise ValueError(f"lower-order growth q = {self.f.q} must be below p = {self.p}")
        self.free = np.setdiff1d(np.arange(len(self.mesh.vertices)), self.dirichlet)

    @property
    def p(self):
        return float(getattr(self.W, "p", 2.0))

    @property
    def mode(self):
        return getattr(self.W, "mode", ORIENTATION)

    def boundary_values(self, points):
        if callable(self.u0):
            return np.asarray(self.u0(points), float)
        G = linalg.as_matrix(self.u0)
        return points @ G.T

    def with_density(self, W):
        return VariationalProblem(self.mesh, W, self.u0, self.f, self.dirichlet)

    def initial(self, seed=0, amplitude=0.01):
        """Affine interpolant of the data plus a seeded perturbation of the
        free vertices (``amplitude`` times the mesh size)."""
        vals = self.boundary_values(self.mesh.vertices)
        if callable(self.u0):
            vals = self.mesh.vertices @ self.mesh.with_values(vals).mean_gradient().T
            vals[self.dirichlet] = self.boundary_values(self.mesh.vertices[self.dirichlet])
        rng = np.random.default_rng(seed)
        hmin = math.sqrt(2.0 * float(self.mesh.areas.min()))
        vals[self.free] += amplitude * hmin * rng.uniform(-1.0, 1.0, (len(self.free), 2))
        return self.mesh.with_values(vals)

    # energy ---------------------------------------------------------------
    def cell_energies(self, values, W=None):
        W = self.W if W is None else W
        return W.batch(self.mesh.gradients(values))

    def energy(self, values, W=None):
        w = self.cell_energies(values, W)
        e = float(np.sum(self.mesh.areas * w))
        if self.f is not None and math.isfinite(e):
            e += float(np.sum(self.mesh.areas * self.f.fn(values[self.mesh.triangles].mean(axis=1))))
        return e

    def energy_and_gradient(self, values, W=None):
        """Energy and its gradient with respect to all vertex values."""
        W = self.W if W is None else W
        mesh = self.mesh
        G = mesh.gradients(values)
        w = W.batch(G)
        e = float(np.sum(mesh.areas * w))
        if not math.isfinite(e):
            return e, None
        P = mesh.areas[:, None, None] * density_gradient(W, G)
        # Du = E_y E_x^{-1}, so dE/dE_y = P E_x^{-T}
        C = P @ np.swapaxes(mesh._inverse_edges(), -1, -2)
        grad = np.zeros_like(values)
        tri = mesh.triangles
        np.add.at(grad, tri[:, 1], C[:, :, 0])
        np.add.at(grad, tri[:, 2], C[:, :, 1])
        np.add.at(grad, tri[:, 0], -(C[:, :, 0] + C[:, :, 1]))
        if self.f is not None:
            bc = values[tri].mean(axis=1)
            e += float(np.sum(mesh.areas * self.f.fn(bc)))
            gb = mesh.areas[:, None] * self.f.grad(bc) / 3.0
            for k in range(3):
                np.add.at(grad, tri[:, k], gb)
        return e, grad


# -- optimiser ----------------------------------------------------------------

@dataclass
class SolveResult:
    field: MeshField
    energy: float
    converged: bool
    status: str
    iterations: int
    log: list = field(default_factory=list)
    min_det: float = math.nan
    det_residual: float = math.nan
    offending_cell: int = -1
    kappa: float = None


def _lbfgs(problem, x0, W, max_iter, gtol, memory=10, log=None):
    """L-BFGS on the free vertex values with a backtracking line search that
    treats ``+inf`` as a barrier."""
    free = problem.free
    vals = x0.copy()

    def fg(x):
        v = vals.copy()
        v[free] = x.reshape(-1, 2)
        e, g = problem.energy_and_gradient(v, W)
        return e, (None if g is None else g[free].ravel())

    x = vals[free].ravel()
    e, g = fg(x)
    if not math.isfinite(e):
        raise SolverError("initial state is outside the finite region of W")
    S, Y = [], []
    status, it, bad_cell = "max_iter", 0, -1
    for it in range(1, max_iter + 1):
        gn = float(np.abs(g).max()) if len(g) else 0.0
        if gn <= gtol:
            status = "converged"
            it -= 1
            break
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        d = -q
        slope = float(g @ d)
        if slope >= 0:
            S, Y = [], []
            d = -g
            slope = float(g @ d)
        step = 1.0 if S else min(1.0, 1.0 / max(gn, 1e-300))
        accepted = False
        for _ in range(60):
            xn = x + step * d
            en, gnw = fg(xn)
            if math.isfinite(en) and en <= e + 1e-4 * step * slope:
                accepted = True
                break
            if not math.isfinite(en) and bad_cell < 0:
                v = vals.copy()
                v[free] = xn.reshape(-1, 2)
                w = problem.cell_energies(v, W)
                bad_cell = int(np.flatnonzero(~np.isfinite(w))[0])
            step *= 0.5
        if not accepted:
            status = "line_search_failed"
            break
        bad_cell = -1
        s, y = xn - x, gnw - g
        if s @ y > 1e-12 * math.sqrt((s @ s) * (y @ y)):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        dec = e - en
        x, e, g = xn, en, gnw
        if log is not None:
            log.append({"iteration": it, "energy": e, "grad_inf": gn, "step": step})
        if dec <= 1e-15 * max(1.0, abs(e)):
            status = "stalled"
            break
    vals[free] = x.reshape(-1, 2)
    return vals, e, status, it, bad_cell


def minimize(problem, init=None, max_iter=2000, gtol=1e-9, seed=0, kappas=KAPPA_SCHEDULE):
    """Minimise ``problem`` from ``init`` (default: :meth:`VariationalProblem.initial`).

    Incompressible densities are replaced by their penalised variants with
    ``kappa`` running through ``kappas``; the reported energy is that of the
    last penalised density and ``det_residual`` is ``max |det Du - 1|``.
    """
    if init is None:
        init = problem.initial(seed)
    vals = np.asarray(init.values if isinstance(init, MeshField) else init, float).copy()
    bnd = problem.boundary_values(problem.mesh.vertices[problem.dirichlet])
    if np.abs(vals[problem.dirichlet] - bnd).max(initial=0.0) > 1e-12:
        raise SolverError("initial field violates the Dirichlet data")
    vals[problem.dirichlet] = bnd
    log = []
    incompressible = problem.mode == INCOMPRESSIBLE
    stages = [(k, problem.W.with_penalty(k)) for k in kappas] if incompressible else [(None, problem.W)]
    e, status, its, bad, kappa = math.nan, "", 0, -1, None
    for kappa, W in stages:
        vals, e, status, n, bad = _lbfgs(problem, vals, W, max_iter, gtol, log=log)
        its += n
        if status == "line_search_failed" and not np.isfinite(e):
            break
    fld = problem.mesh.with_values(vals)
    d = fld.dets()
    return SolveResult(fld, e, status in ("converged", "stalled"), status, its, log,
                       float(d.min()), float(np.abs(d - 1.0).max()), bad, kappa)


# -- relaxation gap -----------------------------------------------------------

@dataclass
class GapRow:
    h: float
    unrelaxed: float
    relaxed: float
    unrelaxed_status: str
    relaxed_status: str

    @property
    def ordered(self):
        return self.relaxed <= self.unrelaxed + 1e-8


GAP_COLUMNS = ("h", "unrelaxed", "relaxed", "unrelaxed_status", "relaxed_status")


def gap_report(W, Wqc, u0, ns=(8, 16, 32), f=None, seed=0, max_iter=2000, path=None):
    """Minima of the unrelaxed and relaxed discrete problems on
    ``square_mesh(n)`` for each ``n`` in ``ns``.

    Each unrelaxed run also starts from the previous mesh's minimiser
    (prolonged exactly onto the nested mesh), keeping the lower result, and
    each relaxed run also starts from the unrelaxed minimiser; both extra
    starts only ever lower the reported minima.
    """
    rows, prev = [], None
    for n in ns:
        mesh = square_mesh(n)
        P = VariationalProblem(mesh, W, u0, f)
        best = minimize(P, seed=seed, max_iter=max_iter)
        if prev is not None and prev.field.structured is not None:
            lo, hi, pn, _ = prev.field.structured
            fine = prev.field
            while fine.structured[2] < n:
                fine = prolong_square(fine)
            if fine.structured[2] == n:
                alt = minimize(P, init=fine, max_iter=max_iter)
                if alt.energy < best.energy:
                    best = alt
        Pr = P.with_density(Wqc)
        rel = minimize(Pr, seed=seed, max_iter=max_iter)
        alt = minimize(Pr, init=best.field, max_iter=max_iter)
        if alt.energy < rel.energy:
            rel = alt
        rows.append(GapRow(1.0 / n, best.energy, rel.energy, best.status, rel.status))
        prev = best
    if path is not None:
        write_gap_csv(rows, path)
    return rows


def write_gap_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(GAP_COLUMNS)
        for r in rows:
            wr.writerow([repr(r.h), repr(r.unrelaxed), repr(r.relaxed), r.unrelaxed_status,
                         r.relaxed_status])
