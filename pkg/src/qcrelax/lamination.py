"""Lattice rank-one convexification (lamination) of extended-valued densities
and sampled necessary conditions for quasiconvexity and polyconvexity.

Orientation-preserving and unconstrained densities live on a 4D lattice of
2x2 matrices.  A sweep visits every rank-one direction in a fixed order and,
on every lattice line parallel to it, replaces the values by their lower
convex envelope.  On a single line this is the limit of the two-point rule
``t W(F + (1-t) s D) + (1-t) W(F - t s D)``, so each sweep is a batch of
converged two-point laminations.  Values outside the box count as ``+inf``
and ``+inf`` points are never averaged, so the table stays an upper bound
for the rank-one convex envelope restricted to the box.  Along a rank-one
line ``det`` is affine, hence the region ``det > 0`` meets each line in one
interval and the infinite region is left untouched.

Incompressible densities are handled on a chart of ``det F = 1``: see
:func:`rank_one_convexify_incompressible`.
"""

from dataclasses import dataclass, field
import json
import math
import struct
import time

import numba
import numpy as np
from scipy.optimize import linprog

from . import linalg
from .construction import LaminateSpec, laminate_template, solve_twinning
from .energies import INCOMPRESSIBLE, INF, ORIENTATION

BASE_VECTORS = ((1, 0), (0, 1), (1, 1), (1, -1))
TABLE_MAGIC = b"QCRTBL01"


@dataclass(frozen=True)
class MatrixGrid:
    """Uniform lattice ``lo + k * step`` per entry of a 2x2 matrix, entries
    ordered row-major ``(F11, F12, F21, F22)``."""

    lo: tuple
    hi: tuple
    step: tuple

    def __post_init__(self):
        for name in ("lo", "hi", "step"):
            v = getattr(self, name)
            if np.isscalar(v):
                v = (float(v),) * 4
            object.__setattr__(self, name, tuple(float(x) for x in v))
            if len(getattr(self, name)) != 4:
                raise ValueError(f"{name} needs four entries")
        if any(s <= 0 for s in self.step):
            raise ValueError("grid steps must be positive")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("grid ranges must be nonempty")
        for l, h, s in zip(self.lo, self.hi, self.step):
            n = (h - l) / s
            if abs(n - round(n)) > 1e-9:
                raise ValueError("range is not an integer number of steps")

    @classmethod
    def box(cls, half_width=3.0, step=0.05):
        return cls(-half_width, half_width, step)

    @property
    def shape(self):
        return tuple(int(round((h - l) / s)) + 1 for l, h, s in zip(self.lo, self.hi, self.step))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        return [l + s * np.arange(n) for l, s, n in zip(self.lo, self.step, self.shape)]

    def matrices(self, flat_index):
        """Matrices at the given flat (C-order) indices, shape ``(m, 2, 2)``."""
        idx = np.unravel_index(np.asarray(flat_index), self.shape)
        vals = [self.lo[k] + self.step[k] * idx[k] for k in range(4)]
        return np.stack(vals, axis=-1).reshape(-1, 2, 2)

    def index_of(self, F):
        """Lattice index of ``F``; raises if ``F`` is not a lattice point."""
        f = np.asarray(F, dtype=float).ravel()
        k = [(f[i] - self.lo[i]) / self.step[i] for i in range(4)]
        r = [int(round(x)) for x in k]
        if any(abs(x - y) > 1e-6 for x, y in zip(k, r)):
            raise ValueError("matrix is not on the lattice")
        if any(not 0 <= y < n for y, n in zip(r, self.shape)):
            raise ValueError("matrix is outside the grid")
        return tuple(r)

    def offset(self, D):
        """Integer lattice offset of a matrix direction; raises when ``D`` is
        not a lattice vector."""
        d = np.asarray(D, dtype=float).ravel()
        k = d / np.asarray(self.step)
        r = np.round(k)
        if np.any(np.abs(k - r) > 1e-9) or not np.any(r):
            raise ValueError("direction is not a nonzero lattice vector")
        return r.astype(np.int64)

    def compatible(self, other):
        return self.lo == other.lo and self.hi == other.hi and self.step == other.step

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "step": list(self.step)}


@dataclass
class EnvelopeTable:
    grid: MatrixGrid
    values: np.ndarray
    iterations: int = 0
    max_decrease: float = 0.0
    converged: bool = False
    history: list = field(default_factory=list)

    def value_at(self, F):
        return float(self.values[self.grid.index_of(F)])

    def finite_mask(self):
        return np.isfinite(self.values)

    def save(self, path):
        """Binary layout: magic, JSON header length (uint32 LE), JSON header,
        then row-major little-endian float64 values (``inf`` as IEEE inf)."""
        header = json.dumps({"grid": self.grid.to_dict(), "shape": list(self.grid.shape),
                             "iterations": self.iterations, "max_decrease": self.max_decrease,
                             "converged": self.converged}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(TABLE_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(8) != TABLE_MAGIC:
                raise ValueError("not an envelope table file")
            (n,) = struct.unpack("<I", fh.read(4))
            head = json.loads(fh.read(n))
            data = np.frombuffer(fh.read(), dtype="<f8")
        g = head["grid"]
        grid = MatrixGrid(tuple(g["lo"]), tuple(g["hi"]), tuple(g["step"]))
        values = data.reshape(tuple(head["shape"])).astype(float)
        return cls(grid, values, head["iterations"], head["max_decrease"], head["converged"])

    def to_csv(self, path, mask=None):
        """One row per lattice point with a finite value (or per ``mask``)."""
        mask = self.finite_mask() if mask is None else mask
        idx = np.flatnonzero(mask.ravel())
        F = self.grid.matrices(idx).reshape(-1, 4)
        vals = self.values.ravel()[idx]
        with open(path, "w", newline="") as fh:
            fh.write("F11,F12,F21,F22,value\n")
            for row, v in zip(F, vals):
                fh.write(",".join(f"{x:.10g}" for x in row) + f",{float(v)!r}\n")


def default_directions(grid):
    """Rank-one directions ``a (x) n`` with ``a, n`` among the axis and
    diagonal lattice vectors, scaled to one lattice step."""
    dirs = []
    for a in BASE_VECTORS:
        for n in BASE_VECTORS:
            D = np.outer(a, n) * np.asarray(grid.step).reshape(2, 2)
            dirs.append(D)
    return dirs


def _integer_det_sign(grid, idx):
    """Sign of ``det`` at lattice points, exact when the grid has one step
    and ``lo`` is a multiple of it; ``None`` otherwise."""
    step = grid.step[0]
    if any(s != step for s in grid.step):
        return None
    off = np.array(grid.lo) / step
    if np.any(np.abs(off - np.round(off)) > 1e-9):
        return None
    k = np.unravel_index(idx, grid.shape)
    m = [k[i].astype(np.int64) + int(round(off[i])) for i in range(4)]
    return np.sign(m[0] * m[3] - m[1] * m[2])


def evaluate_on_grid(W, grid, chunk=1 << 20):
    """``W`` at every lattice point, computed in chunks to bound memory.

    For orientation-preserving densities the sign of ``det`` is decided on
    the integer lattice, so points with ``det <= 0`` are ``+inf`` even when
    floating point would round their determinant to a tiny positive number.
    """
    out = np.empty(grid.size)
    for start in range(0, grid.size, chunk):
        idx = np.arange(start, min(start + chunk, grid.size))
        out[idx] = W.batch(grid.matrices(idx))
        if getattr(W, "mode", None) == ORIENTATION:
            sign = _integer_det_sign(grid, idx)
            if sign is not None:
                out[idx[sign <= 0]] = INF
    return out.reshape(grid.shape)


@numba.njit(cache=True)
def _lower_hull_line(pos, val, m, hull):
    """Indices (into ``pos``/``val``) of the lower convex hull vertices."""
    k = 0
    for i in range(m):
        while k >= 2:
            i0, i1 = hull[k - 2], hull[k - 1]
            cross = ((pos[i1] - pos[i0]) * (val[i] - val[i0])
                     - (val[i1] - val[i0]) * (pos[i] - pos[i0]))
            if cross <= 0.0:
                k -= 1
            else:
                break
        hull[k] = i
        k += 1
    return k


@numba.njit(cache=True)
def _sweep_direction(vals, shape, off):
    """Replace values on every lattice line along ``off`` by their lower
    convex envelope; returns the largest decrease relative to ``max(1, old)``."""
    n0, n1, n2, n3 = shape[0], shape[1], shape[2], shape[3]
    s0, s1, s2, s3 = n1 * n2 * n3, n2 * n3, n3, 1
    step = off[0] * s0 + off[1] * s1 + off[2] * s2 + off[3] * s3
    L = max(max(n0, n1), max(n2, n3))
    lin = np.empty(L, np.int64)
    pos = np.empty(L)
    val = np.empty(L)
    hull = np.empty(L, np.int64)
    flat = vals.ravel()
    worst = 0.0
    for i0 in range(n0):
        b0 = i0 - off[0] < 0 or i0 - off[0] >= n0
        for i1 in range(n1):
            b1 = b0 or i1 - off[1] < 0 or i1 - off[1] >= n1
            for i2 in range(n2):
                b2 = b1 or i2 - off[2] < 0 or i2 - off[2] >= n2
                for i3 in range(n3):
                    if not (b2 or i3 - off[3] < 0 or i3 - off[3] >= n3):
                        continue
                    # (i0..i3) starts a line: walk it, keeping finite points
                    j0, j1, j2, j3 = i0, i1, i2, i3
                    f = i0 * s0 + i1 * s1 + i2 * s2 + i3 * s3
                    t = 0
                    m = 0
                    while 0 <= j0 < n0 and 0 <= j1 < n1 and 0 <= j2 < n2 and 0 <= j3 < n3:
                        v = flat[f]
                        if v < np.inf:
                            lin[m] = f
                            pos[m] = t
                            val[m] = v
                            m += 1
                        j0 += off[0]
                        j1 += off[1]
                        j2 += off[2]
                        j3 += off[3]
                        f += step
                        t += 1
                    if m < 3:
                        continue
                    k = _lower_hull_line(pos, val, m, hull)
                    seg = 0
                    for r in range(m):
                        while seg < k - 2 and pos[hull[seg + 1]] <= pos[r]:
                            seg += 1
                        a, b = hull[seg], hull[seg + 1]
                        w = (pos[r] - pos[a]) / (pos[b] - pos[a])
                        env = (1.0 - w) * val[a] + w * val[b]
                        if env < val[r]:
                            dec = (val[r] - env) / max(1.0, val[r])
                            if dec > worst:
                                worst = dec
                            flat[lin[r]] = env
    return worst


def rank_one_convexify(W, grid, directions=None, tol=1e-8, max_sweeps=50, initial=None,
                       raise_on_stall=False, log=None, time_budget=None):
    """Lamination iteration on ``grid``.

    ``directions`` are rank-one matrices that must be lattice vectors.  Each
    sweep processes them in the given order, in place, so results are
    deterministic.  Stops when the largest decrease of a sweep is below ``tol``,
    after ``max_sweeps`` or once ``time_budget`` seconds have been spent
    (the table is then an upper bound that is not converged).  ``initial``
    replaces ``W`` on the grid, e.g. with :func:`inject`.
    """
    start = time.perf_counter()
    if directions is None:
        directions = default_directions(grid)
    offsets = []
    for D in directions:
        D = np.asarray(D, dtype=float)
        s = np.linalg.svd(D, compute_uv=False)
        if s[0] == 0 or s[1] > 1e-10 * s[0]:
            raise ValueError("lamination directions must be nonzero rank-one matrices")
        offsets.append(grid.offset(D))
    vals = evaluate_on_grid(W, grid) if initial is None else np.array(initial, dtype=float)
    if np.any(vals < 0):
        raise ValueError("densities must be nonnegative")
    shape = np.array(grid.shape, dtype=np.int64)
    table = EnvelopeTable(grid, vals)
    for sweep in range(max_sweeps):
        dec = 0.0
        for off in offsets:
            dec = max(dec, _sweep_direction(vals, shape, off))
        table.iterations = sweep + 1
        table.max_decrease = dec
        table.history.append(dec)
        if log is not None:
            log(sweep + 1, dec)
        if dec < tol:
            table.converged = True
            break
        if time_budget is not None and time.perf_counter() - start > time_budget:
            break
    if not table.converged and raise_on_stall:
        raise RuntimeError(f"lamination did not converge: last decrease {table.max_decrease:.3g}")
    return table


def inject(coarse, fine_grid, W):
    """Initial values on ``fine_grid``: ``W`` everywhere, lowered to the
    coarse table at lattice points the two grids share.  The coarse values
    are laminate energies inside the same box, so the result is still an
    upper bound and refining from it converges in fewer sweeps."""
    vals = evaluate_on_grid(W, fine_grid)
    ratio = [c / f for c, f in zip(coarse.grid.step, fine_grid.step)]
    if any(abs(r - round(r)) > 1e-9 for r in ratio):
        raise ValueError("coarse step must be a multiple of the fine step")
    sl = []
    for i in range(4):
        o = (coarse.grid.lo[i] - fine_grid.lo[i]) / fine_grid.step[i]
        if abs(o - round(o)) > 1e-9 or round(o) < 0:
            raise ValueError("coarse grid is not a sublattice of the fine grid")
        o, r = int(round(o)), int(round(ratio[i]))
        sl.append(slice(o, o + r * (coarse.grid.shape[i] - 1) + 1, r))
    sl = tuple(sl)
    if vals[sl].shape != coarse.values.shape:
        raise ValueError("coarse grid is not contained in the fine grid")
    vals[sl] = np.minimum(vals[sl], coarse.values)
    return vals


# -- det = 1 slice ------------------------------------------------------------

@dataclass
class SliceTable:
    """Rank-one convexified values on ``det F = 1`` for an isotropic density,
    tabulated against the larger singular value ``lam >= 1``."""

    lam: np.ndarray
    values: np.ndarray
    iterations: int = 0
    max_decrease: float = 0.0
    converged: bool = False
    history: list = field(default_factory=list)

    def value_at(self, F):
        F = np.asarray(F, dtype=float)
        if abs(linalg.det2(F) - 1.0) > 1e-9:
            return INF
        lam2 = float(linalg.sv2(F)[1])
        if lam2 > self.lam[-1]:
            return INF
        return float(np.interp(lam2, self.lam, self.values))


@numba.njit(cache=True)
def _big_sv_det_one(F00, F01, F10, F11):
    q = F00 * F00 + F01 * F01 + F10 * F10 + F11 * F11
    return math.sqrt(0.5 * (q + math.sqrt(max(q * q - 4.0, 0.0))))


@numba.njit(cache=True)
def _slice_sweep(lam, old, new, angles, ds, K):
    """One sweep on the slice: every lattice ``lam`` and normal angle gives a
    det-preserving rank-one line; the new value is the lower convex envelope
    of the old values along that line, taken at the line's midpoint."""
    n = len(lam)
    dl = lam[1] - lam[0]
    top = lam[n - 1]
    w = np.empty(2 * K + 1)
    worst = 0.0
    for i in range(n):
        best = old[i]
        L = lam[i]
        for p in range(len(angles)):
            nx, ny = math.cos(angles[p]), math.sin(angles[p])
            # a = J cof(D) n keeps det(D + s a (x) n) = 1 for D = diag(L, 1/L)
            cx, cy = nx / L, ny * L
            ax, ay = -cy, cx
            na = math.sqrt(ax * ax + ay * ay)
            ax, ay = ax / na, ay / na
            for k in range(-K, K + 1):
                s = k * ds
                l2 = _big_sv_det_one(L + s * ax * nx, s * ax * ny, s * ay * nx, 1.0 / L + s * ay * ny)
                if l2 > top:
                    w[k + K] = np.inf
                else:
                    x = (l2 - lam[0]) / dl
                    j = min(int(x), n - 2)
                    f = x - j
                    w[k + K] = (1.0 - f) * old[j] + f * old[j + 1]
            for k1 in range(1, K + 1):
                v1 = w[K - k1]
                if v1 == np.inf:
                    continue
                for k2 in range(1, K + 1):
                    v2 = w[K + k2]
                    if v2 == np.inf:
                        continue
                    e = (k2 * v1 + k1 * v2) / (k1 + k2)
                    if e < best:
                        best = e
        new[i] = best
        dec = (old[i] - best) / max(1.0, old[i])
        if dec > worst:
            worst = dec
    return worst


def rank_one_convexify_incompressible(W, lam_max=4.0, step=0.05, normals=90, tol=1e-8,
                                      max_sweeps=100, log=None):
    """Lamination on ``det F = 1`` for densities invariant under
    ``F -> Q F R`` with rotations ``Q, R``.

    Such a density is a function of ``lam_2(F)`` on the slice, so the
    three-parameter chart (two rotations and ``lam_2``) collapses to the
    ``lam_2`` axis.  Rank-one moves are restricted to the directions
    ``a (x) n`` with ``a`` orthogonal to ``cof(F) n``, along which ``det``
    stays equal to one.  Values between lattice points are read by linear
    interpolation; points beyond ``lam_max`` count as ``+inf``.
    """
    if getattr(W, "mode", None) != INCOMPRESSIBLE:
        raise ValueError("slice lamination needs an incompressible density")
    lam = 1.0 + step * np.arange(int(round((lam_max - 1.0) / step)) + 1)
    D = np.zeros((len(lam), 2, 2))
    D[:, 0, 0] = 1.0 / lam
    D[:, 1, 1] = lam
    vals = W.batch(D)
    if not np.all(np.isfinite(vals)):
        raise ValueError("density must be finite on the slice")
    angles = np.linspace(0.0, math.pi, normals, endpoint=False)
    K = int(math.ceil(2.0 * lam_max / step))
    table = SliceTable(lam, vals.copy())
    for sweep in range(max_sweeps):
        new = np.empty_like(table.values)
        dec = _slice_sweep(lam, table.values, new, angles, step, K)
        table.values = new
        table.iterations = sweep + 1
        table.max_decrease = dec
        table.history.append(dec)
        if log is not None:
            log(sweep + 1, dec)
        if dec < tol:
            table.converged = True
            break
    return table


# -- necessary conditions -----------------------------------------------------

@dataclass
class JensenReport:
    margins: np.ndarray
    tol: float

    @property
    def worst_margin(self):
        return float(self.margins.min()) if len(self.margins) else 0.0

    @property
    def violations(self):
        return [int(i) for i in np.flatnonzero(self.margins < -self.tol)]

    @property
    def passed(self):
        return not self.violations


def laminate_mean(W, spec):
    """Mean of ``W(D phi)`` over the unit disc for the laminate ``phi`` of
    ``spec`` (``phi = F x`` on the slivers outside its polygon)."""
    tpl = laminate_template(spec)
    F = spec.F
    w = W.batch(F @ tpl.Dv())
    a = tpl.areas
    sliver = max(math.pi - tpl.polygon_area, 0.0)
    wf = float(W.batch(F[None])[0])
    return (float(np.sum(a * w)) + sliver * wf) / (float(np.sum(a)) + sliver)


def quasiconvexity_jensen_test(Wqc, laminates, tol=1e-4):
    """Margins ``mean W(D phi) - W(F)`` over laminate test maps with affine
    boundary data; a quasiconvex candidate has no margin below ``-tol``."""
    margins = []
    for spec in laminates:
        margins.append(laminate_mean(Wqc, spec) - float(Wqc(spec.F)))
    return JensenReport(np.array(margins), tol)


def random_twin_laminates(W, count, seed=0, ks=(4, 8, 16), t_range=(0.05, 0.95)):
    """Seeded twin laminates between the wells of a two-well density, each
    rotated by a random ``Q`` (which keeps both gradients in the wells)."""
    rng = np.random.default_rng(seed)
    sols = solve_twinning(W.U1, W.U2)
    out = []
    for _ in range(count):
        sol = sols[int(rng.integers(len(sols)))]
        Q = linalg.rotation(float(rng.uniform(0.0, 2.0 * math.pi)))
        t = float(rng.uniform(*t_range))
        k = int(rng.choice(ks))
        out.append(LaminateSpec(Q @ W.U2, Q @ sol.Q @ W.U1, t, Q @ sol.a, sol.n, k))
    return out


@dataclass
class PolyconvexReport:
    margin: float
    weights: np.ndarray
    feasible: bool
    tol: float

    @property
    def passed(self):
        return (not self.feasible) or self.margin >= -self.tol


def polyconvex_combination_test(Wqc, F, trial_matrices, tol=1e-6):
    """Smallest ``sum mu_i Wqc(F_i) - Wqc(F)`` over weights ``mu >= 0`` with
    ``sum mu_i = 1`` and ``sum mu_i M(F_i) = M(F)`` (minors: entries and
    det).  A polyconvex candidate has margin ``>= -tol``; an infeasible
    system is reported with ``feasible = False`` and is not a violation."""
    F = linalg.as_matrix(F)
    T = np.asarray(trial_matrices, dtype=float).reshape(-1, 2, 2)
    w = Wqc.batch(T)
    wF = float(Wqc(F))
    if not (np.all(np.isfinite(w)) and math.isfinite(wF)):
        raise ValueError("candidate must be finite at F and at every trial matrix")
    M = np.column_stack([T.reshape(-1, 4), linalg.det2(T)])
    A = np.vstack([M.T, np.ones(len(T))])
    b = np.concatenate([F.ravel(), [linalg.det2(F)], [1.0]])
    res = linprog(w, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        return PolyconvexReport(math.nan, np.zeros(len(T)), False, tol)
    mu = res.x
    if np.abs(A @ mu - b).max() > 1e-9:
        return PolyconvexReport(math.nan, mu, False, tol)
    return PolyconvexReport(float(mu @ w) - wF, mu, True, tol)


# -- comparison with a closed form --------------------------------------------

@dataclass
class TableComparison:
    count: int
    mean_abs: float
    max_abs: float
    worst_matrix: np.ndarray
    below: float

    def passed(self, mean_tol, max_tol):
        return self.mean_abs <= mean_tol and self.max_abs <= max_tol


def compare_with_density(table, reference, det_range=None, chunk=1 << 20):
    """Deviation of ``table`` from a reference density over lattice points
    where both are finite (optionally with ``det`` in ``det_range``).

    ``below`` is the largest amount by which the table undercuts the
    reference; for a lamination table against the true envelope it should
    vanish up to discretisation error.
    """
    grid = table.grid
    flat = table.values.ravel()
    count, total, worst, worst_F, below = 0, 0.0, -1.0, None, 0.0
    for start in range(0, grid.size, chunk):
        idx = np.arange(start, min(start + chunk, grid.size))
        v = flat[idx]
        keep = np.isfinite(v)
        idx, v = idx[keep], v[keep]
        F = grid.matrices(idx)
        if det_range is not None:
            d = linalg.det2(F)
            keep = (d >= det_range[0]) & (d <= det_range[1])
            F, v = F[keep], v[keep]
        if len(v) == 0:
            continue
        r = reference.batch(F)
        keep = np.isfinite(r)
        F, v, r = F[keep], v[keep], r[keep]
        if len(v) == 0:
            continue
        dev = np.abs(v - r)
        count += len(v)
        total += float(dev.sum())
        k = int(np.argmax(dev))
        if dev[k] > worst:
            worst, worst_F = float(dev[k]), F[k]
        below = max(below, float(np.max(r - v)))
    if count == 0:
        return TableComparison(0, math.nan, math.nan, None, 0.0)
    return TableComparison(count, total / count, worst, worst_F, below)
