"""Extended-valued stored-energy densities and checks of their structural
hypotheses (growth, convex determinant penalty, submultiplicativity).

Infinite energies are IEEE ``inf``: it is totally ordered against every
finite value and absorbing under addition, which is all the envelope and
lamination code needs.  Products ``0 * inf`` never occur in the formulas
below; :func:`ext_scale` refuses them explicitly.
"""

from dataclasses import dataclass, field
import math

import numba
import numpy as np

from . import linalg

INF = math.inf
ORIENTATION = "orientation-preserving"
INCOMPRESSIBLE = "incompressible"
UNCONSTRAINED = "unconstrained"
DET_ONE_TOL = 1e-9


def ext_scale(a, x):
    """``a * x`` on the extended half-line; ``0 * inf`` is rejected."""
    if a == 0 and math.isinf(x):
        raise ValueError("0 * inf is undefined here")
    return a * x


class ThetaPenalty:
    """Convex penalty on the determinant, ``+inf`` on ``(-inf, 0]``.

    ``fn`` and ``dfn`` act elementwise on positive arrays.
    """

    def __init__(self, fn, dfn, tag):
        self._fn = fn
        self._dfn = dfn
        self.tag = tag

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, INF)
        pos = t > 0
        with np.errstate(over="ignore", divide="ignore"):
            out[pos] = self._fn(t[pos])
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, np.nan)
        pos = t > 0
        out[pos] = self._dfn(t[pos])
        return out if out.ndim else float(out)

    def __repr__(self):
        return f"ThetaPenalty({self.tag!r})"


def make_theta_default():
    """``theta(t) = (t - 1/t)^2``."""
    return ThetaPenalty(lambda t: (t - 1.0 / t) ** 2,
                        lambda t: 2.0 * (t - 1.0 / t) * (1.0 + 1.0 / t**2),
                        "default")


def make_theta_zero():
    return ThetaPenalty(lambda t: np.zeros_like(t), lambda t: np.zeros_like(t), "zero")


def make_theta_linear():
    return ThetaPenalty(lambda t: t, lambda t: np.ones_like(t), "linear")


THETAS = {"default": make_theta_default, "zero": make_theta_zero, "linear": make_theta_linear}


def theta_from_tag(tag):
    try:
        return THETAS[tag]()
    except KeyError:
        raise ValueError(f"unknown theta penalty {tag!r}") from None


class EnergyDensity:
    """Base class: subclasses implement the batched ``_finite`` formula and
    the constraint predicate; ``__call__`` handles the ``+inf`` extension."""

    n = 2
    p = 2.0
    mode = UNCONSTRAINED
    theta = None

    def admissible(self, F):
        """Boolean mask of matrices where the density is finite."""
        F = np.asarray(F, dtype=float)
        if self.mode == ORIENTATION:
            return linalg.det2(F) > 0
        if self.mode == INCOMPRESSIBLE:
            return np.abs(linalg.det2(F) - 1.0) <= DET_ONE_TOL
        return np.ones(F.shape[:-2], dtype=bool)

    def batch(self, F):
        """Evaluate on a stack of matrices, shape ``(..., 2, 2)``."""
        F = np.asarray(F, dtype=float)
        out = np.full(F.shape[:-2], INF)
        ok = self.admissible(F)
        if np.any(ok):
            out[ok] = self._finite(F[ok])
        return out

    def __call__(self, F):
        F = linalg.as_matrix(F)
        return float(self.batch(F[None])[0])

    def gradient_batch(self, F):
        raise NotImplementedError

    def descriptor(self):
        raise NotImplementedError


class TwoWellEnergy(EnergyDensity):
    """``dist^2(F, SO(2)U1 u SO(2)U2) + theta(det F)`` with
    ``U1 = diag(lam, 1/lam)`` and ``U2 = diag(1/lam, lam)``.

    ``lam = 1`` collapses both wells onto ``SO(2)`` (the one-well model).
    """

    mode = ORIENTATION

    def __init__(self, lam, theta):
        self.lam = float(lam)
        self.theta = theta
        self.U1 = np.diag([self.lam, 1.0 / self.lam])
        self.U2 = np.diag([1.0 / self.lam, self.lam])
        self.wells = (self.U1,) if self.lam == 1.0 else (self.U1, self.U2)

    def well_distances(self, F):
        return np.stack([linalg.dist_sq_to_SO2_well_batch(F, U) for U in self.wells], axis=-1)

    def _finite(self, F):
        flat = np.ascontiguousarray(F.reshape(-1, 4))
        out = np.empty(len(flat))
        _min_well_distance(flat, self.lam, out)
        return out.reshape(F.shape[:-2]) + self.theta(linalg.det2(F))

    def gradient_batch(self, F):
        """Derivative of the active well's squared distance plus the penalty
        term; only meaningful where the minimising well and rotation are unique."""
        F = np.asarray(F, dtype=float)
        d = self.well_distances(F)
        k = d.argmin(axis=-1)
        Us = np.stack(self.wells)[k]
        R = linalg.nearest_rotation_2d(F @ np.swapaxes(Us, -1, -2))
        G = 2.0 * (F - R @ Us)
        dt = self.theta.derivative(linalg.det2(F))
        return G + dt[..., None, None] * linalg.cof2(F)

    def descriptor(self):
        if self.lam == 1.0:
            return {"model": "one_well", "n": 2, "p": 2.0, "theta": self.theta.tag}
        return {"model": "two_well", "n": 2, "p": 2.0, "lambda": self.lam, "theta": self.theta.tag}


@numba.njit(cache=True)
def _min_well_distance(F, lam, out):
    """``min_i dist^2(F, SO(2) U_i)`` for ``U_1 = diag(lam, 1/lam)`` and
    ``U_2 = diag(1/lam, lam)``; rows of ``F`` are ``(F11, F12, F21, F22)``."""
    il = 1.0 / lam
    usq = lam * lam + il * il
    for i in range(F.shape[0]):
        a, b, c, d = F[i, 0], F[i, 1], F[i, 2], F[i, 3]
        fsq = a * a + b * b + c * c + d * d
        # F U^T for each well, then |F - R U|^2 = |F|^2 + |U|^2 - 2 |(m11 + m22, m21 - m12)|
        c1 = math.hypot(a * lam + d * il, c * lam - b * il)
        c2 = math.hypot(a * il + d * lam, c * il - b * lam)
        out[i] = max(fsq + usq - 2.0 * max(c1, c2), 0.0)


def make_two_well(lam, theta):
    if not lam > 1:
        raise ValueError("two-well model needs lambda > 1 (use make_one_well for lambda = 1)")
    return TwoWellEnergy(lam, theta)


def make_one_well(theta):
    return TwoWellEnergy(1.0, theta)


class NematicEnergy(EnergyDensity):
    """``sum_i (lambda_i(F) / gamma_i)^p`` on ``det F = 1``, ``+inf`` elsewhere.

    Singular values and ``gamma`` are both paired in ascending order.
    ``penalty`` switches to the soft-constraint variant used by the solver:
    the formula is evaluated on ``det F > 0`` and ``penalty * (det F - 1)^2``
    is added.
    """

    def __init__(self, n, gamma, p, penalty=None):
        gamma = np.sort(np.asarray(gamma, dtype=float))
        if n != 2:
            raise ValueError("only the two-dimensional nematic density is supported")
        if gamma.shape != (n,) or np.any(gamma <= 0) or abs(np.prod(gamma) - 1.0) > 1e-12:
            raise ValueError("gamma must be n positive numbers with product 1")
        if p < 1:
            raise ValueError("nematic exponent p must be >= 1")
        self.n = n
        self.gamma = gamma
        self.p = float(p)
        self.penalty = penalty
        self.mode = ORIENTATION if penalty is not None else INCOMPRESSIBLE

    def with_penalty(self, kappa):
        return NematicEnergy(self.n, self.gamma, self.p, penalty=kappa)

    def _finite(self, F):
        s = linalg.sv2(F)
        val = np.sum((s / self.gamma) ** self.p, axis=-1)
        if self.penalty is not None:
            val = val + self.penalty * (linalg.det2(F) - 1.0) ** 2
        return val

    def gradient_batch(self, F):
        F = np.asarray(F, dtype=float)
        Uu, s, Vt = np.linalg.svd(F)
        # numpy orders singular values descending; gamma is ascending
        g = self.gamma[::-1]
        coef = self.p * s ** (self.p - 1) / g**self.p
        G = np.einsum("...ik,...k,...kj->...ij", Uu, coef, Vt)
        if self.penalty is not None:
            G = G + (2.0 * self.penalty * (linalg.det2(F) - 1.0))[..., None, None] * linalg.cof2(F)
        return G

    def descriptor(self):
        d = {"model": "nematic", "n": self.n, "p": self.p, "gamma": self.gamma.tolist(), "theta": None}
        if self.penalty is not None:
            d["penalty"] = self.penalty
        return d


def make_nematic(n, gamma, p):
    return NematicEnergy(n, gamma, p)


def nematic_default_gamma(gamma2=2.0):
    return (1.0 / gamma2, gamma2)


class ConstantEnergy(EnergyDensity):
    """``W = value`` everywhere; a degenerate reference for Jensen tests."""

    def __init__(self, value=1.0):
        self.value = float(value)

    def _finite(self, F):
        return np.full(F.shape[:-2], self.value)

    def gradient_batch(self, F):
        return np.zeros_like(np.asarray(F, dtype=float))

    def descriptor(self):
        return {"model": "constant", "n": 2, "p": 0.0, "value": self.value}


def from_descriptor(desc):
    """Rebuild a density from its JSON descriptor."""
    model = desc.get("model")
    if model == "two_well":
        return make_two_well(desc.get("lambda", 2.0), theta_from_tag(desc.get("theta", "default")))
    if model == "one_well":
        return make_one_well(theta_from_tag(desc.get("theta", "default")))
    if model == "nematic":
        gamma = desc.get("gamma", nematic_default_gamma())
        W = make_nematic(desc.get("n", 2), gamma, desc.get("p", 2.0))
        if desc.get("penalty") is not None:
            W = W.with_penalty(desc["penalty"])
        return W
    if model == "constant":
        return ConstantEnergy(desc.get("value", 1.0))
    raise ValueError(f"unknown energy model {model!r}")


# -- structural checks --------------------------------------------------------

@dataclass
class GrowthCertificate:
    c: float
    p: float
    samples: str
    max_violation: float
    worst_inequality: str = ""
    worst_sample: list = field(default_factory=list)

    @property
    def valid(self):
        return self.max_violation <= 0.0


def orientation_samples(fro_max=4.0, det_range=(0.2, 5.0), per_axis=24):
    """Lattice in the 4D entry cube ``[-fro_max, fro_max]^4`` restricted to
    ``|F| <= fro_max`` and ``det F`` in ``det_range``."""
    ax = np.linspace(-fro_max, fro_max, per_axis)
    g = np.stack(np.meshgrid(ax, ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 2, 2)
    fro = np.sqrt(np.einsum("kij,kij->k", g, g))
    d = linalg.det2(g)
    keep = (fro <= fro_max) & (d >= det_range[0]) & (d <= det_range[1])
    return g[keep]


def det_one_samples(fro_max=4.0, per_axis=24):
    """Lattice on ``det F = 1`` via ``R(a) diag(1/s, s) R(b)``."""
    smax = 0.5 * (fro_max + math.sqrt(max(fro_max**2 - 4.0, 0.0)))
    s = np.linspace(1.0, smax, per_axis)
    ang = np.linspace(0.0, 2 * math.pi, per_axis, endpoint=False)
    out = []
    for a in ang:
        Ra = linalg.rotation(a)
        for b in ang:
            Rb = linalg.rotation(b)
            D = np.zeros((len(s), 2, 2))
            D[:, 0, 0] = 1.0 / s
            D[:, 1, 1] = s
            out.append(Ra @ D @ Rb)
    F = np.concatenate(out)
    fro = np.sqrt(np.einsum("kij,kij->k", F, F))
    return F[fro <= fro_max + 1e-12]


def certify_growth(W, samples, c, descriptor="custom"):
    """Check both growth inequalities at every sample.

    Orientation-preserving densities use
    ``|F|^p/c + theta(det)/c - c <= W <= c|F|^p + c theta(det) + c``;
    incompressible ones drop the penalty terms.
    """
    F = np.asarray(samples, dtype=float)
    vals = W.batch(F)
    if not np.all(np.isfinite(vals)):
        raise ValueError("sample set reaches the infinite region of W")
    normp = np.sqrt(np.einsum("kij,kij->k", F, F)) ** W.p
    th = W.theta(linalg.det2(F)) if W.theta is not None else np.zeros(len(F))
    lower = normp / c + th / c - c - vals
    upper = vals - (c * normp + c * th + c)
    viol = np.maximum(lower, upper)
    k = int(np.argmax(viol))
    which = "lower" if lower[k] >= upper[k] else "upper"
    return GrowthCertificate(c=c, p=W.p, samples=descriptor, max_violation=float(viol[k]),
                             worst_inequality=which, worst_sample=F[k].tolist())


def check_theta_structure(theta, T, num=200):
    """``sup theta(xy) / ((1 + theta(x))(1 + theta(y)))`` over a log grid of
    ``[1/T, T]^2``; a box-restricted empirical constant only."""
    x = np.logspace(-math.log10(T), math.log10(T), num)
    X, Y = np.meshgrid(x, x, indexing="ij")
    th = theta(x)
    ratio = theta(X * Y) / ((1.0 + th[:, None]) * (1.0 + th[None, :]))
    return float(ratio.max())


def theta_structure_trend(theta, Ts, num=200):
    """Empirical constants for increasing box sizes and whether they keep growing."""
    vals = [check_theta_structure(theta, T, num) for T in Ts]
    return vals, bool(all(b > a for a, b in zip(vals, vals[1:])))


def sample_matrices(count, seed=0, fro_max=3.0, det_range=(0.5, 2.0)):
    """Seeded rejection sample of 2x2 matrices with bounded norm and determinant."""
    rng = np.random.default_rng(seed)
    out = []
    while sum(len(o) for o in out) < count:
        F = rng.uniform(-fro_max, fro_max, size=(4 * count, 2, 2))
        fro = np.sqrt(np.einsum("kij,kij->k", F, F))
        d = linalg.det2(F)
        out.append(F[(fro <= fro_max) & (d >= det_range[0]) & (d <= det_range[1])])
    return np.concatenate(out)[:count]


def check_submultiplicative(W, F_samples, G_samples):
    """``sup W(FG) / ((1 + W(F))(1 + W(G)))`` over paired samples."""
    F = np.asarray(F_samples, dtype=float)
    G = np.asarray(G_samples, dtype=float)
    wf, wg = W.batch(F), W.batch(G)
    if not (np.all(np.isfinite(wf)) and np.all(np.isfinite(wg))):
        raise ValueError("samples must lie in the finite region of W")
    ratio = W.batch(F @ G) / ((1.0 + wf) * (1.0 + wg))
    return float(ratio.max())
