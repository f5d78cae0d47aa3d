"""Batch front end: ``qcrelax <kind> --config path [--out dir] [--seed N] [--threads N]``.

A config is a JSON object with an optional ``model`` descriptor and a
``params`` object; every kind validates its parameters before computing.
Each run writes its artifacts and a ``manifest.json`` (config hash, seed,
versions, wall time) to the output directory.  Failures exit nonzero and
write ``error.json`` with a machine-readable ``status``.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import __version__

KINDS = ("envelope", "laminate", "translation", "cover", "recovery", "relax", "verify")
EXIT_CONFIG = 2
EXIT_RUNTIME = 1


class ConfigError(ValueError):
    pass


# -- config -------------------------------------------------------------------

DEFAULTS = {
    "envelope": {"half_width": 3.0, "step": 0.1, "max_sweeps": 50, "tol": 1e-8,
                 "time_budget": None, "det_range": [0.3, 3.0], "lam_max": 4.0},
    "laminate": {"t": 0.5, "k": 16, "solution": 0, "F": None},
    "translation": {"count": 50, "r": 0.1, "mesh_n": 16, "max_candidates": 1000},
    "cover": {"r": 0.05, "rounds": 10, "pixels": 1024, "fill": 0.5, "mode": "orientation",
              "mesh_n": 8},
    "recovery": {"F": None, "eta": 0.1, "mode": None, "mesh_n": 32, "rounds": 30,
                 "pixels": 1024, "delta": None},
    "relax": {"F": None, "ns": [8, 16, 32], "max_iter": 2000},
    "verify": {"half_width": 3.0, "step": 0.25, "max_sweeps": 50, "laminates": 20},
}

MODEL_DEFAULTS = {
    "envelope": {"model": "two_well", "lambda": 2.0, "theta": "default"},
    "laminate": {"model": "two_well", "lambda": 2.0, "theta": "default"},
    "recovery": {"model": "two_well", "lambda": 2.0, "theta": "default"},
    "relax": {"model": "two_well", "lambda": 2.0, "theta": "default"},
    "verify": {"model": "two_well", "lambda": 2.0, "theta": "default"},
}


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    if not text.strip():
        raise ConfigError("config file is empty")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict) or not cfg:
        raise ConfigError("config must be a nonempty JSON object")
    return cfg


def validate(kind, cfg):
    """Resolved ``(model, params)`` for ``kind``; raises ConfigError."""
    from .energies import from_descriptor

    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}")
    if "kind" in cfg and cfg["kind"] != kind:
        raise ConfigError(f"config is for kind {cfg['kind']!r}, not {kind!r}")
    unknown = set(cfg) - {"kind", "model", "params", "seed"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    params = dict(DEFAULTS[kind])
    given = cfg.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params must be an object")
    extra = set(given) - set(params)
    if extra:
        raise ConfigError(f"unknown params for {kind}: {sorted(extra)}")
    params.update(given)
    model = None
    if kind in MODEL_DEFAULTS:
        desc = cfg.get("model", MODEL_DEFAULTS[kind])
        if not isinstance(desc, dict):
            raise ConfigError("model must be a descriptor object")
        try:
            model = from_descriptor(desc)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad model: {exc}") from None
    elif "model" in cfg:
        raise ConfigError(f"kind {kind} takes no model")
    _check_params(kind, params, model)
    return model, params


def _positive(params, *names):
    for n in names:
        v = params[n]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0 or not math.isfinite(v):
            raise ConfigError(f"{n} must be a positive number")


def _positive_int(params, *names):
    for n in names:
        v = params[n]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{n} must be a positive integer")


def _check_params(kind, p, W):
    from .energies import NematicEnergy, TwoWellEnergy

    if kind in ("envelope", "verify"):
        _positive(p, "half_width", "step")
        _positive_int(p, "max_sweeps")
        n = 2 * p["half_width"] / p["step"]
        if abs(n - round(n)) > 1e-9:
            raise ConfigError("2 * half_width must be a multiple of step")
    if kind == "envelope":
        _positive(p, "tol", "lam_max")
        if p["time_budget"] is not None:
            _positive(p, "time_budget")
        dr = p["det_range"]
        if not (isinstance(dr, list) and len(dr) == 2 and 0 < dr[0] < dr[1]):
            raise ConfigError("det_range must be [lo, hi] with 0 < lo < hi")
    if kind == "verify":
        _positive_int(p, "laminates")
        if not isinstance(W, TwoWellEnergy) or W.lam == 1.0:
            raise ConfigError("verify needs the two-well model")
    if kind == "laminate":
        _positive_int(p, "k")
        if not 0 < p["t"] < 1:
            raise ConfigError("t must lie in (0, 1)")
        if isinstance(W, NematicEnergy) and p["F"] is None:
            raise ConfigError("nematic laminates need F")
    if kind == "translation":
        _positive(p, "r")
        _positive_int(p, "count", "mesh_n", "max_candidates")
        if p["r"] > 0.25:
            raise ConfigError("r must be at most 0.25 so that B(x0, 2r) fits the unit square")
    if kind == "cover":
        _positive(p, "r", "fill")
        _positive_int(p, "rounds", "pixels", "mesh_n")
        if p["fill"] > 1:
            raise ConfigError("fill must lie in (0, 1]")
        if p["mode"] not in ("orientation", "incompressible"):
            raise ConfigError("cover mode must be orientation or incompressible")
    if kind == "recovery":
        _positive(p, "eta")
        _positive_int(p, "mesh_n", "rounds", "pixels")
        if p["delta"] is not None:
            _positive(p, "delta")
        if p["mode"] not in (None, "orientation", "incompressible", "submultiplicative"):
            raise ConfigError("unknown recovery mode")
    if kind == "relax":
        _positive_int(p, "max_iter")
        ns = p["ns"]
        if not (isinstance(ns, list) and ns and all(isinstance(n, int) and n > 0 for n in ns)):
            raise ConfigError("ns must be a nonempty list of positive integers")
    if kind in ("laminate", "recovery", "relax") and p.get("F") is not None:
        A = _matrix_param(p["F"], W)
        if kind in ("recovery", "relax") and not A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0] > 0:
            raise ConfigError("F must have positive determinant")


def _matrix_param(F, W):
    """``F`` as a 2x2 list, ``{"twin_t": t}`` (two-well) or ``{"lambda2": l}``
    (nematic, ``diag(1/l, l)``)."""
    from .construction import twin_segment_point
    from .energies import NematicEnergy, TwoWellEnergy

    if isinstance(F, dict):
        if set(F) == {"twin_t"} and isinstance(W, TwoWellEnergy) and W.lam > 1:
            if not 0 <= F["twin_t"] <= 1:
                raise ConfigError("twin_t must lie in [0, 1]")
            return twin_segment_point(W, float(F["twin_t"]))
        if set(F) == {"lambda2"} and isinstance(W, NematicEnergy):
            if not F["lambda2"] >= 1:
                raise ConfigError("lambda2 must be at least 1")
            return np.diag([1.0 / F["lambda2"], float(F["lambda2"])])
        raise ConfigError("F must be a 2x2 list, {twin_t} for two-well or {lambda2} for nematic")
    A = np.asarray(F, dtype=float)
    if A.shape != (2, 2) or not np.all(np.isfinite(A)):
        raise ConfigError("F must be a finite 2x2 matrix")
    return A


def _default_F(W):
    from .construction import twin_segment_point
    from .energies import NematicEnergy

    if isinstance(W, NematicEnergy):
        return np.diag([1.0 / 1.5, 1.5])
    if W.lam == 1.0:
        return np.eye(2)
    return twin_segment_point(W, 0.5)


# -- outputs ------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def _color(t):
    stops = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]
    t = min(max(t, 0.0), 1.0) * (len(stops) - 1)
    i = min(int(t), len(stops) - 2)
    f = t - i
    c = [round(a + f * (b - a)) for a, b in zip(stops[i], stops[i + 1])]
    return "#%02x%02x%02x" % tuple(c)


def write_svg(path, mesh, values, size=600, discs=()):
    """Per-cell heatmap of ``values`` on the reference mesh; ``discs`` are
    ``(center, radius, value)`` drawn on top with the same colour scale."""
    V = mesh.vertices
    lo, hi = V.min(axis=0), V.max(axis=0)
    s = size / float((hi - lo).max())
    vals = np.asarray(values, float)
    allv = np.concatenate([vals, [d[2] for d in discs]])
    fin = allv[np.isfinite(allv)]
    vmin, vmax = (float(fin.min()), float(fin.max())) if len(fin) else (0.0, 1.0)
    span = vmax - vmin if vmax > vmin else 1.0

    def col(v):
        return _color((v - vmin) / span) if math.isfinite(v) else "#ff0000"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">']
    for tri, v in zip(mesh.triangles, vals):
        P = (V[tri] - lo) * s
        pts = " ".join(f"{x:.3f},{size - y:.3f}" for x, y in P)
        parts.append(f'<polygon points="{pts}" fill="{col(v)}" stroke="none"/>')
    for c, r, v in discs:
        x, y = (np.asarray(c, float) - lo) * s
        parts.append(f'<circle cx="{x:.3f}" cy="{size - y:.3f}" r="{r * s:.3f}" fill="{col(v)}" '
                     'stroke="none"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


# -- table comparison ---------------------------------------------------------

def _read_table(obj):
    from .lamination import EnvelopeTable

    if isinstance(obj, EnvelopeTable):
        return obj.grid.to_dict(), obj.values.ravel()
    path = str(obj)
    if path.endswith(".csv"):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:4] != ["F11", "F12", "F21", "F22"]:
            raise ValueError("not an envelope CSV")
        keys = [tuple(r[:4]) for r in rows[1:]]
        return keys, np.array([float(r[4]) for r in rows[1:]])
    t = EnvelopeTable.load(path)
    return t.grid.to_dict(), t.values.ravel()


def compare_tables(a, b, tol):
    """Absolute and relative deviations between two envelope tables (objects,
    binary files or CSV exports).  Infinite entries must coincide."""
    ka, va = _read_table(a)
    kb, vb = _read_table(b)
    if ka != kb:
        raise ValueError("grid mismatch")
    fa, fb = np.isfinite(va), np.isfinite(vb)
    if np.any(fa != fb):
        return {"max_abs": math.inf, "mean_abs": math.inf, "max_rel": math.inf,
                "mean_rel": math.inf, "count": int(fa.sum()), "passed": False}
    d = np.abs(va[fa] - vb[fa])
    rel = d / np.maximum(1.0, np.abs(va[fa]))
    n = int(fa.sum())
    rep = {"max_abs": float(d.max()) if n else 0.0, "mean_abs": float(d.mean()) if n else 0.0,
           "max_rel": float(rel.max()) if n else 0.0, "mean_rel": float(rel.mean()) if n else 0.0,
           "count": n}
    rep["passed"] = rep["max_abs"] <= tol
    return rep


# -- kinds --------------------------------------------------------------------

def run_envelope(W, p, seed, out):
    from .energies import NematicEnergy
    from .envelopes import relaxed
    from .lamination import MatrixGrid, compare_with_density, rank_one_convexify, \
        rank_one_convexify_incompressible

    if isinstance(W, NematicEnergy):
        T = rank_one_convexify_incompressible(W, lam_max=p["lam_max"], step=p["step"],
                                              max_sweeps=p["max_sweeps"], tol=p["tol"])
        ref = relaxed(W)
        D = np.zeros((len(T.lam), 2, 2))
        D[:, 0, 0], D[:, 1, 1] = 1.0 / T.lam, T.lam
        rv = ref.batch(D)
        write_csv(os.path.join(out, "slice.csv"), ("lambda2", "lamination", "analytic"),
                  zip(T.lam, T.values, rv))
        return {"sweeps": T.iterations, "converged": T.converged,
                "max_abs": float(np.max(np.abs(T.values - rv)))}
    grid = MatrixGrid.box(p["half_width"], p["step"])
    T = rank_one_convexify(W, grid, tol=p["tol"], max_sweeps=p["max_sweeps"],
                           time_budget=p["time_budget"])
    T.save(os.path.join(out, "table.bin"))
    summary = {"sweeps": T.iterations, "converged": T.converged, "max_decrease": T.max_decrease}
    rows = [("sweep", i + 1, d) for i, d in enumerate(T.history)]
    try:
        ref = relaxed(W)
    except TypeError:
        ref = None
    if ref is not None:
        c = compare_with_density(T, ref, det_range=tuple(p["det_range"]))
        summary.update({"points": c.count, "mean_abs": c.mean_abs, "max_abs": c.max_abs,
                        "below": c.below})
        rows += [("mean_abs", 0, c.mean_abs), ("max_abs", 0, c.max_abs), ("below", 0, c.below),
                 ("points", 0, c.count)]
    write_csv(os.path.join(out, "envelope.csv"), ("quantity", "index", "value"), rows)
    return summary


def run_laminate(W, p, seed, out):
    from .construction import laminate_template, nematic_laminate, twin_laminate
    from .energies import NematicEnergy

    if isinstance(W, NematicEnergy):
        F = _matrix_param(p["F"], W)
        spec = nematic_laminate(F, W.gamma[1], k=p["k"])
    else:
        spec = twin_laminate(W, p["t"], k=p["k"], solution=p["solution"])
    tpl = laminate_template(spec)
    fld = tpl.field()
    with open(os.path.join(out, "laminate.json"), "w") as fh:
        json.dump(fld.to_dict(), fh, sort_keys=True)
    w = fld.energy(W, per_cell=True)
    d = fld.dets()
    mean = tpl.mean_energy(W)
    rows = [("mean_energy", mean), ("W_F", float(W(spec.F))), ("layer_fraction", tpl.layer_fraction),
            ("triangles", len(tpl.triangles)), ("min_det", float(d.min())),
            ("max_det", float(d.max())), ("integral_det_defect",
                                          abs(fld.integral_det() - tpl.polygon_area * np.linalg.det(spec.F)))]
    write_csv(os.path.join(out, "laminate.csv"), ("quantity", "value"), rows)
    write_svg(os.path.join(out, "laminate.svg"), fld, w)
    return dict(rows)


def run_translation(W, p, seed, out):
    from .recovery import translation_trial

    rows, worst, ok = [], 0.0, True
    for i in range(p["count"]):
        tr = translation_trial(seed + i, p["r"], p["mesh_n"], p["max_candidates"])
        q = bool(tr.qualifying[tr.index])
        ok &= q
        ratio = tr.mean_value / tr.bound if tr.bound > 0 else 0.0
        worst = max(worst, ratio)
        rows.append((seed + i, tr.bound, tr.mean_value, ratio, tr.value, q, tr.a0[0], tr.a0[1]))
    write_csv(os.path.join(out, "translation.csv"),
              ("seed", "bound", "lattice_mean", "mean_over_bound", "selected_value", "qualifying",
               "a0_x", "a0_y"), rows)
    return {"trials": len(rows), "worst_mean_over_bound": worst, "all_qualifying": ok}


def run_cover(W, p, seed, out):
    from .mesh import square_mesh
    from .recovery import CoverState, vitali_round

    st = CoverState.from_mesh(square_mesh(p["mesh_n"]), p["pixels"])
    rows = [(0, 0, st.area, st.domain_area, 0.0)]
    for _ in range(p["rounds"]):
        st = vitali_round(st, p["r"], p["mode"], fill=p["fill"])
        h = st.history[-1]
        rows.append((st.j, h["balls"], st.area, (1 - p["fill"] / 4) ** st.j * st.domain_area
                     if p["mode"] == "orientation" else (1 - p["fill"]) ** st.j * st.domain_area,
                     h["covered_fraction"]))
    write_csv(os.path.join(out, "cover.csv"),
              ("round", "balls", "area", "geometric_bound", "covered_fraction"), rows)
    return {"rounds": st.j, "final_area": st.area}


def _recovery_mode(W, mode):
    from .energies import NematicEnergy

    if mode is not None:
        return mode
    return "incompressible" if isinstance(W, NematicEnergy) else "orientation"


def run_recovery(W, p, seed, out):
    from .envelopes import relaxed
    from .mesh import affine_field, square_mesh
    from .recovery import write_trajectory_csv, recovery_sequence

    F = _matrix_param(p["F"], W) if p["F"] is not None else _default_F(W)
    Wqc = relaxed(W)
    u = affine_field(square_mesh(p["mesh_n"]), F)
    res = recovery_sequence(u, W, Wqc, p["eta"], _recovery_mode(W, p["mode"]), rounds=p["rounds"],
                            pixels=p["pixels"], delta=p["delta"])
    write_trajectory_csv(res.trajectory, os.path.join(out, "trajectory.csv"))
    final = res.iterates[-1]
    patches = [{"center": p.center, "rho": p.rho, "k": p.template.spec.k, "t": p.template.spec.t,
                "A": p.template.spec.A, "B": p.template.spec.B, "a": p.template.spec.a,
                "n": p.template.spec.n, "mean_energy": p.energy / p.area} for p in final.patches]
    with open(os.path.join(out, "final.json"), "w") as fh:
        json.dump({"base": final.base.to_dict(), "patches": patches}, fh, sort_keys=True,
                  default=_json_default)
    write_svg(os.path.join(out, "final.svg"), final.base, final.base.energy(W, per_cell=True),
              discs=[(p["center"], p["rho"], p["mean_energy"]) for p in patches])
    last = res.trajectory[-1]
    return {"rounds": last.round, "energy": last.energy, "bound": last.bound,
            "volume_remaining": last.volume_remaining, "min_det": last.min_det,
            "max_det_dev": last.max_det_dev}


def run_relax(W, p, seed, out):
    from .envelopes import relaxed
    from .solver import gap_report

    F = _matrix_param(p["F"], W) if p["F"] is not None else _default_F(W)
    rows = gap_report(W, relaxed(W), F, ns=tuple(p["ns"]), seed=seed, max_iter=p["max_iter"],
                      path=os.path.join(out, "gap.csv"))
    return {"h": [r.h for r in rows], "unrelaxed": [r.unrelaxed for r in rows],
            "relaxed": [r.relaxed for r in rows]}


def run_verify(W, p, seed, out):
    from .construction import solve_twinning, twin_laminate
    from .energies import sample_matrices
    from .envelopes import nematic_qc_2d, relaxed
    from .lamination import MatrixGrid, compare_with_density, quasiconvexity_jensen_test, \
        random_twin_laminates, rank_one_convexify
    from .solver import gradient_check

    Wqc = relaxed(W)
    grid = MatrixGrid.box(p["half_width"], p["step"])
    T = rank_one_convexify(W, grid, max_sweeps=p["max_sweeps"])
    c = compare_with_density(T, Wqc, det_range=(0.3, 3.0))
    write_csv(os.path.join(out, "envelope_consistency.csv"),
              ("points", "mean_abs", "max_abs", "below", "sweeps", "converged"),
              [(c.count, c.mean_abs, c.max_abs, c.below, T.iterations, T.converged)])
    checks = []
    Z = [W.U1, W.U2]
    for s in range(len(solve_twinning(W.U1, W.U2))):
        spec = twin_laminate(W, 0.5, solution=s)
        Z += [t * spec.A + (1 - t) * spec.B for t in np.linspace(0, 1, 9)]
    zero = max(float(Wqc(F)) for F in Z)
    checks.append(("envelope_zero_set", zero <= 1e-6, zero))
    nem = nematic_qc_2d(np.eye(2), 2.0)
    checks.append(("nematic_identity_value", nem == 2.0, nem))
    mono = all(d >= 0 for d in T.history)
    checks.append(("sweeps_monotone", mono, float(min(T.history))))
    checks.append(("table_above_envelope", c.below <= 1e-9, c.below))
    rep = quasiconvexity_jensen_test(Wqc, random_twin_laminates(W, p["laminates"], seed))
    checks.append(("jensen_relaxed", rep.passed, rep.worst_margin))
    rep_w = quasiconvexity_jensen_test(W, random_twin_laminates(W, p["laminates"], seed))
    checks.append(("jensen_unrelaxed_fails", not rep_w.passed, rep_w.worst_margin))
    g = gradient_check(W, sample_matrices(100, seed))
    checks.append(("gradient_check", g <= 1e-5, g))
    write_csv(os.path.join(out, "invariants.csv"), ("check", "passed", "value"), checks)
    return {"passed": all(ok for _, ok, _ in checks), "mean_abs": c.mean_abs, "max_abs": c.max_abs}


RUNNERS = {"envelope": run_envelope, "laminate": run_laminate, "translation": run_translation,
           "cover": run_cover, "recovery": run_recovery, "relax": run_relax, "verify": run_verify}


# -- entry point --------------------------------------------------------------

def _versions():
    import numba
    import scipy
    import shapely

    return {"qcrelax": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "shapely": shapely.__version__}


def _write_error(out, record):
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "error.json"), "w") as fh:
            json.dump(record, fh, sort_keys=True, indent=2)
    except OSError:
        pass
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def run(kind, config_path, out="qcrelax-out", seed=None, threads=None):
    """Run one experiment; returns the process exit status."""
    t0 = time.perf_counter()
    try:
        cfg = load_config(config_path)
        seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
        W, params = validate(kind, cfg)
    except (ConfigError, ValueError, TypeError) as exc:
        _write_error(out, {"status": "config", "kind": kind, "message": str(exc)})
        return EXIT_CONFIG
    if threads is not None:
        import numba

        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
    os.makedirs(out, exist_ok=True)
    try:
        summary = RUNNERS[kind](W, params, seed, out)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        _write_error(out, {"status": "error", "kind": kind, "type": type(exc).__name__,
                           "message": str(exc)})
        return EXIT_RUNTIME
    manifest = {"kind": kind, "config": cfg, "config_hash": config_hash(cfg), "seed": seed,
                "params": params, "versions": _versions(),
                "wall_time_s": time.perf_counter() - t0, "summary": summary}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2, default=_json_default)
    print(json.dumps(summary, sort_keys=True, default=_json_default))
    return 0


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="qcrelax", description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default="qcrelax-out")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    a = ap.parse_args(argv)
    return run(a.kind, a.config, a.out, a.seed, a.threads)


if __name__ == "__main__":
    sys.exit(main())
