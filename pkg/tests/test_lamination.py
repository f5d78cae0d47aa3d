import math

import numpy as np
import pytest

from qcrelax import energies as E
from qcrelax import lamination as L
from qcrelax import linalg
from qcrelax.construction import twin_laminate
from qcrelax.envelopes import relaxed

W2 = E.make_two_well(2.0, E.make_theta_default())
Q2 = relaxed(W2)


@pytest.fixture(scope="module")
def coarse_table():
    grid = L.MatrixGrid.box(2.0, 0.25)
    return L.rank_one_convexify(W2, grid, max_sweeps=80)


def test_grid_shape_and_indexing():
    g = L.MatrixGrid.box(1.0, 0.5)
    assert g.shape == (5, 5, 5, 5) and g.size == 625
    F = np.array([[0.5, -1.0], [0.0, 1.0]])
    idx = g.index_of(F)
    flat = np.ravel_multi_index(idx, g.shape)
    np.testing.assert_array_equal(g.matrices([flat])[0], F)
    with pytest.raises(ValueError):
        g.index_of(np.full((2, 2), 0.3))
    with pytest.raises(ValueError):
        g.index_of(np.full((2, 2), 2.0))


def test_grid_validation():
    with pytest.raises(ValueError):
        L.MatrixGrid(-1.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        L.MatrixGrid(1.0, -1.0, 0.5)
    with pytest.raises(ValueError):
        L.MatrixGrid(-1.0, 1.0, 0.0)


def test_default_directions_are_rank_one_lattice_vectors():
    g = L.MatrixGrid.box(1.0, 0.5)
    dirs = L.default_directions(g)
    assert len(dirs) == 16
    for D in dirs:
        s = np.linalg.svd(D, compute_uv=False)
        assert s[1] <= 1e-12 * s[0]
        g.offset(D)


def test_non_rank_one_direction_rejected():
    g = L.MatrixGrid.box(1.0, 0.5)
    with pytest.raises(ValueError):
        L.rank_one_convexify(W2, g, directions=[0.5 * np.eye(2)])


def test_det_sign_is_exact_on_lattice():
    g = L.MatrixGrid.box(1.0, 0.1)
    vals = L.evaluate_on_grid(W2, g)
    F = g.matrices(np.arange(g.size))
    exact = np.rint(F.reshape(-1, 4) / 0.1).astype(np.int64)
    det_int = exact[:, 0] * exact[:, 3] - exact[:, 1] * exact[:, 2]
    np.testing.assert_array_equal(np.isinf(vals.ravel()), det_int <= 0)


def test_table_is_sandwiched_between_envelope_and_density(coarse_table):
    T = coarse_table
    assert T.converged
    W = L.evaluate_on_grid(W2, T.grid)
    fin = np.isfinite(T.values)
    np.testing.assert_array_equal(fin, np.isfinite(W))
    assert np.all(T.values[fin] <= W[fin] + 1e-12)
    cmp = L.compare_with_density(T, Q2)
    assert cmp.below <= 1e-9
    assert cmp.count == int(fin.sum())


def test_sweeps_decrease_monotonically():
    g = L.MatrixGrid.box(2.0, 0.25)
    hist = []
    prev = [L.evaluate_on_grid(W2, g)]

    def log(sweep, dec):
        hist.append(dec)

    T = L.rank_one_convexify(W2, g, max_sweeps=5, log=log)
    assert len(hist) == 5 or T.converged
    assert np.all(T.values <= prev[0])
    assert all(d >= 0 for d in hist)


def test_table_is_deterministic(coarse_table):
    again = L.rank_one_convexify(W2, coarse_table.grid, max_sweeps=80)
    np.testing.assert_array_equal(again.values, coarse_table.values)


def test_one_well_identity_stays_zero():
    W1 = E.make_one_well(E.make_theta_default())
    T = L.rank_one_convexify(W1, L.MatrixGrid.box(1.5, 0.25), max_sweeps=30)
    assert T.value_at(np.eye(2)) == 0.0
    assert np.all(T.values[np.isfinite(T.values)] >= 0.0)


def test_stall_raises_when_requested():
    with pytest.raises(RuntimeError):
        L.rank_one_convexify(W2, L.MatrixGrid.box(2.0, 0.25), max_sweeps=1, tol=0.0,
                             raise_on_stall=True)


def test_save_load_round_trip(tmp_path, coarse_table):
    path = tmp_path / "t.bin"
    coarse_table.save(path)
    back = L.EnvelopeTable.load(path)
    assert back.grid.compatible(coarse_table.grid)
    np.testing.assert_array_equal(back.values, coarse_table.values)
    assert back.iterations == coarse_table.iterations
    with open(path, "rb") as fh:
        assert fh.read(8) == L.TABLE_MAGIC
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nonsense")
    with pytest.raises(ValueError):
        L.EnvelopeTable.load(bad)


def test_csv_export(tmp_path, coarse_table):
    path = tmp_path / "t.csv"
    coarse_table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "F11,F12,F21,F22,value"
    assert len(lines) - 1 == int(coarse_table.finite_mask().sum())


def test_inject_keeps_upper_bound(coarse_table):
    fine = L.MatrixGrid.box(2.0, 0.125)
    init = L.inject(coarse_table, fine, W2)
    W = L.evaluate_on_grid(W2, fine)
    assert np.all(init <= W)
    np.testing.assert_array_equal(init[::2, ::2, ::2, ::2], coarse_table.values)
    T = L.rank_one_convexify(W2, fine, initial=init, max_sweeps=3)
    assert L.compare_with_density(T, Q2).below <= 1e-9
    with pytest.raises(ValueError):
        L.inject(coarse_table, L.MatrixGrid.box(2.0, 0.1), W2)


def test_incompressible_slice_recovers_nematic_envelope():
    Wn = E.make_nematic(2, E.nematic_default_gamma(2.0), 2)
    S = L.rank_one_convexify_incompressible(Wn, lam_max=4.0, step=0.05)
    assert S.converged
    assert abs(S.value_at(np.eye(2)) - 2.0) <= 0.2
    assert S.value_at(np.diag([1.0, 1.2])) == math.inf
    Rn = relaxed(Wn)
    for lam in (1.0, 1.5, 1.9, 2.5, 3.0):
        F = linalg.rotation(0.3) @ np.diag([1 / lam, lam])
        assert S.value_at(F) >= Rn(F) - 1e-6
        assert S.value_at(F) <= Wn(F) + 1e-9


def test_jensen_margins():
    lams = L.random_twin_laminates(W2, 10, seed=4)
    assert L.quasiconvexity_jensen_test(E.ConstantEnergy(2.0), lams).worst_margin == pytest.approx(0.0, abs=1e-12)
    assert L.quasiconvexity_jensen_test(Q2, lams).passed
    rep = L.quasiconvexity_jensen_test(W2, lams)
    assert not rep.passed and rep.worst_margin < -0.1


def test_random_laminates_are_seeded_twins():
    a = L.random_twin_laminates(W2, 5, seed=1)
    b = L.random_twin_laminates(W2, 5, seed=1)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.A, y.A)
        assert W2(x.A) == pytest.approx(0.0, abs=1e-12)
        assert W2(x.B) == pytest.approx(0.0, abs=1e-12)


def test_polyconvex_combination_on_rank_one_pair():
    spec = twin_laminate(W2, 0.3)
    rep = L.polyconvex_combination_test(Q2, spec.F, [spec.A, spec.B])
    assert rep.feasible and rep.passed
    np.testing.assert_allclose(rep.weights, [0.3, 0.7], atol=1e-9)
    rep = L.polyconvex_combination_test(W2, spec.F, [spec.A, spec.B])
    assert rep.feasible and not rep.passed


def test_polyconvex_infeasible_is_not_a_violation():
    rep = L.polyconvex_combination_test(Q2, np.eye(2), [np.diag([2.0, 2.0]), np.diag([3.0, 3.0])])
    assert not rep.feasible and rep.passed
