import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qcrelax import linalg

entries = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
mat2 = arrays(float, (2, 2), elements=entries)
mat3 = arrays(float, (3, 3), elements=entries)


def test_determinant_and_cofactor_examples():
    F = np.array([[2.0, 1.0], [0.5, 3.0]])
    assert linalg.determinant(F) == 5.5
    np.testing.assert_array_equal(linalg.cofactor(F), [[3.0, -0.5], [-1.0, 2.0]])
    G = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 4.0], [5.0, 6.0, 0.0]])
    assert linalg.determinant(G) == pytest.approx(np.linalg.det(G), abs=1e-12)


def test_minors_layout():
    F = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(linalg.minors(F), [1, 2, 3, 4, -2])
    G = np.diag([1.0, 2.0, 3.0])
    m = linalg.minors(G)
    assert m.shape == (19,)
    np.testing.assert_array_equal(m[9:18], np.diag([6.0, 3.0, 2.0]).ravel())
    assert m[-1] == 6.0


def test_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(ValueError):
        linalg.determinant(np.ones((2, 3)))
    with pytest.raises(ValueError):
        linalg.determinant(np.array([[1.0, np.nan], [0.0, 1.0]]))


@given(mat2)
def test_cofactor_identity_2d(F):
    np.testing.assert_allclose(linalg.cofactor(F) @ F.T, linalg.determinant(F) * np.eye(2),
                               atol=1e-10)


@given(mat3)
def test_cofactor_identity_3d(F):
    np.testing.assert_allclose(linalg.cofactor(F) @ F.T, linalg.determinant(F) * np.eye(3),
                               atol=1e-9)


@given(mat2)
def test_singular_values_match_lapack_2d(F):
    s = linalg.singular_values(F)
    np.testing.assert_allclose(s, np.sort(np.linalg.svd(F, compute_uv=False)), atol=1e-7)
    assert s[0] <= s[1]


@settings(max_examples=50)
@given(mat3)
def test_singular_values_match_lapack_3d(F):
    s = linalg.singular_values(F)
    np.testing.assert_allclose(s, np.sort(np.linalg.svd(F, compute_uv=False)), atol=1e-6)


@given(mat2)
def test_singular_value_product_is_abs_det(F):
    s = linalg.singular_values(F)
    assert s[0] * s[1] == pytest.approx(abs(linalg.determinant(F)), abs=1e-8)


def _brute_well_distance(F, U, n=20000):
    th = np.linspace(0, 2 * math.pi, n, endpoint=False)
    c, s = np.cos(th), np.sin(th)
    R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return float(np.min(np.sum((F - R @ U) ** 2, axis=(1, 2))))


@pytest.mark.parametrize("seed", range(5))
def test_well_distance_matches_rotation_sweep(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(-2, 2, (2, 2))
    U = np.diag([2.0, 0.5])
    d = linalg.dist_sq_to_SO_n_well(F, U)
    assert d == pytest.approx(_brute_well_distance(F, U), abs=1e-6)
    assert linalg.dist_sq_to_SO2_well_batch(F[None], U)[0] == pytest.approx(d, abs=1e-12)


@settings(max_examples=50)
@given(mat2, st.floats(0, 2 * math.pi))
def test_well_distance_is_frame_indifferent(F, a):
    U = np.diag([1.5, 1 / 1.5])
    Q = linalg.rotation(a)
    d0 = linalg.dist_sq_to_SO_n_well(F, U)
    assert linalg.dist_sq_to_SO_n_well(Q @ F, U) == pytest.approx(d0, abs=1e-9)


def test_well_distance_vanishes_on_well_3d():
    U = np.diag([1.2, 1.0, 1 / 1.2])
    c, s = math.cos(0.4), math.sin(0.4)
    Q = np.array([[c, 0, -s], [0, 1, 0], [s, 0, c]])
    assert linalg.dist_sq_to_SO_n_well(Q @ U, U) == pytest.approx(0.0, abs=1e-12)


def test_well_needs_positive_determinant():
    with pytest.raises(ValueError):
        linalg.dist_sq_to_SO_n_well(np.eye(2), np.diag([1.0, -1.0]))


@given(mat2)
def test_nearest_rotation_is_optimal(M):
    R = linalg.nearest_rotation_2d(M)
    assert np.allclose(R.T @ R, np.eye(2))
    assert np.trace(R.T @ M) == pytest.approx(linalg.signed_singular_sum(M), abs=1e-9)
