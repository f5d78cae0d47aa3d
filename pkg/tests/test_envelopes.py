import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcrelax import energies as E
from qcrelax import linalg
from qcrelax.construction import twin_segment_point
from qcrelax.envelopes import (RelaxedNematic, RelaxedTwoWell, TwoWellEnvelopeParams, nematic_qc_2d,
                               nematic_regime, relaxed, two_well_qc, two_well_qc_batch,
                               two_well_qc_compiled)

W2 = E.make_two_well(2.0, E.make_theta_default())
P2 = TwoWellEnvelopeParams.for_energy(W2)


def _orientation_matrix(a, b, s1, s2):
    return linalg.rotation(a) @ np.diag([s1, s2]) @ linalg.rotation(b)


matrices = st.builds(_orientation_matrix, st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi),
                     st.floats(0.2, 2.5), st.floats(0.2, 2.5))


def test_envelope_infinite_off_orientation():
    assert two_well_qc(np.diag([1.0, -1.0]), P2) == math.inf
    assert two_well_qc(np.zeros((2, 2)), P2) == math.inf


def test_envelope_rejects_3d():
    with pytest.raises(ValueError):
        two_well_qc(np.eye(3), P2)


def test_twin_directions_are_orthonormal():
    assert np.dot(P2.v, P2.w) == pytest.approx(0.0)
    assert np.linalg.norm(P2.v) == pytest.approx(1.0)
    assert np.linalg.norm(P2.w) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(matrices)
def test_envelope_below_density_and_nonnegative(F):
    q = two_well_qc(F, P2)
    assert -1e-12 <= q <= W2(F) + 1e-9


@settings(max_examples=30, deadline=None)
@given(matrices, st.floats(0, 2 * math.pi))
def test_envelope_frame_indifference(F, a):
    q = two_well_qc(F, P2)
    assert two_well_qc(linalg.rotation(a) @ F, P2) == pytest.approx(q, rel=1e-7, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(matrices, st.floats(0, math.pi), st.floats(0, math.pi), st.floats(0.05, 0.4))
def test_envelope_rank_one_midpoint_convexity(F, phi, psi, step):
    a = np.array([math.cos(phi), math.sin(phi)])
    n = np.array([math.cos(psi), math.sin(psi)])
    D = step * np.outer(a, n)
    lo, mid, hi = (two_well_qc(F + s * D, P2) for s in (-1.0, 0.0, 1.0))
    if math.isfinite(lo) and math.isfinite(hi):
        assert mid <= 0.5 * (lo + hi) + 1e-7


def test_envelope_vanishes_along_twin_segments():
    for s in (0, 1):
        for t in np.linspace(0, 1, 11)[1:]:
            assert two_well_qc(twin_segment_point(W2, t, solution=s), P2) <= 1e-9


def test_envelope_relaxes_identity():
    # Id lies on neither well, but between them along a twin: strictly below W
    assert two_well_qc(np.eye(2), P2) < W2(np.eye(2)) - 0.1


def test_compiled_kernel_matches_reference():
    rng = np.random.default_rng(1)
    F = rng.uniform(-3, 3, (3000, 2, 2))
    ref = two_well_qc_batch(F, P2)
    fast = two_well_qc_compiled(F, P2)
    fin = np.isfinite(ref)
    np.testing.assert_array_equal(np.isfinite(fast), fin)
    np.testing.assert_allclose(fast[fin], ref[fin], rtol=1e-8, atol=1e-9)


def test_one_well_envelope_zero_on_rotations():
    W1 = E.make_one_well(E.make_theta_default())
    R1 = relaxed(W1)
    assert R1(linalg.rotation(1.1)) == pytest.approx(0.0, abs=1e-12)
    assert R1(np.diag([0.9, 1.0 / 0.9])) <= W1(np.diag([0.9, 1.0 / 0.9]))


def test_relaxed_dispatch():
    assert isinstance(relaxed(W2), RelaxedTwoWell)
    assert isinstance(relaxed(E.make_nematic(2, (0.5, 2.0), 2)), RelaxedNematic)
    with pytest.raises(TypeError):
        relaxed(E.ConstantEnergy())


def test_nematic_regimes():
    assert nematic_qc_2d(np.eye(2), 2.0) == 2.0
    assert nematic_regime(np.eye(2), 2.0) == "flat"
    F = np.diag([1 / 3.0, 3.0])
    assert nematic_regime(F, 2.0) == "unrelaxed"
    assert nematic_qc_2d(F, 2.0) == pytest.approx((1 / 3.0 / 0.5) ** 2 + (3.0 / 2.0) ** 2)
    assert nematic_regime(np.diag([1.0, 2.0]), 2.0) == "infinite"
    assert nematic_qc_2d(np.diag([1.0, 2.0]), 2.0) == math.inf


@settings(max_examples=40)
@given(st.floats(1.0, 4.0), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
def test_nematic_envelope_between_flat_value_and_density(lam, a, b):
    F = _orientation_matrix(a, b, 1 / lam, lam)
    Wn = E.make_nematic(2, (0.5, 2.0), 2)
    q = nematic_qc_2d(F, 2.0)
    assert 2.0 - 1e-12 <= q <= Wn(F) + 1e-9


def test_nematic_penalised_envelope():
    Rn = relaxed(E.make_nematic(2, (0.5, 2.0), 2)).with_penalty(10.0)
    assert Rn(np.diag([1.0, 1.1])) == pytest.approx(2.0 + 10.0 * 0.1**2)
    with pytest.raises(ValueError):
        nematic_qc_2d(np.eye(2), 1.0)
