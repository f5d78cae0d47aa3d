import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qcrelax import energies as E
from qcrelax import linalg


@pytest.fixture
def W():
    return E.make_two_well(2.0, E.make_theta_default())


def test_theta_default_values():
    th = E.make_theta_default()
    assert th(1.0) == 0.0
    assert th(2.0) == pytest.approx(2.25)
    assert th(0.0) == math.inf
    assert th(-1.0) == math.inf
    assert th(0.5) == th(2.0)


def test_theta_tags_and_unknown():
    assert E.theta_from_tag("zero")(3.0) == 0.0
    assert E.theta_from_tag("linear")(3.0) == 3.0
    with pytest.raises(ValueError):
        E.theta_from_tag("cubic")


def test_ext_scale_rejects_zero_times_inf():
    assert E.ext_scale(2.0, math.inf) == math.inf
    with pytest.raises(ValueError):
        E.ext_scale(0.0, math.inf)


def test_two_well_vanishes_on_wells(W):
    for a in np.linspace(0, 2 * math.pi, 9):
        Q = linalg.rotation(a)
        assert W(Q @ W.U1) == pytest.approx(0.0, abs=1e-12)
        assert W(Q @ W.U2) == pytest.approx(0.0, abs=1e-12)


def test_two_well_infinite_off_orientation(W):
    assert W(np.diag([1.0, -1.0])) == math.inf
    assert W(np.zeros((2, 2))) == math.inf


def test_two_well_value_at_identity(W):
    # dist^2(Id, SO(2) diag(2, 1/2)) = (2 - 1)^2 + (1/2 - 1)^2
    assert W(np.eye(2)) == pytest.approx(1.25)


def test_two_well_needs_lambda_above_one():
    with pytest.raises(ValueError):
        E.make_two_well(1.0, E.make_theta_default())
    W1 = E.make_one_well(E.make_theta_default())
    assert len(W1.wells) == 1 and W1(linalg.rotation(0.7)) == pytest.approx(0.0, abs=1e-12)


admissible = arrays(float, (2, 2), elements=st.floats(-3, 3, allow_nan=False))


@given(admissible)
def test_compiled_distance_matches_reference(F):
    W = E.make_two_well(1.7, E.make_theta_zero())
    if linalg.det2(F) <= 0:
        assert W(F) == math.inf
        return
    ref = min(linalg.dist_sq_to_SO_n_well(F, U) for U in W.wells)
    assert W(F) == pytest.approx(ref, abs=1e-9)


@settings(max_examples=50)
@given(admissible, st.floats(0, 2 * math.pi))
def test_two_well_frame_indifference(F, a):
    W = E.make_two_well(2.0, E.make_theta_default())
    v = W(F)
    w = W(linalg.rotation(a) @ F)
    if math.isinf(v):
        assert math.isinf(w)
    else:
        assert w == pytest.approx(v, rel=1e-9, abs=1e-9)


def test_nematic_constraint_and_values():
    Wn = E.make_nematic(2, E.nematic_default_gamma(2.0), 2)
    assert Wn(np.eye(2)) == pytest.approx(4.25)
    # lambda = (1/2, 2) aligned with gamma: both ratios are one
    assert Wn(np.diag([2.0, 0.5])) == pytest.approx(2.0)
    assert Wn(np.diag([1.0, 1.1])) == math.inf
    with pytest.raises(ValueError):
        E.make_nematic(2, (0.5, 3.0), 2)


def test_nematic_penalty_variant():
    Wp = E.make_nematic(2, (0.5, 2.0), 2).with_penalty(10.0)
    F = np.diag([1.0, 1.1])
    assert Wp(F) == pytest.approx((1 / 0.5) ** 2 + (1.1 / 2) ** 2 + 10 * 0.1**2)
    assert Wp(np.diag([1.0, -1.0])) == math.inf


@pytest.mark.parametrize("W", [E.make_two_well(2.0, E.make_theta_default()),
                               E.make_one_well(E.make_theta_linear()),
                               E.make_nematic(2, (0.5, 2.0), 2),
                               E.make_nematic(2, (0.5, 2.0), 2).with_penalty(5.0),
                               E.ConstantEnergy(3.0)])
def test_descriptor_round_trip(W):
    W2 = E.from_descriptor(W.descriptor())
    F = np.array([[1.2, 0.1], [0.3, 0.9]])
    F = F / math.sqrt(linalg.det2(F))
    assert W2.descriptor() == W.descriptor()
    assert W2(F) == W(F)


def test_unknown_descriptor():
    with pytest.raises(ValueError):
        E.from_descriptor({"model": "neo-hookean"})


def test_growth_certificate_two_well(W):
    cert = E.certify_growth(W, E.orientation_samples(per_axis=12), c=20.0)
    assert cert.valid
    bad = E.certify_growth(W, E.orientation_samples(per_axis=12), c=1.0)
    assert not bad.valid and bad.worst_inequality in ("lower", "upper")


def test_growth_certificate_nematic():
    Wn = E.make_nematic(2, (0.5, 2.0), 2)
    cert = E.certify_growth(Wn, E.det_one_samples(per_axis=8), c=5.0)
    assert cert.valid


def test_theta_structure_constant_is_bounded_for_default_penalty():
    # theta(xy) <= C (1 + theta(x))(1 + theta(y)) with C = 4/3 for (t - 1/t)^2
    vals, growing = E.theta_structure_trend(E.make_theta_default(), [2.0, 10.0, 100.0])
    assert not growing
    assert max(vals) <= 4.0 / 3.0 + 1e-9


def test_theta_structure_constant_grows_for_linear_penalty():
    vals, growing = E.theta_structure_trend(E.make_theta_linear(), [2.0, 10.0, 100.0])
    assert growing


def test_sample_matrices_box():
    F = E.sample_matrices(300, seed=5)
    assert F.shape == (300, 2, 2)
    d = linalg.det2(F)
    assert np.all((d >= 0.5) & (d <= 2.0))
    assert np.all(np.sqrt(np.sum(F**2, axis=(1, 2))) <= 3.0)
    np.testing.assert_array_equal(F, E.sample_matrices(300, seed=5))


def test_submultiplicative_constant_is_finite_and_attained(W):
    F, G = E.sample_matrices(200, 1), E.sample_matrices(200, 2)
    c = E.check_submultiplicative(W, F, G)
    ratio = W.batch(F @ G) / ((1 + W.batch(F)) * (1 + W.batch(G)))
    assert math.isfinite(c) and c == pytest.approx(ratio.max())


def test_submultiplicative_rejects_infinite_samples(W):
    with pytest.raises(ValueError):
        E.check_submultiplicative(W, [np.diag([1.0, -1.0])], [np.eye(2)])
