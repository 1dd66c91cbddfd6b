import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iitr.losses import (
    PenaltySpec,
    dloss_s,
    empirical_risk,
    loss_01,
    loss_hinge,
    loss_ramp,
    loss_s,
    penalty,
)
from iitr.nuisance import ContrastEstimate

reals = st.floats(-50, 50, allow_nan=False)


@pytest.mark.parametrize("u, expected", [(-1.0, 1.0), (0.0, 1.0), (0.5, 0.0)])
def test_loss_01(u, expected):
    assert loss_01(u) == expected


@pytest.mark.parametrize("u, expected", [(2.0, 0.0), (0.0, 1.0), (-1.0, 2.0)])
def test_loss_hinge(u, expected):
    assert loss_hinge(u) == expected


@pytest.mark.parametrize("u, s, expected", [(0.5, 1, 0.25), (-0.5, 0, 0.25), (-1.0, 1, 3.0)])
def test_loss_s(u, s, expected):
    assert loss_s(u, s) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("u, expected", [(0.5, 0.25), (-0.5, 1.75), (-2.0, 2.0)])
def test_loss_ramp(u, expected):
    assert loss_ramp(u) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("u, s, expected", [(-0.5, 0, -1.0), (0.3, 0, 0.0), (-2.0, 0, -2.0)])
def test_dloss_s(u, s, expected):
    assert dloss_s(u, s) == expected


def test_dloss_s_example_against_central_difference():
    h = 1e-6
    fd = (loss_s(-0.5 + h, 0) - loss_s(-0.5 - h, 0)) / (2 * h)
    assert fd == pytest.approx(-1.0, abs=1e-8)


def test_ramp_is_difference_of_convex_pieces():
    u = np.random.default_rng(0).uniform(-5, 5, 10_000)
    assert np.max(np.abs(loss_ramp(u) - (loss_s(u, 1) - loss_s(u, 0)))) < 1e-12


@pytest.mark.parametrize("s", [0.0, 1.0])
def test_loss_s_c1_at_knots(s):
    eps = 1e-9
    for knot in (s, s - 1):
        assert abs(loss_s(knot + eps, s) - loss_s(knot - eps, s)) < 1e-8
        assert abs(dloss_s(knot + eps, s) - dloss_s(knot - eps, s)) < 1e-7


@pytest.mark.parametrize("s", [0.0, 1.0])
def test_dloss_matches_finite_differences(s):
    rng = np.random.default_rng(1)
    u = rng.uniform(-4, 4, 1000)
    h = 1e-6
    fd = (loss_s(u + h, s) - loss_s(u - h, s)) / (2 * h)
    assert np.max(np.abs(fd - dloss_s(u, s))) < 1e-6


@settings(max_examples=300)
@given(reals, reals, st.floats(0.001, 0.999), st.sampled_from([0.0, 1.0]))
def test_loss_s_is_convex(u1, u2, t, s):
    lhs = loss_s(t * u1 + (1 - t) * u2, s)
    rhs = t * loss_s(u1, s) + (1 - t) * loss_s(u2, s)
    assert lhs <= rhs + 1e-12 * max(1.0, abs(rhs))


@given(reals)
def test_hinge_dominates_01(u):
    assert loss_hinge(u) >= loss_01(u)


def test_empirical_risk_hand_example():
    contrast = ContrastEstimate.from_tau([2.0, -1.0])
    X = np.array([[1.0], [1.0]])
    assert empirical_risk([1.0], contrast, X, "01") == 0.5


def test_zero_weights_give_zero_risk():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(20, 3))
    contrast = ContrastEstimate.from_tau(np.zeros(20))
    for loss in ("01", "hinge", "ramp"):
        assert empirical_risk(rng.normal(size=3), contrast, X, loss) == 0.0


@settings(max_examples=50)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_01_risk_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4))
    contrast = ContrastEstimate.from_tau(rng.normal(size=30))
    eta = rng.normal(size=4)
    assert empirical_risk(c * eta, contrast, X) == empirical_risk(eta, contrast, X)


def test_unknown_loss_rejected():
    with pytest.raises(ValueError):
        empirical_risk([1.0], ContrastEstimate.from_tau([1.0]), [[1.0]], "logistic")


def test_adaptive_penalty_hand_example():
    spec = PenaltySpec(lam=1.0, gamma=1.0, eta_int=[9.0, 2.0, 4.0])
    assert penalty([0.5, 1.0, -2.0], spec) == pytest.approx(1.0)


def test_zero_lambda_zero_penalty():
    spec = PenaltySpec(lam=0.0, eta_int=[1.0, 0.3, 2.0])
    assert penalty([5.0, -3.0, 7.0], spec) == 0.0


def test_unit_weights_reduce_to_lasso():
    eta = np.array([3.0, -1.5, 2.0, 0.25])
    adaptive = PenaltySpec(lam=0.7, gamma=1.0, eta_int=np.ones(4))
    lasso = PenaltySpec(lam=0.7)
    assert penalty(eta, adaptive) == pytest.approx(0.7 * 3.75)
    assert penalty(eta, lasso) == pytest.approx(0.7 * 3.75)


def test_near_zero_reference_excludes_coordinate():
    spec = PenaltySpec(lam=1.0, eta_int=[1.0, 1e-13, 2.0])
    w, excluded = spec.weights(3)
    assert excluded.tolist() == [False, True, False]
    assert penalty([1.0, 100.0, 2.0], spec) == pytest.approx(1.0)


def test_penalize_intercept_option():
    spec = PenaltySpec(lam=1.0, penalize_intercept=True)
    assert penalty([-2.0, 1.0], spec) == 3.0


@pytest.mark.parametrize("kw", [{"lam": -1.0}, {"gamma": 0.0}])
def test_penalty_spec_validation(kw):
    with pytest.raises(ValueError):
        PenaltySpec(**kw)
