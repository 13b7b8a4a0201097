import logging

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from mpct.errors import DimensionMismatch, RankDeficient
from mpct.model import LinearModel
from mpct.offset_free import (EstimatorState, ObserverGains, ReferenceTracker,
                              augmented_matrices, compute_reference, dare_residual,
                              design_observer_gains, estimator_spectral_radius,
                              observer_update, solve_dare)

from conftest import linear_offset_free_run, random_instance


def test_dare_matches_scipy(rng):
    for _ in range(20):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        Q = np.diag(rng.uniform(0.1, 5, n))
        R = np.diag(rng.uniform(0.1, 5, m))
        X = solve_dare(A, B, Q, R)
        ref = scipy.linalg.solve_discrete_are(A, B, Q, R)
        np.testing.assert_allclose(X, ref, rtol=1e-7, atol=1e-8 * np.abs(ref).max())
        assert dare_residual(A, B, Q, R, X) <= 1e-8


def test_scalar_observer_is_stable():
    model = LinearModel([[0.5]], [[1.0]], [[1.0]])
    gains = design_observer_gains(model, np.eye(2), np.eye(1))
    assert estimator_spectral_radius(model, gains) < 1.0


def test_cstr_observer_is_stable(cstr_controller):
    assert estimator_spectral_radius(cstr_controller.model, cstr_controller.gains) < 1.0


def test_origin_is_fixed_point():
    model = LinearModel([[0.5]], [[1.0]], [[1.0]])
    zero = ObserverGains(np.zeros((1, 1)), np.zeros((1, 1)))
    nxt = observer_update(EstimatorState.origin(1, 1), zero, model, [0.0], [0.0])
    assert nxt.x_hat[0] == 0.0 and nxt.d_hat[0] == 0.0


def test_observer_linearity(rng):
    model, _, _, _ = random_instance(rng)
    gains = ObserverGains(rng.normal(size=(model.n, model.p)), rng.normal(size=(model.p, model.p)))
    zu, zy = np.zeros(model.m), np.zeros(model.p)
    e1 = EstimatorState(rng.normal(size=model.n), rng.normal(size=model.p))
    e2 = EstimatorState(rng.normal(size=model.n), rng.normal(size=model.p))
    a = 1.7
    comb = EstimatorState(a * e1.x_hat + e2.x_hat, a * e1.d_hat + e2.d_hat)
    lhs = observer_update(comb, gains, model, zu, zy)
    r1 = observer_update(e1, gains, model, zu, zy)
    r2 = observer_update(e2, gains, model, zu, zy)
    np.testing.assert_allclose(lhs.x_hat, a * r1.x_hat + r2.x_hat, atol=1e-12)
    np.testing.assert_allclose(lhs.d_hat, a * r1.d_hat + r2.d_hat, atol=1e-12)


def test_observer_error_decays_at_spectral_rate():
    A = np.array([[0.95, 0.1], [0.0, 0.9]])
    B = np.array([[0.0], [1.0]])
    C = np.array([[1.0, 0.5]])
    model = LinearModel(A, B, C)
    gains = design_observer_gains(model, 0.01 * np.eye(3), np.eye(1))
    radius = estimator_spectral_radius(model, gains)
    x, d = np.array([1.0, -1.0]), np.array([0.4])
    est = EstimatorState.origin(2, 1)
    innov = []
    for k in range(200):
        u = np.array([np.sin(0.1 * k)])
        y = C @ x + d
        innov.append(np.linalg.norm(C @ est.x_hat + est.d_hat - y))
        est = observer_update(est, gains, model, u, y)
        x = A @ x + B @ u
    innov = np.array(innov)
    assert innov[-1] < 1e-3 * innov[0]
    assert innov[199] <= innov[99] * (radius + 0.02) ** 100


def test_observer_dimension_check():
    model = LinearModel([[0.5]], [[1.0]], [[1.0]])
    gains = ObserverGains(np.zeros((1, 1)), np.zeros((1, 1)))
    with pytest.raises(DimensionMismatch):
        observer_update(EstimatorState.origin(1, 1), gains, model, [0.0, 1.0], [0.0])


def test_augmented_matrices_layout():
    model = LinearModel([[0.5]], [[2.0]], [[3.0]], Bd=[[4.0]])
    A, B, C = augmented_matrices(model)
    np.testing.assert_array_equal(A, [[0.5, 4.0], [0.0, 1.0]])
    np.testing.assert_array_equal(B, [[2.0], [0.0]])
    np.testing.assert_array_equal(C, [[3.0, 1.0]])


def test_reference_at_origin():
    model = LinearModel([[0.5]], [[1.0]], [[1.0]])
    x, u = compute_reference(model, [0.0], [0.0])
    assert x[0] == 0.0 and u[0] == 0.0


def test_reference_scalar_example():
    model = LinearModel([[0.5]], [[1.0]], [[1.0]])
    x, u = compute_reference(model, [1.0], [0.0])
    assert x[0] == pytest.approx(1.0) and u[0] == pytest.approx(0.5)


def test_reference_residual_on_cstr(cstr_controller):
    model = cstr_controller.model
    y_r = np.array([0.05, 20.0])
    d = np.array([0.01, -3.0])
    x, u = compute_reference(model, y_r, d)
    res1 = (model.A - np.eye(6)) @ x + model.B @ u + model.Bd @ d
    res2 = model.C @ x - (y_r - d)
    assert max(np.abs(res1).max(), np.abs(res2).max()) <= 1e-8


def test_reference_is_minimum_norm():
    # two inputs, one output: the target pair is not unique
    model = LinearModel([[0.5]], [[1.0, 1.0]], [[1.0]])
    x, u = compute_reference(model, [1.0], [0.0])
    np.testing.assert_allclose(u, [0.25, 0.25])


def test_unsolvable_reference():
    model = LinearModel([[1.0]], [[0.0]], [[1.0]], Bd=[[1.0]])
    with pytest.raises(RankDeficient):
        compute_reference(model, [1.0], [1.0])


def test_tracker_keeps_previous_target(caplog):
    model = LinearModel([[1.0]], [[0.0]], [[1.0]], Bd=[[1.0]])
    tracker = ReferenceTracker(model)
    first = tracker([1.0], [0.0])
    with caplog.at_level(logging.WARNING):
        again = tracker([1.0], [1.0])
    assert again is first
    assert "keeping previous reference" in caplog.text
    with pytest.raises(RankDeficient):
        ReferenceTracker(model)([1.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-5, 5))
def test_reference_homogeneous(seed, alpha):
    rng = np.random.default_rng(seed)
    model, _, _, _ = random_instance(rng)
    model = LinearModel(model.A, model.B, model.C)
    y, d = rng.normal(size=model.p), rng.normal(size=model.p)
    try:
        x1, u1 = compute_reference(model, y, d)
    except RankDeficient:
        return
    x2, u2 = compute_reference(model, alpha * y, alpha * d)
    np.testing.assert_allclose(x2, alpha * x1, atol=1e-9 * (1 + np.abs(x1).max()))
    np.testing.assert_allclose(u2, alpha * u1, atol=1e-9 * (1 + np.abs(u1).max()))


def test_offset_free_tracking_on_linear_plant():
    err = linear_offset_free_run()
    assert err[0] > 0.1
    assert err[-1] <= 1e-4
