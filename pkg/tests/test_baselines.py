import numpy as np
import pytest
from sklearn.base import clone

from crossfusor.baselines import ConstantVelocityRegressor, KalmanCV, cv_baseline
from crossfusor.metrics import horizon_metrics, rmse
from crossfusor.platoon import CH, window_platoons
from crossfusor.synthetic import generate_synthetic


def linear_history(x0=120.0, v=44.0, H=30):
    t = np.arange(H) / 10.0
    h = np.zeros((H, 8))
    h[:, CH["x_stu"]] = x0 + v * t
    h[:, CH["v_stu"]] = v
    return h


def test_linear_history_extrapolated_exactly():
    h = linear_history()
    pred = cv_baseline(h, 50)
    truth = 120.0 + 44.0 * (29 + np.arange(1, 51)) / 10.0
    assert np.max(np.abs(pred - truth)) < 1e-6


def test_constant_speed_window_zero_error():
    w = window_platoons(generate_synthetic(2, seed=4, scenario="steady"), 10)
    pred = ConstantVelocityRegressor().fit(w.history, w.future).predict(w.history)
    assert max(horizon_metrics(w.future, pred)["rmse"]) < 1e-4


def test_braking_error_grows_with_horizon():
    w = window_platoons(generate_synthetic(4, seed=5, scenario="brake"), 10)
    pred = ConstantVelocityRegressor().fit(w.history, w.future).predict(w.history)
    assert rmse(w.future, pred, 50) > rmse(w.future, pred, 10)


def test_filter_covariance_stays_positive_definite():
    h = linear_history()
    rng = np.random.default_rng(0)
    _, P = KalmanCV().filter(h[:, CH["x_stu"]] + rng.normal(size=30), h[:, CH["v_stu"]])
    assert np.all(np.linalg.eigvalsh((P + P.T) / 2) > 0)


def test_estimator_contract():
    est = ConstantVelocityRegressor(accel_noise=2.0)
    assert clone(est).get_params()["accel_noise"] == 2.0
    pred = est.fit(linear_history()[None], np.zeros((1, 20))).predict(linear_history())
    assert pred.shape == (1, 20)
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 30, 7)))
