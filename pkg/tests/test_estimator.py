import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from crossfusor.estimator import CrossfusorRegressor, window_seed

TINY = dict(hidden_size=6, n_heads=2, ff_size=8, unet_channels=(4, 8), n_steps=20, epochs=1, max_steps=3,
            batch_size=16)


@pytest.fixture(scope="module")
def est(synth_windows):
    return CrossfusorRegressor(**TINY).fit(synth_windows.history, synth_windows.future)


def test_params_round_trip_through_clone():
    e = CrossfusorRegressor(n_heads=2, ablations=("no_noise_scaling",), learning_rate=5e-4)
    c = clone(e)
    assert c.get_params() == e.get_params()
    assert not hasattr(c, "model_")
    assert c.set_params(epochs=3).epochs == 3


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        CrossfusorRegressor().predict(np.zeros((1, 30, 8)))


def test_fitted_attributes(est, synth_windows):
    assert est.n_iter_ == 3 and len(est.loss_curve_) == 1 and len(est.step_loss_) == 3
    assert est.n_features_in_ == 8
    assert est.model_.config.future_frames == synth_windows.future.shape[1]


def test_predict_shape_and_finiteness(est, synth_windows):
    pred = est.predict(synth_windows.history[:5])
    assert pred.shape == (5, 50) and np.all(np.isfinite(pred))
    assert est.predict(synth_windows.history[0]).shape == (1, 50)


def test_predictions_independent_of_batch_order_and_size(est, synth_windows):
    X = synth_windows.history[:6]
    a = est.predict(X)
    b = est.predict(X[::-1])[::-1]
    est.set_params(predict_batch_size=2)
    try:
        c = est.predict(X)
    finally:
        est.set_params(predict_batch_size=512)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-4)
    np.testing.assert_allclose(a, c, rtol=0, atol=1e-4)


def test_multi_sample_is_mean_of_draws(est, synth_windows):
    X = synth_windows.history[:3]
    draws = [est.sample(X, draw=d) for d in range(3)]
    assert not np.array_equal(draws[0], draws[1])
    np.testing.assert_allclose(est.predict(X, n_samples=3), np.mean(draws, axis=0), rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        est.predict(X, n_samples=0)


def test_window_seed_depends_on_content_and_draw():
    h = np.ones((30, 8))
    assert window_seed(0, h, 0) == window_seed(0, h.copy(), 0)
    assert len({window_seed(0, h, 0), window_seed(1, h, 0), window_seed(0, h, 1), window_seed(0, h + 1e-9, 0)}) == 4


def test_input_validation(est):
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 29, 8)))
    with pytest.raises(ValueError):
        CrossfusorRegressor(**TINY).fit(np.zeros((2, 30, 8)), np.zeros((3, 50)))
    bad = np.zeros((2, 30, 8))
    bad[1, 4, 2] = np.nan
    with pytest.raises(ValueError):
        est.predict(bad)


def test_save_load_reproduces_predictions(est, synth_windows, tmp_path):
    est.save(tmp_path / "ck")
    back = CrossfusorRegressor.load(tmp_path / "ck")
    assert back.get_params() == est.get_params()
    X = synth_windows.history[:4]
    np.testing.assert_array_equal(back.predict(X), est.predict(X))


def test_denoising_trace_endpoints(est, synth_windows):
    h = synth_windows.history[7]
    trace = est.denoising_trace(h, [0, 20])
    assert set(trace) == {0, 20}
    np.testing.assert_array_equal(trace[0][0], est.sample(h[None])[0])
    assert np.all(trace[0][1] == 0)
    with pytest.raises(ValueError):
        est.denoising_trace(h, [21])
