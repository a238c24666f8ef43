import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from contvoc.config import PipelineConfig
from contvoc.errors import InsufficientDataError, NumericalError, ShapeError, ValidationError
from contvoc.estimators import BaselineVocoder, CNNClassifier, CNNRegressor, ContinuousVocoder
from contvoc.synth import BaselineVocoderParams, ContinuousVocoderParams
from contvoc.synthetic import ar_pulse_train

SMALL = dict(input_shape=(8, 16), conv_filters=(4, 4), dense_units=(32,), batch_size=16,
             learning_rate=3e-3, max_epochs=30, patience=8)


def bars(n, seed=0):
    # one bright horizontal bar per image; its row is the regression target
    rng = np.random.default_rng(seed)
    rows = rng.uniform(1, 6, n)
    yy = np.arange(8)[None, :, None]
    x = np.exp(-0.5 * ((yy - rows[:, None, None]) / 0.8) ** 2) * np.ones((1, 1, 16))
    return x + 0.05 * rng.standard_normal(x.shape), rows


def test_regressor_learns_and_scores():
    x, y = bars(500)
    est = CNNRegressor(**SMALL).fit(x[:400], y[:400])
    pred = est.predict(x[400:])
    assert pred.shape == (100,)
    assert est.score(x[400:], y[400:]) > 0.5
    assert est.history_.epochs_run <= SMALL["max_epochs"]


def test_regressor_multi_output_and_groups():
    x, y = bars(200)
    targets = np.column_stack([y, -2 * y])
    groups = np.repeat(np.arange(10), 20)
    est = CNNRegressor(**{**SMALL, "max_epochs": 3}).fit(x, targets, groups=groups)
    assert est.predict(x[:5]).shape == (5, 2)
    with pytest.raises(InsufficientDataError):
        CNNRegressor(**SMALL).fit(x, y, groups=np.zeros(200))


def test_voiced_mask_limits_training():
    x, y = bars(100)
    with pytest.raises(InsufficientDataError):
        CNNRegressor(**SMALL).fit(x, y, groups=np.repeat(np.arange(5), 20), voiced_mask=np.zeros(100, bool))


def test_classifier_probabilities():
    x, y = bars(300, seed=1)
    labels = (y > 3.5).astype(int)
    est = CNNClassifier(**SMALL).fit(x, labels)
    proba = est.predict_proba(x[:50])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert np.all((proba >= 0) & (proba <= 1))
    np.testing.assert_array_equal(est.classes_, [0, 1])
    assert est.score(x, labels) > 0.8
    with pytest.raises(ValidationError):
        CNNClassifier(**SMALL).fit(x, y)


def test_clone_and_params():
    est = CNNRegressor(**SMALL)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    twin.set_params(max_epochs=2)
    assert twin.max_epochs == 2 and est.max_epochs == 30


def test_fits_are_reproducible():
    x, y = bars(120)
    a = CNNRegressor(**{**SMALL, "max_epochs": 3}).fit(x, y)
    b = CNNRegressor(**{**SMALL, "max_epochs": 3}).fit(x, y)
    np.testing.assert_array_equal(a.predict(x), b.predict(x))


def test_input_checks():
    x, y = bars(50)
    with pytest.raises(NotFittedError):
        CNNRegressor(**SMALL).predict(x)
    with pytest.raises(ShapeError):
        CNNRegressor(**SMALL).fit(x[:, :4], y)
    bad = x.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(NumericalError):
        CNNRegressor(**SMALL).fit(bad, y)
    with pytest.raises(ValidationError):
        CNNRegressor(**{**SMALL, "validation_fraction": 1.5}).fit(x, y)


def test_continuous_vocoder_round_trip():
    w = ar_pulse_train(120, 0.6)
    voc = ContinuousVocoder()
    params = voc.fit_transform(w)
    assert isinstance(params, ContinuousVocoderParams)
    assert not voc.prototype_.fallback
    y = voc.inverse_transform(params)
    assert len(y) == params.grid.duration_samples
    assert np.max(np.abs(y.samples)) == pytest.approx(0.99)
    np.testing.assert_array_equal(voc.transform(w).contf0.contf0, params.contf0.contf0)
    with pytest.raises(NotFittedError):
        ContinuousVocoder().inverse_transform(params)


def test_baseline_vocoder_and_config():
    w = ar_pulse_train(120, 0.5)
    voc = BaselineVocoder(PipelineConfig(noise_seed=4)).fit(w)
    params = voc.transform(w)
    assert isinstance(params, BaselineVocoderParams)
    a = voc.inverse_transform(params).samples
    np.testing.assert_array_equal(a, voc.inverse_transform(params).samples)
    with pytest.raises(ShapeError):
        voc.transform(np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        ContinuousVocoder(PipelineConfig(sample_rate=16000)).fit(w)
