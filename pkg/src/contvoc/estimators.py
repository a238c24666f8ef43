"""scikit-learn style wrappers around the functional API.

The networks get ``fit``/``predict`` (and ``predict_proba`` for V/UV); the
vocoders get ``fit``/``transform``/``inverse_transform``, where ``fit``
learns the residual prototype (continuous) or nothing (baseline). All
hyperparameters are constructor arguments, so ``get_params``/``set_params``
and ``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from .config import PipelineConfig
from .errors import InsufficientDataError
from .pipeline import analyze_baseline, analyze_continuous
from .synth import (
    BaselineVocoderParams,
    ContinuousVocoderParams,
    synthesize_baseline,
    synthesize_continuous,
)
from .tracks import DatasetSplit
from .validation import check_binary, check_fraction, check_frames, check_targets, check_waveform


class _CNNBase(BaseEstimator):
    _head = "linear"

    def __init__(self, input_shape=(64, 128), conv_filters=(16, 8), dense_units=(1000, 1000),
                 max_epochs=100, patience=10, batch_size=64, learning_rate=1e-3,
                 validation_fraction=0.1, random_state=0):
        self.input_shape = input_shape
        self.conv_filters = conv_filters
        self.dense_units = dense_units
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _spec(self, output_dim: int) -> nn.NetworkSpec:
        h, w = self.input_shape
        return nn.NetworkSpec(input_height=h, input_width=w, conv_filters=tuple(self.conv_filters),
                              dense_units=tuple(self.dense_units), output_dim=output_dim, head=self._head)

    def _fit(self, X, t, groups, mask=None):
        n = X.shape[0]
        if groups is None:
            # hold out a random subset of frames
            frac = check_fraction("validation_fraction", self.validation_fraction)
            rng = np.random.default_rng(self.random_state)
            groups = np.zeros(n, dtype=int)
            groups[rng.permutation(n)[:max(1, int(frac * n))]] = 1
            split = DatasetSplit(train=[0], validation=[1], test=[])
        else:
            groups = np.asarray(groups)
            if groups.shape != (n,):
                raise InsufficientDataError("groups needs one label per frame")
            split = self._group_split(groups)
        data = nn.FramePairDataset(X, t, groups, mask)
        cfg = nn.TrainConfig(max_epochs=self.max_epochs, patience=self.patience, batch_size=self.batch_size,
                             learning_rate=self.learning_rate, seed=self.random_state)
        model = nn.build_network(self._spec(t.shape[1]), seed=self.random_state)
        self.model_, self.history_ = nn.train(model, data, split, cfg, voiced_only=mask is not None)
        self.n_outputs_ = t.shape[1]
        return self

    def _group_split(self, groups) -> DatasetSplit:
        labels = sorted(set(groups.tolist()))
        if len(labels) < 2:
            raise InsufficientDataError("need at least two groups to hold one out for validation")
        rng = np.random.default_rng(self.random_state)
        order = [labels[i] for i in rng.permutation(len(labels))]
        k = max(1, int(self.validation_fraction * len(labels)))
        return DatasetSplit(train=order[k:], validation=order[:k], test=[])

    def _raw(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_frames(X, *self.input_shape)
        if X.shape[0] == 0:
            return np.zeros((0, self.n_outputs_))
        return np.concatenate([nn.forward(self.model_, X[s:s + 256]) for s in range(0, X.shape[0], 256)])


class CNNRegressor(RegressorMixin, _CNNBase):
    """Single-frame CNN regressor; targets are z-scored internally.

    ``fit(X, y, groups=None, voiced_mask=None)``: ``groups`` are utterance
    labels used to hold out whole utterances for early stopping; frames with
    a false ``voiced_mask`` are left out of both training and validation.
    """

    def fit(self, X, y, groups=None, voiced_mask=None):
        X = check_frames(X, *self.input_shape)
        t = check_targets(y, X.shape[0])
        self._fit(X, t, groups, voiced_mask)
        self.single_output_ = np.ndim(y) == 1
        return self

    def predict(self, X) -> np.ndarray:
        raw = self._raw(X)
        out = self.model_.denormalize(raw)
        return out[:, 0] if self.single_output_ else out


class CNNClassifier(ClassifierMixin, _CNNBase):
    """Binary single-frame classifier with a sigmoid head (V/UV)."""

    _head = "sigmoid"

    def fit(self, X, y, groups=None):
        X = check_frames(X, *self.input_shape)
        t = check_binary(y, X.shape[0])
        self.classes_ = np.array([0, 1])
        return self._fit(X, t, groups)

    def predict_proba(self, X) -> np.ndarray:
        p = self._raw(X)[:, 0]
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)


class _VocoderBase(TransformerMixin, BaseEstimator):
    def __init__(self, config: PipelineConfig | None = None):
        self.config = config

    @property
    def _cfg(self) -> PipelineConfig:
        return self.config or PipelineConfig()


class ContinuousVocoder(_VocoderBase):
    """``fit`` learns the residual prototype; ``transform`` analyses; ``inverse_transform`` synthesises."""

    def fit(self, w, y=None):
        w = check_waveform(w, self._cfg.sample_rate)
        res = analyze_continuous(w, self._cfg)
        self.prototype_ = res.prototype
        return self

    def transform(self, w) -> ContinuousVocoderParams:
        w = check_waveform(w, self._cfg.sample_rate)
        return analyze_continuous(w, self._cfg).params

    def fit_transform(self, w, y=None, **fit_params) -> ContinuousVocoderParams:
        w = check_waveform(w, self._cfg.sample_rate)
        res = analyze_continuous(w, self._cfg)
        self.prototype_ = res.prototype
        return res.params

    def inverse_transform(self, params: ContinuousVocoderParams):
        check_is_fitted(self, "prototype_")
        cfg = self._cfg
        return synthesize_continuous(params, self.prototype_, cfg.noise_seed, cfg.noise_gain)


class BaselineVocoder(_VocoderBase):
    """Pulse-or-noise vocoder driven by V/UV, F0 and MGC-LSP; ``fit`` only checks the input."""

    def fit(self, w=None, y=None):
        if w is not None:
            check_waveform(w, self._cfg.sample_rate)
        self.sample_rate_ = self._cfg.sample_rate
        return self

    def transform(self, w) -> BaselineVocoderParams:
        w = check_waveform(w, self._cfg.sample_rate)
        return analyze_baseline(w, self._cfg)

    def inverse_transform(self, params: BaselineVocoderParams):
        return synthesize_baseline(params, self._cfg.noise_seed)
