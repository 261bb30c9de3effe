"""Scikit-learn style front end for the video predictor.

The estimator follows the usual conventions: constructor arguments are
stored verbatim, ``get_params``/``set_params`` expose them for cloning and
grid search, validation happens in ``fit``, and learned state lives in
trailing-underscore attributes. It therefore composes with ``sklearn.clone``
and pipeline-style tooling without importing anything from scikit-learn.
"""

from __future__ import annotations

import inspect

import numpy as np

from .architecture import Model, SequenceSpec, preset
from .datasets import SequenceDataset
from .errors import UsageError
from .training import TrainConfig, evaluate, train
from .validation import check_is_fitted, check_sequence_array

__all__ = ["VideoPredictor"]


class VideoPredictor:
    """Recurrent multi-scale video forecaster with a fit/predict interface.

    fit(X) consumes sequences shaped (N, input_frames + output_frames, c, h, w)
    with values in [0, 1]; predict(X) maps the first ``input_frames`` frames
    of each sequence to ``output_frames`` forecast frames.
    """

    def __init__(
        self,
        preset: str = "ms6",
        hidden: int = 32,
        input_frames: int = 10,
        output_frames: int = 10,
        epochs: int = 5,
        learning_rate: float = 3e-4,
        batch_size: int = 4,
        seed: int = 0,
        dtype: str = "float32",
        kernel_small: int = 3,
        kernel_large: int = 5,
    ):
        self.preset = preset
        self.hidden = hidden
        self.input_frames = input_frames
        self.output_frames = output_frames
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed
        self.dtype = dtype
        self.kernel_small = kernel_small
        self.kernel_large = kernel_large
        self.model_: Model | None = None
        self.history_: list[dict] | None = None

    # -- parameter protocol --------------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "VideoPredictor":
        valid = self._param_names()
        for key, value in params.items():
            if key not in valid:
                raise UsageError(
                    f"invalid parameter {key!r} for VideoPredictor; valid: {', '.join(valid)}"
                )
            setattr(self, key, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"VideoPredictor({args})"

    # -- estimator surface ----------------------------------------------------

    def _sequence_spec(self) -> SequenceSpec:
        return SequenceSpec(self.input_frames, self.output_frames)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.learning_rate,
            batch=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            dtype=self.dtype,
        )

    def fit(self, X, y=None) -> "VideoPredictor":
        """Train on full sequences; ``y`` is ignored (self-supervised task)."""
        seq = self._sequence_spec()
        cfg = self._train_config()
        arr = check_sequence_array(X, frames=seq.total, dtype=cfg.np_dtype)
        arch = preset(
            self.preset,
            hidden=self.hidden,
            input_channels=arr.shape[2],
            kernel_small=self.kernel_small,
            kernel_large=self.kernel_large,
        )
        result = train(arch, SequenceDataset(arr), seq, cfg)
        self.model_ = result.model
        self.history_ = result.history
        return self

    def predict(self, X) -> np.ndarray:
        """Forecast ``output_frames`` frames, clamped to [0, 1]."""
        check_is_fitted(self)
        seq = self._sequence_spec()
        arr = check_sequence_array(X, min_frames=seq.m, dtype=self.model_.dtype)
        from .tensor import Tensor  # local import keeps the public surface flat

        out = np.empty((arr.shape[0], seq.n) + arr.shape[2:], dtype=np.float64)
        batch = max(1, self.batch_size)
        for lo in range(0, arr.shape[0], batch):
            block = arr[lo : lo + batch]
            frames = [
                Tensor._wrap(np.ascontiguousarray(block[:, t])) for t in range(seq.m)
            ]
            preds = self.model_.rollout(frames, seq.n)
            for j, p in enumerate(preds):
                out[lo : lo + block.shape[0], j] = p.data
        return np.clip(out, 0.0, 1.0)

    def score(self, X, y=None) -> float:
        """Negative sum-over-pixels MSE on held-out sequences (higher is better)."""
        check_is_fitted(self)
        seq = self._sequence_spec()
        arr = check_sequence_array(X, frames=seq.total, dtype=self.model_.dtype)
        report = evaluate(self.model_, SequenceDataset(arr, split="score"), seq)
        return -report.overall["mse"]
