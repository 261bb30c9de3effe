"""Input validation helpers for the estimator-style API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError

__all__ = ["check_sequence_array", "check_is_fitted"]


def check_sequence_array(
    X,
    name: str = "X",
    frames: int | None = None,
    min_frames: int | None = None,
    dtype=np.float64,
) -> np.ndarray:
    """Coerce to a rank-5 (sequences, frames, channels, height, width) array.

    A single rank-4 sequence is promoted to a batch of one. Values must be
    finite; frame-count expectations are enforced when given.
    """
    arr = np.asarray(X)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5:
        raise ShapeError(
            f"{name} must be (sequences, frames, channels, height, width), got shape {arr.shape}"
        )
    if arr.shape[0] < 1:
        raise UsageError(f"{name} is empty")
    if frames is not None and arr.shape[1] != frames:
        raise ShapeError(f"{name} has {arr.shape[1]} frames per sequence, expected {frames}")
    if min_frames is not None and arr.shape[1] < min_frames:
        raise ShapeError(f"{name} has {arr.shape[1]} frames per sequence, needs >= {min_frames}")
    arr = arr.astype(dtype, copy=False)
    if not np.isfinite(arr).all():
        raise ShapeError(f"{name} contains non-finite values")
    return arr


def check_is_fitted(estimator, attribute: str = "model_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise UsageError(
            f"{type(estimator).__name__} is not fitted yet; call fit() before predicting"
        )
