"""Input validation helpers shared by the estimators and metrics."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

__all__ = ["check_matching_1d", "check_regression_data", "check_features", "check_is_fitted"]


def check_matching_1d(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs must be finite")
    return a, b


def check_regression_data(X, y, min_samples: int = 2) -> tuple[np.ndarray, np.ndarray]:
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    if X.shape[0] < min_samples:
        raise ValueError(f"n_samples={X.shape[0]}; need at least {min_samples} samples")
    return X, y


def check_features(X, n_features: int, owner: str = "the model") -> np.ndarray:
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise ValueError(
            f"X has {X.shape[1]} features, but {owner} is expecting {n_features} features as input"
        )
    return X
