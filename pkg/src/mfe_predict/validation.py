"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .records import InputVector, MfeRecord, inputs_array


def check_inputs(x, n_features: int | None = 4) -> np.ndarray:
    """Coerce an input batch to a finite float ``(m, n_features)`` array.

    Accepts arrays, nested lists or a sequence of records / input vectors.
    """
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], (MfeRecord, InputVector)):
        x = inputs_array(x)
    x = check_array(x, dtype=np.float64, ensure_2d=True)
    if n_features is not None and x.shape[1] != n_features:
        raise ValueError(f"expected {n_features} input columns, got {x.shape[1]}")
    return x


def check_targets(x: np.ndarray, y) -> np.ndarray:
    """Finite float targets, 1-D for a single output and 2-D otherwise."""
    y = check_array(y, dtype=np.float64, ensure_2d=False)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    check_consistent_length(x, y)
    return y
