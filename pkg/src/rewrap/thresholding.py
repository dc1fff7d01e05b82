"""Hard thresholding by magnitude.

Two directions are used by the estimators and they are easy to mix up:

* :func:`hard_threshold` keeps the ``k`` *largest* magnitudes of a vector
  (the corruption update in TRIP/CRR);
* :func:`ht_support` returns the indices of the ``k`` *smallest* magnitudes
  (the TORRENT active set).

Ties in magnitude are broken by ascending index in both cases.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import BudgetOutOfRange


def _check(v, k):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if not isinstance(k, (int, np.integer)) or k < 0 or k > v.shape[0]:
        raise BudgetOutOfRange(f"budget k={k} outside [0, {v.shape[0]}]")
    return v, int(k)


def hard_threshold(v, k: int) -> np.ndarray:
    """Zero all but the ``k`` largest-magnitude entries of ``v``."""
    v, k = _check(v, k)
    return np.where(_kernels.top_k_mask(np.abs(v), k), v, 0.0)


def ht_support(v, k: int) -> np.ndarray:
    """Sorted indices of the ``k`` smallest-magnitude entries of ``v``."""
    v, k = _check(v, k)
    return np.flatnonzero(_kernels.bottom_k_mask(np.abs(v), k))


def top_k_support(v, k: int) -> np.ndarray:
    """Sorted indices of the ``k`` largest-magnitude entries of ``v``."""
    v, k = _check(v, k)
    return np.flatnonzero(_kernels.top_k_mask(np.abs(v), k))
