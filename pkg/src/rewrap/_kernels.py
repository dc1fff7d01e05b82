"""Hot loops: top/bottom-k selection and the TRIP inner iteration.

Each kernel has a numba ``@njit`` version and a pure-numpy version.  The
numba path is used when numba imports and ``REWRAP_DISABLE_NUMBA`` is unset
(or ``0``); :func:`set_backend` switches at runtime.

Tie rule for every selection: equal magnitudes are ranked by ascending index,
so the lower index counts as the larger value in a top-k pick and as the
smaller value in a bottom-k pick.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
_env_off = os.environ.get("REWRAP_DISABLE_NUMBA", "").strip() not in ("", "0")
_use_numba = HAVE_NUMBA and not _env_off


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` for subsequent kernel calls."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend() -> str:
    return "numba" if _use_numba else "numpy"


# -- numpy path --------------------------------------------------------------

def _top_k_mask_np(a: np.ndarray, k: int) -> np.ndarray:
    n = a.shape[0]
    mask = np.zeros(n, dtype=np.bool_)
    if k <= 0:
        return mask
    if k >= n:
        mask[:] = True
        return mask
    t = np.partition(a, n - k)[n - k]
    mask = a > t
    need = k - int(np.count_nonzero(mask))
    if need:
        mask[np.flatnonzero(a == t)[:need]] = True
    return mask


def _bottom_k_mask_np(a: np.ndarray, k: int) -> np.ndarray:
    n = a.shape[0]
    mask = np.zeros(n, dtype=np.bool_)
    if k <= 0:
        return mask
    if k >= n:
        mask[:] = True
        return mask
    t = np.partition(a, k - 1)[k - 1]
    mask = a < t
    need = k - int(np.count_nonzero(mask))
    if need:
        mask[np.flatnonzero(a == t)[:need]] = True
    return mask


def _trip_loop_np(c, H, X, y, k, tol, max_inner, b, record):
    changes = np.empty(max_inner)
    iterates = np.empty((max_inner if record else 0, y.shape[0]))
    for s in range(max_inner):
        z = c + H @ (X @ (b - y))
        new = np.where(_top_k_mask_np(np.abs(z), k), z, 0.0)
        dv = new - b
        diff = np.sqrt(np.dot(dv, dv))
        b = new
        changes[s] = diff
        if record:
            iterates[s] = b
        if diff <= tol:
            return b, s + 1, True, changes[: s + 1], iterates[: s + 1]
    return b, max_inner, False, changes, iterates


# -- numba path --------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _top_k_mask_nb(a, k):
        n = a.shape[0]
        mask = np.zeros(n, dtype=np.bool_)
        if k <= 0:
            return mask
        if k >= n:
            mask[:] = True
            return mask
        t = np.partition(a, n - k)[n - k]
        cnt = 0
        for i in range(n):
            if a[i] > t:
                mask[i] = True
                cnt += 1
        for i in range(n):
            if cnt >= k:
                break
            if a[i] == t:
                mask[i] = True
                cnt += 1
        return mask

    @numba.njit(cache=True, nogil=True)
    def _bottom_k_mask_nb(a, k):
        n = a.shape[0]
        mask = np.zeros(n, dtype=np.bool_)
        if k <= 0:
            return mask
        if k >= n:
            mask[:] = True
            return mask
        t = np.partition(a, k - 1)[k - 1]
        cnt = 0
        for i in range(n):
            if a[i] < t:
                mask[i] = True
                cnt += 1
        for i in range(n):
            if cnt >= k:
                break
            if a[i] == t:
                mask[i] = True
                cnt += 1
        return mask

    @numba.njit(cache=True, nogil=True)
    def _trip_loop_nb(c, H, X, y, k, tol, max_inner, b, record):
        n = y.shape[0]
        changes = np.empty(max_inner)
        iterates = np.empty((max_inner if record else 0, n))
        for s in range(max_inner):
            z = c + H @ (X @ (b - y))
            mask = _top_k_mask_nb(np.abs(z), k)
            new = np.zeros(n)
            for i in range(n):
                if mask[i]:
                    new[i] = z[i]
            dv = new - b
            # BLAS dot on both paths keeps the stopping test bit-identical
            diff = np.sqrt(np.dot(dv, dv))
            b = new
            changes[s] = diff
            if record:
                iterates[s] = b
            if diff <= tol:
                return b, s + 1, True, changes[: s + 1], iterates[: s + 1]
        return b, max_inner, False, changes, iterates


# -- dispatch ----------------------------------------------------------------

def top_k_mask(a: np.ndarray, k: int) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if _use_numba:
        return _top_k_mask_nb(a, int(k))
    return _top_k_mask_np(a, int(k))


def bottom_k_mask(a: np.ndarray, k: int) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if _use_numba:
        return _bottom_k_mask_nb(a, int(k))
    return _bottom_k_mask_np(a, int(k))


def trip_loop(c, H, X, y, k, tol, max_inner, b0=None, record=False):
    """Iterate ``b <- HT_k(c + H X (b - y))`` from ``b0`` (zeros by default).

    Returns ``(b, iterations, converged, changes, iterates)``; ``iterates`` is
    empty unless ``record`` is set.
    """
    f = np.float64
    c = np.ascontiguousarray(c, dtype=f)
    H = np.ascontiguousarray(H, dtype=f)
    X = np.ascontiguousarray(X, dtype=f)
    y = np.ascontiguousarray(y, dtype=f)
    b = np.zeros_like(y) if b0 is None else np.array(b0, dtype=f)
    args = (c, H, X, y, int(k), float(tol), int(max_inner), b, bool(record))
    if _use_numba:
        return _trip_loop_nb(*args)
    return _trip_loop_np(*args)
