"""Regression data model and closed-form least-squares primitives.

Covariates are stored column-per-sample: ``X`` has shape ``(d, n)`` and the
response ``y`` has shape ``(n,)``, so the model reads ``y = X.T @ w + b + eps``.
All solves go through the ``d x d`` Gram matrix.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, ParameterOutOfRange, ParseError, SingularGram

RCOND_CAP = 1e-12
FILE_MAGIC = "rewrap-dataset"
FILE_VERSION = "v1"


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DatasetMeta:
    """Generation metadata attached to a dataset.

    ``sigma`` is ``None`` when the noise level is unknown.
    """

    sigma: Optional[float] = None
    seed: int = 0
    w_true: Optional[np.ndarray] = None
    corruption_support: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma >= 0:
            raise ParameterOutOfRange(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterOutOfRange("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))
        if self.w_true is not None:
            object.__setattr__(self, "w_true", _frozen(self.w_true))
        if self.corruption_support is not None:
            s = np.unique(np.asarray(self.corruption_support, dtype=np.int64))
            s.setflags(write=False)
            object.__setattr__(self, "corruption_support", s)


@dataclass(frozen=True)
class RegressionDataset:
    X: np.ndarray
    y: np.ndarray
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y)
        if X.ndim != 2 or y.ndim != 1:
            raise DimensionMismatch("X must be 2-D (d x n) and y 1-D (n)")
        d, n = X.shape
        if n != y.shape[0]:
            raise DimensionMismatch(f"X has {n} columns but y has length {y.shape[0]}")
        if n < 1 or d < 1:
            raise DimensionMismatch("need n >= 1 and d >= 1")
        meta = self.meta
        if meta.w_true is not None and meta.w_true.shape != (d,):
            raise DimensionMismatch("w_true must have length d")
        s = meta.corruption_support
        if s is not None and s.size and (s.size > n or s[0] < 0 or s[-1] >= n):
            raise DimensionMismatch("corruption_support indices must lie in [0, n)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[0]

    def with_response(self, y, corruption_support=None) -> "RegressionDataset":
        """Copy of the dataset with ``y`` replaced (X and meta kept)."""
        meta = self.meta
        if corruption_support is not None:
            meta = DatasetMeta(meta.sigma, meta.seed, meta.w_true, corruption_support)
        return RegressionDataset(self.X, y, meta)


@dataclass(frozen=True)
class PriorSpec:
    """Normal prior N(mean, M^-1) entering estimators as a quadratic penalty.

    Either ``tau`` (``M = tau * I``) or an explicit symmetric PSD ``matrix``.
    """

    mean: np.ndarray
    tau: float = 0.0
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        mean = _frozen(self.mean)
        object.__setattr__(self, "mean", mean)
        if not np.all(np.isfinite(mean)):
            raise ParameterOutOfRange("prior mean must be finite")
        if self.matrix is None:
            if not self.tau >= 0:
                raise ParameterOutOfRange(f"tau must be >= 0, got {self.tau}")
            object.__setattr__(self, "tau", float(self.tau))
            return
        M = _frozen(self.matrix)
        d = mean.shape[0]
        if M.shape != (d, d):
            raise DimensionMismatch("penalty matrix must be d x d")
        scale = max(np.abs(M).max(), 1e-300)
        if np.abs(M - M.T).max() > 1e-10 * scale:
            raise ParameterOutOfRange("penalty matrix must be symmetric")
        if np.linalg.eigvalsh(M).min() < -1e-8 * np.linalg.norm(M, 2):
            raise ParameterOutOfRange("penalty matrix must be positive semi-definite")
        object.__setattr__(self, "matrix", M)

    def penalty(self) -> np.ndarray:
        d = self.mean.shape[0]
        if self.matrix is not None:
            return np.array(self.matrix)
        return self.tau * np.eye(d)

    @property
    def is_zero(self) -> bool:
        if self.matrix is not None:
            return not np.any(self.matrix)
        return self.tau == 0.0


@dataclass(frozen=True)
class TraceRecord:
    """One iteration of a fitter loop.

    ``change`` is the norm of the iterate update that the stopping test read:
    ``||w_new - w||`` for REWRAP, TORRENT and IRLS, ``||b_new - b||`` for TRIP.
    """

    change: float
    objective: Optional[float] = None


@dataclass(frozen=True)
class FitReport:
    w_hat: np.ndarray
    outer_iters: int
    inner_iters_total: int
    converged: bool
    trace: tuple = ()
    b_hat: Optional[np.ndarray] = None
    k: Optional[int] = None
    active_set: Optional[np.ndarray] = None
    iterates: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "w_hat", _frozen(self.w_hat))
        if self.b_hat is not None:
            object.__setattr__(self, "b_hat", _frozen(self.b_hat))
        object.__setattr__(self, "trace", tuple(self.trace))

    def to_record(self) -> dict:
        return {
            "w_hat": self.w_hat.tolist(),
            "outer_iters": self.outer_iters,
            "inner_iters_total": self.inner_iters_total,
            "converged": self.converged,
        }


class GramSolver:
    """Factor a symmetric d x d system once and solve it repeatedly.

    Raises :class:`SingularGram` when the reciprocal condition number falls
    below ``RCOND_CAP``, unless ``allow_pinv`` selects the minimum-norm
    pseudo-inverse instead.
    """

    def __init__(self, G: np.ndarray, allow_pinv: bool = False):
        G = np.asarray(G, dtype=float)
        evals = np.linalg.eigvalsh(G)
        top = evals[-1]
        self.rcond = evals[0] / top if top > 0 else 0.0
        self._pinv = None
        self._chol = None
        if not np.isfinite(self.rcond) or self.rcond < RCOND_CAP:
            if not allow_pinv:
                raise SingularGram(f"Gram matrix reciprocal condition {self.rcond:.3g} < {RCOND_CAP}")
            self._pinv = np.linalg.pinv(G, hermitian=True)
        else:
            self._chol = linalg.cho_factor(G, lower=True, check_finite=False)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._pinv is not None:
            return self._pinv @ rhs
        return linalg.cho_solve(self._chol, rhs, check_finite=False)


def gram(X: np.ndarray) -> np.ndarray:
    return X @ X.T


def ols_fit(data: RegressionDataset, allow_pinv: bool = False) -> np.ndarray:
    """Least-squares coefficients ``(X X^T)^-1 X y``."""
    return GramSolver(gram(data.X), allow_pinv).solve(data.X @ data.y)


def ridge_with_prior(data: RegressionDataset, b, prior: PriorSpec, allow_pinv: bool = False) -> np.ndarray:
    """Closed-form MAP under the quadratic prior for a fixed corruption ``b``.

    Returns ``(X X^T + M)^-1 [X (y - b) + M w0]``.
    """
    b = np.zeros(data.n) if b is None else np.asarray(b, dtype=float)
    if b.shape != (data.n,):
        raise DimensionMismatch("b must have length n")
    if prior.mean.shape != (data.d,):
        raise DimensionMismatch("prior mean must have length d")
    M = prior.penalty()
    rhs = data.X @ (data.y - b) + M @ prior.mean
    return GramSolver(gram(data.X) + M, allow_pinv).solve(rhs)


def residuals(data: RegressionDataset, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (data.d,):
        raise DimensionMismatch(f"w has shape {w.shape}, expected ({data.d},)")
    return data.y - data.X.T @ w


def round_half_up(x: float) -> int:
    """Nearest integer with halves rounded up; tolerant to float fuzz like 899.9999999999999."""
    return int(math.floor(x + 0.5 + 1e-9))


# -- dataset file format ----------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_dataset(data: RegressionDataset) -> str:
    """Text of the dataset file for ``data``."""
    meta = data.meta
    sigma = "nan" if meta.sigma is None else repr(float(meta.sigma))
    lines = [f"# {FILE_MAGIC} {FILE_VERSION} n={data.n} d={data.d} sigma={sigma} seed={meta.seed}"]
    if meta.w_true is not None:
        lines.append("# w_true " + " ".join(_fmt(v) for v in meta.w_true))
    if meta.corruption_support is not None:
        lines.append("# corrupted " + " ".join(str(int(i)) for i in meta.corruption_support))
    rows = np.vstack([data.X, data.y[None, :]]).T
    lines.extend(" ".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_dataset(path: str | os.PathLike, data: RegressionDataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_dataset(data))


def _parse_header(line: str) -> dict:
    parts = line[1:].split()
    if len(parts) < 2 or parts[0] != FILE_MAGIC or parts[1] != FILE_VERSION:
        raise ParseError(f"not a {FILE_MAGIC} {FILE_VERSION} file")
    fields = {}
    for tok in parts[2:]:
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed header field {tok!r}")
        fields[key] = val
    missing = {"n", "d", "sigma", "seed"} - fields.keys()
    if missing:
        raise ParseError(f"header missing {sorted(missing)}")
    return fields


def read_dataset(path: str | os.PathLike) -> RegressionDataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ParseError("missing header line")
    try:
        fields = _parse_header(lines[0])
        n, d = int(fields["n"]), int(fields["d"])
        sigma = float(fields["sigma"])
        seed = int(fields["seed"])
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    w_true = support = None
    rows: list[Sequence[float]] = []
    try:
        for ln in lines[1:]:
            if ln.startswith("# w_true"):
                w_true = [float(t) for t in ln.split()[2:]]
            elif ln.startswith("# corrupted"):
                support = [int(t) for t in ln.split()[2:]]
            elif ln.startswith("#"):
                continue
            else:
                rows.append([float(t) for t in ln.split()])
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    if len(rows) != n or any(len(r) != d + 1 for r in rows):
        raise ParseError(f"expected {n} data lines of {d + 1} values")
    arr = np.array(rows, dtype=float).reshape(n, d + 1)
    meta = DatasetMeta(
        sigma=None if math.isnan(sigma) else sigma,
        seed=seed,
        w_true=None if w_true is None else np.array(w_true),
        corruption_support=None if support is None else np.array(support, dtype=np.int64),
    )
    try:
        return RegressionDataset(arr[:, :d].T, arr[:, d], meta)
    except DimensionMismatch as exc:
        raise ParseError(str(exc)) from exc
