"""Single-prior robust estimators.

TRIP iterates the corruption vector through hard thresholding,
``b <- HT_k(P_MX b + (I - P_MX) y - P_MM w0)`` with
``P_MX = X^T (X X^T + M)^-1 X`` and ``P_MM = X^T (X X^T + M)^-1 M``;
CRR is the same iteration with ``M = 0``.  TORRENT alternates a penalized
least-squares fit on an active set with re-selection of the smallest
residuals.  Tukey and Andrews M-estimators are solved by IRLS with an
optional quadratic prior penalty.

The ``n x n`` projections are never formed; every application goes through
``d``-dimensional solves.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import (
    FitReport,
    GramSolver,
    PriorSpec,
    RegressionDataset,
    TraceRecord,
    gram,
    ols_fit,
    round_half_up,
)
from .errors import BudgetOutOfRange, DimensionMismatch, ParameterOutOfRange, SingularGram

TUKEY_C = 4.6851
ANDREWS_C = 1.338
MAD_SCALE = 1.4826


# -- rho functions -----------------------------------------------------------

@dataclass(frozen=True)
class RhoSpec:
    kind: str
    c: Optional[float] = None
    sigma_hat: float = 1.0

    def __post_init__(self):
        if self.kind not in ("tukey", "andrews"):
            raise ParameterOutOfRange(f"unknown rho kind {self.kind!r}")
        if self.c is None:
            object.__setattr__(self, "c", TUKEY_C if self.kind == "tukey" else ANDREWS_C)
        if not self.c > 0:
            raise ParameterOutOfRange("tuning constant c must be positive")
        if not self.sigma_hat > 0:
            raise ParameterOutOfRange("sigma_hat must be positive")

    def rho(self, z):
        z = np.asarray(z, dtype=float)
        c = self.c
        if self.kind == "tukey":
            inside = np.abs(z) <= c
            u = 1.0 - (np.where(inside, z, 0.0) / c) ** 2
            return np.where(inside, c * c / 6.0 * (1.0 - u**3), c * c / 6.0)
        inside = np.abs(z) <= np.pi * c
        return np.where(inside, c * c * (1.0 - np.cos(np.where(inside, z, 0.0) / c)), 2.0 * c * c)

    def psi(self, z):
        z = np.asarray(z, dtype=float)
        c = self.c
        if self.kind == "tukey":
            inside = np.abs(z) <= c
            return np.where(inside, z * (1.0 - (z / c) ** 2) ** 2, 0.0)
        inside = np.abs(z) <= np.pi * c
        return np.where(inside, c * np.sin(z / c), 0.0)

    def weight(self, z):
        """``psi(z) / z`` with the value 1 at ``z = 0``."""
        z = np.asarray(z, dtype=float)
        c = self.c
        if self.kind == "tukey":
            return np.where(np.abs(z) <= c, (1.0 - (z / c) ** 2) ** 2, 0.0)
        inside = np.abs(z) <= np.pi * c
        # sinc(x) = sin(pi x)/(pi x) handles the removable singularity
        return np.where(inside, np.sinc(z / (np.pi * c)), 0.0)


def rho_eval(rho: RhoSpec, z):
    return rho.rho(z)


def psi_eval(rho: RhoSpec, z):
    return rho.psi(z)


def weight_eval(rho: RhoSpec, z):
    return rho.weight(z)


def robust_scale(r) -> float:
    """Normal-consistent MAD of ``r``; 1.0 when the MAD is exactly zero."""
    r = np.asarray(r, dtype=float)
    s = MAD_SCALE * np.median(np.abs(r - np.median(r)))
    return float(s) if s > 0 else 1.0


@dataclass(frozen=True)
class InnerConfig:
    """Stopping rule and corruption budget for the inner fitters.

    ``k`` is the TRIP/CRR budget; ``keep_fraction`` is TORRENT's ``1 - beta``.
    """

    tol: float = 1e-4
    max_inner: int = 400
    k: Optional[int] = None
    keep_fraction: Optional[float] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterOutOfRange("tol must be positive")
        if self.max_inner < 1:
            raise ParameterOutOfRange("max_inner must be >= 1")
        if self.keep_fraction is not None and not 0 < self.keep_fraction <= 1:
            raise ParameterOutOfRange("keep_fraction must lie in (0, 1]")


def _zero_prior(d):
    return PriorSpec(np.zeros(d), tau=0.0)


# -- TRIP / CRR --------------------------------------------------------------

class TripOperator:
    """Factorizations for TRIP on a fixed ``(X, y, M)``.

    Building this once and calling :meth:`fit` with different prior means is
    what makes the REWRAP outer loop cheap: only the offset vector changes.
    """

    def __init__(self, data: RegressionDataset, M: np.ndarray, allow_pinv: bool = False):
        self.data = data
        self.M = np.asarray(M, dtype=float)
        G0 = gram(data.X)
        self._ols = GramSolver(G0, allow_pinv)
        self._pen = GramSolver(G0 + self.M, allow_pinv)
        # H = X^T (X X^T + M)^-1, stored n x d
        self.H = np.ascontiguousarray(self._pen.solve(data.X).T)

    def offset(self, w0: np.ndarray) -> np.ndarray:
        """``y - P_MM w0``; the fixed part of every TRIP update."""
        return self.data.y - self.H @ (self.M @ w0)

    def fit(self, w0, k: int, tol: float, max_inner: int, record: bool = False) -> FitReport:
        n = self.data.n
        if not 0 <= k <= n:
            raise BudgetOutOfRange(f"k={k} outside [0, {n}]")
        b, iters, conv, changes, iterates = _kernels.trip_loop(
            self.offset(np.asarray(w0, dtype=float)), self.H, self.data.X, self.data.y,
            k, tol, max_inner, record=record,
        )
        w_hat = self._ols.solve(self.data.X @ (self.data.y - b))
        return FitReport(
            w_hat=w_hat,
            b_hat=b,
            k=k,
            outer_iters=1,
            inner_iters_total=int(iters),
            converged=bool(conv),
            trace=[TraceRecord(float(c)) for c in changes],
            iterates=np.array(iterates) if record else None,
        )


def _budget(cfg: InnerConfig, data) -> int:
    if cfg.k is None:
        raise ParameterOutOfRange("TRIP/CRR need a corruption budget k")
    return int(cfg.k)


def trip_fit(data: RegressionDataset, prior: PriorSpec, cfg: InnerConfig,
             record: bool = False, allow_pinv: bool = False) -> FitReport:
    """Hard-thresholding regression under the quadratic prior ``prior``.

    Starts from ``b = 0`` and stops once ``||b_s - b_{s-1}|| <= cfg.tol`` or
    after ``cfg.max_inner`` updates (reported through ``converged``).  The
    returned coefficients use the unpenalized Gram:
    ``w_hat = (X X^T)^-1 X (y - b_hat)``.
    """
    if prior.mean.shape != (data.d,):
        raise DimensionMismatch("prior mean must have length d")
    op = TripOperator(data, prior.penalty(), allow_pinv)
    return op.fit(prior.mean, _budget(cfg, data), cfg.tol, cfg.max_inner, record)


def crr_fit(data: RegressionDataset, cfg: InnerConfig, record: bool = False,
            allow_pinv: bool = False) -> FitReport:
    """CRR: TRIP with a vanishing penalty."""
    return trip_fit(data, _zero_prior(data.d), cfg, record, allow_pinv)


# -- gradients and the momentum view -----------------------------------------

def _apply_proj(X, G, v):
    return X.T @ np.linalg.solve(G, X @ v)


def f_corals_gradient(data: RegressionDataset, prior: PriorSpec, b, w_t=None) -> np.ndarray:
    """Gradient ``(P_MX - I)(y - b) + P_MM w_t`` of the TRIP objective in ``b``.

    ``w_t`` defaults to the prior mean.
    """
    X = data.X
    w_t = prior.mean if w_t is None else np.asarray(w_t, dtype=float)
    M = prior.penalty()
    G = gram(X) + M
    GramSolver(G)
    v = data.y - np.asarray(b, dtype=float)
    pmm = X.T @ np.linalg.solve(G, M @ w_t)
    return (_apply_proj(X, G, v) - v) + pmm


def f_crr_gradient(data: RegressionDataset, b) -> np.ndarray:
    X = data.X
    G = gram(X)
    GramSolver(G)
    v = data.y - np.asarray(b, dtype=float)
    return _apply_proj(X, G, v) - v


def f_corals_objective(data: RegressionDataset, prior: PriorSpec, b, w_t=None) -> float:
    """TRIP objective with ``w`` profiled out, as a function of ``b``.

    Equals ``0.5 ||(P_MX - I)(y - b) + P_MM w_t||^2 + 0.5 (w_b - w_t)^T M (w_b - w_t)``
    where ``w_b`` is the ridge-with-prior fit for this ``b``.  By the envelope
    theorem its gradient is exactly :func:`f_corals_gradient`; the squared-norm
    term alone has that gradient only when ``M = 0``.
    """
    X = data.X
    w_t = prior.mean if w_t is None else np.asarray(w_t, dtype=float)
    M = prior.penalty()
    v = data.y - np.asarray(b, dtype=float)
    w_b = np.linalg.solve(gram(X) + M, X @ v + M @ w_t)
    r = X.T @ w_b - v
    dw = w_b - w_t
    return 0.5 * float(r @ r) + 0.5 * float(dw @ M @ dw)


@dataclass(frozen=True)
class MomentumDecomposition:
    grad: np.ndarray
    approx_grad: np.ndarray
    C: np.ndarray
    c_norm: float
    rel_c: float
    coef_current: float
    coef_previous: float


def momentum_decomposition(data: RegressionDataset, tau: float, b, b_prev_hat) -> MomentumDecomposition:
    """Split the TRIP gradient into a mix of two CRR gradients plus a remainder.

    With ``w_t = (X X^T)^-1 X (y - b_prev_hat)`` and ``M = tau I``::

        approx = (n/(n+tau) P_X - I)(y - b) + tau/(n+tau) P_X (y - b_prev_hat)
        C      = f_corals_gradient(b) - approx
    """
    if not tau >= 0:
        raise ParameterOutOfRange("tau must be >= 0")
    X, y, n = data.X, data.y, data.n
    b = np.asarray(b, dtype=float)
    b_prev_hat = np.asarray(b_prev_hat, dtype=float)
    G0 = gram(X)
    GramSolver(G0)
    w_t = np.linalg.solve(G0, X @ (y - b_prev_hat))
    prior = PriorSpec(w_t, tau=tau)
    grad = f_corals_gradient(data, prior, b)
    a = n / (n + tau)
    bcoef = tau / (n + tau)
    v = y - b
    approx = (a * _apply_proj(X, G0, v) - v) + bcoef * _apply_proj(X, G0, y - b_prev_hat)
    C = grad - approx
    c_norm = float(np.linalg.norm(C))
    gnorm = float(np.linalg.norm(grad))
    return MomentumDecomposition(grad, approx, C, c_norm, c_norm / gnorm if gnorm > 0 else 0.0, a, bcoef)


# -- TORRENT -----------------------------------------------------------------

def torrent_inner(data: RegressionDataset, prior: Optional[PriorSpec] = None,
                  keep_fraction: float = 1.0, tol: float = 1e-4, max_inner: int = 400,
                  allow_pinv: bool = False) -> FitReport:
    """Alternating active-set least squares with an optional quadratic prior.

    Starts from the full index set.  Each round fits
    ``(X_S X_S^T + M)^-1 (X_S y_S + M w0)``, recomputes residuals on all
    samples and keeps the ``round(keep_fraction * n)`` smallest.  Stops when
    the active set repeats, the coefficient change is ``<= tol``, or after
    ``max_inner`` rounds.  A repeated set is logged as a final zero change,
    since re-solving on it returns the same coefficients.
    """
    if not 0 < keep_fraction <= 1:
        raise ParameterOutOfRange("keep_fraction must lie in (0, 1]")
    X, y, n, d = data.X, data.y, data.n, data.d
    prior = _zero_prior(d) if prior is None else prior
    M = prior.penalty()
    Mw0 = M @ prior.mean
    keep = min(n, max(1, round_half_up(keep_fraction * n)))
    mask = np.ones(n, dtype=bool)
    w = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_inner + 1):
        XS = X[:, mask]
        w_new = GramSolver(XS @ XS.T + M, allow_pinv).solve(XS @ y[mask] + Mw0)
        change = np.inf if w is None else float(np.linalg.norm(w_new - w))
        w = w_new
        trace.append(TraceRecord(change))
        new_mask = _kernels.bottom_k_mask(np.abs(y - X.T @ w), keep)
        stable = bool(np.array_equal(new_mask, mask))
        mask = new_mask
        if change <= tol:
            converged = True
            break
        if stable:
            # the same active set gives the same solve, so the next change is exactly 0
            trace.append(TraceRecord(0.0))
            converged = True
            break
    return FitReport(
        w_hat=w,
        outer_iters=1,
        inner_iters_total=it,
        converged=converged,
        trace=trace,
        active_set=np.flatnonzero(mask),
    )


# -- M-estimators by IRLS ----------------------------------------------------

def mest_objective(data: RegressionDataset, rho: RhoSpec, w, prior: Optional[PriorSpec] = None) -> float:
    z = (data.y - data.X.T @ w) / rho.sigma_hat
    val = float(np.sum(rho.rho(z)))
    if prior is not None:
        dw = w - prior.mean
        val += 0.5 * float(dw @ prior.penalty() @ dw)
    return val


def mest_fit(data: RegressionDataset, rho: RhoSpec, prior: Optional[PriorSpec] = None,
             tol: float = 1e-4, max_inner: int = 400, start=None) -> FitReport:
    """Minimize ``sum rho(r_i / s) + 0.5 (w - w0)^T M (w - w0)`` by IRLS.

    Each round solves ``(X U X^T / s^2 + M) w = X U y / s^2 + M w0`` with
    ``U = diag(psi(z) / z)``.  For the redescending Tukey and Andrews losses
    this is a majorize-minimize scheme, so the objective never increases.
    Starts from OLS without a prior and from the prior mean with one, unless
    ``start`` is given.
    """
    X, y, d = data.X, data.y, data.d
    s2 = rho.sigma_hat**2
    if start is not None:
        w = np.array(start, dtype=float)
    elif prior is not None:
        w = np.array(prior.mean)
    else:
        w = ols_fit(data)
    M = np.zeros((d, d)) if prior is None else prior.penalty()
    Mw0 = np.zeros(d) if prior is None else M @ prior.mean
    trace = []
    converged = False
    it = 0
    for it in range(1, max_inner + 1):
        u = rho.weight((y - X.T @ w) / rho.sigma_hat)
        if not np.any(u) and not np.any(M):
            raise SingularGram("all IRLS weights vanished")
        Xu = X * u
        w_new = GramSolver(Xu @ X.T / s2 + M).solve(Xu @ y / s2 + Mw0)
        change = float(np.linalg.norm(w_new - w))
        w = w_new
        trace.append(TraceRecord(change, mest_objective(data, rho, w, prior)))
        if change <= tol:
            converged = True
            break
    return FitReport(w_hat=w, outer_iters=1, inner_iters_total=it, converged=converged, trace=trace)
