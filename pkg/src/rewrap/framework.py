"""REWRAP outer loop: refit a prior-accepting estimator around its last answer.

Every outer round hands the base estimator a normal prior whose mean is the
previous estimate and whose precision ``tau * I`` stays fixed, then takes the
base's point estimate as the next mean.  Named compositions:

=============  ==========================  =======================
name           base                        default tau (OAA / AAA)
=============  ==========================  =======================
CORALS         TRIP                        0.049 n / 0.049 n
TORRENT+       TORRENT inner loop          0.01 n / 0.0001 n
Tukey+         Tukey biweight IRLS         0.002 n / 0.0025 n
Andrews+       Andrews wave IRLS           0.0035 n / 0.0008 n
=============  ==========================  =======================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import FitReport, PriorSpec, RegressionDataset, TraceRecord, ols_fit, residuals
from .errors import ParameterOutOfRange
from .estimators import InnerConfig, RhoSpec, TripOperator, mest_fit, robust_scale, torrent_inner

BASES = ("trip", "torrent", "tukey", "andrews")

# tau / n per (base, attack)
DEFAULT_TAU_REL = {
    ("trip", "oaa"): 0.049,
    ("trip", "aaa"): 0.049,
    ("torrent", "oaa"): 0.01,
    ("torrent", "aaa"): 0.0001,
    ("tukey", "oaa"): 0.002,
    ("tukey", "aaa"): 0.0025,
    ("andrews", "oaa"): 0.0035,
    ("andrews", "aaa"): 0.0008,
}


def default_tau(base: str, attack: str, n: int) -> float:
    return DEFAULT_TAU_REL[(base, attack)] * n


@dataclass(frozen=True)
class RewrapConfig:
    base: str
    tau: float
    outer_tol: float = 1e-4
    max_outer: int = 100
    inner: InnerConfig = field(default_factory=InnerConfig)
    # M-estimator scale; None means 1.4826 * MAD of the OLS residuals
    sigma_hat: Optional[float] = None
    rho_c: Optional[float] = None

    def __post_init__(self):
        if self.base not in BASES:
            raise ParameterOutOfRange(f"unknown base {self.base!r}")
        if not self.tau >= 0:
            raise ParameterOutOfRange("tau must be >= 0")
        if self.max_outer < 1:
            raise ParameterOutOfRange("max_outer must be >= 1")
        if not self.outer_tol > 0:
            raise ParameterOutOfRange("outer_tol must be positive")


def simple_normal_update(posterior_map, tau: float) -> PriorSpec:
    """Next prior: centred on the last MAP estimate, fixed precision ``tau * I``."""
    return PriorSpec(np.asarray(posterior_map, dtype=float), tau=tau)


def _base_step(data: RegressionDataset, cfg: RewrapConfig, w_init: np.ndarray) -> Callable[[PriorSpec], FitReport]:
    inner = cfg.inner
    if cfg.base == "trip":
        if inner.k is None:
            raise ParameterOutOfRange("CORALS needs a corruption budget k")
        op = TripOperator(data, cfg.tau * np.eye(data.d))
        return lambda prior: op.fit(prior.mean, inner.k, inner.tol, inner.max_inner)
    if cfg.base == "torrent":
        keep = 1.0 if inner.keep_fraction is None else inner.keep_fraction
        return lambda prior: torrent_inner(data, prior, keep, inner.tol, inner.max_inner)
    sigma_hat = cfg.sigma_hat if cfg.sigma_hat is not None else robust_scale(residuals(data, w_init))
    rho = RhoSpec(cfg.base, cfg.rho_c, sigma_hat)
    return lambda prior: mest_fit(data, rho, prior, inner.tol, inner.max_inner)


def rewrap_fit(data: RegressionDataset, cfg: RewrapConfig,
               callback: Optional[Callable[[int, PriorSpec, FitReport], None]] = None) -> FitReport:
    """Run the REWRAP outer loop from the OLS estimate.

    Stops when ``||w_{t+1} - w_t|| <= cfg.outer_tol`` or after ``cfg.max_outer``
    rounds; ``callback(t, prior, report)`` sees every round.
    """
    w = ols_fit(data)
    step = _base_step(data, cfg, w)
    trace = []
    inner_total = 0
    converged = False
    rep = None
    t = 0
    for t in range(1, cfg.max_outer + 1):
        prior = simple_normal_update(w, cfg.tau)
        rep = step(prior)
        if callback is not None:
            callback(t, prior, rep)
        inner_total += rep.inner_iters_total
        change = float(np.linalg.norm(rep.w_hat - w))
        trace.append(TraceRecord(change))
        w = np.array(rep.w_hat)
        if change <= cfg.outer_tol:
            converged = True
            break
    return FitReport(
        w_hat=w,
        b_hat=rep.b_hat,
        k=rep.k,
        active_set=rep.active_set,
        outer_iters=t,
        inner_iters_total=inner_total,
        converged=converged,
        trace=trace,
    )


def corals_fit(data: RegressionDataset, tau: float, k: int, tol: float = 1e-4,
               max_outer: int = 100, max_inner: int = 400, **kw) -> FitReport:
    """CORALS: REWRAP around TRIP with corruption budget ``k``."""
    cfg = RewrapConfig("trip", tau, tol, max_outer, InnerConfig(tol, max_inner, k=k))
    return rewrap_fit(data, cfg, **kw)


def torrent_plus_fit(data: RegressionDataset, tau: float, keep_fraction: float, tol: float = 1e-4,
                     max_outer: int = 100, max_inner: int = 400, **kw) -> FitReport:
    cfg = RewrapConfig("torrent", tau, tol, max_outer, InnerConfig(tol, max_inner, keep_fraction=keep_fraction))
    return rewrap_fit(data, cfg, **kw)


def tukey_plus_fit(data: RegressionDataset, tau: float, sigma_hat: Optional[float] = None,
                   tol: float = 1e-4, max_outer: int = 100, max_inner: int = 400, **kw) -> FitReport:
    cfg = RewrapConfig("tukey", tau, tol, max_outer, InnerConfig(tol, max_inner), sigma_hat=sigma_hat)
    return rewrap_fit(data, cfg, **kw)


def andrews_plus_fit(data: RegressionDataset, tau: float, sigma_hat: Optional[float] = None,
                     tol: float = 1e-4, max_outer: int = 100, max_inner: int = 400, **kw) -> FitReport:
    cfg = RewrapConfig("andrews", tau, tol, max_outer, InnerConfig(tol, max_inner), sigma_hat=sigma_hat)
    return rewrap_fit(data, cfg, **kw)
