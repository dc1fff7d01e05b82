"""Named fitters with one calling convention, for sweeps and the CLI."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import FitReport, PriorSpec, RegressionDataset, residuals, ols_fit
from .errors import ParameterOutOfRange, UnknownFitter
from .estimators import InnerConfig, RhoSpec, crr_fit, mest_fit, robust_scale, torrent_inner, trip_fit
from .framework import DEFAULT_TAU_REL, RewrapConfig, rewrap_fit

FITTER_IDS = ("crr", "trip", "corals", "torrent", "torrent+", "tukey", "tukey+", "andrews", "andrews+")

_BASE_OF = {
    "trip": "trip", "corals": "trip",
    "torrent+": "torrent", "tukey+": "tukey", "andrews+": "andrews",
}
USES_TAU = frozenset(_BASE_OF)


@dataclass(frozen=True)
class FitParams:
    """Knobs shared by all fitters; unset values fall back to defaults.

    ``k`` defaults to the size of the dataset's recorded corruption support
    (the true ``k*``), ``keep_fraction`` to ``1 - k/n``.  ``tau`` overrides
    ``tau_rel * n``, which overrides the per-attack table.
    """

    k: Optional[int] = None
    keep_fraction: Optional[float] = None
    tau: Optional[float] = None
    tau_rel: Optional[float] = None
    attack: str = "oaa"
    sigma_hat: Optional[float] = None
    tol: float = 1e-4
    max_outer: int = 100
    max_inner: int = 400

    def with_(self, **kw) -> "FitParams":
        return replace(self, **kw)


def resolve_k(data: RegressionDataset, params: FitParams) -> int:
    if params.k is not None:
        return int(params.k)
    s = data.meta.corruption_support
    return 0 if s is None else int(s.size)


def resolve_keep(data: RegressionDataset, params: FitParams) -> float:
    if params.keep_fraction is not None:
        return float(params.keep_fraction)
    return 1.0 - resolve_k(data, params) / data.n


def resolve_tau(fitter: str, data: RegressionDataset, params: FitParams) -> float:
    if fitter not in USES_TAU:
        return 0.0
    if params.tau is not None:
        return float(params.tau)
    if params.tau_rel is not None:
        return params.tau_rel * data.n
    try:
        return DEFAULT_TAU_REL[(_BASE_OF[fitter], params.attack)] * data.n
    except KeyError:
        raise ParameterOutOfRange(f"no default tau for attack {params.attack!r}") from None


def resolve_sigma_hat(data: RegressionDataset, params: FitParams) -> float:
    if params.sigma_hat is not None:
        return float(params.sigma_hat)
    return robust_scale(residuals(data, ols_fit(data)))


def run_fitter(fitter: str, data: RegressionDataset, params: FitParams = FitParams()) -> FitReport:
    if fitter not in FITTER_IDS:
        raise UnknownFitter(fitter)
    inner = InnerConfig(params.tol, params.max_inner, k=resolve_k(data, params))
    tau = resolve_tau(fitter, data, params)
    if fitter == "crr":
        return crr_fit(data, inner)
    if fitter == "trip":
        # fixed zero-mean prior, no outer refinement
        return trip_fit(data, PriorSpec(np.zeros(data.d), tau=tau), inner)
    if fitter == "torrent":
        return torrent_inner(data, None, resolve_keep(data, params), params.tol, params.max_inner)
    if fitter in ("tukey", "andrews"):
        rho = RhoSpec(fitter, None, resolve_sigma_hat(data, params))
        return mest_fit(data, rho, None, params.tol, params.max_inner)
    base = _BASE_OF[fitter]
    if base == "torrent":
        inner = replace(inner, keep_fraction=resolve_keep(data, params))
    cfg = RewrapConfig(base, tau, params.tol, params.max_outer, inner,
                       sigma_hat=resolve_sigma_hat(data, params) if base in ("tukey", "andrews") else None)
    return rewrap_fit(data, cfg)
