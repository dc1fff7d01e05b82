"""Subset eigenvalue constants, their Gaussian bounds, and breakdown points.

The theoretical searches use the leading SSC/SSS terms with ``k = alpha n``,
``tau' = tau / n`` and ``lambda_n ~ Lambda_n ~ n``, which makes both
convergence conditions functions of ``(alpha, tau')`` only::

    g(a)  = 1 + 3e sqrt(6 ln(e / a))
    C1    = 4 alpha g(2 alpha) / (1 + tau')
    C2    = 2 tau' / (1 + tau') * (sqrt(2 alpha g(2 alpha)) + sqrt(alpha g(alpha)))

All logarithms are natural.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corruption import AttackSpec, GenConfig, apply_attack, derive_seed, generate_clean, l2_error
from .errors import EmptyFeasible, ParameterOutOfRange, TooLarge

E = math.e
ENUM_GUARD = 20


# -- exact constants by enumeration -------------------------------------------

@dataclass(frozen=True)
class SscSssConstants:
    m: int
    lambda_m: float
    Lambda_m: float
    exact: bool = True


def ssc_sss_bruteforce(X: np.ndarray, m: int, chunk: int = 4096) -> SscSssConstants:
    """Min of ``lambda_min`` and max of ``lambda_max`` of ``X_S X_S^T`` over all ``|S| = m``."""
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    if n > ENUM_GUARD:
        raise TooLarge(f"n={n} exceeds the enumeration guard {ENUM_GUARD}")
    if not 1 <= m <= n:
        raise ParameterOutOfRange(f"m={m} outside [1, {n}]")
    outer = np.einsum("in,jn->nij", X, X)  # per-sample rank-one terms
    lo, hi = np.inf, -np.inf
    combos = itertools.combinations(range(n), m)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        G = outer[block].sum(axis=1)
        ev = np.linalg.eigvalsh(G)
        lo = min(lo, ev[:, 0].min())
        hi = max(hi, ev[:, -1].max())
    # X_S X_S^T is PSD; clip round-off below zero
    return SscSssConstants(m, max(float(lo), 0.0), float(hi), True)


# -- bound formulas ------------------------------------------------------------

def gaussian_gram_bounds(n: float, d: float, delta: float = 0.1, eps: float = 0.1) -> tuple[float, float]:
    """High-probability ``(upper, lower)`` bounds on the extreme eigenvalues of ``X X^T``."""
    if not 0 < eps < 0.5:
        raise ParameterOutOfRange("eps must lie in (0, 1/2)")
    if not 0 < delta < 1:
        raise ParameterOutOfRange("delta must lie in (0, 1)")
    if n <= 0 or d <= 0:
        raise ParameterOutOfRange("n and d must be positive")
    c = 24 * E**2 * math.log(3 / eps)
    c2 = 24 * E**2
    dev = math.sqrt(c * n * d + c2 * n * math.log(2 / delta)) / (1 - 2 * eps)
    return n + dev, n - dev


def _growth(x: float) -> float:
    return 1 + 3 * E * math.sqrt(6 * math.log(x))


def ssc_sss_leading_terms(n: float, k: float) -> tuple[float, float]:
    """Explicit leading terms of the SSS (``Lambda_k``) and SSC (``lambda_k``) bounds.

    The unspecified ``O(sqrt(nd + n log(1/delta)))`` corrections are left out.
    """
    if not 0 < k <= n:
        raise ParameterOutOfRange("need 0 < k <= n")
    upper = k * _growth(E * n / k)
    lower = n if k == n else n - (n - k) * _growth(E * n / (n - k))
    return upper, lower


def subgaussian_gram_bounds(n, d, lambda_max_Sigma, lambda_min_Sigma, C_K, c_K, delta) -> tuple[float, float]:
    if min(n, d, c_K) <= 0 or C_K < 0 or lambda_min_Sigma < 0 or lambda_max_Sigma < lambda_min_Sigma:
        raise ParameterOutOfRange("constants must be positive with lambda_min <= lambda_max")
    if not 0 < delta < 1:
        raise ParameterOutOfRange("delta must lie in (0, 1)")
    t = math.sqrt(math.log(2 / delta) / c_K)
    spread = C_K * math.sqrt(d * n) + t * math.sqrt(n)
    return lambda_max_Sigma * n + spread, lambda_min_Sigma * n - spread


# -- theoretical breakdown ------------------------------------------------------

def growth_ratio(a):
    """``g(a) = 1 + 3e sqrt(6 ln(e / a))``, vectorized over ``a``."""
    a = np.asarray(a, dtype=float)
    return 1 + 3 * E * np.sqrt(6 * np.log(E / a))


def corals_constraints(alpha, tau_rel):
    """Normalized ``(C1, C2)``; both must be ``< 1``."""
    alpha = np.asarray(alpha, dtype=float)
    tau_rel = np.asarray(tau_rel, dtype=float)
    g1 = growth_ratio(alpha)
    g2 = growth_ratio(2 * alpha)
    c1 = 4 * alpha * g2 / (1 + tau_rel)
    c2 = 2 * tau_rel / (1 + tau_rel) * (np.sqrt(2 * alpha * g2) + np.sqrt(alpha * g1))
    return c1, c2


@dataclass(frozen=True)
class GridSpec:
    alpha_step: float = 1e-4
    alpha_max: float = 0.05
    tau_step: float = 1e-3
    tau_max: float = 1.0

    def __post_init__(self):
        if min(self.alpha_step, self.alpha_max, self.tau_step) <= 0 or self.tau_max < 0:
            raise ParameterOutOfRange("grid steps and alpha_max must be positive")

    def alphas(self) -> np.ndarray:
        m = int(round(self.alpha_max / self.alpha_step))
        return self.alpha_step * np.arange(1, m + 1)

    def taus(self) -> np.ndarray:
        m = int(round(self.tau_max / self.tau_step))
        return self.tau_step * np.arange(0, m + 1)

    def refined(self, factor: int = 10) -> "GridSpec":
        return GridSpec(self.alpha_step / factor, self.alpha_max, self.tau_step / factor, self.tau_max)


@dataclass(frozen=True)
class BreakdownResult:
    alpha_star: float
    tau_star: Optional[float]
    constraint_values: dict
    grid: dict
    branch: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "alpha_star": self.alpha_star,
            "tau_star": self.tau_star,
            "branch": self.branch,
            "constraint_values": self.constraint_values,
            "grid": self.grid,
        }


def corals_breakdown_search(grid: GridSpec = GridSpec(), taus: Optional[Sequence[float]] = None) -> BreakdownResult:
    """Largest ``alpha`` on the grid for which some ``tau'`` satisfies both constraints.

    Among the feasible ``tau'`` at the optimum, the one with the smallest
    ``max(C1, C2)`` is reported (ties to the smaller ``tau'``).
    """
    alphas = grid.alphas()
    tgrid = grid.taus() if taus is None else np.asarray(taus, dtype=float)
    # scan alpha blocks from the top so memory stays bounded on refined grids
    block = max(1, 2_000_000 // max(tgrid.size, 1))
    for stop in range(alphas.size, 0, -block):
        lo = max(0, stop - block)
        c1, c2 = corals_constraints(alphas[lo:stop, None], tgrid[None, :])
        feasible = (c1 < 1) & (c2 < 1)
        rows = np.flatnonzero(feasible.any(axis=1))
        if rows.size:
            break
    else:
        raise EmptyFeasible("no (alpha, tau') grid point satisfies both constraints")
    r = rows[-1]
    i = lo + r
    slack = np.where(feasible[r], np.maximum(c1[r], c2[r]), np.inf)
    j = int(np.argmin(slack))
    c1, c2 = c1[r:r + 1], c2[r:r + 1]
    i_row = 0
    return BreakdownResult(
        alpha_star=float(alphas[i]),
        tau_star=float(tgrid[j]),
        constraint_values={"C1": float(c1[i_row, j]), "C2": float(c2[i_row, j])},
        grid={"alpha_step": grid.alpha_step, "alpha_max": grid.alpha_max,
              "tau_step": grid.tau_step, "tau_max": grid.tau_max, "n_tau": int(tgrid.size)},
    )


def crr_branch_values(alpha):
    """Left-hand sides of the two CRR branches: ``tau' = 0`` and ``tau' -> inf``."""
    alpha = np.asarray(alpha, dtype=float)
    g1 = growth_ratio(alpha)
    g2 = growth_ratio(2 * alpha)
    return 4 * alpha * g2, 2 * (np.sqrt(2 * alpha * g2) + np.sqrt(alpha * g1))


def crr_breakdown_search(grid: GridSpec = GridSpec()) -> BreakdownResult:
    """Largest grid ``alpha`` satisfying either CRR branch."""
    alphas = grid.alphas()
    b0, binf = crr_branch_values(alphas)
    ok = (b0 < 1) | (binf < 1)
    rows = np.flatnonzero(ok)
    if rows.size == 0:
        raise EmptyFeasible("no alpha satisfies either CRR condition")
    i = rows[-1]
    branch = "tau=0" if b0[i] < 1 else "tau=inf"
    return BreakdownResult(
        alpha_star=float(alphas[i]),
        tau_star=0.0 if branch == "tau=0" else math.inf,
        constraint_values={"tau=0": float(b0[i]), "tau=inf": float(binf[i])},
        grid={"alpha_step": grid.alpha_step, "alpha_max": grid.alpha_max},
        branch=branch,
    )


# -- empirical breakdown --------------------------------------------------------

@dataclass
class EmpiricalCurve:
    alphas: list = field(default_factory=list)
    mean_errors: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    alpha_hat: float = math.nan


def cell_dataset(gen: GenConfig, attack_kind: str, alpha: float, repeat: int):
    """Dataset for one (alpha, repeat) cell; identical for every fitter."""
    seed = derive_seed(gen.seed, float(alpha), int(repeat))
    clean = generate_clean(GenConfig(gen.n, gen.d, gen.sigma, seed))
    return apply_attack(clean, AttackSpec(attack_kind, float(alpha), derive_seed(seed, "attack")))


def empirical_curve(fit: Callable, gen: GenConfig, attack_kind: str, alpha_grid: Sequence[float],
                    error_threshold: float = 1.0, repeats: int = 20, stop_at_failure: bool = True) -> EmpiricalCurve:
    """Mean l2 error per ``alpha``; ``alpha_hat`` is the end of the passing prefix.

    ``fit(data)`` returns coefficient estimates; a raised error counts as an
    infinite error for that repeat.
    """
    alpha_grid = [float(a) for a in alpha_grid]
    if any(b <= a for a, b in zip(alpha_grid, alpha_grid[1:])):
        raise ParameterOutOfRange("alpha_grid must be strictly ascending")
    if repeats < 1:
        raise ParameterOutOfRange("repeats must be >= 1")
    curve = EmpiricalCurve()
    for alpha in alpha_grid:
        errs = []
        fails = 0
        for r in range(repeats):
            data = cell_dataset(gen, attack_kind, alpha, r)
            try:
                errs.append(l2_error(fit(data), data.meta.w_true))
            except Exception:
                fails += 1
                errs.append(math.inf)
        mean = float(np.mean(errs))
        curve.alphas.append(alpha)
        curve.mean_errors.append(mean)
        curve.failures.append(fails)
        if mean > error_threshold and stop_at_failure:
            break
    prefix = math.nan
    for a, m in zip(curve.alphas, curve.mean_errors):
        if m > error_threshold:
            break
        prefix = a
    curve.alpha_hat = prefix
    return curve


def empirical_breakdown(fitter_id: str, gen: GenConfig, attack_kind: str, alpha_grid: Sequence[float],
                        error_threshold: float = 1.0, repeats: int = 20, params=None) -> float:
    """Largest ``alpha`` before the first grid point whose mean error exceeds the threshold.

    ``nan`` when the first grid point already fails.
    """
    from .fitters import FitParams, run_fitter

    params = FitParams(attack=attack_kind) if params is None else params
    curve = empirical_curve(lambda data: run_fitter(fitter_id, data, params).w_hat,
                            gen, attack_kind, alpha_grid, error_threshold, repeats)
    return curve.alpha_hat
