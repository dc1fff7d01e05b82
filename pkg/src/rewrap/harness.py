"""Experiment driver behind the command line: sweeps, CV for tau, diagnostics.

Sweep output is a CSV with the fixed column contract :data:`CSV_HEADER`.
Every cell is a pure function of its derived seed, so rows can be computed
in any order (or in parallel) and are written in plan order.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import RegressionDataset, residuals, round_half_up
from .corruption import AttackSpec, GenConfig, apply_attack, derive_seed, generate_clean, l2_error
from .errors import ParameterOutOfRange
from .estimators import momentum_decomposition
from .fitters import FITTER_IDS, FitParams, resolve_k, resolve_tau, run_fitter
from .framework import InnerConfig, RewrapConfig, rewrap_fit

CSV_HEADER = "fitter,n,d,alpha,attack,tau,seed,l2_error,outer_iters,inner_iters_total,converged,wall_ms"
AXES = ("n", "d", "alpha")


@dataclass(frozen=True)
class ResultRow:
    fitter: str
    n: int
    d: int
    alpha: float
    attack: str
    tau: float
    seed: int
    l2_error: float
    outer_iters: int
    inner_iters_total: int
    converged: bool
    wall_ms: float

    def csv_line(self) -> str:
        return ",".join([
            self.fitter, str(self.n), str(self.d), _num(self.alpha), self.attack, _num(self.tau),
            str(self.seed), _num(self.l2_error), str(self.outer_iters), str(self.inner_iters_total),
            "true" if self.converged else "false", f"{self.wall_ms:.3f}",
        ])

    def json_line(self) -> str:
        rec = asdict(self)
        if not math.isfinite(rec["l2_error"]):
            rec["l2_error"] = None
        return json.dumps(rec, sort_keys=False)


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


@dataclass(frozen=True)
class FitterSpec:
    fitter: str
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fitter not in FITTER_IDS:
            raise ParameterOutOfRange(f"unknown fitter {self.fitter!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    fitters: tuple
    axis: str
    values: tuple
    n: int = 2000
    d: int = 20
    sigma: float = 1.0
    alpha: float = 0.1
    attack: str = "oaa"
    repeats: int = 20
    master_seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ParameterOutOfRange(f"axis must be one of {AXES}")
        if self.repeats < 1:
            raise ParameterOutOfRange("repeats must be >= 1")
        vals = list(self.values)
        if not vals or any(v < 0 for v in vals) or vals != sorted(vals):
            raise ParameterOutOfRange("axis values must be non-negative and sorted")
        if self.axis != "alpha" and any(v <= 0 for v in vals):
            raise ParameterOutOfRange("n and d axis values must be positive")

    def cells(self):
        """``(axis value, fitter spec, repeat)`` in output order."""
        for v in self.values:
            for spec in self.fitters:
                for r in range(self.repeats):
                    yield v, spec, r


def fit_row(fitter: str, data: RegressionDataset, params: FitParams, alpha: float, attack: str, seed: int) -> ResultRow:
    """Fit once and package the outcome; any failure becomes a ``nan`` row."""
    t0 = time.perf_counter()
    try:
        tau = resolve_tau(fitter, data, params)
        rep = run_fitter(fitter, data, params)
        err = l2_error(rep.w_hat, data.meta.w_true) if data.meta.w_true is not None else math.nan
        outer, inner, conv = rep.outer_iters, rep.inner_iters_total, rep.converged
    except Exception:
        tau = params.tau if params.tau is not None else math.nan
        err, outer, inner, conv = math.nan, 0, 0, False
    wall = 1000.0 * (time.perf_counter() - t0)
    return ResultRow(fitter, data.n, data.d, float(alpha), attack, float(tau), int(seed),
                     float(err), int(outer), int(inner), bool(conv), wall)


def run_cell(plan: ExperimentPlan, value, spec: FitterSpec, repeat: int) -> ResultRow:
    seed = derive_seed(plan.master_seed, value, spec.fitter, repeat)
    n, d, alpha = plan.n, plan.d, plan.alpha
    if plan.axis == "n":
        n = int(value)
    elif plan.axis == "d":
        d = int(value)
    else:
        alpha = float(value)
    params = FitParams(attack=plan.attack).with_(**spec.overrides)
    try:
        data = generate_clean(GenConfig(n, d, plan.sigma, seed))
        data = apply_attack(data, AttackSpec(plan.attack, alpha, derive_seed(seed, "attack")))
    except Exception:
        return ResultRow(spec.fitter, n, d, alpha, plan.attack, math.nan, seed,
                         math.nan, 0, 0, False, 0.0)
    return fit_row(spec.fitter, data, params, alpha, plan.attack, seed)


def run_sweep(plan: ExperimentPlan, threads: int = 1) -> list[ResultRow]:
    cells = list(plan.cells())
    if threads <= 1:
        return [run_cell(plan, *c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map keeps submission order, so output order is independent of timing
        return list(pool.map(lambda c: run_cell(plan, *c), cells))


def write_csv(rows: Iterable[ResultRow], fh) -> None:
    fh.write(CSV_HEADER + "\n")
    for row in rows:
        fh.write(row.csv_line() + "\n")


# -- cross-validated tau --------------------------------------------------------

def fold_slices(n: int, folds: int) -> list[np.ndarray]:
    """Contiguous folds; the first ``n % folds`` folds get one extra sample."""
    if not 2 <= folds <= n:
        raise ParameterOutOfRange("need 2 <= folds <= n")
    base, extra = divmod(n, folds)
    out, start = [], 0
    for f in range(folds):
        size = base + (1 if f < extra else 0)
        out.append(np.arange(start, start + size))
        start += size
    return out


def subset(data: RegressionDataset, idx: np.ndarray) -> RegressionDataset:
    meta = data.meta
    support = None
    if meta.corruption_support is not None:
        support = np.flatnonzero(np.isin(idx, meta.corruption_support))
    return RegressionDataset(data.X[:, idx], data.y[idx],
                             type(meta)(meta.sigma, meta.seed, meta.w_true, support))


def trimmed_score(r: np.ndarray, keep: float = 0.7) -> float:
    """Mean of the smallest ``keep`` fraction of squared residuals."""
    if not 0 < keep <= 1:
        raise ParameterOutOfRange("keep must lie in (0, 1]")
    sq = np.sort(np.asarray(r, dtype=float) ** 2)
    m = max(1, round_half_up(keep * sq.size))
    return float(np.mean(sq[:m]))


@dataclass(frozen=True)
class CvResult:
    tau: float
    scores: dict


def cv_tau(data: RegressionDataset, fitter: str, tau_grid: Sequence[float], folds: int = 5,
           params: FitParams = FitParams(), keep: float = 0.7) -> CvResult:
    """Pick ``tau`` by k-fold CV on the trimmed held-out score.

    A candidate whose fit fails on any fold scores ``inf``.  Ties go to the
    smaller ``tau``.  An explicit ``params.k`` is scaled to the training size.
    """
    if len(tau_grid) == 0:
        raise ParameterOutOfRange("tau grid is empty")
    grid = sorted(float(t) for t in tau_grid)
    parts = fold_slices(data.n, folds)
    scores = {}
    for tau in grid:
        per_fold = []
        for f, test in enumerate(parts):
            train = np.concatenate([p for g, p in enumerate(parts) if g != f])
            tr = subset(data, train)
            p = params.with_(tau=tau, tau_rel=None)
            if params.k is not None:
                p = p.with_(k=round_half_up(params.k * train.size / data.n))
            try:
                w = run_fitter(fitter, tr, p).w_hat
                per_fold.append(trimmed_score(residuals(subset(data, test), w), keep))
            except Exception:
                per_fold.append(math.inf)
        scores[tau] = float(np.mean(per_fold))
    best = min(grid, key=lambda t: (scores[t], t))
    return CvResult(best, scores)


# -- momentum diagnostic --------------------------------------------------------

@dataclass(frozen=True)
class MomentumStep:
    step: int
    c_norm: float
    rel_c: float
    coef_current: float
    coef_previous: float


def diagnose_momentum(data: RegressionDataset, tau: float, k: int, steps: int = 10,
                      tol: float = 1e-4, max_inner: int = 400) -> list[MomentumStep]:
    """Run CORALS and decompose the TRIP gradient at the end of each outer round.

    Round ``t`` is evaluated at its final corruption estimate, with the
    previous round's estimate as ``b_prev_hat`` (zero for the first round,
    which matches the OLS start).
    """
    if steps < 1:
        raise ParameterOutOfRange("steps must be >= 1")
    cfg = RewrapConfig("trip", tau, tol, steps, InnerConfig(tol, max_inner, k=k))
    prev = [np.zeros(data.n)]
    out = []

    def capture(t, prior, rep):
        md = momentum_decomposition(data, tau, rep.b_hat, prev[0])
        out.append(MomentumStep(t, md.c_norm, md.rel_c, md.coef_current, md.coef_previous))
        prev[0] = np.array(rep.b_hat)

    rewrap_fit(data, cfg, callback=capture)
    return out


def momentum_scaling(ns: Sequence[int] = (500, 2000, 8000), d: int = 10, seeds: int = 20,
                     tau_rel: float = 0.049, alpha: float = 0.1, master_seed: int = 0) -> dict:
    """Median first-round ``rel_c`` per ``n`` over ``seeds`` OAA instances.

    The first round is used because ``C`` vanishes identically at an outer
    fixed point (there ``b = b_prev_hat`` and both sides reduce to ``P_X(y - b)``).
    """
    table = {}
    for n in ns:
        vals = []
        for s in range(seeds):
            seed = derive_seed(master_seed, "momentum", n, s)
            data = apply_attack(generate_clean(GenConfig(n, d, 1.0, seed)),
                                AttackSpec("oaa", alpha, derive_seed(seed, "attack")))
            steps = diagnose_momentum(data, tau_rel * n, resolve_k(data, FitParams()), steps=1)
            vals.append(steps[0].rel_c)
        table[int(n)] = float(np.median(vals))
    return table
