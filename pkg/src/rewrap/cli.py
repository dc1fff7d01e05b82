"""``rewrap`` command line.

Subcommands: gen, fit, sweep, cv, breakdown, diagnose.  Every option can also
be set in a plain ``key = value`` file passed with ``--config``; explicit
flags win.  Exit codes: 0 ok, 2 usage, 3 data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import breakdown as bd
from .core import format_dataset, read_dataset, write_dataset
from .corruption import AttackSpec, GenConfig, apply_attack, derive_seed, generate_clean
from .errors import (BudgetOutOfRange, DimensionMismatch, EmptyFeasible, ParameterOutOfRange, ParseError,
                     SingularGram, TooLarge, UnknownFitter)
from .fitters import FITTER_IDS, FitParams, resolve_k, run_fitter
from .harness import ExperimentPlan, FitterSpec, cv_tau, diagnose_momentum, fit_row, momentum_scaling, run_sweep, write_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GLOBAL_DEFAULTS = {"seed": 0, "out": None, "threads": 1}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(",", " ").split()]


def _names(text: str) -> list[str]:
    return [t for t in str(text).replace(",", " ").split()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _global_flags(p: argparse.ArgumentParser) -> None:
    # SUPPRESS so a subcommand never clobbers a value given before it
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    g.add_argument("--config", default=argparse.SUPPRESS, help="key = value file of defaults")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output path (default stdout)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for sweeps")


def _fit_knobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--attack", choices=("oaa", "aaa"), default="oaa",
                   help="attack kind used to look up the default tau")
    p.add_argument("--k", type=int, default=None, help="corruption budget (default: true k*)")
    p.add_argument("--keep-fraction", type=float, default=None, help="TORRENT keep fraction 1-beta")
    p.add_argument("--tau", type=float, default=None, help="absolute prior weight")
    p.add_argument("--tau-rel", type=float, default=None, help="prior weight as a multiple of n")
    p.add_argument("--sigma-hat", type=float, default=None, help="M-estimator scale (default MAD)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--max-inner", type=int, default=400)


def _params(a) -> FitParams:
    return FitParams(k=a.k, keep_fraction=a.keep_fraction, tau=a.tau, tau_rel=a.tau_rel, attack=a.attack,
                     sigma_hat=a.sigma_hat, tol=a.tol, max_outer=a.max_outer, max_inner=a.max_inner)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rewrap", description=__doc__.splitlines()[0])
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _global_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--attack", choices=("oaa", "aaa"), default=None)
    p.add_argument("--alpha", type=float, default=0.0)

    p = sub.add_parser("fit", help="fit one dataset and print a JSON line")
    _global_flags(p)
    p.add_argument("dataset")
    p.add_argument("fitter", choices=FITTER_IDS)
    _fit_knobs(p)

    p = sub.add_parser("sweep", help="run a seeded experiment grid and write CSV")
    _global_flags(p)
    p.add_argument("--fitters", type=_names, default=["crr", "corals"])
    p.add_argument("--axis", choices=("n", "d", "alpha"), default="alpha")
    p.add_argument("--values", type=_floats, default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="FITTER:KEY=VALUE",
                   help="per-fitter parameter override, e.g. corals:tau_rel=0.1")
    _fit_knobs(p)

    p = sub.add_parser("cv", help="choose tau by k-fold cross-validation")
    _global_flags(p)
    p.add_argument("dataset")
    p.add_argument("fitter", choices=FITTER_IDS)
    p.add_argument("--folds", type=int, choices=(5, 10), default=5)
    p.add_argument("--tau-grid", type=_floats, default=None, help="absolute tau values")
    p.add_argument("--tau-rel-grid", type=_floats, default=[0.001, 0.01, 0.049, 0.2],
                   help="tau values as multiples of n (used when --tau-grid is absent)")
    p.add_argument("--trim", type=float, default=0.7, help="fraction of squared residuals kept in the score")
    _fit_knobs(p)

    p = sub.add_parser("breakdown", help="theoretical or empirical breakdown point")
    _global_flags(p)
    p.add_argument("mode", choices=("theory-corals", "theory-crr", "empirical"))
    p.add_argument("--alpha-step", type=float, default=1e-4)
    p.add_argument("--alpha-max", type=float, default=0.05)
    p.add_argument("--tau-step", type=float, default=1e-3)
    p.add_argument("--tau-max", type=float, default=1.0)
    p.add_argument("--fitter", choices=FITTER_IDS, default="corals")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha-grid", type=_floats, default=None, help="ascending alphas (default 0.00..0.99 by 0.01)")
    p.add_argument("--threshold", type=float, default=1.0, help="mean l2 error that counts as breakdown")
    p.add_argument("--repeats", type=int, default=20)
    _fit_knobs(p)

    p = sub.add_parser("diagnose", help="momentum decomposition along a CORALS run")
    _global_flags(p)
    p.add_argument("dataset")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--tau-rel", type=float, default=0.049)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--scaling-seeds", type=int, default=20)
    p.add_argument("--no-scaling", action="store_true", help="skip the n-scaling table")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return {}
    cfg = read_config(known.config)
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subs.choices.values():
        dests = {a.dest: a for a in sp._actions}
        vals = {}
        for key, val in cfg.items():
            act = dests.get(key)
            if act is None or key in GLOBAL_DEFAULTS or key == "config":
                continue
            if isinstance(act, argparse._StoreTrueAction):
                vals[key] = _bool(val)
            elif isinstance(act, argparse._AppendAction):
                vals[key] = _names(val)
            elif act.type is not None:
                vals[key] = act.type(val)
            else:
                vals[key] = val
        sp.set_defaults(**vals)
        # a config value satisfies a required flag
        for act in sp._actions:
            if act.dest in vals and act.option_strings:
                act.required = False
    return cfg


@contextlib.contextmanager
def _sink(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _overrides(items: Sequence[str]) -> dict:
    fields = FitParams.__dataclass_fields__
    out: dict = {}
    for item in items:
        try:
            fitter, kv = item.split(":", 1)
            key, val = kv.split("=", 1)
        except ValueError:
            raise UsageError(f"bad override {item!r}; expected FITTER:KEY=VALUE") from None
        key = key.strip().replace("-", "_")
        if key not in fields or key == "attack":
            raise UsageError(f"unknown parameter {key!r}")
        num = float(val)
        out.setdefault(fitter.strip(), {})[key] = int(num) if key in ("k", "max_outer", "max_inner") else num
    return out


# -- subcommands -----------------------------------------------------------------

def cmd_gen(a, g) -> int:
    data = generate_clean(GenConfig(a.n, a.d, a.sigma, g["seed"]))
    if a.attack is not None:
        data = apply_attack(data, AttackSpec(a.attack, a.alpha, derive_seed(g["seed"], "attack")))
    if g["out"] is None:
        sys.stdout.write(format_dataset(data))
    else:
        write_dataset(g["out"], data)
    k = 0 if data.meta.corruption_support is None else data.meta.corruption_support.size
    print(f"corrupted rows: {k}", file=sys.stderr)
    return EXIT_OK


def cmd_fit(a, g) -> int:
    data = read_dataset(a.dataset)
    params = _params(a)
    k = resolve_k(data, params)
    run_fitter(a.fitter, data, params)  # surface errors with their exit codes
    row = fit_row(a.fitter, data, params, k / data.n, a.attack, data.meta.seed)
    with _sink(g["out"]) as fh:
        fh.write(row.json_line() + "\n")
    return EXIT_OK


def cmd_sweep(a, g) -> int:
    over = _overrides(a.overrides)
    unknown = set(over) - set(a.fitters)
    if unknown:
        raise UsageError(f"overrides for fitters not in the plan: {sorted(unknown)}")
    base = {k: v for k, v in vars(_params(a)).items()
            if v is not None and v != FitParams.__dataclass_fields__[k].default}
    specs = tuple(FitterSpec(f, {**base, **over.get(f, {})}) for f in a.fitters)
    values = tuple(int(v) if a.axis in ("n", "d") else float(v) for v in a.values)
    plan = ExperimentPlan(specs, a.axis, values, a.n, a.d, a.sigma, a.alpha, a.attack, a.repeats, g["seed"])
    rows = run_sweep(plan, g["threads"])
    with _sink(g["out"]) as fh:
        write_csv(rows, fh)
    return EXIT_OK


def cmd_cv(a, g) -> int:
    data = read_dataset(a.dataset)
    grid = a.tau_grid if a.tau_grid is not None else [t * data.n for t in a.tau_rel_grid]
    res = cv_tau(data, a.fitter, grid, a.folds, _params(a), a.trim)
    report = {"fitter": a.fitter, "folds": a.folds, "tau": res.tau, "tau_rel": res.tau / data.n,
              "scores": [{"tau": t, "score": s if math.isfinite(s) else None} for t, s in res.scores.items()]}
    with _sink(g["out"]) as fh:
        fh.write(json.dumps(report) + "\n")
    return EXIT_OK


def cmd_breakdown(a, g) -> int:
    if a.mode == "empirical":
        grid = a.alpha_grid if a.alpha_grid is not None else [round(0.01 * i, 2) for i in range(100)]
        gen = GenConfig(a.n, a.d, a.sigma, g["seed"])
        params = _params(a)
        curve = bd.empirical_curve(lambda data: run_fitter(a.fitter, data, params).w_hat,
                                   gen, a.attack, grid, a.threshold, a.repeats)
        report = {"mode": a.mode, "fitter": a.fitter, "attack": a.attack, "alpha_hat": _jnum(curve.alpha_hat),
                  "threshold": a.threshold, "repeats": a.repeats, "n": a.n, "d": a.d,
                  "curve": [{"alpha": x, "mean_l2_error": _jnum(m), "failures": f}
                            for x, m, f in zip(curve.alphas, curve.mean_errors, curve.failures)]}
        summary = f"{a.fitter} under {a.attack}: empirical breakdown alpha_hat = {curve.alpha_hat:.2f}"
    else:
        grid = bd.GridSpec(a.alpha_step, a.alpha_max, a.tau_step, a.tau_max)
        if a.mode == "theory-crr":
            res = bd.crr_breakdown_search(grid)
            summary = f"CRR: alpha* = {res.alpha_star:.4f} ({res.branch} branch binds)"
        else:
            res = bd.corals_breakdown_search(grid)
            c1, c2 = bd.corals_constraints(0.01, 0.049)
            summary = (f"CORALS: alpha* = {res.alpha_star:.4f} at tau' = {res.tau_star:.3f} "
                       f"(C1 = {res.constraint_values['C1']:.4f}, C2 = {res.constraint_values['C2']:.4f}); "
                       f"reference point alpha = 0.01, tau' = 0.049 gives C1 = {float(c1):.4f}, C2 = {float(c2):.4f}")
        report = {"mode": a.mode, **res.to_dict()}
        if report["tau_star"] is not None and math.isinf(report["tau_star"]):
            report["tau_star"] = "inf"
    with _sink(g["out"]) as fh:
        fh.write(json.dumps(report) + "\n")
    print(summary, file=sys.stderr)
    return EXIT_OK


def _jnum(x):
    return x if math.isfinite(x) else None


def cmd_diagnose(a, g) -> int:
    data = read_dataset(a.dataset)
    tau = a.tau if a.tau is not None else a.tau_rel * data.n
    k = a.k if a.k is not None else resolve_k(data, FitParams())
    steps = diagnose_momentum(data, tau, k, a.steps)
    lines = [f"tau = {tau:g}, k = {k}; coefficients n/(n+tau) + tau/(n+tau) = "
             f"{steps[0].coef_current!r} + {steps[0].coef_previous!r} = "
             f"{steps[0].coef_current + steps[0].coef_previous!r} (A + B = I)",
             "step  c_norm  rel_c"]
    lines += [f"{s.step:4d}  {s.c_norm:.6e}  {s.rel_c:.6e}" for s in steps]
    if not a.no_scaling:
        table = momentum_scaling(seeds=a.scaling_seeds, master_seed=g["seed"])
        lines.append("n-scaling (d = 10, median first-round rel_c):")
        lines += [f"  n = {n:5d}  rel_c = {v:.6e}" for n, v in table.items()]
    with _sink(g["out"]) as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "sweep": cmd_sweep, "cv": cmd_cv,
            "breakdown": cmd_breakdown, "diagnose": cmd_diagnose}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg = _apply_config(parser, argv)
    except (OSError, UsageError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"rewrap: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    g = {}
    for key, default in GLOBAL_DEFAULTS.items():
        val = getattr(args, key, cfg.get(key, default))
        g[key] = int(val) if key in ("seed", "threads") and val is not None else val
    try:
        return COMMANDS[args.command](args, g)
    except (UsageError, ParameterOutOfRange, BudgetOutOfRange, UnknownFitter, TooLarge) as exc:
        print(f"rewrap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DimensionMismatch, OSError) as exc:
        print(f"rewrap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularGram, EmptyFeasible, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"rewrap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
