import csv
import hashlib
import io
import json
import math

import numpy as np
import pytest

from rewrap import cli
from rewrap.core import read_dataset, write_dataset
from rewrap.corruption import derive_seed, l2_error
from rewrap.errors import ParameterOutOfRange
from rewrap.fitters import FitParams, run_fitter
from rewrap.harness import (CSV_HEADER, ExperimentPlan, FitterSpec, ResultRow, cv_tau, diagnose_momentum,
                            fold_slices, momentum_scaling, run_sweep, subset, trimmed_score, write_csv)

from conftest import make_data


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def strip_wall(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


# -- gen -----------------------------------------------------------------------

def test_gen_header_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    code, _, err = run(["gen", "--n", 1000, "--d", 20, "--sigma", 1, "--seed", 7, "--out", a], capsys)
    assert code == 0 and "corrupted rows: 0" in err
    data = read_dataset(a)
    assert (data.n, data.d) == (1000, 20)
    run(["gen", "--n", 1000, "--d", 20, "--sigma", 1, "--seed", 7, "--out", b], capsys)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


def test_gen_attack_flags_budget(tmp_path, capsys):
    p = tmp_path / "d.txt"
    code, _, err = run(["gen", "--n", 1000, "--d", 20, "--seed", 7, "--attack", "oaa", "--alpha", 0.3, "--out", p],
                       capsys)
    assert code == 0 and "corrupted rows: 300" in err
    assert read_dataset(p).meta.corruption_support.size == 300


def test_gen_to_stdout_matches_file(tmp_path, capsys):
    p = tmp_path / "d.txt"
    run(["gen", "--n", 30, "--d", 3, "--seed", 1, "--out", p], capsys)
    _, out, _ = run(["gen", "--n", 30, "--d", 3, "--seed", 1], capsys)
    assert out == p.read_text()


# -- fit -----------------------------------------------------------------------

def test_fit_uses_relative_tau(tmp_path, capsys):
    p = tmp_path / "d.txt"
    write_dataset(p, make_data(400, 5, attack="oaa", alpha=0.1))
    code, out, _ = run(["fit", p, "corals", "--tau-rel", 0.049], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["tau"] == pytest.approx(0.049 * 400)


def test_fit_crr_noiseless_exact(tmp_path, capsys):
    p = tmp_path / "d.txt"
    write_dataset(p, make_data(300, 6, sigma=0.0))
    _, out, _ = run(["fit", p, "crr"], capsys)
    assert json.loads(out)["l2_error"] <= 1e-8


def test_fit_deterministic_except_wall(tmp_path, capsys):
    p = tmp_path / "d.txt"
    write_dataset(p, make_data(300, 6, attack="oaa", alpha=0.2))
    recs = []
    for _ in range(2):
        _, out, _ = run(["fit", p, "tukey+"], capsys)
        rec = json.loads(out)
        rec.pop("wall_ms")
        recs.append(rec)
    assert recs[0] == recs[1]


# -- sweep ---------------------------------------------------------------------

def test_sweep_shape_and_schema(capsys):
    code, out, _ = run(["sweep", "--fitters", "crr,corals", "--axis", "alpha", "--values", "0,0.1,0.2,0.3,0.4,0.5",
                        "--repeats", 20, "--n", 200, "--d", 5], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0] == CSV_HEADER
    assert len(lines) - 1 == 2 * 6 * 20
    assert all(len(line.split(",")) == 12 for line in lines)
    rows = list(csv.DictReader(io.StringIO(out)))
    order = [(r["alpha"], r["fitter"]) for r in rows]
    assert order == [(a, f) for a in ("0.0", "0.1", "0.2", "0.3", "0.4", "0.5")
                     for f in ("crr", "corals") for _ in range(20)]


def test_sweep_failed_cell_is_nan_row():
    # k = 500 exceeds n = 50, so every fit fails without aborting the sweep
    plan = ExperimentPlan((FitterSpec("crr", {"k": 500}),), "alpha", (0.1,), n=50, d=3, repeats=2)
    rows = run_sweep(plan)
    buf = io.StringIO()
    write_csv(rows, buf)
    fields = buf.getvalue().splitlines()[1].split(",")
    assert fields[7] == "nan" and fields[10] == "false"
    assert all(math.isnan(r.l2_error) and not r.converged for r in rows)


def test_crr_error_grows_with_alpha():
    plan = ExperimentPlan((FitterSpec("crr"),), "alpha", (0.0, 0.1, 0.2, 0.3, 0.4, 0.5))
    rows = run_sweep(plan)
    means = [np.mean([r.l2_error for r in rows if r.alpha == a]) for a in plan.values]
    assert sum(b < a for a, b in zip(means, means[1:])) <= 1


@pytest.mark.xfail(strict=True, reason="CORALS and CRR curves overlap at 46-48% OAA with n=2000, d=20 "
                                       "(both ~0.13-0.14 mean error); CORALS is not below CRR at 46% and 47%")
def test_corals_below_crr_near_half():
    plan = ExperimentPlan((FitterSpec("crr"), FitterSpec("corals")), "alpha", (0.46, 0.47, 0.48))
    rows = run_sweep(plan)
    for a in plan.values:
        c = np.mean([r.l2_error for r in rows if r.alpha == a and r.fitter == "corals"])
        r_ = np.mean([r.l2_error for r in rows if r.alpha == a and r.fitter == "crr"])
        assert c < r_


def test_seed_derivation_has_no_collisions():
    fitters = tuple(FitterSpec(f) for f in ("crr", "corals", "torrent", "torrent+", "tukey"))
    plan = ExperimentPlan(fitters, "alpha", tuple(round(0.01 * i, 2) for i in range(100)), repeats=20)
    seeds = [derive_seed(plan.master_seed, v, s.fitter, r) for v, s, r in plan.cells()]
    assert len(seeds) == 10**4 and len(set(seeds)) == len(seeds)


def test_threads_do_not_change_output(capsys):
    args = ["sweep", "--fitters", "crr,torrent", "--values", "0.1,0.3", "--repeats", 5, "--n", 300, "--d", 5]
    _, one, _ = run(args, capsys)
    _, four, _ = run(args + ["--threads", 4], capsys)
    assert strip_wall(one) == strip_wall(four)


def test_sweep_overrides_reach_fitter(capsys):
    _, out, _ = run(["sweep", "--fitters", "corals", "--values", "0.1", "--repeats", 1, "--n", 200, "--d", 4,
                     "--set", "corals:tau_rel=0.2"], capsys)
    row = next(csv.DictReader(io.StringIO(out)))
    assert float(row["tau"]) == pytest.approx(40.0)


def test_plan_validation():
    with pytest.raises(ParameterOutOfRange):
        ExperimentPlan((FitterSpec("crr"),), "alpha", (0.2, 0.1))
    with pytest.raises(ParameterOutOfRange):
        ExperimentPlan((FitterSpec("crr"),), "n", (0, 100))
    with pytest.raises(ParameterOutOfRange):
        ExperimentPlan((FitterSpec("crr"),), "alpha", (0.1,), repeats=0)
    with pytest.raises(ParameterOutOfRange):
        FitterSpec("lasso")


def test_result_row_json_nan_is_null():
    row = ResultRow("crr", 10, 2, 0.1, "oaa", 0.0, 1, math.nan, 0, 0, False, 1.0)
    assert json.loads(row.json_line())["l2_error"] is None
    assert row.csv_line().split(",")[7] == "nan"


# -- cv ------------------------------------------------------------------------

def test_fold_slices_partition():
    parts = fold_slices(23, 5)
    assert [p.size for p in parts] == [5, 5, 5, 4, 4]
    assert np.array_equal(np.concatenate(parts), np.arange(23))
    with pytest.raises(ParameterOutOfRange):
        fold_slices(3, 5)


def test_subset_remaps_support():
    data = make_data(50, 3, attack="oaa", alpha=0.2)
    idx = np.arange(10, 40)
    sub = subset(data, idx)
    oracle = [i for i, j in enumerate(idx) if j in set(data.meta.corruption_support)]
    assert list(sub.meta.corruption_support) == oracle


def test_trimmed_score():
    r = np.array([3.0, -1.0, 10.0, 2.0, 0.5, -4.0, 0.0, 1.5, -2.5, 7.0])
    sq = sorted(x * x for x in r)
    assert trimmed_score(r) == pytest.approx(sum(sq[:7]) / 7)
    assert trimmed_score(r, 1.0) == pytest.approx(np.mean(r**2))


def test_cv_clean_prefers_zero():
    data = make_data(500, 10, seed=3)
    assert cv_tau(data, "corals", [0.0, 1e6]).tau == 0.0


def test_cv_single_candidate():
    data = make_data(200, 4, attack="oaa", alpha=0.2)
    assert cv_tau(data, "corals", [12.5]).tau == 12.5


def test_cv_selection_near_oracle():
    data = make_data(1000, 10, seed=5, attack="oaa", alpha=0.3)
    grid = [r * data.n for r in (0.001, 0.01, 0.049, 0.2)]
    pick = cv_tau(data, "corals", grid).tau
    err = {t: l2_error(run_fitter("corals", data, FitParams(tau=t)).w_hat, data.meta.w_true) for t in grid}
    assert err[pick] <= 1.5 * min(err.values())


def test_cv_failing_candidate_scores_inf():
    data = make_data(100, 3, attack="oaa", alpha=0.1)
    res = cv_tau(data, "corals", [-1.0, 5.0])
    assert math.isinf(res.scores[-1.0]) and res.tau == 5.0


def test_cv_cli(tmp_path, capsys):
    p = tmp_path / "d.txt"
    write_dataset(p, make_data(300, 5, attack="oaa", alpha=0.2))
    code, out, _ = run(["cv", p, "corals", "--folds", 5, "--tau-grid", "3"], capsys)
    assert code == 0 and json.loads(out)["tau"] == 3.0


# -- breakdown -----------------------------------------------------------------

def test_breakdown_theory_crr(capsys):
    code, out, err = run(["breakdown", "theory-crr"], capsys)
    rep = json.loads(out)
    assert code == 0 and 0.004 <= rep["alpha_star"] <= 0.007 and rep["branch"] == "tau=0"
    assert "alpha*" in err


def test_breakdown_theory_corals_contract(capsys):
    code, out, err = run(["breakdown", "theory-corals"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert {"alpha_star", "tau_star", "constraint_values"} <= set(rep)
    assert set(rep["constraint_values"]) == {"C1", "C2"}
    assert "0.049" in err


def test_breakdown_empirical_cli(capsys):
    code, out, _ = run(["breakdown", "empirical", "--fitter", "crr", "--attack", "oaa", "--n", 200, "--d", 5,
                        "--alpha-grid", "0,0.1,0.2", "--repeats", 2], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["alpha_hat"] == 0.2 and len(rep["curve"]) == 3


# -- diagnose ------------------------------------------------------------------

def test_diagnose_tau_zero_has_no_momentum():
    data = make_data(300, 5, attack="oaa", alpha=0.1)
    steps = diagnose_momentum(data, 0.0, 30, steps=5)
    assert steps and all(s.c_norm == 0.0 for s in steps)


def test_momentum_shrinks_with_n():
    table = momentum_scaling()
    vals = [table[n] for n in (500, 2000, 8000)]
    assert vals[0] > vals[1] > vals[2]


def test_diagnose_cli_reports_identity(tmp_path, capsys):
    p = tmp_path / "d.txt"
    write_dataset(p, make_data(300, 5, attack="oaa", alpha=0.1))
    code, out, _ = run(["diagnose", p, "--steps", 3, "--no-scaling"], capsys)
    assert code == 0 and "A + B = I" in out
    assert "step  c_norm  rel_c" in out


# -- config and exit codes -----------------------------------------------------

def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 40\nd = 3\nseed = 11\n")
    _, from_cfg, _ = run(["gen", "--config", cfg], capsys)
    _, from_flags, _ = run(["gen", "--n", 40, "--d", 3, "--seed", 11], capsys)
    assert from_cfg == from_flags
    _, overridden, _ = run(["gen", "--config", cfg, "--n", 50], capsys)
    assert overridden.splitlines()[0] != from_cfg.splitlines()[0]
    assert "50" in overridden.splitlines()[0]


def test_exit_codes(tmp_path, capsys):
    assert run(["nope"], capsys)[0] == 2
    assert run(["gen", "--n", 3, "--d", 5], capsys)[0] == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("garbage\n")
    assert run(["fit", bad, "crr"], capsys)[0] == 3
    assert run(["fit", tmp_path / "missing.txt", "crr"], capsys)[0] == 3
    p = tmp_path / "d.txt"
    write_dataset(p, make_data(40, 3, attack="oaa", alpha=0.1))
    assert run(["fit", p, "crr", "--k", 100], capsys)[0] == 2
    assert run(["breakdown", "theory-corals", "--alpha-step", 0.5, "--alpha-max", 0.5], capsys)[0] == 4
