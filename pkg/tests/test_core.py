import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rewrap.core import (DatasetMeta, FitReport, GramSolver, PriorSpec, RegressionDataset, TraceRecord,
                         format_dataset, ols_fit, read_dataset, residuals, ridge_with_prior, round_half_up,
                         write_dataset)
from rewrap.errors import DimensionMismatch, ParameterOutOfRange, ParseError, SingularGram

from conftest import make_data


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# -- types ---------------------------------------------------------------------

def test_dataset_shape_checks():
    with pytest.raises(DimensionMismatch):
        RegressionDataset(np.zeros((2, 3)), np.zeros(4))
    with pytest.raises(DimensionMismatch):
        RegressionDataset(np.zeros((2, 3)), np.zeros(3), DatasetMeta(w_true=np.zeros(3)))
    with pytest.raises(DimensionMismatch):
        RegressionDataset(np.zeros((2, 3)), np.zeros(3), DatasetMeta(corruption_support=[0, 3]))


def test_dataset_is_read_only():
    data = make_data(20, 3)
    with pytest.raises(ValueError):
        data.y[0] = 1.0
    with pytest.raises(ValueError):
        data.X[0, 0] = 1.0


def test_meta_support_sorted_unique():
    m = DatasetMeta(corruption_support=[5, 1, 5, 2])
    assert m.corruption_support.tolist() == [1, 2, 5]
    with pytest.raises(ParameterOutOfRange):
        DatasetMeta(sigma=-1.0)


def test_prior_checks():
    with pytest.raises(ParameterOutOfRange):
        PriorSpec(np.zeros(2), tau=-1.0)
    with pytest.raises(ParameterOutOfRange):
        PriorSpec(np.zeros(2), matrix=np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ParameterOutOfRange):
        PriorSpec(np.zeros(2), matrix=np.diag([1.0, -1.0]))
    with pytest.raises(DimensionMismatch):
        PriorSpec(np.zeros(2), matrix=np.eye(3))
    p = PriorSpec(np.zeros(3), tau=5.0)
    assert np.array_equal(p.penalty(), 5.0 * np.eye(3))
    assert PriorSpec(np.zeros(2)).is_zero
    # tiny negative eigenvalue from round-off is accepted
    PriorSpec(np.zeros(2), matrix=np.array([[1.0, 1.0], [1.0, 1.0 - 1e-12]]))


def test_fit_report_freezes_arrays():
    rep = FitReport(np.ones(2), 1, 1, True, [TraceRecord(0.0)], b_hat=np.zeros(3))
    assert isinstance(rep.trace, tuple)
    with pytest.raises(ValueError):
        rep.w_hat[0] = 2.0
    assert rep.to_record()["w_hat"] == [1.0, 1.0]


def test_round_half_up():
    assert round_half_up(0.5) == 1
    assert round_half_up(2.5) == 3
    assert round_half_up(2.4999) == 2
    assert round_half_up(0.3 * 3000) == 900  # 899.9999999999999 in floating point


# -- ols_fit -------------------------------------------------------------------

def test_ols_identity_design():
    data = RegressionDataset(np.eye(2), np.array([3.0, -1.0]))
    assert np.allclose(ols_fit(data), [3.0, -1.0], rtol=0, atol=1e-15)


def test_ols_noiseless_recovery():
    data = make_data(50, 5, sigma=0.0, seed=3)
    assert np.linalg.norm(ols_fit(data) - data.meta.w_true) <= 1e-10


def test_ols_matches_lstsq_oracle():
    data = make_data(200, 10, seed=4)
    oracle, *_ = np.linalg.lstsq(data.X.T, data.y, rcond=None)  # SVD path
    assert rel(ols_fit(data), oracle) <= 1e-10


def test_ols_duplicated_data():
    data = make_data(60, 4, seed=5)
    dup = RegressionDataset(np.hstack([data.X, data.X]), np.concatenate([data.y, data.y]))
    assert rel(ols_fit(dup), ols_fit(data)) <= 1e-10


def test_singular_gram_and_pinv():
    X = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    data = RegressionDataset(X, np.array([1.0, 2.0, 3.0]))
    with pytest.raises(SingularGram):
        ols_fit(data)
    w = ols_fit(data, allow_pinv=True)
    oracle = np.linalg.pinv(X.T) @ data.y  # minimum-norm solution
    assert np.allclose(w, oracle, atol=1e-12)


def test_gram_solver_rcond():
    assert GramSolver(np.diag([1.0, 1e-6])).rcond == pytest.approx(1e-6)
    with pytest.raises(SingularGram):
        GramSolver(np.diag([1.0, 1e-13]))


# -- ridge_with_prior ----------------------------------------------------------

def test_ridge_zero_penalty_is_ols():
    data = make_data(80, 6, seed=6)
    p = PriorSpec(np.ones(6), tau=0.0)
    assert rel(ridge_with_prior(data, None, p), ols_fit(data)) <= 1e-12


def test_ridge_huge_penalty_returns_mean():
    data = make_data(80, 6, seed=7)
    w0 = np.arange(1.0, 7.0)
    b = np.random.default_rng(0).standard_normal(80)
    assert rel(ridge_with_prior(data, b, PriorSpec(w0, tau=1e12)), w0) <= 1e-6


def test_ridge_matches_assembled_system():
    rng = np.random.default_rng(8)
    data = make_data(100, 5, seed=8)
    b = np.zeros(100)
    b[rng.choice(100, 5, replace=False)] = rng.normal(0, 10, 5)
    w0 = rng.standard_normal(5)
    # assemble the normal equations sample by sample
    A = 10.0 * np.eye(5)
    rhs = 10.0 * w0
    for i in range(100):
        x = data.X[:, i]
        A += np.outer(x, x)
        rhs += x * (data.y[i] - b[i])
    oracle = np.linalg.solve(A, rhs)
    assert rel(ridge_with_prior(data, b, PriorSpec(w0, tau=10.0)), oracle) <= 1e-10


def test_ridge_explicit_matrix():
    data = make_data(50, 3, seed=9)
    M = np.diag([1.0, 2.0, 3.0])
    w = ridge_with_prior(data, None, PriorSpec(np.ones(3), matrix=M))
    assert np.allclose((data.X @ data.X.T + M) @ w, data.X @ data.y + M @ np.ones(3))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(5, 40), d=st.integers(1, 4),
       a=st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3))
def test_ridge_linear_in_response(seed, n, d, a):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n))
    u = rng.standard_normal(n)
    prior = PriorSpec(np.zeros(d), tau=float(rng.uniform(0.1, 5)))
    f = lambda v: ridge_with_prior(RegressionDataset(X, v), None, prior)
    assert rel(f(a * u), a * f(u)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(8, 40), d=st.integers(1, 4))
def test_ridge_m0_equals_ols_on_shifted(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n))
    y = rng.standard_normal(n)
    b = rng.standard_normal(n)
    lhs = ridge_with_prior(RegressionDataset(X, y), b, PriorSpec(np.zeros(d)))
    rhs = ols_fit(RegressionDataset(X, y - b))
    assert rel(lhs, rhs) <= 1e-12


# -- residuals -----------------------------------------------------------------

def test_residuals_cases():
    data = make_data(10, 3, seed=10)
    assert np.array_equal(residuals(data, np.zeros(3)), data.y)
    exact = RegressionDataset(data.X, data.X.T @ np.ones(3))
    assert np.allclose(residuals(exact, np.ones(3)), 0.0, atol=1e-14)
    w = np.array([0.3, -1.0, 2.0])
    oracle = [data.y[i] - sum(data.X[j, i] * w[j] for j in range(3)) for i in range(10)]
    assert np.allclose(residuals(data, w), oracle, rtol=0, atol=1e-13)
    with pytest.raises(DimensionMismatch):
        residuals(data, np.zeros(4))


# -- file format ---------------------------------------------------------------

def test_dataset_roundtrip_is_bit_exact(tmp_path):
    data = make_data(30, 4, seed=11, attack="oaa", alpha=0.2)
    p = tmp_path / "d.txt"
    write_dataset(p, data)
    back = read_dataset(p)
    assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)
    assert np.array_equal(back.meta.w_true, data.meta.w_true)
    assert np.array_equal(back.meta.corruption_support, data.meta.corruption_support)
    assert back.meta.sigma == 1.0 and back.meta.seed == 11
    assert p.read_text().splitlines()[0] == "# rewrap-dataset v1 n=30 d=4 sigma=1.0 seed=11"
    assert format_dataset(back) == p.read_text()


def test_dataset_without_meta(tmp_path):
    data = RegressionDataset(np.eye(2), np.array([1.0, 2.0]))
    p = tmp_path / "d.txt"
    write_dataset(p, data)
    back = read_dataset(p)
    assert back.meta.sigma is None and back.meta.w_true is None and back.meta.corruption_support is None


@pytest.mark.parametrize("text", [
    "",
    "1 2 3\n",
    "# other v1 n=1 d=1 sigma=1 seed=0\n1 2\n",
    "# rewrap-dataset v1 n=2 d=1 sigma=1 seed=0\n1 2\n",
    "# rewrap-dataset v1 n=1 d=1 sigma=1\n1 2\n",
    "# rewrap-dataset v1 n=1 d=1 sigma=1 seed=0\n1 x\n",
    "# rewrap-dataset v1 n=1 d=1 sigma=1 seed=0\n# corrupted 4\n1 2\n",
])
def test_parse_errors(tmp_path, text):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(ParseError):
        read_dataset(p)
