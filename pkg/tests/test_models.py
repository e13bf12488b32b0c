import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtip.features import FEATURES, FEATURES_T, RegressionDataset
from qtip.models import (
    BayesianLinearModel,
    GPModel,
    LinearModel,
    MLPModel,
    PiecewiseAbnormalModel,
    RankDeficientError,
    fit,
    fit_bayes,
    fit_gp,
    fit_mlp,
    fit_ols,
    from_dict,
    load,
    predict,
    save,
    to_dict,
)
from qtip.models.gp import log_marginal_likelihood, rbf_kernel
from qtip.models.mlp import _init, forward, loss_and_grads


def ds(X, y, phase="normal"):
    X = np.asarray(X, float)
    cols = FEATURES if X.shape[1] == 6 else FEATURES_T
    return RegressionDataset(X, y, phase, np.arange(len(y)), cols)


def random_problem(rng, n=40, k=6, noise=0.0):
    X = rng.normal(80, 10, size=(n, k))
    beta = rng.normal(0, 0.3, size=k)
    return X, beta, X @ beta + noise * rng.normal(size=n)


# ---------------------------------------------------------------- OLS

def test_ols_identity_fit():
    X = np.eye(6)
    model = fit_ols(ds(X, X[:, 0]))
    np.testing.assert_allclose(model.beta, [1, 0, 0, 0, 0, 0], atol=1e-12)
    assert predict(LinearModel(np.eye(6)[0]), np.array([80.0, 1, 2, 3, 4, 5])) == 80.0


@given(st.integers(0, 10_000))
def test_ols_recovers_coefficients(seed):
    X, beta, y = random_problem(np.random.default_rng(seed))
    np.testing.assert_allclose(fit_ols(ds(X, y)).beta, beta, atol=1e-8)


def test_ols_no_intercept_by_default():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 6))
    y = X @ np.arange(6.0) + 5.0
    m0 = fit_ols(ds(X, y))
    assert m0.intercept == 0.0
    m1 = fit_ols(ds(X, y), intercept=True)
    assert m1.intercept == pytest.approx(5.0)
    np.testing.assert_allclose(m1.beta, np.arange(6.0), atol=1e-9)


def test_ols_too_few_rows():
    with pytest.raises(RankDeficientError):
        fit_ols(ds(np.ones((5, 6)), np.ones(5)))


def test_ols_rank_deficient_names_columns():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 6))
    X[:, 3] = 2 * X[:, 0] - X[:, 4]
    with pytest.raises(RankDeficientError) as ei:
        fit_ols(ds(X, rng.normal(size=20)))
    assert set(ei.value.columns) == {"S5", "U6", "D5"}
    assert "U6" in str(ei.value)


def test_ols_min_norm_underdetermined():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(4, 7))
    y = rng.normal(size=4)
    m = fit_ols(ds(X, y, "incident_early"), min_norm=True)
    np.testing.assert_allclose(X @ m.beta, y, atol=1e-9)
    np.testing.assert_allclose(m.beta, np.linalg.pinv(X) @ y, atol=1e-9)


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        predict(LinearModel(np.ones(6)), np.ones(7))


# ---------------------------------------------------------------- Bayes

def test_bayes_prior_recovery():
    mu = np.array([0.2, 0.1, 0.3, 0.0, 0.1, 0.2])
    m = fit_bayes(None, mu, sigma_beta=2.0)
    np.testing.assert_array_equal(m.posterior_mean, mu)
    np.testing.assert_allclose(m.posterior_cov, 4.0 * np.eye(6))
    empty = RegressionDataset(np.zeros((0, 6)), [], "incident_early", [])
    np.testing.assert_allclose(fit_bayes(empty, mu).posterior_mean, mu)


def test_bayes_hand_example():
    m = fit_bayes(np.array([[1.0]]), [0.0], 1.0, 1.0, y=[2.0])
    assert m.posterior_cov[0, 0] == pytest.approx(0.5)
    assert m.posterior_mean[0] == pytest.approx(1.0)
    assert predict(m, np.array([3.0])) == pytest.approx(3.0)


def test_bayes_large_n_matches_ols():
    rng = np.random.default_rng(3)
    X, _, y = random_problem(rng, n=12, noise=1.0)
    Xr, yr = np.tile(X, (10_000, 1)), np.tile(y, 10_000)
    b = fit_bayes(ds(Xr, yr), np.zeros(6))
    np.testing.assert_allclose(b.posterior_mean, fit_ols(ds(X, y)).beta, atol=1e-3)


def test_bayes_flat_prior_matches_ols():
    rng = np.random.default_rng(4)
    X, _, y = random_problem(rng, n=50, noise=2.0)
    b = fit_bayes(ds(X, y), rng.normal(size=6), sigma_beta=1e6)
    np.testing.assert_allclose(b.posterior_mean, fit_ols(ds(X, y)).beta, atol=1e-4)


@given(st.integers(1, 7), st.integers(0, 30), st.floats(0.1, 10), st.floats(0.1, 10),
       st.integers(0, 2**31))
def test_bayes_matches_dense_formula(k, n, sb, sy, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    y = rng.normal(size=n)
    mu = rng.normal(size=k)
    m = fit_bayes(X, mu, sb, sy, y=y)
    # explicit evaluation of the posterior equations with identity matrices spelled out
    Sigma = np.linalg.inv(np.eye(k) / sb**2 + X.T @ (np.eye(n) / sy**2) @ X)
    mean = Sigma @ (X.T @ (np.eye(n) / sy**2) @ y + (np.eye(k) / sb**2) @ mu)
    np.testing.assert_allclose(m.posterior_cov, Sigma, atol=1e-10, rtol=1e-10)
    np.testing.assert_allclose(m.posterior_mean, mean, atol=1e-10, rtol=1e-10)
    assert np.array_equal(m.posterior_cov, m.posterior_cov.T)
    assert np.all(np.linalg.eigvalsh(m.posterior_cov) > 0)


def test_bayes_rejects_bad_sigma():
    with pytest.raises(ValueError):
        fit_bayes(None, np.zeros(6), sigma_beta=0.0)
    with pytest.raises(ValueError):
        fit_bayes(None, np.zeros(6), sigma_y=-1.0)


# ---------------------------------------------------------------- GP

def test_gram_symmetric_unit_diagonal():
    X = np.random.default_rng(5).normal(size=(15, 6))
    K = rbf_kernel(X, X, 2.0)
    assert np.allclose(K, K.T)
    np.testing.assert_allclose(np.diag(K), 1.0)


def test_gp_interpolates():
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 10, size=(20, 6))
    y = rng.normal(80, 5, size=20)
    gp = fit_gp(ds(X, y), tau_grid=[1.0], noise_grid=[1e-9])
    np.testing.assert_allclose(gp.predict(X), y, atol=1e-4)


def test_gp_decays_to_zero_mean():
    gp = GPModel.from_training(np.zeros((1, 6)), [50.0], 1.0, 1e-6)
    assert gp.predict(np.full(6, 1e3)) == pytest.approx(0.0, abs=1e-12)
    assert gp.predict(np.zeros(6)) == pytest.approx(50.0, rel=1e-5)


def test_gp_grid_choice_beats_worst():
    rng = np.random.default_rng(7)
    x = np.sort(rng.uniform(0, 10, 25))[:, None]
    f = lambda t: 3 * np.sin(t[:, 0]) + 0.5 * t[:, 0]
    y = f(x) + 0.1 * rng.normal(size=25)
    xt = np.linspace(0.2, 9.8, 60)[:, None]
    taus, noises = [0.1, 1, 2, 4, 8], [1e-4, 1e-2, 1e-1, 1, 10]
    chosen = fit_gp(x, taus, noises, y=y)
    rmse = lambda m: np.sqrt(np.mean((m.predict(xt) - f(xt)) ** 2))
    all_models = [GPModel.from_training(x, y, t, s) for t in taus for s in noises]
    lls = [log_marginal_likelihood(x, y, t, s) for t in taus for s in noises]
    assert chosen.log_likelihood == pytest.approx(max(lls))
    assert rmse(chosen) <= max(rmse(m) for m in all_models)


def test_gp_all_singular():
    X = np.ones((5, 6))
    with pytest.raises(np.linalg.LinAlgError):
        fit_gp(ds(X, np.arange(5.0)), tau_grid=[1.0], noise_grid=[0.0])


def test_gp_needs_two_rows():
    with pytest.raises(ValueError):
        fit_gp(ds(np.ones((1, 6)), [1.0]))


# ---------------------------------------------------------------- MLP

@pytest.mark.parametrize("h,g", [(1, 5), (1, 10), (2, 5), (2, 10)])
def test_mlp_gradients_match_finite_differences(h, g):
    rng = np.random.default_rng(h * 10 + g)
    ws = [w + 0.3 * rng.normal(size=w.shape) for w in _init(rng, 7, h, g)]
    X = rng.normal(size=(5, 7))
    y = rng.uniform(0, g, size=5)
    _, grads = loss_and_grads(ws, X, y)
    eps = 1e-4
    for W, G in zip(ws, grads):
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + eps
            lp = loss_and_grads(ws, X, y)[0]
            W[idx] = old - eps
            lm = loss_and_grads(ws, X, y)[0]
            W[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        rel = np.linalg.norm(num - G) / max(np.linalg.norm(num), np.linalg.norm(G), 1e-12)
        assert rel <= 1e-3


@given(st.sampled_from([1, 2]), st.sampled_from([5, 10]), st.integers(0, 2**31),
       st.floats(-1e3, 1e3))
def test_mlp_raw_output_bounded(h, g, seed, scale):
    rng = np.random.default_rng(seed)
    ws = [w * 5 for w in _init(rng, 6, h, g)]
    out, _ = forward(ws, rng.normal(size=(8, 6)) * scale)
    assert np.all(out >= 0) and np.all(out <= g)


def test_mlp_constant_target():
    X = np.random.default_rng(8).normal(80, 5, size=(120, 6))
    m = fit_mlp(ds(X, np.full(120, 72.5)), h=2, g=5, seed=3)
    assert np.max(np.abs(m.predict(X) - 72.5)) < 2.0
    raw = m.raw(X)
    assert np.all((raw > 0) & (raw < m.g))


def test_mlp_learns_linear_signal():
    rng = np.random.default_rng(9)
    X = rng.normal(80, 8, size=(1500, 6))
    y = 0.5 * X[:, 0] + 0.4 * X[:, 2] + 5
    m = fit_mlp(ds(X, y), h=1, g=10, seed=0)
    assert np.sqrt(np.mean((m.predict(X) - y) ** 2)) < 0.5 * y.std()


def test_mlp_deterministic():
    X = np.random.default_rng(10).normal(size=(60, 6))
    y = X.sum(1)
    a = fit_mlp(ds(X, y), seed=4)
    b = fit_mlp(ds(X, y), seed=4)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_mlp_rejects():
    X = np.ones((9, 6))
    with pytest.raises(ValueError):
        fit_mlp(ds(X, np.ones(9)))
    with pytest.raises(ValueError):
        fit_mlp(ds(np.ones((20, 6)), np.ones(20)), h=3)
    with pytest.raises(ValueError):
        fit_mlp(ds(np.ones((20, 6)), np.ones(20)), g=7)


# ---------------------------------------------------------------- piecewise

def test_piecewise_routing():
    early = LinearModel(np.r_[np.zeros(6), 0.0], intercept=1.0)
    late = LinearModel(np.zeros(7), intercept=2.0)
    pw = PiecewiseAbnormalModel(early, late)
    x = np.r_[np.full(6, 80.0), 6.0]
    assert predict(pw, x) == 1.0
    x[6] = 7.0
    assert predict(pw, x) == 2.0
    X = np.column_stack([np.zeros((10, 6)), np.arange(1, 11)])
    np.testing.assert_array_equal(pw.predict(X), [1.0] * 6 + [2.0] * 4)


def test_piecewise_with_six_feature_pieces():
    pw = PiecewiseAbnormalModel(fit_bayes(None, np.eye(6)[0]), fit_bayes(None, np.eye(6)[1]))
    x = np.array([10.0, 20, 0, 0, 0, 0, 3])
    assert predict(pw, x) == pytest.approx(10.0)
    x[6] = 12
    assert predict(pw, x) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        predict(pw, x[:6])


# ---------------------------------------------------------------- persistence

def _models():
    rng = np.random.default_rng(11)
    X, _, y = random_problem(rng, n=40, noise=1.0)
    X7 = np.column_stack([X, rng.integers(1, 30, 40)])
    lin = fit_ols(ds(X, y))
    return [
        lin,
        fit_ols(ds(X, y), intercept=True),
        fit_bayes(ds(X, y), lin.beta),
        fit_gp(ds(X[:20], y[:20]), tau_grid=[4.0, 8.0]),
        fit_mlp(ds(X, y), h=2, g=5, seed=1),
        PiecewiseAbnormalModel(fit_ols(ds(X7, y, "incident_early")),
                               fit_bayes(ds(X, y, "incident_late"), lin.beta)),
    ], X7


def test_serialisation_round_trip(tmp_path):
    models, X7 = _models()
    for i, m in enumerate(models):
        path = tmp_path / f"m{i}.json"
        save(m, path)
        doc = json.loads(path.read_text())
        assert doc["version"] == 1 and "type" in doc["model"]
        back = load(path)
        assert type(back) is type(m)
        X = X7 if isinstance(m, PiecewiseAbnormalModel) else X7[:, :6]
        np.testing.assert_allclose(back.predict(X), m.predict(X), rtol=1e-12, atol=1e-9)


def test_deserialise_rejects_unknown():
    with pytest.raises(ValueError):
        from_dict({"format": "qtip-model", "version": 99, "model": {}})
    with pytest.raises(ValueError):
        from_dict({"format": "other"})
    with pytest.raises(ValueError):
        from_dict({"format": "qtip-model", "version": 1, "model": {"type": "forest"}})


def test_fit_dispatch():
    rng = np.random.default_rng(12)
    X, _, y = random_problem(rng, n=30)
    assert isinstance(fit("lr", ds(X, y)), LinearModel)
    assert isinstance(fit("gp", ds(X, y)), GPModel)
    assert isinstance(fit("mlp", ds(X, y)), MLPModel)
    assert isinstance(fit_bayes(ds(X, y), np.zeros(6)), BayesianLinearModel)
    with pytest.raises(ValueError):
        fit("forest", ds(X, y))
    with pytest.raises(TypeError):
        to_dict(object())
