import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special
from scipy.optimize import approx_fprime

from misbayes import glm
from misbayes.errors import DesignError, SeparationError

BIN = glm.GlmFamily("binomial-logit")
GAU = glm.GlmFamily("gaussian-identity")
POI = glm.GlmFamily("poisson-log")


def binomial_data(n=200, seed=0, beta=(0.3, -0.8, 0.5)):
    g = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n), g.standard_normal((n, len(beta) - 1))])
    t = g.integers(5, 30, n).astype(float)
    y = g.binomial(t.astype(int), special.expit(Z @ np.array(beta))).astype(float)
    return glm.GlmData(y, Z, t)


def poisson_data(n=200, seed=1, beta=(0.5, 0.4)):
    g = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n), g.standard_normal((n, len(beta) - 1))])
    y = g.poisson(np.exp(Z @ np.array(beta))).astype(float)
    return glm.GlmData(y, Z)


def gaussian_data(n=100, seed=2, beta=(1.0, 2.0, -1.0)):
    g = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n), g.standard_normal((n, len(beta) - 1))])
    return glm.GlmData(Z @ np.array(beta) + g.standard_normal(n), Z)


def test_binomial_half_probability_terms():
    t = np.array([2.0, 4.0, 10.0])
    d = glm.GlmData(t / 2, np.ones((3, 1)), t)
    terms = glm.loglik_terms(BIN, d, np.zeros(1))
    expect = t * np.log(0.5) + np.log(special.comb(t, t / 2))
    assert np.allclose(terms, expect)


def test_gaussian_loglik_closed_form():
    d = gaussian_data()
    b = np.array([0.5, 1.0, 0.0])
    r = d.y - d.Z @ b
    assert glm.loglik(GAU, d, b) == pytest.approx(-d.n / 2 * np.log(2 * np.pi) - 0.5 * r @ r)


def test_saturation_flag():
    d = binomial_data(20)
    _, sat = glm.loglik(BIN, d, np.array([100.0, 0.0, 0.0]), return_saturation=True)
    assert sat


@pytest.mark.parametrize("fam,make", [(BIN, binomial_data), (POI, poisson_data), (GAU, gaussian_data)])
def test_score_and_information_match_finite_differences(fam, make):
    d = make()
    b = np.random.default_rng(5).normal(0, 0.3, d.p)
    num = approx_fprime(b, lambda x: glm.loglik(fam, d, x), 1e-6)
    an = glm.score(fam, d, b)
    assert np.linalg.norm(num - an) / np.linalg.norm(an) < 1e-5
    H = np.array([approx_fprime(b, lambda x, j=j: glm.score(fam, d, x)[j], 1e-6) for j in range(d.p)])
    info = glm.fisher_information(fam, d, b)
    assert np.linalg.norm(-H - info) / np.linalg.norm(info) < 1e-5


def test_irls_closed_forms():
    d = binomial_data()
    d0 = d.subset_columns([0])
    fit = glm.irls_mle(BIN, d0)
    assert fit.coef[0] == pytest.approx(special.logit(d.y.sum() / d.trials.sum()), abs=1e-10)
    dp = poisson_data().subset_columns([0])
    assert glm.irls_mle(POI, dp).coef[0] == pytest.approx(np.log(dp.y.mean()), abs=1e-10)
    dg = gaussian_data()
    ols, *_ = np.linalg.lstsq(dg.Z, dg.y, rcond=None)
    assert np.allclose(glm.irls_mle(GAU, dg).coef, ols, atol=1e-10)


def test_irls_score_and_cov():
    d = binomial_data()
    fit = glm.irls_mle(BIN, d)
    assert fit.converged
    assert np.max(np.abs(glm.score(BIN, d, fit.coef))) < 1e-8
    assert np.allclose(fit.cov, np.linalg.inv(glm.fisher_information(BIN, d, fit.coef)))


def test_irls_equivariance():
    d = binomial_data()
    A = np.array([[1.0, 0.5, -0.2], [0.0, 2.0, 0.3], [0.0, 0.1, 0.7]])
    d2 = glm.GlmData(d.y, d.Z @ A, d.trials)
    b1 = glm.irls_mle(BIN, d).coef
    b2 = glm.irls_mle(BIN, d2).coef
    assert np.allclose(b2, np.linalg.solve(A, b1), atol=1e-8)


def test_separation_and_rank_errors():
    z = np.linspace(-1, 1, 20)
    d = glm.GlmData((z > 0).astype(float), np.column_stack([np.ones(20), z]), np.ones(20))
    with pytest.raises(SeparationError):
        glm.irls_mle(BIN, d)
    Z = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(DesignError):
        glm.irls_mle(GAU, glm.GlmData(np.arange(10.0), Z))


def test_huber_psi():
    assert glm.huber_psi(2.0, 1.2) == pytest.approx(1.2)
    assert glm.huber_psi(0.5, 1.2) == pytest.approx(0.5)
    assert glm.huber_psi(-3.0, 1.2) == pytest.approx(-1.2)


def test_robust_close_to_mle_on_clean_data():
    d = binomial_data(n=1000, seed=3)
    rob = glm.robust_mest(BIN, d, c=1.2)
    mle = glm.irls_mle(BIN, d)
    diff = rob.coef - mle.coef
    assert diff @ np.linalg.solve(mle.cov, diff) < 4.0


def test_robust_tends_to_mle_for_large_c():
    d = binomial_data(seed=4)
    assert np.allclose(glm.robust_mest(BIN, d, c=1e6).coef, glm.irls_mle(BIN, d).coef, atol=1e-4)


def test_robust_resists_outlier():
    d = binomial_data(n=60, seed=6)
    y = d.y.copy()
    i = int(np.argmin(d.Z @ np.array([0.3, -0.8, 0.5])))
    y[i] = d.trials[i]
    dc = d.with_response(y)
    dm = np.abs(glm.irls_mle(BIN, dc).coef - glm.irls_mle(BIN, d).coef)
    dr = np.abs(glm.robust_mest(BIN, dc).coef - glm.robust_mest(BIN, d).coef)
    assert np.sum(dr < dm) >= d.p - 1


def test_lasso_limits():
    d = binomial_data()
    b0 = glm.lasso_fit(BIN, d, d.y, 0.0)
    assert np.allclose(b0, glm.irls_mle(BIN, d).coef, atol=1e-6)
    lam = glm.lambda_max(BIN, d, d.y)
    b = glm.lasso_fit(BIN, d, d.y, 1.01 * lam)
    assert np.all(b[1:] == 0.0)
    assert b[0] == pytest.approx(glm.irls_mle(BIN, d.subset_columns([0])).coef[0], abs=1e-8)


def test_lasso_soft_threshold_on_orthonormal_design():
    g = np.random.default_rng(7)
    Q, _ = np.linalg.qr(g.standard_normal((50, 4)))
    # column 0 must be the unpenalized intercept; use a constant direction
    Z = np.column_stack([np.ones(50) / np.sqrt(50), Q[:, 1:]])
    Q, _ = np.linalg.qr(Z)
    Q[:, 0] = np.abs(Q[:, 0])
    y = Q @ np.array([3.0, 2.0, -0.3, 0.8]) + 0.1 * g.standard_normal(50)
    d = glm.GlmData(y, Q)
    ols = Q.T @ y
    lam = 0.5
    b = glm.lasso_fit(GAU, d, y, lam)
    expect = np.concatenate([[ols[0]], np.sign(ols[1:]) * np.maximum(np.abs(ols[1:]) - lam, 0.0)])
    assert np.allclose(b, expect, atol=1e-8)
    assert glm.lasso_kkt_violation(GAU, d, b, lam) < 1e-6


def test_kl_closed_forms():
    d = binomial_data(50)
    b = np.array([0.1, 0.2, -0.3])
    assert glm.kl_glm(BIN, d, b, b) == 0.0
    n = 40
    z = np.linspace(-1, 2, n)
    dg = glm.GlmData(np.zeros(n), z[:, None])
    assert glm.kl_glm(GAU, dg, [1.3], [0.4]) == pytest.approx(n * 0.9**2 * np.mean(z**2) / 2)
    # numerical integration of one gaussian term
    from scipy import integrate, stats

    f = stats.norm(1.3 * z[5], 1.0)
    q = stats.norm(0.4 * z[5], 1.0)
    num = integrate.quad(lambda x: f.pdf(x) * (f.logpdf(x) - q.logpdf(x)), -20, 20)[0]
    assert num == pytest.approx((0.9 * z[5]) ** 2 / 2, abs=1e-8)
    dp = poisson_data(30)
    mu, nu = np.exp(dp.Z @ [0.2, 0.1]), np.exp(dp.Z @ [0.0, 0.5])
    assert glm.kl_glm(POI, dp, [0.2, 0.1], [0.0, 0.5]) == pytest.approx(np.sum(mu * np.log(mu / nu) - mu + nu))


@settings(max_examples=200, deadline=None)
@given(a=st.lists(st.floats(-3, 3), min_size=3, max_size=3), b=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       fam=st.sampled_from([BIN, POI, GAU]))
def test_kl_nonnegative(a, b, fam):
    d = binomial_data(30, seed=9) if fam is BIN else glm.GlmData(np.zeros(30), binomial_data(30, seed=9).Z)
    kl = glm.kl_glm(fam, d, np.array(a), np.array(b))
    assert kl >= 0.0
    if np.allclose(a, b):
        assert kl == pytest.approx(0.0, abs=1e-9)
    else:
        assert kl > 0.0
