import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from misbayes import glm, projection
from misbayes.errors import ContractError, ConvergenceError, DegeneracyError
from misbayes.projection import (
    ProjectionReport,
    ReferencePosterior,
    SubmodelSpec,
    bayesian_bootstrap_project,
    clustered_projection,
    glm_bayesian_bootstrap,
    point_projection,
    project_draw,
    project_posterior,
    relative_loss,
    select_submodel,
)
from misbayes.rng import RngStream

BIN = glm.GlmFamily("binomial-logit")
GAUSS = glm.GlmFamily("gaussian-identity")


def binomial_reference(T=40, n=120, seed=0, beta=(0.3, 1.2, 0.0, -0.6)):
    """Reference draws from the Gaussian approximation around the MLE."""
    g = np.random.default_rng(seed)
    p = len(beta)
    Z = np.column_stack([np.ones(n), g.normal(size=(n, p - 1))])
    trials = np.full(n, 5.0)
    y = g.binomial(5, 1 / (1 + np.exp(-Z @ np.asarray(beta)))).astype(float)
    data = glm.GlmData(y, Z, trials)
    fit = glm.irls_mle(BIN, data)
    draws = g.multivariate_normal(fit.coef, fit.cov, size=T)
    return ReferencePosterior(BIN, data, draws)


def gaussian_reference(T=20, n=50, seed=1):
    g = np.random.default_rng(seed)
    Z = np.column_stack([np.ones(n), g.normal(size=(n, 3))])
    draws = g.normal(size=(T, 4))
    return ReferencePosterior(GAUSS, glm.GlmData(np.zeros(n), Z), draws)


# -- single-draw projections -------------------------------------------------

def test_full_projection_is_identity():
    ref = binomial_reference()
    th = ref.draws[0]
    out = project_draw(th, SubmodelSpec.full(4), BIN, ref.data)
    assert np.allclose(out, th, atol=1e-8)
    assert glm.kl_glm(BIN, ref.data, th, out) < 1e-12


def test_gaussian_subset_matches_least_squares():
    ref = gaussian_reference()
    Z = ref.data.Z
    active = [0, 2]
    for th in ref.draws:
        out = project_draw(th, SubmodelSpec.subset(active), GAUSS, ref.data)
        ZS = Z[:, active]
        ls = np.linalg.solve(ZS.T @ ZS, ZS.T @ (Z @ th))
        assert np.allclose(out[active], ls, atol=1e-8)
        assert np.all(out[[1, 3]] == 0.0)


def test_l1_ball_small_radius_limit():
    ref = binomial_reference()
    th = ref.draws[0]
    out = project_draw(th, SubmodelSpec.l1_ball(1e-9), BIN, ref.data)
    assert np.abs(out[1:]).sum() <= 1e-9 + 1e-6
    mu = glm.fitted_mean(BIN, ref.data, th)
    icpt = glm.irls_mle(BIN, ref.data.with_response(mu).subset_columns([0])).coef[0]
    assert out[0] == pytest.approx(icpt, abs=1e-4)


def test_l1_ball_large_radius_is_unconstrained():
    ref = binomial_reference()
    th = ref.draws[0]
    out = project_draw(th, SubmodelSpec.l1_ball(1e6), BIN, ref.data)
    assert np.allclose(out, th, atol=1e-8)


def test_projection_optimality_spot_check():
    ref = binomial_reference(T=5)
    spec = SubmodelSpec.subset([0, 1])
    g = np.random.default_rng(4)
    for th in ref.draws:
        proj = project_draw(th, spec, BIN, ref.data)
        d0 = glm.kl_glm(BIN, ref.data, th, proj)
        for _ in range(100):
            alt = np.zeros(4)
            alt[[0, 1]] = proj[[0, 1]] + g.normal(scale=0.3, size=2)
            assert d0 <= glm.kl_glm(BIN, ref.data, th, alt) + 1e-10


def test_dispersion_independence():
    ref = gaussian_reference()
    spec = SubmodelSpec.subset([0, 1])
    a = project_posterior(ref, spec)
    fam4 = glm.GlmFamily("gaussian-identity", dispersion=4.0)
    b = project_posterior(ReferencePosterior(fam4, ref.data, ref.draws), spec)
    assert np.allclose(a.projected, b.projected, atol=1e-12)
    assert np.allclose(b.distances, a.distances / 4.0)


# -- posterior-level quantities ----------------------------------------------

def test_delta_full_zero_and_relative_loss_bounds():
    ref = binomial_reference()
    full = project_posterior(ref, SubmodelSpec.full(4))
    null = project_posterior(ref, SubmodelSpec.null())
    assert full.delta == pytest.approx(0.0, abs=1e-10)
    assert relative_loss(null, null) == 1.0
    assert relative_loss(full, null) == pytest.approx(0.0, abs=1e-10)


def test_nesting_monotonicity_drawwise():
    ref = binomial_reference()
    s1 = project_posterior(ref, SubmodelSpec.subset([0, 1]))
    s2 = project_posterior(ref, SubmodelSpec.subset([0, 1, 3]))
    assert np.all(s1.distances >= s2.distances - 1e-9)
    assert s1.delta >= s2.delta


def test_noise_versus_signal_covariate():
    ref = binomial_reference(T=60, n=400, beta=(0.2, 1.0, 0.0))
    null = project_posterior(ref, SubmodelSpec.null())
    drop_noise = relative_loss(project_posterior(ref, SubmodelSpec.subset([0, 1])), null)
    drop_signal = relative_loss(project_posterior(ref, SubmodelSpec.subset([0, 2])), null)
    assert drop_noise < 0.05
    assert drop_signal > 0.5


def test_orthogonal_gaussian_anova():
    n = 40
    Z = np.column_stack([np.ones(n), np.linalg.qr(np.random.default_rng(2).normal(size=(n, 3)) - 0.0)[0]])
    Z[:, 1:] -= Z[:, 1:].mean(axis=0)
    Q, _ = np.linalg.qr(Z)
    Z = np.column_stack([np.ones(n), Q[:, 1:] * np.sqrt(n)])
    draws = np.random.default_rng(3).normal(1.0, 0.5, size=(30, 4))
    ref = ReferencePosterior(GAUSS, glm.GlmData(np.zeros(n), Z), draws)
    rep = project_posterior(ref, SubmodelSpec.subset([0, 1]))
    null = project_posterior(ref, SubmodelSpec.null())
    ss = lambda cols: np.mean([np.sum((Z[:, cols] @ th[cols]) ** 2) for th in draws])  # noqa: E731
    assert relative_loss(rep, null) == pytest.approx(ss([2, 3]) / ss([1, 2, 3]), rel=1e-9)


def test_relative_loss_degenerate_and_clamp():
    spec = SubmodelSpec.null()
    zero = ProjectionReport(spec, np.zeros((1, 2)), np.zeros(1), 0.0)
    big = ProjectionReport(spec, np.zeros((1, 2)), np.ones(1), 1.0)
    with pytest.raises(DegeneracyError):
        relative_loss(big, zero)
    small = ProjectionReport(spec, np.zeros((1, 2)), np.ones(1), 0.5)
    with pytest.warns(RuntimeWarning):
        assert relative_loss(big, small) == 1.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_permutation_invariance(seed):
    ref = binomial_reference(T=12)
    perm = np.random.default_rng(seed).permutation(ref.T)
    ref2 = ReferencePosterior(BIN, ref.data, ref.draws[perm])
    spec = SubmodelSpec.subset([0, 1, 2])
    a, b = project_posterior(ref, spec), project_posterior(ref2, spec)
    na, nb = project_posterior(ref, SubmodelSpec.null()), project_posterior(ref2, SubmodelSpec.null())
    assert a.delta == pytest.approx(b.delta, rel=1e-10)
    assert relative_loss(a, na) == pytest.approx(relative_loss(b, nb), rel=1e-10)


@settings(max_examples=10, deadline=None)
@given(lam=st.floats(0.05, 3.0))
def test_l1_radius_respected(lam):
    ref = binomial_reference(T=8)
    rep = project_posterior(ref, SubmodelSpec.l1_ball(lam))
    assert np.all(np.abs(rep.projected[:, 1:]).sum(axis=1) <= lam + 1e-6)


def test_failures_excluded_then_abort(monkeypatch):
    ref = binomial_reference(T=50)
    real = projection.project_draw

    def flaky(every):
        def f(theta, spec, family, data):
            if np.any(np.all(ref.draws[::every] == theta, axis=1)):
                raise ConvergenceError("forced")
            return real(theta, spec, family, data)

        return f

    monkeypatch.setattr(projection, "project_draw", flaky(25))
    rep = project_posterior(ref, SubmodelSpec.subset([0, 1]))
    assert len(rep.failures) == 2 and len(rep.distances) == 48
    assert 0 not in rep.draw_index and 25 not in rep.draw_index
    monkeypatch.setattr(projection, "project_draw", flaky(5))
    with pytest.raises(ConvergenceError):
        project_posterior(ref, SubmodelSpec.subset([0, 1]))


def test_report_csv(tmp_path):
    ref = binomial_reference(T=5)
    rep = project_posterior(ref, SubmodelSpec.subset([0, 1]))
    path = tmp_path / "r.csv"
    rep.to_csv(path, ["a", "b", "c", "d"])
    lines = path.read_text().splitlines()
    assert lines[0] == "draw,a,b,c,d,distance" and len(lines) == 6


# -- selection ---------------------------------------------------------------

def test_select_null_or_full():
    ref = binomial_reference()
    sel = select_submodel(ref, [SubmodelSpec.null(), SubmodelSpec.full(4)], 0.1)
    assert sel.spec.active == (0, 1, 2, 3) and not sel.no_selection
    sel = select_submodel(ref, [SubmodelSpec.null(), SubmodelSpec.full(4)], 1.0)
    assert sel.spec.active == (0,)


def test_select_tie_goes_to_smallest_loss():
    n = 60
    Q, _ = np.linalg.qr(np.random.default_rng(5).normal(size=(n, 3)) - 0.0)
    Q -= Q.mean(axis=0)
    Q, _ = np.linalg.qr(Q)
    Z = np.column_stack([np.ones(n), Q])
    # regression sum-of-squares shares 0.90 / 0.07 / 0.03
    theta = np.array([0.5, np.sqrt(0.90), np.sqrt(0.07), np.sqrt(0.03)])
    ref = ReferencePosterior(GAUSS, glm.GlmData(np.zeros(n), Z), theta[None, :])
    a, b = SubmodelSpec.subset([0, 1, 2]), SubmodelSpec.subset([0, 1, 3])
    sel = select_submodel(ref, [b, a], 0.1)
    assert sel.spec.active == (0, 1, 2)
    assert sel.loss == pytest.approx(0.03, rel=1e-8)


def test_select_none_qualifies():
    ref = binomial_reference()
    sel = select_submodel(ref, [SubmodelSpec.null()], 0.1)
    assert sel.no_selection and sel.spec.active == (0, 1, 2, 3)
    with pytest.raises(ContractError):
        select_submodel(ref, [], 0.1)


# -- point and clustered projections -----------------------------------------

def test_point_projection_point_mass():
    ref = binomial_reference(T=1)
    spec = SubmodelSpec.subset([0, 1])
    assert np.allclose(point_projection(ref, spec), project_draw(ref.draws[0], spec, BIN, ref.data), atol=1e-10)


def test_point_projection_gaussian_oracle():
    ref = gaussian_reference()
    Z = ref.data.Z
    active = [0, 1, 3]
    out = point_projection(ref, SubmodelSpec.subset(active))
    ZS = Z[:, active]
    mu = Z @ ref.draws.mean(axis=0)
    assert np.allclose(out[active], np.linalg.solve(ZS.T @ ZS, ZS.T @ mu), atol=1e-8)


def test_point_projection_prediction_design():
    ref = gaussian_reference()
    Zp = np.column_stack([np.ones(8), np.random.default_rng(6).normal(size=(8, 3))])
    out = point_projection(ref, SubmodelSpec.full(4), prediction_design=Zp)
    assert np.allclose(out, ref.draws.mean(axis=0), atol=1e-8)


def test_clustered_limits():
    ref = binomial_reference(T=15)
    spec = SubmodelSpec.subset([0, 1, 2])
    allk = clustered_projection(ref, spec, ref.T, RngStream(1))
    drawwise = project_posterior(ref, spec)
    assert np.allclose(allk.projected, drawwise.projected, atol=1e-8)
    assert np.allclose(allk.weights, 1 / ref.T)
    one = clustered_projection(ref, spec, 1, RngStream(1))
    assert np.allclose(one.projected[0], point_projection(ref, spec), atol=1e-8)
    mid = clustered_projection(ref, spec, 4, RngStream(1))
    assert mid.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ContractError):
        clustered_projection(ref, spec, ref.T + 1)


# -- Bayesian bootstrap ------------------------------------------------------

def test_bootstrap_equal_weights_give_mle():
    ref = binomial_reference()
    n = ref.data.n
    out = glm_bayesian_bootstrap(BIN, ref.data, 1, None, weights=np.full((1, n), 1 / n))
    assert np.allclose(out[0], glm.irls_mle(BIN, ref.data).coef, atol=1e-8)


def test_bootstrap_gaussian_is_wls():
    g = np.random.default_rng(7)
    n = 30
    Z = np.column_stack([np.ones(n), g.normal(size=n)])
    y = Z @ [1.0, 2.0] + g.normal(size=n)
    data = glm.GlmData(y, Z)
    out = glm_bayesian_bootstrap(GAUSS, data, 20, RngStream(8))
    W = RngStream(8).generator().dirichlet(np.ones(n), size=20)
    for b in range(20):
        Wz = Z * W[b][:, None]
        assert np.allclose(out[b], np.linalg.solve(Z.T @ Wz, Wz.T @ y), atol=1e-8)


def test_generic_bootstrap_matches_glm_bootstrap():
    ref = binomial_reference()
    data = ref.data
    fit = glm.irls_mle(BIN, data)
    generic = bayesian_bootstrap_project(lambda eta: glm.loglik_terms(BIN, data, eta), data.n, 5, RngStream(9), fit.coef,
                                         options={"gtol": 1e-10})
    direct = glm_bayesian_bootstrap(BIN, data, 5, RngStream(9))
    assert np.allclose(generic, direct, atol=1e-4)
