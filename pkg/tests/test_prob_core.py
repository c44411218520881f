import numpy as np
import pytest
from math import gamma, log

from hypothesis import given, settings, strategies as st
from scipy import integrate

from misbayes import DistSpec, RngStream, logpdf, sample, spd_sqrt
from misbayes.errors import DegeneracyError, ParameterDomainError

ONE_D = [
    DistSpec.normal(0.3, 2.0),
    DistSpec.gamma(2.5, 1.5),
    DistSpec.inverse_gamma(3.0, 2.0),
    DistSpec.laplace(-1.0, 0.7),
    DistSpec.student_t(5.0, 0.5, 1.3),
]


def test_normal_at_mode():
    assert logpdf(DistSpec.normal(0.0, 1.0), 0.0) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)
    assert logpdf(DistSpec.normal(0.0, 1.0), 0.0) == pytest.approx(-0.9189385, abs=1e-7)


@given(a=st.floats(0.2, 20), b=st.floats(0.2, 20), x=st.floats(0.01, 50))
def test_inverse_gamma_change_of_variables(a, b, x):
    # shape-scale inverse gamma vs shape-rate gamma at 1/x
    lhs = logpdf(DistSpec.inverse_gamma(a, b), x)
    rhs = logpdf(DistSpec.gamma(a, b), 1.0 / x) - 2.0 * np.log(x)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_gamma_matches_module_one_term():
    J, phi2, s2 = 10, 0.5, 4.5
    a, r = (J - 1) / 2, 1 / (2 * phi2)
    direct = a * log(r) - log(gamma(a)) + (a - 1) * log(s2) - r * s2
    assert logpdf(DistSpec.gamma(a, r), s2) == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("spec", ONE_D, ids=lambda s: s.kind)
def test_density_integrates_to_one(spec):
    lo, hi = {"normal": (-20, 20), "gamma-shape-rate": (0, 40), "inverse-gamma": (1e-9, 1e4),
              "laplace": (-30, 30), "student-t": (-2000, 2000)}[spec.kind]
    total = integrate.quad(lambda x: np.exp(logpdf(spec, x)), lo, hi, limit=500)[0]
    assert total == pytest.approx(1.0, abs=1e-4)


def test_density_integrates_to_one_trapezoid():
    spec = DistSpec.gamma(2.5, 1.5)
    x = np.linspace(0.0, 40.0, 400001)
    assert np.trapezoid(np.exp(logpdf(spec, x)), x) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("spec", ONE_D, ids=lambda s: s.kind)
def test_sample_matches_logpdf_cdf(spec):
    draws = sample(spec, RngStream(11), 10_000)
    lo = min(draws.min(), np.quantile(draws, 0.0)) - 1.0
    grid = np.sort(np.concatenate([np.linspace(max(lo, 1e-12) if spec.kind in ("gamma-shape-rate", "inverse-gamma") else lo,
                                               draws.max() + 1.0, 200001)]))
    dens = np.exp(logpdf(spec, grid))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    F = np.interp(np.sort(draws), grid, cdf)
    n = draws.size
    ks = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    assert ks < 0.02


def test_binomial_and_dirichlet():
    b = DistSpec.binomial(10, 0.3)
    assert np.exp(logpdf(b, np.arange(11))).sum() == pytest.approx(1.0, abs=1e-12)
    assert logpdf(b, 2.5) == -np.inf
    n = 5
    d = sample(DistSpec.dirichlet(np.ones(n)), RngStream(3), 20_000)
    se = np.sqrt((1 / n) * (1 - 1 / n) / (n + 1) / d.shape[0])
    assert np.all(np.abs(d.mean(axis=0) - 1 / n) < 3 * se)
    assert logpdf(DistSpec.dirichlet(np.ones(3)), np.array([0.2, 0.3, 0.5])) == pytest.approx(np.log(2.0))


def test_sampling_is_deterministic():
    spec = DistSpec.mvnormal([0, 1], [[1, 0.3], [0.3, 2]])
    a = sample(spec, RngStream(5, (1, 2)), 100)
    b = sample(spec, RngStream(5, (1, 2)), 100)
    c = sample(spec, RngStream(5, (1, 3)), 100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_mvnormal_covariance_recovered():
    S = np.array([[2.0, 0.5, -0.3], [0.5, 1.0, 0.2], [-0.3, 0.2, 0.5]])
    x = sample(DistSpec.mvnormal(np.zeros(3), S), RngStream(8), 100_000)
    assert np.linalg.norm(np.cov(x, rowvar=False) - S) / np.linalg.norm(S) < 0.05


def test_invalid_parameters():
    with pytest.raises(ParameterDomainError):
        DistSpec.gamma(-1.0, 1.0)
    with pytest.raises(ParameterDomainError):
        DistSpec.mvnormal([0, 0], [[1, 2], [2, 1]])
    with pytest.raises(ParameterDomainError):
        DistSpec.dirichlet([1.0, 0.0])
    with pytest.raises(ParameterDomainError):
        DistSpec.binomial(2.5, 0.5)


def test_spd_sqrt_examples():
    assert np.allclose(spd_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    with pytest.raises(DegeneracyError) as exc:
        spd_sqrt(np.array([[1.0, 0.0], [0.0, -1e-3]]))
    assert exc.value.value == pytest.approx(-1e-3)


@settings(max_examples=50)
@given(seed=st.integers(0, 2**32 - 1))
def test_spd_sqrt_squares_back(seed):
    A = np.random.default_rng(seed).standard_normal((4, 4))
    M = A @ A.T + 0.1 * np.eye(4)
    R = spd_sqrt(M)
    assert np.allclose(R, R.T)
    assert np.linalg.norm(R @ R - M) / np.linalg.norm(M) < 1e-8


@settings(max_examples=25)
@given(seed=st.integers(0, 2**64 - 1), path=st.lists(st.integers(0, 1000), max_size=3))
def test_streams_are_reproducible(seed, path):
    a = RngStream(seed, tuple(path)).generator().random(5)
    b = RngStream(seed, tuple(path)).generator().random(5)
    assert np.array_equal(a, b)


def test_child_streams_uncorrelated():
    s = RngStream(99)
    xs = [s.child(i).generator().standard_normal(10_000) for i in range(5)]
    for i in range(5):
        for j in range(i + 1, 5):
            assert abs(np.corrcoef(xs[i], xs[j])[0, 1]) < 0.05
