import math

import numpy as np
import pytest

from gwmatern.covmat import SymmetricMatrix, assemble, build_pointset, cholesky
from gwmatern.errors import DomainError, FitError, NotPositiveDefiniteError
from gwmatern.inference import (
    GaussianLikelihood,
    ParamVector,
    build_model,
    equivalence_check,
    fisher_information,
    fit_ml,
    initial_guess,
    log_likelihood,
    microergodic,
)
from gwmatern.kernels import min_shape
from gwmatern.montecarlo import simulate_grf


def dense_loglik(sigma, z):
    n = len(z)
    sign, logdet = np.linalg.slogdet(sigma)
    assert sign > 0
    return -0.5 * (n * math.log(2 * math.pi) + logdet + z @ np.linalg.inv(sigma) @ z)


def phi_data(n=150, seed=0, nu=0.0, mu=3.5, beta=0.05, sigma2=1.0, tau2=0.0):
    rng = np.random.default_rng(seed)
    ps = build_pointset(rng.random((n, 2)))
    theta = ParamVector(sigma2, beta, 1.0 / mu, tau2)
    z = simulate_grf(ps, build_model(theta, "phi", nu), seed + 1)
    return ps, z, theta


def test_loglik_scalar_case():
    ps = build_pointset([[0.0, 0.0]])
    th = ParamVector(1.0, 0.1)
    assert log_likelihood(th, "matern", ps, [0.0], 0.5) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_loglik_independent_pair():
    ps = build_pointset([[0.0, 0.0], [10.0, 0.0]])
    th = ParamVector(1.0, 0.1, 1 / 2.0)  # support 0.2 << 10
    v = log_likelihood(th, "phi", ps, [1.0, 1.0], 0.0)
    assert v == pytest.approx(-math.log(2 * math.pi) - 1.0, rel=1e-14)


@pytest.mark.parametrize("family, theta", [
    ("phi", ParamVector(1.4, 0.06, 1 / 4.0, 0.1)),
    ("matern", ParamVector(0.7, 0.2, None, 0.05)),
    ("gw", ParamVector(2.0, 0.3, 1 / 3.0, 0.0)),
])
def test_loglik_matches_explicit_dense_oracle(family, theta):
    rng = np.random.default_rng(7)
    ps = build_pointset(rng.random((50, 2)))
    z = rng.standard_normal(50)
    sigma = assemble(ps, build_model(theta, family, 1.0), storage="dense").toarray()
    ref = dense_loglik(sigma, z)
    for storage in ("dense", "auto") + (("sparse",) if family != "matern" else ()):
        assert log_likelihood(theta, family, ps, z, 1.0, storage=storage) == pytest.approx(ref, abs=1e-8)


def test_loglik_sparse_path_matches_dense():
    ps, z, th = phi_data(n=400, seed=3)
    a = log_likelihood(th, "phi", ps, z, 0.0, storage="dense")
    b = log_likelihood(th, "phi", ps, z, 0.0, storage="sparse")
    assert a == pytest.approx(b, abs=1e-8)


def test_loglik_invariant_under_relabeling():
    ps, z, th = phi_data(n=120, seed=4, tau2=0.1)
    perm = np.random.default_rng(0).permutation(ps.n)
    ps2 = build_pointset(ps.coords[perm])
    a = log_likelihood(th, "phi", ps, z, 0.0)
    b = log_likelihood(th, "phi", ps2, z[perm], 0.0)
    assert a == pytest.approx(b, abs=1e-10)


def test_profile_identity():
    ps, z, th = phi_data(n=100, seed=5, tau2=0.2)
    lik = GaussianLikelihood(ps, z, "phi", 0.0)
    prof, s2 = lik.profile(th)
    r = assemble(ps, build_model(th.with_values(sigma2=1.0), "phi", 0.0), storage="dense").toarray()
    assert s2 == pytest.approx(z @ np.linalg.solve(r, z) / ps.n, rel=1e-12)
    assert prof == pytest.approx(lik(th.with_values(sigma2=s2)), abs=1e-8)
    # the profile is the maximum over sigma2
    for f in (0.8, 1.25):
        assert lik(th.with_values(sigma2=s2 * f)) < prof


def test_sigma2_only_fit_equals_closed_form():
    ps, z, th = phi_data(n=120, seed=6, sigma2=2.0)
    init = th.with_values(sigma2=1.0)
    init = ParamVector(init.sigma2, init.beta, init.mu_star, 0.0, fixed={"beta", "mu_star", "tau2"})
    res = fit_ml(ps, z, "phi", 0.0, init=init)
    r = assemble(ps, build_model(th.with_values(sigma2=1.0), "phi", 0.0), storage="dense").toarray()
    closed = z @ np.linalg.solve(r, z) / ps.n
    assert res.theta_hat.sigma2 == pytest.approx(closed, rel=1e-10)
    # the same without profiling, by the simplex alone
    res2 = fit_ml(ps, z, "phi", 0.0, init=init, profile=False)
    assert res2.theta_hat.sigma2 == pytest.approx(closed, rel=1e-5)


def test_fit_improves_likelihood_and_reports():
    ps, z, th = phi_data(n=250, seed=8, nu=1.0, mu=5.5, beta=0.06)
    init = ParamVector(1.2, 0.07, 1 / 5.5, 0.0, fixed={"mu_star", "tau2"})
    res = fit_ml(ps, z, "phi", 1.0, init=init)
    assert res.converged
    assert res.loglik_max >= log_likelihood(th, "phi", ps, z, 1.0) - 1e-9
    assert res.aic == pytest.approx(2 * 2 - 2 * res.loglik_max)
    assert set(res.std_errors) == {"sigma2", "beta"}
    assert all(v > 0 for v in res.std_errors.values())
    assert res.microergodic_hat == pytest.approx(microergodic(res.theta_hat, 1.0))
    s = res.summary()
    assert s["mu"] == pytest.approx(5.5) and s["boundary"] == "none"


def test_fit_with_free_shape_and_nugget():
    ps, z, th = phi_data(n=200, seed=9, nu=0.0, mu=3.0, beta=0.06, tau2=0.1)
    init = initial_guess(ps, z, "phi", 0.0, nugget=True)
    res = fit_ml(ps, z, "phi", 0.0, init=init, compute_fisher=False)
    lam = min_shape(2, 0.0)
    assert 0 < res.theta_hat.mu_star <= 1 / lam + 1e-12
    assert 0 <= res.theta_hat.tau2 < 1
    assert res.loglik_max >= log_likelihood(init, "phi", ps, z, 0.0)


def test_fit_reports_upper_shape_boundary():
    # data from a very rough model push mu towards its lower bound lambda
    ps, z, _ = phi_data(n=200, seed=10, nu=0.0, mu=1.5, beta=0.3)
    init = ParamVector(1.0, 0.3, 0.5 / 1.5, 0.0, fixed={"tau2"})
    res = fit_ml(ps, z, "phi", 0.0, init=init, compute_fisher=False)
    if abs(res.theta_hat.mu_star - 1 / 1.5) < 1e-6:
        assert "mu_star_upper" in res.boundary
    else:
        assert "mu_star_upper" not in res.boundary


def test_zero_iterations_return_start():
    ps, z, th = phi_data(n=80, seed=11)
    init = ParamVector(1.3, 0.04, 1 / 3.5, 0.0, fixed={"mu_star", "tau2"})
    res = fit_ml(ps, z, "phi", 0.0, init=init, max_iter=0)
    assert res.theta_hat == init


def test_fit_raises_when_budget_exhausted():
    ps, z, th = phi_data(n=80, seed=12)
    init = ParamVector(1.3, 0.2, 1 / 3.5, 0.0, fixed={"mu_star", "tau2"})
    with pytest.raises(FitError):
        fit_ml(ps, z, "phi", 0.0, init=init, max_iter=2)


def test_not_positive_definite_is_an_error_for_loglik():
    ps = build_pointset(np.array([[0, 0], [0, 0], [1, 1]]), check_duplicates=False)
    th = ParamVector(1.0, 50.0, None, 0.0)
    with pytest.raises(NotPositiveDefiniteError):
        log_likelihood(th, "matern", ps, [0.1, 0.2, 0.3], 3.0)


def test_paramvector_validation():
    with pytest.raises(DomainError):
        ParamVector(0.0, 1.0)
    with pytest.raises(DomainError):
        ParamVector(1.0, 1.0, tau2=1.0)
    with pytest.raises(DomainError):
        ParamVector(1.0, 1.0, fixed={"kappa"})
    with pytest.raises(DomainError):
        build_model(ParamVector(1.0, 1.0, 1.0), "phi", 0.0)  # mu = 1 < 1.5


def test_fisher_sigma2_only():
    ps, z, th = phi_data(n=60, seed=13, sigma2=1.7)
    f = fisher_information(th, ps, "phi", 0.0, names=("sigma2",))
    assert f[0, 0] == pytest.approx(60 / (2 * 1.7**2), rel=1e-12)


def test_fisher_symmetric_and_psd():
    ps, z, th = phi_data(n=80, seed=14, tau2=0.1)
    th = ParamVector(th.sigma2, th.beta, th.mu_star, 0.1)
    f = fisher_information(th, ps, "phi", 0.0)
    np.testing.assert_allclose(f, f.T, atol=1e-12 * np.abs(f).max())
    assert np.linalg.eigvalsh(f).min() > -1e-8 * np.abs(f).max()


def test_fisher_matches_hessian_of_expected_loglik():
    rng = np.random.default_rng(15)
    ps = build_pointset(rng.random((20, 2)))
    th = ParamVector(1.3, 0.15, 1 / 4.0, 0.0)
    nu, fam = 1.0, "phi"

    def cov(s2, b):
        return assemble(ps, build_model(ParamVector(s2, b, th.mu_star), fam, nu), storage="dense").toarray()

    s_true = cov(th.sigma2, th.beta)

    def expected(x):
        s = cov(*x)
        sign, logdet = np.linalg.slogdet(s)
        return -0.5 * (logdet + np.trace(np.linalg.solve(s, s_true)))

    x0 = np.array([th.sigma2, th.beta])
    h = np.array([1e-3 * x0[0], 1e-3 * x0[1]])
    hess = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            ei = np.eye(2)[i] * h[i]
            ej = np.eye(2)[j] * h[j]
            hess[i, j] = (expected(x0 + ei + ej) - expected(x0 + ei - ej)
                          - expected(x0 - ei + ej) + expected(x0 - ei - ej)) / (4 * h[i] * h[j])
    f = fisher_information(th, ps, fam, nu, names=("sigma2", "beta"))
    np.testing.assert_allclose(f, -hess, rtol=1e-4)


def test_microergodic_values(oracle):
    assert microergodic(ParamVector(1.0, 0.1, 1 / 5.0), 1.0) == pytest.approx(
        oracle["microergodic_s1_b0.1_nu1_mu5"], rel=1e-13
    )
    assert microergodic(ParamVector(2.0, 0.25, 1 / 3.0), 0.0) == pytest.approx(8.0)
    a = microergodic(ParamVector(1.0, 0.1, 1 / 5.0), 1.0)
    b = microergodic(ParamVector(1.0 * 7.0, 0.1 * 7.0 ** (1 / 3), 1 / 5.0), 1.0)
    assert a == pytest.approx(b, rel=1e-12)
    assert microergodic(ParamVector(2.0, 0.5), 1.5, "matern") == pytest.approx(2.0 / 0.5**3)


def test_equivalence_check():
    nu, mu0 = 1.0, 6.0
    t0 = ParamVector(1.0, 0.1, 1 / mu0)
    assert equivalence_check(t0, t0, nu).equivalent
    t1 = ParamVector(2.0 ** (1 + 2 * nu), 0.2, 1 / mu0)
    assert equivalence_check(t0, t1, nu).equivalent
    t2 = ParamVector(1.1, 0.1, 1 / mu0)
    res = equivalence_check(t0, t2, nu)
    assert res.precondition_ok and not res.equivalent
    lam = min_shape(2, nu)
    res = equivalence_check(t0, ParamVector(1.0, 0.1, 1 / lam), nu)
    assert not res.precondition_ok and not res.equivalent


def test_equivalent_measures_with_different_shapes():
    nu, mu0, mu1 = 0.0, 4.0, 7.0
    t0 = ParamVector(1.0, 0.1, 1 / mu0)
    c0 = microergodic(t0, nu)
    t1 = ParamVector(c0 * 0.3, 0.3, 1 / mu1)  # g(0, mu) = 1
    assert equivalence_check(t0, t1, nu).equivalent


def test_initial_guess_rules():
    ps, z, _ = phi_data(n=100, seed=16)
    g = initial_guess(ps, z, "phi", 0.0)
    assert g.sigma2 == pytest.approx(np.var(z))
    assert g.mu_star == pytest.approx(0.5 / 1.5)
    from gwmatern.kernels import practical_range

    pr = practical_range(build_model(g, "phi", 0.0))
    assert pr == pytest.approx(0.2 * ps.diameter, rel=1e-8)
    assert initial_guess(ps, z, "phi", 0.0, nugget=True).tau2 == 0.05
