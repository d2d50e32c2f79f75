import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from gwmatern.covmat import build_pointset
from gwmatern.errors import DomainError
from gwmatern.inference import ParamVector, build_model, fit_ml
from gwmatern.kernels import CorrelationModel, MaternParams, PhiParams
from gwmatern.montecarlo import simulate_grf
from gwmatern.predict import (
    KrigingResult,
    crps_gaussian,
    krige,
    logscore_gaussian,
    loo_cv,
    loo_predictions,
    resample_scores,
    score_holdout,
)


def crps_by_quadrature(mean, sd, y):
    f = lambda t: (norm.cdf(t, mean, sd) - (t >= y)) ** 2  # noqa: E731
    lo, hi = mean - 12 * sd, mean + 12 * sd
    a = integrate.quad(f, min(lo, y - 1), y, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    b = integrate.quad(f, y, max(hi, y + 1), epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return a + b


def random_setup(n, seed, tau2=0.0, beta=0.2):
    rng = np.random.default_rng(seed)
    ps = build_pointset(rng.random((n, 2)))
    model = CorrelationModel(PhiParams(1, 4, beta), variance=1.7, nugget=tau2)
    z = simulate_grf(ps, model, seed + 100)
    return ps, z, model


def test_kriging_interpolates_without_nugget():
    ps, z, model = random_setup(40, 1)
    res = krige(ps, z, model, ps)
    np.testing.assert_allclose(res.prediction, z, atol=1e-10)
    np.testing.assert_allclose(res.sd, 0.0, atol=1e-6)


def test_kriging_far_target_returns_mean():
    ps, z, model = random_setup(40, 2)
    far = build_pointset([[50.0, 50.0]])
    res = krige(ps, z, model, far)
    assert res.prediction[0] == 0.0
    assert res.sd[0] ** 2 == pytest.approx(model.variance)


def test_kriging_single_training_point():
    model = CorrelationModel(MaternParams(0.5, 1.0), variance=2.0)
    train = build_pointset([[0.0, 0.0]])
    target = build_pointset([[0.4, 0.3]])
    rho = math.exp(-0.5)
    res = krige(train, [1.3], model, target)
    assert res.prediction[0] == pytest.approx(rho * 1.3, rel=1e-14)
    assert res.sd[0] ** 2 == pytest.approx(2.0 * (1 - rho**2), rel=1e-12)


def test_kriging_variance_bounds_with_nugget():
    ps, z, model = random_setup(60, 3, tau2=0.2)
    targets = build_pointset(np.random.default_rng(4).random((100, 2)))
    res = krige(ps, z, model, targets, truth=np.zeros(100))
    assert np.all(res.sd > 0) and np.all(res.sd**2 <= model.variance + 1e-12)
    assert res.zscore.shape == (100,)
    # with a nugget a training site is predicted with at least the noise variance
    at_site = krige(ps, z, model, ps.subset([0]))
    assert at_site.sd[0] ** 2 >= 0.2 * model.variance - 1e-12


def test_crps_at_zero(oracle):
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(oracle["crps_at_zero"], rel=1e-14)
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(crps_by_quadrature(0.0, 1.0, 0.0), abs=1e-6)
    assert crps_gaussian(0.0, 2.5, 0.0) == pytest.approx(2.5 * oracle["crps_at_zero"], rel=1e-14)


def test_crps_closed_form_matches_definition():
    rng = np.random.default_rng(5)
    for z in np.linspace(-4, 4, 17):
        mean, sd = rng.normal(), rng.uniform(0.2, 3)
        y = mean + z * sd
        assert crps_gaussian(mean, sd, y) == pytest.approx(crps_by_quadrature(mean, sd, y), abs=1e-6)


def test_logscore_is_negative_log_density():
    assert logscore_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.5 * math.log(2 * math.pi), rel=1e-15)
    for mean, sd, y in [(0.3, 0.7, 1.1), (-2.0, 3.0, 4.0)]:
        assert logscore_gaussian(mean, sd, y) == pytest.approx(-norm.logpdf(y, mean, sd), abs=1e-12)


def test_scores_of_perfect_predictions():
    res = KrigingResult(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    s = score_holdout(res, [1.0, 2.0])
    assert s.rmse == 0.0
    assert s.crps == pytest.approx(0.5 * (2 * norm.pdf(0) - 1 / math.sqrt(math.pi)))


def test_zero_sd_is_rejected():
    res = KrigingResult(np.array([1.0]), np.array([0.0]))
    with pytest.raises(DomainError):
        score_holdout(res, [1.0])


def test_loo_independent_pair():
    ps = build_pointset([[0.0, 0.0], [5.0, 5.0]])
    model = CorrelationModel(PhiParams(0, 2, 0.1), variance=1.4)
    res = loo_predictions(ps, [0.7, -0.2], model)
    np.testing.assert_allclose(res.prediction, 0.0, atol=1e-15)
    np.testing.assert_allclose(res.sd**2, 1.4)


@pytest.mark.parametrize("seed", range(10))
def test_loo_matches_explicit_refits(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 31))
    tau2 = float(rng.choice([0.0, 0.15]))
    ps, z, model = random_setup(n, 50 + seed, tau2=tau2, beta=0.1)
    loo = loo_predictions(ps, z, model)
    for i in range(n):
        keep = np.delete(np.arange(n), i)
        r = krige(ps.subset(keep), z[keep], model, ps.subset([i]))
        assert loo.prediction[i] == pytest.approx(r.prediction[0], abs=1e-9)
        assert loo.sd[i] == pytest.approx(r.sd[0], abs=1e-9)


def test_loo_sparse_and_dense_agree():
    ps, z, model = random_setup(300, 7, tau2=0.05, beta=0.02)
    a = loo_cv(ps, z, model, storage="dense")
    b = loo_cv(ps, z, model, storage="sparse")
    assert a.rmse == pytest.approx(b.rmse, rel=1e-10)
    assert a.logscore == pytest.approx(b.logscore, rel=1e-10)
    assert a.crps == pytest.approx(b.crps, rel=1e-10)


def test_scores_similar_across_shapes():
    rng = np.random.default_rng(21)
    ps = build_pointset(rng.random((400, 2)))
    z = simulate_grf(ps, build_model(ParamVector(1.0, 0.06, 1 / 2.5), "phi", 0.0), 22)
    scores = []
    for mu in (2.0, 2.5, 3.5):
        init = ParamVector(1.0, 0.06 * 2.5 / mu, 1 / mu, 0.0, fixed={"mu_star", "tau2"})
        fit = fit_ml(ps, z, "phi", 0.0, init=init, compute_fisher=False)
        scores.append(loo_cv(ps, z, build_model(fit.theta_hat, "phi", 0.0)))
    for name in ("rmse", "logscore", "crps"):
        v = np.array([getattr(s, name) for s in scores])
        spread = (v.max() - v.min()) / v.min()
        print(f"{name}: {v} relative spread {spread:.4f}")
        assert spread < 0.01, (name, v)


def test_resample_single_holdout_reduces_to_point_score():
    ps, z, model = random_setup(30, 8)
    s = resample_scores(ps, z, model, repeats=1, seed=3, n_holdout=1)
    # rebuild the same split
    from gwmatern.montecarlo import make_generator

    perm = make_generator(np.random.SeedSequence(3).spawn(1)[0]).permutation(30)
    i, rest = perm[0], np.sort(perm[1:])
    r = krige(ps.subset(rest), z[rest], model, ps.subset([i]))
    assert s.rmse == pytest.approx(abs(z[i] - r.prediction[0]), rel=1e-12)
    assert s.crps == pytest.approx(float(crps_gaussian(r.prediction[0], r.sd[0], z[i])), rel=1e-12)


def test_resample_reproducible():
    ps, z, model = random_setup(60, 9)
    a = resample_scores(ps, z, model, repeats=5, seed=11)
    b = resample_scores(ps, z, model, repeats=5, seed=11)
    c = resample_scores(ps, z, model, repeats=5, seed=11, workers=2)
    assert a == b == c


def test_resample_validation():
    ps, z, model = random_setup(10, 10)
    with pytest.raises(DomainError):
        resample_scores(ps, z, model, repeats=0)
    with pytest.raises(DomainError):
        resample_scores(ps, z, model, n_holdout=10)


def test_log_score_prefers_true_model():
    rng = np.random.default_rng(12)
    ps = build_pointset(rng.random((150, 2)))
    true = CorrelationModel(PhiParams(0, 2.5, 0.05), variance=1.0)
    wrong = CorrelationModel(PhiParams(0, 2.5, 0.05), variance=4.0)
    diffs = []
    for rep in range(200):
        z = simulate_grf(ps, true, seed=1000 + rep)
        a = resample_scores(ps, z, true, repeats=1, seed=rep).logscore
        b = resample_scores(ps, z, wrong, repeats=1, seed=rep).logscore
        diffs.append(a - b)
    diffs = np.array(diffs)
    # one-sided test at the 95% level
    t = diffs.mean() / (diffs.std(ddof=1) / math.sqrt(len(diffs)))
    assert t < -1.645
