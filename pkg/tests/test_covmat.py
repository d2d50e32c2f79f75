import math
import time

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.spatial.distance import pdist, squareform

from gwmatern.covmat import (
    PointSet,
    SymmetricMatrix,
    assemble,
    build_pointset,
    cholesky,
    cross_covariance,
    neighbors_within,
    read_points_csv,
    solve,
    sparsity_stats,
    write_points_csv,
)
from gwmatern.errors import DomainError, DuplicateLocationError, NotPositiveDefiniteError
from gwmatern.kernels import CorrelationModel, MaternParams, PhiParams


def brute_pairs(coords, radius):
    d = squareform(pdist(coords))
    i, j = np.nonzero(np.tril(d < radius, -1))
    return set(zip(i.tolist(), j.tolist()))


def test_pointset_basic():
    ps = build_pointset([[0, 0], [1, 0], [0, 1]])
    assert ps.n == 3 and ps.dim == 2
    assert ps.diameter == pytest.approx(math.sqrt(2))


def test_pointset_rejects_duplicates():
    with pytest.raises(DuplicateLocationError) as info:
        build_pointset([[0, 0], [1, 0], [0, 0]])
    assert info.value.pair == (0, 2)


def test_pointset_warns_on_near_duplicates():
    with pytest.warns(RuntimeWarning):
        build_pointset([[0, 0], [1, 1], [1e-12, 0]])


def test_pointset_rejects_nonfinite():
    with pytest.raises(DomainError):
        build_pointset([[0, np.nan], [1, 0]])


def test_thousand_uniform_points_are_usable():
    rng = np.random.default_rng(0)
    ps = build_pointset(rng.random((1000, 2)))
    model = CorrelationModel(PhiParams(0, 3.5, 0.15 / 3.5))
    f = cholesky(assemble(ps, model))
    assert np.isfinite(f.logdet)


def test_neighbors_extremes():
    rng = np.random.default_rng(1)
    ps = build_pointset(rng.random((60, 2)))
    dmin = pdist(ps.coords).min()
    assert len(neighbors_within(ps, 0.5 * dmin)[0]) == 0
    assert len(neighbors_within(ps, 2 * ps.diameter)[0]) == 60 * 59 // 2


@pytest.mark.parametrize("dim, radius", [(2, 0.15), (3, 0.3), (1, 0.01), (2, 1e-4)])
def test_neighbors_match_brute_force(dim, radius):
    rng = np.random.default_rng(dim)
    ps = build_pointset(rng.random((500, dim)))
    i, j, r = neighbors_within(ps, radius)
    assert np.all(i > j)
    assert set(zip(i.tolist(), j.tolist())) == brute_pairs(ps.coords, radius)
    np.testing.assert_allclose(r, np.linalg.norm(ps.coords[i] - ps.coords[j], axis=1), rtol=1e-14)


def test_neighbors_from_pair_cache_match_grid():
    rng = np.random.default_rng(5)
    ps = build_pointset(rng.random((300, 2)))
    fresh = build_pointset(ps.coords)
    ps.cache_pairs()
    for radius in (0.05, 0.2):
        a = neighbors_within(ps, radius)
        b = neighbors_within(fresh, radius)
        assert set(zip(a[0].tolist(), a[1].tolist())) == set(zip(b[0].tolist(), b[1].tolist()))


def test_assemble_single_point():
    ps = build_pointset([[0.3, 0.4]])
    m = assemble(ps, CorrelationModel(MaternParams(0.5, 1.0), variance=2.5))
    assert m.toarray().tolist() == [[2.5]]
    assert sparsity_stats(m)["percent_zero"] == 1.0


def test_assemble_small_support_is_diagonal():
    rng = np.random.default_rng(2)
    ps = build_pointset(rng.random((50, 2)))
    beta = 0.1 * pdist(ps.coords).min() / 1.5
    m = assemble(ps, CorrelationModel(PhiParams(0, 1.5, beta), variance=3.0))
    np.testing.assert_array_equal(m.toarray(), 3.0 * np.eye(50))
    assert sparsity_stats(m)["percent_zero"] == 1.0


def test_assemble_dense_and_sparse_agree_and_match_kernel():
    rng = np.random.default_rng(3)
    ps = build_pointset(rng.random((200, 2)))
    model = CorrelationModel(PhiParams(1, 4, 0.03), variance=1.7, nugget=0.2)
    a = assemble(ps, model, storage="dense").toarray()
    b = assemble(ps, model, storage="sparse").toarray()
    np.testing.assert_allclose(a, b, rtol=0, atol=0)
    d = squareform(pdist(ps.coords))
    ref = 1.7 * 0.8 * np.asarray(model.correlation(d.ravel())).reshape(d.shape)
    np.fill_diagonal(ref, 1.7)
    np.testing.assert_allclose(a, ref, rtol=1e-14, atol=1e-300)


def test_sparse_storage_requires_compact_model():
    ps = build_pointset([[0, 0], [1, 1]])
    with pytest.raises(DomainError):
        assemble(ps, CorrelationModel(MaternParams(0.5, 1.0)), storage="sparse")


def test_percent_zero_equals_pair_count_identity():
    rng = np.random.default_rng(4)
    ps = build_pointset(rng.random((500, 2)))
    model = CorrelationModel(PhiParams(0, 1.5, 0.04))
    m = assemble(ps, model, storage="sparse")
    k = len(neighbors_within(ps, model.support)[0])
    assert sparsity_stats(m)["percent_zero"] == pytest.approx(1 - k / (500 * 499 / 2), abs=1e-15)
    assert sparsity_stats(assemble(ps, model, storage="dense"))["percent_zero"] == pytest.approx(
        1 - k / (500 * 499 / 2), abs=1e-15
    )


def test_percent_zero_of_full_matrix_is_zero():
    rng = np.random.default_rng(5)
    ps = build_pointset(rng.random((30, 2)))
    assert sparsity_stats(assemble(ps, CorrelationModel(MaternParams(0.5, 1.0))))["percent_zero"] == 0.0


def test_cholesky_identity_and_two_by_two():
    f = cholesky(SymmetricMatrix(4, "dense", np.eye(4)))
    assert f.logdet == 0.0
    np.testing.assert_array_equal(np.tril(f.to_dense_factor()), np.eye(4))
    rho = 0.6
    f2 = cholesky(SymmetricMatrix(2, "dense", np.array([[1, rho], [rho, 1.0]])))
    assert f2.logdet == pytest.approx(math.log(1 - rho**2), rel=1e-14)


def test_solve_trivial_cases():
    b = np.arange(5.0)
    np.testing.assert_array_equal(solve(cholesky(SymmetricMatrix(5, "dense", np.eye(5))), b), b)
    f = cholesky(SymmetricMatrix(3, "dense", 2 * np.eye(3)))
    np.testing.assert_allclose(solve(f, np.ones(3)), 0.5 * np.ones(3), rtol=1e-15)


def test_solve_random_spd_matches_explicit_inverse():
    rng = np.random.default_rng(6)
    g = rng.standard_normal((50, 50))
    a = g @ g.T + 50 * np.eye(50)
    b = rng.standard_normal((50, 3))
    x = solve(cholesky(SymmetricMatrix(50, "dense", a)), b)
    np.testing.assert_allclose(x, np.linalg.inv(a) @ b, rtol=1e-9, atol=1e-12)


def test_not_positive_definite_reports_pivot():
    a = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(SymmetricMatrix(3, "dense", a))
    assert info.value.index == 2
    low = sp.csc_array(np.tril(a))
    with pytest.raises(NotPositiveDefiniteError) as info:
        cholesky(SymmetricMatrix(3, "csc", low))
    assert info.value.index in (1, 2)


def _phi_instance(n, seed, beta=0.03, nu=1, mu=4.5, tau2=0.0):
    rng = np.random.default_rng(seed)
    ps = build_pointset(rng.random((n, 2)))
    model = CorrelationModel(PhiParams(nu, mu, beta), variance=1.3, nugget=tau2)
    return ps, model, rng


@pytest.mark.parametrize("seed", range(5))
def test_sparse_factor_matches_dense_oracle(seed):
    ps, model, rng = _phi_instance(300, seed, beta=0.02 + 0.01 * seed)
    dense = assemble(ps, model, storage="dense")
    sparse = assemble(ps, model, storage="sparse")
    fd, fs = cholesky(dense), cholesky(sparse)
    a = dense.toarray()
    b = rng.standard_normal(300)
    np.testing.assert_allclose(fs.solve(b), fd.solve(b), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(fs.solve(b), np.linalg.solve(a, b), rtol=1e-8, atol=1e-8)
    assert fs.logdet == pytest.approx(np.linalg.slogdet(a)[1], abs=1e-8)
    assert fs.quad_form(b) == pytest.approx(b @ np.linalg.solve(a, b), rel=1e-10)
    np.testing.assert_allclose(fs.inv_diag(), np.diag(np.linalg.inv(a)), rtol=1e-9)
    np.testing.assert_allclose(fd.inv_diag(), np.diag(np.linalg.inv(a)), rtol=1e-9)
    # P A P^T = L L^T
    l = fs.to_dense_factor()
    p = fs.perm
    np.testing.assert_allclose(l @ l.T, a[np.ix_(p, p)], atol=1e-12)
    assert sp.issparse(fs.to_csc())
    # correlate maps white noise to covariance A: check A^{-1} correlate(e) = L^-T e
    e = rng.standard_normal(300)
    np.testing.assert_allclose(fs.whiten(fs.correlate(e)), e, atol=1e-10)


def test_matvec_consistent_between_storages():
    ps, model, rng = _phi_instance(120, 9, beta=0.05)
    x = rng.standard_normal((120, 2))
    a = assemble(ps, model, storage="dense")
    b = assemble(ps, model, storage="sparse")
    np.testing.assert_allclose(a.matvec(x), b.matvec(x), atol=1e-13)


def test_cross_covariance_excludes_nugget():
    ps = build_pointset([[0, 0], [0.5, 0]])
    model = CorrelationModel(MaternParams(0.5, 1.0), variance=2.0, nugget=0.25)
    c = cross_covariance(ps, ps, model)
    assert c[0, 0] == pytest.approx(1.5)
    assert c[0, 1] == pytest.approx(1.5 * math.exp(-0.5))


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    ps = build_pointset(rng.random((20, 2)))
    v = rng.standard_normal(20)
    path = tmp_path / "pts.csv"
    write_points_csv(path, ps, v, header_lines=["made by a test"])
    ps2, v2 = read_points_csv(path)
    np.testing.assert_array_equal(ps2.coords, ps.coords)
    np.testing.assert_array_equal(v2, v)
    write_points_csv(path, ps)
    ps3, v3 = read_points_csv(path)
    assert v3 is None and ps3.n == 20


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(DomainError):
        read_points_csv(path)


def test_coo_text_export(tmp_path):
    ps, model, _ = _phi_instance(30, 3, beta=0.1)
    m = assemble(ps, model, storage="sparse")
    path = tmp_path / "m.txt"
    m.to_coo_text(path)
    rows = np.loadtxt(path, ndmin=2)
    assert rows.shape[0] == m.stored_nnz
    a = np.zeros((30, 30))
    a[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
    np.testing.assert_allclose(a + np.tril(a, -1).T, m.toarray())


def test_sparse_faster_than_dense_at_high_sparsity():
    rng = np.random.default_rng(12)
    ps = build_pointset(rng.random((4000, 2)))
    model = CorrelationModel(PhiParams(0, 1.5, 0.19 / 1.5))
    sparse = assemble(ps, model, storage="sparse")
    dense = assemble(ps, model, storage="dense")
    assert sparsity_stats(sparse)["percent_zero"] >= 0.9

    def best(m):
        out = math.inf
        for _ in range(3):
            t = time.perf_counter()
            cholesky(m)
            out = min(out, time.perf_counter() - t)
        return out

    assert best(sparse) < best(dense)
