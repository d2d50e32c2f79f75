"""Covariance matrices over point sets.

Point sets answer fixed-radius neighbor queries through uniform grid
binning, which is what makes assembly of compactly supported covariances
cost ``O(n * neighbors)``.  Matrices are stored densely or as the lower
triangle in compressed sparse column form; Cholesky factors follow the
storage of their source.

The sparse factorization orders the matrix by reverse Cuthill-McKee, which
concentrates the nonzeros of a geometric pattern in a narrow variable
band.  Cholesky fill is confined to that envelope (row ``k`` of ``L`` can
only be nonzero from its first nonzero column onward), so the factor is
computed row block by row block: each block of rows is an up-looking
triangular solve against the already factored rows it touches, followed by
a small dense Cholesky of the diagonal block.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.spatial.distance import cdist, pdist

from .errors import DomainError, DuplicateLocationError, NotPositiveDefiniteError
from .kernels import CorrelationModel

__all__ = [
    "PointSet",
    "SymmetricMatrix",
    "CholeskyFactor",
    "build_pointset",
    "neighbors_within",
    "assemble",
    "cross_covariance",
    "cholesky",
    "solve",
    "sparsity_stats",
    "read_points_csv",
    "write_points_csv",
]

PIVOT_RTOL = 1e-14
NEAR_DUPLICATE_RTOL = 1e-9


# ---------------------------------------------------------------------------
# point sets


def _grid_pairs(coords, radius):
    """Candidate pairs ``(p, q)`` from grid cells of side at least ``radius``.

    Returns positions into ``coords`` (not yet distance filtered), each
    unordered pair exactly once.
    """
    n, d = coords.shape
    lo = coords.min(axis=0)
    span = np.maximum(coords.max(axis=0) - lo, 0.0)
    # cells no smaller than the radius, and not many more cells than points
    h = radius
    while np.prod(np.floor(span / h) + 3.0) > 4.0 * n + 27.0:
        h *= 2.0
    cell = np.floor((coords - lo) / h).astype(np.int64)
    extent = cell.max(axis=0) + 3  # one guard cell on each side
    cell += 1
    key = np.ravel_multi_index(tuple(cell.T), tuple(extent))
    order = np.argsort(key, kind="stable")
    skey = key[order]
    ukeys, starts, counts = np.unique(skey, return_index=True, return_counts=True)
    ucells = np.array(np.unravel_index(ukeys, tuple(extent))).T

    out_p, out_q = [], []
    for off in itertools.product((-1, 0, 1), repeat=d):
        off = np.array(off)
        if tuple(off) < (0,) * d:
            continue  # each neighboring cell pair is visited once
        if not off.any():
            # pairs inside one cell: all ordered pairs, keep a < b
            m = counts * counts
            cid = np.repeat(np.arange(len(counts)), m)
            within = np.arange(m.sum()) - np.repeat(np.cumsum(m) - m, m)
            c = counts[cid]
            a, b = within // c, within % c
            keep = a < b
            out_p.append(starts[cid[keep]] + a[keep])
            out_q.append(starts[cid[keep]] + b[keep])
            continue
        nb = ucells + off
        nkey = np.ravel_multi_index(tuple(nb.T), tuple(extent))
        pos = np.searchsorted(ukeys, nkey)
        pos = np.minimum(pos, len(ukeys) - 1)
        hit = ukeys[pos] == nkey
        if not hit.any():
            continue
        sa, ca = starts[hit], counts[hit]
        sb, cb = starts[pos[hit]], counts[pos[hit]]
        m = ca * cb
        cid = np.repeat(np.arange(len(m)), m)
        within = np.arange(m.sum()) - np.repeat(np.cumsum(m) - m, m)
        out_p.append(sa[cid] + within // cb[cid])
        out_q.append(sb[cid] + within % cb[cid])
    if not out_p:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    p = order[np.concatenate(out_p)]
    q = order[np.concatenate(out_q)]
    return p, q


class PointSet:
    """Locations ``s_1, ..., s_n`` in R^d.

    Parameters
    ----------
    coords : array_like, shape (n, d) or (n,)
        Finite coordinates.
    check_duplicates : bool
        Reject exactly coinciding locations.
    """

    def __init__(self, coords, check_duplicates: bool = True):
        c = np.array(coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.ndim != 2 or c.shape[0] < 1:
            raise DomainError("coords must be a non-empty (n, d) array")
        if not np.all(np.isfinite(c)):
            raise DomainError("coordinates must be finite")
        c.setflags(write=False)
        self.coords = c
        self._pairs = None  # (i, j, r) of all pairs sorted by r
        if check_duplicates and c.shape[0] > 1:
            _, first, inv = np.unique(c, axis=0, return_index=True, return_inverse=True)
            inv = inv.ravel()
            if len(first) < c.shape[0]:
                seen = np.zeros(len(first), dtype=bool)
                for k, u in enumerate(inv):
                    if seen[u]:
                        raise DuplicateLocationError(first[u], k)
                    seen[u] = True
            tiny = NEAR_DUPLICATE_RTOL * self.diameter
            if tiny > 0 and len(self.neighbors_within(tiny)[0]):
                warnings.warn(
                    "some locations are closer than 1e-9 times the domain diameter; "
                    "covariance matrices may be numerically singular",
                    RuntimeWarning,
                    stacklevel=2,
                )

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.n

    @property
    def diameter(self) -> float:
        """Diagonal of the bounding box."""
        return float(np.linalg.norm(self.coords.max(axis=0) - self.coords.min(axis=0)))

    def subset(self, index) -> "PointSet":
        ps = PointSet.__new__(PointSet)
        c = self.coords[np.asarray(index)]
        c.setflags(write=False)
        ps.coords = c
        ps._pairs = None
        return ps

    def distances(self, other: "PointSet | None" = None) -> np.ndarray:
        """Dense matrix of Euclidean distances."""
        other = self if other is None else other
        return cdist(self.coords, other.coords)

    def neighbors_within(self, radius: float):
        """Pairs closer than ``radius``.

        Returns
        -------
        i, j : ndarray of int
            Indices with ``i > j``.
        r : ndarray
            Distances ``||s_i - s_j|| < radius``.
        """
        if not radius > 0:
            raise DomainError("radius must be positive")
        if self._pairs is not None and radius <= self._pairs[3]:
            i, j, r, _ = self._pairs
            k = int(np.searchsorted(r, radius, side="left"))
            return i[:k], j[:k], r[:k]
        if self.n < 2:
            e = np.zeros(0, dtype=np.int64)
            return e, e, np.zeros(0)
        p, q = _grid_pairs(self.coords, float(radius))
        r = np.sqrt(((self.coords[p] - self.coords[q]) ** 2).sum(axis=1))
        keep = r < radius
        p, q, r = p[keep], q[keep], r[keep]
        i = np.maximum(p, q)
        j = np.minimum(p, q)
        order = np.lexsort((i, j))
        return i[order], j[order], r[order]

    def cache_pairs(self, max_radius: float | None = None):
        """Precompute and sort all pairs (or those within ``max_radius``).

        Subsequent :meth:`neighbors_within` calls with a radius up to the
        cached one become a binary search, which pays off when many
        matrices are assembled for the same locations (likelihood
        optimization).
        """
        if max_radius is None or max_radius >= self.diameter:
            n = self.n
            r = pdist(self.coords)
            j, i = np.triu_indices(n, k=1)  # pdist order: (0,1), (0,2), ...
            cover = math.inf
        else:
            i, j, r = self.neighbors_within(max_radius)
            cover = float(max_radius)
        order = np.argsort(r, kind="stable")
        self._pairs = (i[order], j[order], r[order], cover)
        return self


def build_pointset(coords, check_duplicates: bool = True) -> PointSet:
    """Validate coordinates and build a :class:`PointSet`."""
    return PointSet(coords, check_duplicates=check_duplicates)


def neighbors_within(ps: PointSet, radius: float):
    """Module-level alias of :meth:`PointSet.neighbors_within`."""
    return ps.neighbors_within(radius)


def read_points_csv(path):
    """Read ``x,y[,z][,value]`` CSV; lines starting with ``#`` are skipped.

    Returns
    -------
    (PointSet, ndarray or None)
    """
    with open(path, newline="") as fh:
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise DomainError(f"{path}: no header line")
    reader = csv.reader(rows)
    header = [h.strip().lower() for h in next(reader)]
    axes = [h for h in header if h in ("x", "y", "z")]
    if header[: len(axes)] != ["x", "y", "z"][: len(axes)] or not axes:
        raise DomainError(f"unexpected CSV header {header}")
    extra = header[len(axes):]
    if extra not in ([], ["value"]):
        raise DomainError(f"unexpected CSV columns {extra}")
    try:
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric entry ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DomainError("malformed CSV body")
    ps = PointSet(data[:, : len(axes)])
    values = data[:, len(axes)] if extra else None
    return ps, values


def write_points_csv(path, ps: PointSet, values=None, header_lines=()):
    """Write points (and optional values) as ``x,y[,z][,value]`` CSV."""
    names = ["x", "y", "z"][: ps.dim]
    cols = [ps.coords[:, k] for k in range(ps.dim)]
    if values is not None:
        names.append("value")
        cols.append(np.asarray(values, dtype=float))
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# matrices


@dataclass
class SymmetricMatrix:
    """Symmetric positive-definite matrix.

    ``storage == "dense"`` keeps the full square array in ``values``;
    ``storage == "csc"`` keeps the lower triangle (diagonal included) as a
    ``scipy.sparse.csc_array`` in ``values``.
    """

    n: int
    storage: str
    values: object

    def __post_init__(self):
        if self.storage not in ("dense", "csc"):
            raise DomainError(f"unknown storage {self.storage!r}")

    @property
    def is_sparse(self) -> bool:
        return self.storage == "csc"

    def toarray(self) -> np.ndarray:
        if self.storage == "dense":
            return np.array(self.values)
        low = self.values.toarray()
        return low + np.tril(low, -1).T

    def diagonal(self) -> np.ndarray:
        if self.storage == "dense":
            return np.diag(self.values).copy()
        return self.values.diagonal()

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if self.storage == "dense":
            return self.values @ x
        low = self.values
        return low @ x + low.T @ x - self.values.diagonal().reshape((-1,) + (1,) * (x.ndim - 1)) * x

    @property
    def stored_nnz(self) -> int:
        if self.storage == "dense":
            return int(np.count_nonzero(np.tril(self.values)))
        return int(self.values.nnz)

    def offdiag_nnz(self) -> int:
        """Number of stored off-diagonal entries, counting both triangles."""
        if self.storage == "dense":
            return int(np.count_nonzero(self.values) - np.count_nonzero(np.diag(self.values)))
        low = self.values
        diag_stored = int(np.count_nonzero(low.indices == np.repeat(np.arange(self.n), np.diff(low.indptr))))
        return 2 * (int(low.nnz) - diag_stored)

    def to_coo_text(self, path):
        """Write the lower triangle as ``row col value`` lines (0-based)."""
        low = sp.coo_array(np.tril(self.values) if self.storage == "dense" else self.values)
        with open(path, "w") as fh:
            for r, c, v in zip(low.row, low.col, low.data):
                fh.write(f"{r} {c} {v:.17g}\n")


def _model_pairs(ps: PointSet, model: CorrelationModel):
    if model.is_compact:
        return ps.neighbors_within(model.support)
    j, i = np.triu_indices(ps.n, k=1)
    r = pdist(ps.coords)
    return i, j, r


def assemble(ps: PointSet, model: CorrelationModel, storage: str = "auto") -> SymmetricMatrix:
    """Covariance matrix ``Sigma_ij = C(||s_i - s_j||)`` of ``model`` over ``ps``.

    Parameters
    ----------
    storage : {"auto", "dense", "sparse"}
        ``"auto"`` stores compactly supported models sparsely and the
        others densely.  Entries are nonzero exactly for pairs closer than
        the support; no thresholding of small values is applied.
    """
    if storage not in ("auto", "dense", "sparse"):
        raise DomainError(f"unknown storage {storage!r}")
    if storage == "auto":
        storage = "sparse" if model.is_compact else "dense"
    n = ps.n
    if storage == "sparse" and not model.is_compact:
        raise DomainError("sparse storage needs a compactly supported model")
    if storage == "dense":
        i, j, r = _model_pairs(ps, model)
        vals = model.variance * (1.0 - model.nugget) * np.asarray(model.correlation(r), dtype=float)
        a = np.zeros((n, n))
        a[i, j] = vals
        a[j, i] = vals
        a[np.diag_indices(n)] = model.variance
        return SymmetricMatrix(n, "dense", a)
    i, j, r = ps.neighbors_within(model.support)
    vals = model.variance * (1.0 - model.nugget) * np.asarray(model.correlation(r), dtype=float)
    rows = np.concatenate([np.arange(n), i])
    cols = np.concatenate([np.arange(n), j])
    data = np.concatenate([np.full(n, model.variance), vals])
    low = sp.csc_array((data, (rows, cols)), shape=(n, n))
    low.sort_indices()
    return SymmetricMatrix(n, "csc", low)


def cross_covariance(a: PointSet, b: PointSet, model: CorrelationModel) -> np.ndarray:
    """Covariances between two point sets, excluding the nugget.

    Entry ``(k, l)`` is ``sigma^2 (1 - tau^2) rho(||a_k - b_l||)``; the
    nugget is measurement noise and does not covary across observations.
    """
    d = cdist(a.coords, b.coords)
    return model.variance * (1.0 - model.nugget) * np.asarray(model.correlation(d), dtype=float)


# ---------------------------------------------------------------------------
# Cholesky


_BLOCK = 128


@dataclass
class _Block:
    k0: int  # first row of the block
    k1: int  # one past the last row
    f: int  # first column touched by any row of the block
    w: np.ndarray  # rows k0:k1, columns f:k1 of L


@dataclass
class CholeskyFactor:
    """Lower Cholesky factor ``P A P^T = L L^T``.

    Dense factors keep ``L`` as a square array and use the identity
    permutation.  Sparse factors keep ``L`` as row blocks of its envelope
    under the fill-reducing permutation ``perm`` (``A[perm][:, perm]`` is
    factored).
    """

    n: int
    storage: str
    logdet: float
    perm: np.ndarray | None = None
    dense: np.ndarray | None = None
    blocks: list = field(default_factory=list)

    # -- triangular kernels in the factored ordering ----------------------

    def _forward(self, c):
        """Solve ``L y = c`` (rows in factored ordering)."""
        if self.storage == "dense":
            return sla.solve_triangular(self.dense, c, lower=True, check_finite=False)
        y = np.array(c, dtype=float, copy=True)
        for blk in self.blocks:
            m = blk.k0 - blk.f
            rhs = y[blk.k0:blk.k1]
            if m > 0:
                rhs = rhs - blk.w[:, :m] @ y[blk.f:blk.k0]
            y[blk.k0:blk.k1] = sla.solve_triangular(
                blk.w[:, m:], rhs, lower=True, check_finite=False
            )
        return y

    def _backward(self, y):
        """Solve ``L^T x = y``."""
        if self.storage == "dense":
            return sla.solve_triangular(self.dense, y, lower=True, trans="T", check_finite=False)
        x = np.array(y, dtype=float, copy=True)
        for blk in reversed(self.blocks):
            m = blk.k0 - blk.f
            xk = sla.solve_triangular(
                blk.w[:, m:], x[blk.k0:blk.k1], lower=True, trans="T", check_finite=False
            )
            x[blk.k0:blk.k1] = xk
            if m > 0:
                x[blk.f:blk.k0] -= blk.w[:, :m].T @ xk
        return x

    def _lmul(self, e):
        """``L e`` in factored ordering."""
        if self.storage == "dense":
            return self.dense @ e
        out = np.zeros_like(e, dtype=float)
        for blk in self.blocks:
            out[blk.k0:blk.k1] = blk.w @ e[blk.f:blk.k1]
        return out

    # -- public operations in the original ordering -----------------------

    def _check_rhs(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise DomainError(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        return b

    def solve(self, b):
        """Solve ``A x = b`` for a vector or a matrix of right-hand sides."""
        b = self._check_rhs(b)
        if self.perm is None:
            return self._backward(self._forward(b))
        x = np.empty_like(b)
        x[self.perm] = self._backward(self._forward(b[self.perm]))
        return x

    def whiten(self, b):
        """``L^{-1} P b``; its squared norm is ``b^T A^{-1} b``."""
        b = self._check_rhs(b)
        return self._forward(b if self.perm is None else b[self.perm])

    def quad_form(self, b) -> float:
        w = self.whiten(b)
        return float(np.dot(w, w))

    def correlate(self, e):
        """``P^T L e``: maps white noise to a draw with covariance ``A``."""
        e = self._check_rhs(e)
        v = self._lmul(e)
        if self.perm is None:
            return v
        out = np.empty_like(v)
        out[self.perm] = v
        return out

    def inv_diag(self, chunk: int = 512) -> np.ndarray:
        """Diagonal of ``A^{-1}``."""
        if self.storage == "dense":
            inv, info = lapack.dpotri(self.dense, lower=1)
            if info != 0:
                raise NotPositiveDefiniteError(info - 1)
            d = np.diag(inv).copy()
            return d
        n = self.n
        out_f = np.empty(n)
        for c0 in range(0, n, chunk):
            c1 = min(c0 + chunk, n)
            e = np.zeros((n, c1 - c0))
            e[np.arange(c0, c1), np.arange(c1 - c0)] = 1.0
            x = self._forward(e)
            out_f[c0:c1] = (x * x).sum(axis=0)
        out = np.empty(n)
        out[self.perm] = out_f
        return out

    def to_dense_factor(self) -> np.ndarray:
        """``L`` as a dense array in the factored ordering."""
        if self.storage == "dense":
            return np.array(self.dense)
        out = np.zeros((self.n, self.n))
        for blk in self.blocks:
            out[blk.k0:blk.k1, blk.f:blk.k1] = blk.w
        return np.tril(out)

    def to_csc(self) -> sp.csc_array:
        """``L`` in compressed sparse column form (factored ordering)."""
        return sp.csc_array(self.to_dense_factor())

    @property
    def factor_nnz(self) -> int:
        if self.storage == "dense":
            return self.n * (self.n + 1) // 2
        return int(sum(np.count_nonzero(np.tril(b.w, b.k0 - b.f)) for b in self.blocks))


def _dense_cholesky(a: np.ndarray, max_diag: float) -> CholeskyFactor:
    n = a.shape[0]
    c, info = lapack.dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise DomainError("invalid argument to dpotrf")
    d = np.diag(c)
    bad = np.flatnonzero(d * d <= PIVOT_RTOL * max_diag)
    if len(bad):
        raise NotPositiveDefiniteError(int(bad[0]), float(d[bad[0]] ** 2))
    return CholeskyFactor(n=n, storage="dense", logdet=float(2.0 * np.log(d).sum()), dense=c)


def _envelope_cholesky(low: sp.csc_array, block: int = _BLOCK) -> CholeskyFactor:
    n = low.shape[0]
    coo = low.tocoo()
    row, col, val = coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data
    max_diag = float(val[row == col].max())
    off = row != col
    pattern = sp.csr_array(
        (np.ones(2 * int(off.sum()) + n),
         (np.concatenate([row[off], col[off], np.arange(n)]),
          np.concatenate([col[off], row[off], np.arange(n)]))),
        shape=(n, n),
    )
    perm = reverse_cuthill_mckee(pattern, symmetric_mode=True).astype(np.int64)
    iperm = np.empty(n, dtype=np.int64)
    iperm[perm] = np.arange(n)
    # permuted lower triangle as (row, col) triplets sorted by row
    pr, pc = iperm[row], iperm[col]
    b = sp.csr_array((val, (np.maximum(pr, pc), np.minimum(pr, pc))), shape=(n, n))
    rowptr, c2, v2 = b.indptr, b.indices, b.data
    r2 = np.repeat(np.arange(n), np.diff(rowptr))
    # symbolic: row k of L spans columns first[k]..k
    first = np.arange(n)
    np.minimum.at(first, r2, c2)
    blocks: list[_Block] = []
    logdet = 0.0
    for k0 in range(0, n, block):
        k1 = min(k0 + block, n)
        f = int(first[k0:k1].min())
        w = np.zeros((k1 - k0, k1 - f))
        e0, e1 = rowptr[k0], rowptr[k1]
        w[r2[e0:e1] - k0, c2[e0:e1] - f] = v2[e0:e1]
        m = k0 - f
        if m > 0:
            # rows f:k0 of L restricted to columns f:k0 (lower triangular)
            t = np.zeros((m, m))
            for prev in blocks:
                if prev.k1 <= f:
                    continue
                r0 = max(prev.k0, f)
                c0 = max(prev.f, f)
                t[r0 - f:prev.k1 - f, c0 - f:prev.k1 - f] = prev.w[r0 - prev.k0:, c0 - prev.f:]
            x = sla.solve_triangular(t, w[:, :m].T, lower=True, check_finite=False).T
            w[:, :m] = x
            s = w[:, m:] - x @ x.T
        else:
            s = w[:, m:]
        s = np.tril(s) + np.tril(s, -1).T
        c, info = lapack.dpotrf(s, lower=1, clean=1, overwrite_a=1)
        if info > 0:
            raise NotPositiveDefiniteError(int(perm[k0 + info - 1]))
        d = np.diag(c)
        bad = np.flatnonzero(d * d <= PIVOT_RTOL * max_diag)
        if len(bad):
            raise NotPositiveDefiniteError(int(perm[k0 + bad[0]]), float(d[bad[0]] ** 2))
        logdet += 2.0 * float(np.log(d).sum())
        w[:, m:] = c
        blocks.append(_Block(k0, k1, f, w))
    return CholeskyFactor(n=n, storage="csc", logdet=logdet, perm=perm, blocks=blocks)


def cholesky(m: SymmetricMatrix) -> CholeskyFactor:
    """Cholesky factorization of a :class:`SymmetricMatrix`.

    Raises
    ------
    NotPositiveDefiniteError
        When a pivot is nonpositive or below ``1e-14`` times the largest
        diagonal entry; ``index`` names the row in the input ordering.
    """
    if m.storage == "dense":
        a = np.asarray(m.values, dtype=float)
        return _dense_cholesky(a, float(np.max(np.diag(a))))
    return _envelope_cholesky(m.values)


def solve(f: CholeskyFactor, rhs):
    """Solve ``A x = rhs`` with a factor of ``A``."""
    return f.solve(rhs)


def sparsity_stats(m: SymmetricMatrix) -> dict:
    """Fraction of zero off-diagonal entries and stored entry count.

    ``percent_zero = 1 - nnz_offdiag / (n (n - 1))`` with both triangles
    counted; a 1 x 1 matrix has no off-diagonal entries and reports 1.
    """
    n = m.n
    total = n * (n - 1)
    nnz = m.offdiag_nnz()
    pz = 1.0 if total == 0 else 1.0 - nnz / total
    return {"percent_zero": pz, "stored_nnz": m.stored_nnz}
