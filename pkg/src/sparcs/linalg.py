"""Sample moments, U-scores and min-norm least squares.

Everything here works through the (n-1) x p matrix of U-scores and the
(n-1) x (n-1) Gram matrix built from it, so the p x p sample covariance is
never formed. That keeps p in the 1e5 range feasible when n is small.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import (
    DataError,
    DimensionMismatch,
    SingularGram,
    TooFewSamples,
    ZeroVarianceColumn,
    ZeroVarianceResponse,
)

GRAM_COND_LIMIT = 1e12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataMatrix:
    """n x p sample-by-variable matrix, optionally carrying a response."""

    values: np.ndarray
    column_ids: Optional[tuple] = None
    response: Optional[np.ndarray] = None
    response_id: Optional[str] = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
            values.setflags(write=False)
        if values.ndim != 2:
            raise DimensionMismatch("data matrix must be two-dimensional")
        object.__setattr__(self, "values", values)
        if self.column_ids is not None:
            ids = tuple(str(c) for c in self.column_ids)
            if len(ids) != values.shape[1]:
                raise DimensionMismatch(
                    f"{len(ids)} column ids for {values.shape[1]} columns")
            object.__setattr__(self, "column_ids", ids)
        if self.response is not None:
            y = _frozen(self.response).ravel()
            y.setflags(write=False)
            if y.shape[0] != values.shape[0]:
                raise DimensionMismatch(
                    f"response has {y.shape[0]} entries, data has {values.shape[0]} rows")
            object.__setattr__(self, "response", y)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def columns(self, indices: Sequence[int]) -> "DataMatrix":
        idx = np.asarray(indices, dtype=int)
        ids = None
        if self.column_ids is not None:
            ids = tuple(self.column_ids[i] for i in idx)
        return DataMatrix(self.values[:, idx], ids, self.response, self.response_id)

    def rows(self, indices) -> "DataMatrix":
        y = None if self.response is None else self.response[indices]
        return DataMatrix(self.values[indices], self.column_ids, y, self.response_id)


@dataclass(frozen=True)
class UScoreSet:
    """Unit-norm columns on the (n-2)-sphere in R^(n-1)."""

    scores: np.ndarray
    source_n: int

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if not s.flags.writeable and s.dtype == np.float64:
            object.__setattr__(self, "scores", s)
        else:
            object.__setattr__(self, "scores", _frozen(s))

    @property
    def p(self) -> int:
        return self.scores.shape[1]

    @property
    def dim(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class MomentSummary:
    column_means: np.ndarray
    column_sds: np.ndarray
    sxy: np.ndarray
    sy: float
    response_mean: float = 0.0
    n: int = field(default=0)


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, DataMatrix):
        return data.values
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return a


def _centered_norms(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    ss = np.einsum("ij,ij->j", c, c)
    # relative floor so that constant columns with rounding residue count as zero
    scale = np.max(np.abs(x), axis=0) if x.size else np.zeros(x.shape[1])
    floor = (64 * np.finfo(float).eps * scale) ** 2 * x.shape[0]
    return ss, ss <= floor


def helmert_project(centered: np.ndarray) -> np.ndarray:
    """Apply the (n-1) x n Helmert sub-matrix to each column.

    Row k (1-based) of the sub-matrix is ``(1, ..., 1, -k, 0, ..., 0) /
    sqrt(k (k+1))`` with k leading ones. Evaluated with cumulative sums in
    O(n p) instead of a dense product.
    """
    c = np.asarray(centered, dtype=np.float64)
    squeeze = c.ndim == 1
    if squeeze:
        c = c[:, None]
    n = c.shape[0]
    k = np.arange(1, n, dtype=np.float64)[:, None]
    partial = np.cumsum(c[:-1], axis=0)
    out = (partial - k * c[1:]) / np.sqrt(k * (k + 1.0))
    return out[:, 0] if squeeze else out


def compute_uscores(data) -> UScoreSet:
    """U-scores of every column of ``data``.

    Columns are centered, projected with the Helmert basis of the hyperplane
    orthogonal to the ones vector, then scaled to unit norm. Inner products of
    the result equal Pearson sample correlations of the source columns.
    """
    x = _as_matrix(data)
    n = x.shape[0]
    if n < 3:
        raise TooFewSamples(n)
    c = x - x.mean(axis=0)
    ss, zero = _centered_norms(c, x)
    if zero.any():
        raise ZeroVarianceColumn(int(np.flatnonzero(zero)[0]))
    proj = helmert_project(c)
    # renormalize with the projected norm; equals sqrt(ss) up to rounding
    proj /= np.sqrt(np.einsum("ij,ij->j", proj, proj))
    return UScoreSet(proj, n)


def response_uscores(y) -> UScoreSet:
    """U-score of a single response vector."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] < 3:
        raise TooFewSamples(y.shape[0])
    c = y - y.mean()
    _, zero = _centered_norms(c[:, None], y[:, None])
    if zero[0]:
        raise ZeroVarianceResponse()
    u = helmert_project(c)
    return UScoreSet(u / np.linalg.norm(u), y.shape[0])


def _response_vector(uy) -> np.ndarray:
    u = uy.scores if isinstance(uy, UScoreSet) else np.asarray(uy, dtype=np.float64)
    if u.ndim == 2:
        if u.shape[1] != 1:
            raise DimensionMismatch("response U-score must be a single column")
        u = u[:, 0]
    return u


def cross_correlation(ux: UScoreSet, uy) -> np.ndarray:
    """Sample cross-correlations ``(U^x)^T U^y`` as a p-vector."""
    u = _response_vector(uy)
    if u.shape[0] != ux.dim:
        raise DimensionMismatch(
            f"U-score row dimensions differ: {ux.dim} vs {u.shape[0]}")
    r = ux.scores.T @ u
    return np.clip(r, -1.0, 1.0)


def gram(ux: UScoreSet) -> np.ndarray:
    u = ux.scores
    return u @ u.T


def cholesky_gram(g: np.ndarray, limit: float = GRAM_COND_LIMIT):
    """Cholesky factor of a symmetric Gram matrix with a condition check.

    Uses the LAPACK 1-norm reciprocal condition estimate, O(m^2) after the
    factorization. Raises SingularGram when the estimate exceeds ``limit``.
    """
    try:
        c, lower = sla.cho_factor(g, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        raise SingularGram("Gram matrix is not positive definite") from None
    anorm = np.abs(g).sum(axis=0).max()
    rcond, info = lapack.dpocon(c, anorm)
    if info != 0 or not rcond > 1.0 / limit:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise SingularGram(f"Gram condition number {cond:.3g} exceeds {limit:.0e}")
    return c, lower


def gram_inverse(ux: UScoreSet) -> np.ndarray:
    """Inverse of ``U^x (U^x)^T``."""
    g = gram(ux)
    cf = cholesky_gram(g)
    inv = sla.cho_solve(cf, np.eye(g.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


def compute_moments(data, response=None) -> MomentSummary:
    x = _as_matrix(data)
    if response is None and isinstance(data, DataMatrix):
        response = data.response
    if response is None:
        raise DataError("a response vector is required for moments")
    y = np.asarray(response, dtype=np.float64).ravel()
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatch(f"response length {y.shape[0]} != n={n}")
    if n < 2:
        raise TooFewSamples(n, 2)
    means = x.mean(axis=0)
    c = x - means
    ss, zero = _centered_norms(c, x)
    if zero.any():
        raise ZeroVarianceColumn(int(np.flatnonzero(zero)[0]))
    yc = y - y.mean()
    return MomentSummary(
        column_means=_frozen(means),
        column_sds=_frozen(np.sqrt(ss / (n - 1))),
        sxy=_frozen(c.T @ yc / (n - 1)),
        sy=float(yc @ yc / (n - 1)),
        response_mean=float(y.mean()),
        n=n,
    )


def scaled_uscore_design(ux: UScoreSet, sds: np.ndarray) -> np.ndarray:
    """Helmert-projected centered data rebuilt from U-scores and column sds."""
    return ux.scores * (np.sqrt(ux.source_n - 1.0) * np.asarray(sds))


def min_norm_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a x = b``.

    Wide, well-conditioned systems go through the small Gram ``a a^T``;
    everything else falls back to an SVD-based solver.
    """
    m, p = a.shape
    if m <= p:
        g = a @ a.T
        try:
            cf = cholesky_gram(g)
        except SingularGram:
            pass
        else:
            return a.T @ sla.cho_solve(cf, b, check_finite=False)
    return np.linalg.lstsq(a, b, rcond=None)[0]


def min_norm_ols(data, response=None) -> np.ndarray:
    """Min-norm OLS coefficients ``B = (S^x)^+ S^xy``.

    Computed on the U-score side: with ``A = sqrt(n-1) U^x diag(sd)`` and
    ``b = sqrt(n-1) sd_y U^y`` the centered problem is ``A B = b`` and the
    min-norm solution is ``A^T (A A^T)^{-1} b``.
    """
    if response is None and isinstance(data, DataMatrix):
        response = data.response
    if response is None:
        raise DataError("min_norm_ols needs a response")
    x = _as_matrix(data)
    ux = compute_uscores(x)
    uy = response_uscores(response)
    if uy.dim != ux.dim:
        raise DimensionMismatch("response and data have different sample counts")
    sds = x.std(axis=0, ddof=1)
    a = scaled_uscore_design(ux, sds)
    y = np.asarray(response, dtype=np.float64).ravel()
    b = uy.scores[:, 0] * (np.sqrt(ux.source_n - 1.0) * y.std(ddof=1))
    return min_norm_solve(a, b)


def read_csv(path, response=None) -> DataMatrix:
    """Load a headed CSV file of decimal floats.

    ``response`` names the response column by header or by 0-based index;
    that column is split off into ``DataMatrix.response``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(f.strip() for f in r)]
    try:
        values = np.array([[float(f) for f in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if values.size == 0:
        values = values.reshape(0, len(header))
    if values.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    if response is None:
        return DataMatrix(values, tuple(header))
    if isinstance(response, str) and response in header:
        j = header.index(response)
    else:
        try:
            j = int(response)
        except (TypeError, ValueError):
            raise DataError(f"{path}: no column named {response!r}") from None
        if not 0 <= j < len(header):
            raise DataError(f"{path}: response index {j} out of range")
    keep = [i for i in range(len(header)) if i != j]
    return DataMatrix(values[:, keep], tuple(header[i] for i in keep),
                      values[:, j], header[j])


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary sibling file, then rename it over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, values, header) -> None:
    values = np.asarray(values)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in values:
        w.writerow([repr(float(v)) for v in np.atleast_1d(row)])
    atomic_write_text(path, buf.getvalue())
