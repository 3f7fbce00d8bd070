"""Seeded synthetic data for the screening and two-stage experiments.

Every generator takes ``seed``: an int, a sequence of ints, a
``numpy.random.SeedSequence`` or an existing ``Generator``. Integer seeds go
through ``SeedSequence`` into the counter-based Philox bit generator, so
outputs are bit-identical for identical inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import helmert
from scipy.signal import lfilter

from .errors import (
    DimensionMismatch,
    InvalidDof,
    InvalidK,
    InvalidParams,
    InvalidPhi,
    NotPositiveDefinite,
)
from .linalg import DataMatrix

RNG_ALGORITHM = "numpy.random.Philox(Philox4x64-10)+SeedSequence"
DENSE_CHECK_LIMIT = 5000


def make_rng(seed=None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def trial_seed(master_seed: int, *key: int) -> np.random.SeedSequence:
    """Independent stream for a (grid point, trial) key under ``master_seed``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))


def seed_id(seq: np.random.SeedSequence) -> int:
    """Stable 63-bit identifier of a seed sequence, for result tables."""
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class CovarianceSpec:
    """Weakly block-sparse correlation ``I + block + Toeplitz``.

    Entries: 1 on the diagonal; ``block_corr`` between distinct members of the
    dependent block (the first ``d_x`` indices); plus
    ``decay_scale * decay_base**|i-j|`` for every ``i != j``.
    """

    p: int
    d_x: int = 0
    block_corr: float = 0.0
    decay_base: float = 0.0
    decay_scale: float = 0.0
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise InvalidParams("p must be >= 1")
        if not 0 <= self.d_x <= self.p:
            raise InvalidParams("d_x must lie in [0, p]")
        if not -1.0 < self.block_corr < 1.0:
            raise InvalidParams("block_corr must lie in (-1, 1)")
        if not 0.0 <= self.decay_base < 1.0:
            raise InvalidParams("decay_base must lie in [0, 1)")
        if self.decay_scale < 0:
            raise InvalidParams("decay_scale must be >= 0")
        if self.check:
            if self.p <= DENSE_CHECK_LIMIT:
                if _structured_parts(self) is None:
                    _dense_factor(self)
            elif self.min_eigenvalue_bound() <= 0:
                raise NotPositiveDefinite(
                    "eigenvalue bound is not positive; cannot certify the covariance")

    @classmethod
    def default(cls, p: int) -> "CovarianceSpec":
        return cls(p, d_x=max(int(round(0.01 * p)), 0), block_corr=0.5,
                   decay_base=0.5, decay_scale=0.1)

    @classmethod
    def identity(cls, p: int) -> "CovarianceSpec":
        return cls(p)

    @property
    def is_identity(self) -> bool:
        return (self.d_x <= 1 or self.block_corr == 0.0) and (
            self.decay_scale == 0.0 or self.decay_base == 0.0)

    def matrix(self) -> np.ndarray:
        idx = np.arange(self.p)
        lag = np.abs(idx[:, None] - idx[None, :])
        m = self.decay_scale * self.decay_base ** lag
        if self.d_x > 1:
            m[: self.d_x, : self.d_x] += self.block_corr
        np.fill_diagonal(m, 1.0)
        return m

    def submatrix(self, idx) -> np.ndarray:
        """Rows and columns ``idx`` of the assembled matrix, built without the full p x p."""
        idx = np.asarray(idx, dtype=int)
        m = self.decay_scale * self.decay_base ** np.abs(idx[:, None] - idx[None, :])
        if self.d_x > 1:
            in_block = idx < self.d_x
            m[np.ix_(in_block, in_block)] += self.block_corr
        np.fill_diagonal(m, 1.0)
        return m

    def min_eigenvalue_bound(self) -> float:
        """Weyl lower bound on the smallest eigenvalue."""
        d, g = self.d_x, self.block_corr
        block = min(1.0 - g, 1.0 + (d - 1) * g) if d > 1 else 1.0
        b = self.decay_base
        # zero-diagonal Kac-Murdock-Szego part: eigenvalues >= (1-b)/(1+b) - 1
        return block - 2.0 * self.decay_scale * b / (1.0 + b)

    def to_dict(self) -> dict:
        return {"p": self.p, "d_x": self.d_x, "block_corr": self.block_corr,
                "decay_base": self.decay_base, "decay_scale": self.decay_scale}


def _structured_parts(spec: CovarianceSpec):
    """Split into ``(1-eps) I + block`` plus ``eps * KMS(beta)``.

    Returns the Cholesky factor of the d_x x d_x block of the first part, or
    None when that part is not positive semi-definite.
    """
    eps = spec.decay_scale if spec.decay_base > 0 else 0.0
    resid = 1.0 - eps
    if resid < 0:
        return None
    d = spec.d_x if spec.block_corr != 0.0 else 0
    if d <= 1:
        return np.zeros((0, 0))
    block = np.full((d, d), spec.block_corr)
    np.fill_diagonal(block, resid)
    if resid - spec.block_corr < 0 or resid + (d - 1) * spec.block_corr < 0:
        return None
    # jitter-free Cholesky of the PSD block via eigen-decomposition when singular
    w, v = np.linalg.eigh(block)
    if w.min() < -1e-12:
        return None
    return v * np.sqrt(np.clip(w, 0.0, None))


@lru_cache(maxsize=8)
def _dense_factor(spec: CovarianceSpec) -> np.ndarray:
    try:
        return np.linalg.cholesky(spec.matrix())
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from None


@lru_cache(maxsize=8)
def _cached_structure(spec: CovarianceSpec):
    return _structured_parts(spec)


def _correlated_normals(spec: CovarianceSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    p = spec.p
    if spec.is_identity:
        return rng.standard_normal((n, p))
    parts = _cached_structure(spec)
    if parts is None:
        return rng.standard_normal((n, p)) @ _dense_factor(spec).T
    eps = spec.decay_scale if spec.decay_base > 0 else 0.0
    x = rng.standard_normal((n, p))
    d = parts.shape[0]
    if d:
        x[:, :d] = x[:, :d] @ parts.T
    if eps < 1.0:
        if d:
            x[:, d:] *= np.sqrt(1.0 - eps)
        else:
            x *= np.sqrt(1.0 - eps)
    if eps > 0:
        beta = spec.decay_base
        s = np.sqrt(1.0 - beta * beta)
        e = rng.standard_normal((n, p))
        e[:, 0] /= s
        # stationary AR(1) across the variable index: correlation beta^|i-j|
        x += np.sqrt(eps) * lfilter([s], [1.0, -beta], e, axis=1)
    return x


def sample_gaussian(spec: CovarianceSpec, n: int, seed=None) -> DataMatrix:
    """n i.i.d. rows from N(0, Omega)."""
    return DataMatrix(_correlated_normals(spec, n, make_rng(seed)))


def sample_elliptical_t(spec: CovarianceSpec, n: int, dof: float, seed=None) -> DataMatrix:
    """n i.i.d. rows from a multivariate t with dispersion Omega."""
    if not dof > 2:
        raise InvalidDof(f"dof must exceed 2, got {dof}")
    rng = make_rng(seed)
    z = _correlated_normals(spec, n, rng)
    w = rng.chisquare(dof, size=n)
    return DataMatrix(z / np.sqrt(w / dof)[:, None])


@dataclass(frozen=True)
class GroundTruth:
    a: np.ndarray
    support: tuple
    noise_var: float = 0.05

    @property
    def k(self) -> int:
        return len(self.support)

    def to_dict(self) -> dict:
        return {"support": list(self.support),
                "coefficients": [float(self.a[i]) for i in self.support],
                "p": int(self.a.shape[0]), "noise_var": self.noise_var}


def gen_coefficients(p: int, k: int, dist: str = "unit_normal", sigma: float = 0.0,
                     seed=None, noise_var: float = 0.05) -> GroundTruth:
    """Sparse coefficient vector with a uniformly drawn support of size k.

    ``dist="unit_normal"`` draws active entries from N(0, 1);
    ``dist="bernoulli_gaussian"`` from 0.5 N(1, sigma^2) + 0.5 N(-1, sigma^2).
    """
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= p:
        raise InvalidK(f"k must be an integer in [1, {p}], got {k!r}")
    rng = make_rng(seed)
    support = np.sort(rng.choice(p, size=int(k), replace=False))
    if dist == "unit_normal":
        vals = rng.standard_normal(k)
    elif dist == "bernoulli_gaussian":
        signs = np.where(rng.random(k) < 0.5, -1.0, 1.0)
        vals = signs + sigma * rng.standard_normal(k)
    else:
        raise InvalidParams(f"unknown coefficient law {dist!r}")
    a = np.zeros(p)
    a[support] = vals
    a.setflags(write=False)
    return GroundTruth(a, tuple(int(i) for i in support), float(noise_var))


def gen_response(x, truth: GroundTruth, seed=None) -> np.ndarray:
    """``y = X a + noise`` with noise variance ``truth.noise_var``."""
    values = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=np.float64)
    if values.shape[1] != truth.a.shape[0]:
        raise DimensionMismatch(
            f"data has {values.shape[1]} columns, coefficients have {truth.a.shape[0]}")
    rng = make_rng(seed)
    sup = list(truth.support)
    y = values[:, sup] @ truth.a[sup] if sup else np.zeros(values.shape[0])
    if truth.noise_var > 0:
        y = y + np.sqrt(truth.noise_var) * rng.standard_normal(values.shape[0])
    return y


def gen_ar_inactive(n: int, m: int, phi: float, seed=None) -> np.ndarray:
    """n independent AR(1) paths of length m along the column index.

    ``W(1) = e(1)``, ``W(i) = phi W(i-1) + e(i)`` with standard normal e; the
    start is deliberately non-stationary, so early columns have smaller variance.
    """
    if m < 1:
        raise InvalidParams("m must be >= 1")
    if not -1.0 < phi < 1.0:
        raise InvalidPhi(f"|phi| must be < 1, got {phi}")
    e = make_rng(seed).standard_normal((n, m))
    if phi == 0.0:
        return e
    return lfilter([1.0], [1.0, -phi], e, axis=1)


def ar_design(n: int, truth: GroundTruth, phi: float, seed=None) -> np.ndarray:
    """Active columns i.i.d. N(0, 1); inactive columns, in index order, are
    consecutive samples of the AR(1) process."""
    rng = make_rng(seed)
    p = truth.a.shape[0]
    active = np.asarray(truth.support, dtype=int)
    inactive = np.setdiff1d(np.arange(p), active)
    x = np.empty((n, p))
    x[:, active] = rng.standard_normal((n, active.size))
    if inactive.size:
        x[:, inactive] = gen_ar_inactive(n, inactive.size, phi, rng)
    return x


def ar_design_covariance(truth: GroundTruth, phi: float, idx) -> np.ndarray:
    """Exact covariance of the ``ar_design`` columns ``idx``.

    Active columns are independent with unit variance. The inactive column at
    position r (0-based) in index order is W(r+1), so for r <= s
    ``Cov(W(r+1), W(s+1)) = phi**(s-r) (1 - phi**(2r+2)) / (1 - phi**2)``.
    """
    idx = np.asarray(idx, dtype=int)
    p = truth.a.shape[0]
    active = np.zeros(p, dtype=bool)
    active[list(truth.support)] = True
    pos = np.cumsum(~active) - 1  # position among inactive columns
    cov = np.zeros((idx.size, idx.size))
    act = active[idx]
    cov[act, act] = 1.0
    ina = np.flatnonzero(~act)
    if ina.size:
        r = pos[idx[ina]].astype(float)
        lo = np.minimum(r[:, None], r[None, :])
        lag = np.abs(r[:, None] - r[None, :])
        if phi == 0.0:
            block = (lag == 0).astype(float)
        else:
            block = phi ** lag * (1.0 - phi ** (2.0 * lo + 2.0)) / (1.0 - phi * phi)
        cov[np.ix_(ina, ina)] = block
    return cov


def orthogonal_uscore_design(n: int, p: int, seed=None) -> np.ndarray:
    """n x p data matrix whose U-scores satisfy ``U U^T = (p/(n-1)) I`` exactly.

    Columns are a randomly rotated harmonic tight frame in R^(n-1) mapped back
    to sample space through the Helmert basis. Needs even ``n-1`` and ``p``
    with ``p > n-1``.
    """
    d = n - 1
    if d % 2 or p <= d or p % 2:
        raise InvalidParams("orthogonal design needs even n-1, even p and p > n-1")
    rng = make_rng(seed)
    j = np.arange(p)[None, :]
    freq = np.arange(1, d // 2 + 1)[:, None]
    ang = 2.0 * np.pi * freq * j / p
    frame = np.sqrt(2.0 / d) * np.vstack([np.cos(ang), np.sin(ang)])
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q *= np.sign(np.diag(r))
    u = q @ frame
    return helmert(n, full=False).T @ u
