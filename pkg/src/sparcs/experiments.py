"""Monte Carlo harnesses, the LASSO baseline and the paired t-test.

Each experiment expands its grid into (grid point, trial) tasks. Every task
draws from its own RNG stream keyed by ``(master_seed, grid_index,
trial_index)``, so a run gives the same tables whatever the thread count or
scheduling order. Aggregation walks the results in task order.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable, Iterable, Optional

import numpy as np

from ._version import __version__
from .errors import (
    ConfigError,
    DegenerateVariance,
    DimensionMismatch,
    InvalidParams,
    NonConvergence,
    SparcsError,
)
from .linalg import atomic_write_text, compute_uscores, cross_correlation, response_uscores
from .phase import p0, reg_incomplete_beta, rho_for_xi
from .screening import Method, screen
from .simgen import (
    RNG_ALGORITHM,
    CovarianceSpec,
    ar_design,
    ar_design_covariance,
    gen_coefficients,
    gen_response,
    make_rng,
    sample_gaussian,
    seed_id,
    trial_seed,
)
from .two_stage import fit, ols_fit

EXPERIMENTS = ("selection_error", "two_stage_rmse", "ar_sweep", "fwer", "discovery_counts")
SCREEN_METHODS = ("SIS", "PCS", "PCS_B")
_ALLOWED_METHODS = {
    "selection_error": SCREEN_METHODS + ("LASSO",),
    "fwer": SCREEN_METHODS + ("LASSO",),
    "two_stage_rmse": SCREEN_METHODS + ("LASSO", "ORACLE"),
    "ar_sweep": SCREEN_METHODS + ("LASSO", "ORACLE"),
    "discovery_counts": SCREEN_METHODS + ("LASSO", "ORACLE"),
}
_DEFAULT_COVARIANCE = {
    "selection_error": "block_sparse",
    "two_stage_rmse": "block_sparse",
    "fwer": "identity",
    "discovery_counts": "identity",
    "ar_sweep": None,
}


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def student_t_cdf(t: float, df: float) -> float:
    """CDF of Student's t through the regularized incomplete beta function."""
    if not df > 0:
        raise InvalidParams(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * reg_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return tail if t < 0 else 1.0 - tail


def paired_ttest_onesided(a, b) -> float:
    """p-value of the paired t-test for H1: mean(a) < mean(b)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch("paired samples must have equal length")
    m = a.shape[0]
    if m < 2:
        raise InvalidParams(f"paired t-test needs at least 2 pairs, got {m}")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if not sd > 0:
        raise DegenerateVariance("paired differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(m))
    return student_t_cdf(t, m - 1)


def mc_p0(n: int, rho: float, pairs: int, seed=None, chunk: int = 200_000):
    """Monte Carlo hit rate of ``|u^T v| >= rho`` for independent uniform
    points on the unit sphere of R^(n-1).

    Returns ``(estimate, standard_error)``.
    """
    if n < 3 or pairs < 1:
        raise InvalidParams("need n >= 3 and pairs >= 1")
    rng = make_rng(seed)
    hits, done = 0, 0
    while done < pairs:
        m = min(chunk, pairs - done)
        u = rng.standard_normal((m, n - 1))
        v = rng.standard_normal((m, n - 1))
        dot = np.einsum("ij,ij->i", u, v)
        cos = dot / np.sqrt(np.einsum("ij,ij->i", u, u) * np.einsum("ij,ij->i", v, v))
        hits += int(np.count_nonzero(np.abs(cos) >= rho))
        done += m
    est = hits / pairs
    return est, math.sqrt(est * (1.0 - est) / pairs)


# ---------------------------------------------------------------------------
# LASSO baseline
# ---------------------------------------------------------------------------

def _soft(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _duality_gap(x, y, r, b, lam) -> float:
    n = x.shape[0]
    primal = 0.5 * float(r @ r) / n + lam * float(np.abs(b).sum())
    corr = float(np.max(np.abs(x.T @ r))) / n if x.shape[1] else 0.0
    s = 1.0 if corr <= lam else (lam / corr if corr > 0 else 0.0)
    nu = s * r / n
    dual = float(nu @ y) - 0.5 * n * float(nu @ nu)
    return primal - dual


def lasso_cd(x, y, lam: float, tol: float = 1e-8, max_iter: int = 10000, b0=None):
    """Minimize ``(1/2n) ||y - X b||^2 + lam ||b||_1`` by coordinate descent.

    Sweeps run over an active set that grows whenever a KKT check over all
    columns finds a violator. Stops once a sweep moves no coefficient by more
    than ``tol`` (relative to the largest coefficient) and no violator
    remains, or once the duality gap falls below ``tol`` times the objective.
    The objective is asserted nonincreasing after every sweep.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = x.shape
    if y.shape[0] != n:
        raise DimensionMismatch("response length does not match design rows")
    if not lam >= 0:
        raise InvalidParams(f"lambda must be >= 0, got {lam}")
    col_sq = np.einsum("ij,ij->j", x, x) / n
    usable = col_sq > 0
    b = np.zeros(p) if b0 is None else np.array(b0, dtype=np.float64)
    b[~usable] = 0.0
    r = y - x @ b
    obj = 0.5 * float(r @ r) / n + lam * float(np.abs(b).sum())
    active = set(np.flatnonzero(b).tolist())
    sweeps = 0
    while True:
        grad = x.T @ r / n
        viol = usable & (b == 0.0) & (np.abs(grad) > lam * (1.0 + 1e-12))
        new = np.flatnonzero(viol).tolist()
        if sweeps > 0 and not new:
            return b
        active.update(new)
        order = sorted(active)
        while True:
            sweeps += 1
            if sweeps > max_iter:
                raise NonConvergence(max_iter, _duality_gap(x, y, r, b, lam))
            max_delta = 0.0
            for j in order:
                xj = x[:, j]
                old = b[j]
                z = float(xj @ r) / n + col_sq[j] * old
                nb = _soft(z, lam) / col_sq[j]
                if nb != old:
                    r -= xj * (nb - old)
                    b[j] = nb
                    max_delta = max(max_delta, abs(nb - old))
            new_obj = 0.5 * float(r @ r) / n + lam * float(np.abs(b).sum())
            assert new_obj <= obj + 1e-10 * max(1.0, abs(obj)), "objective increased"
            obj = new_obj
            if max_delta <= tol * max(1.0, float(np.max(np.abs(b))) if p else 1.0):
                break
            # slow linear convergence on ill-conditioned designs: a small
            # duality gap certifies the whole problem, not just the active set
            if sweeps % 10 == 0 and _duality_gap(x, y, r, b, lam) <= tol * max(obj, 1e-300):
                return b


def lambda_max(x, y) -> float:
    """Smallest lambda for which the all-zero vector is optimal."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    return float(np.max(np.abs(x.T @ y))) / x.shape[0]


def lambda_grid_default(x, y, size: int = 20, ratio: float = 1e-2) -> np.ndarray:
    """Log-spaced grid from ``lambda_max`` of the centered data down to ``ratio`` times it."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    top = lambda_max(x - x.mean(axis=0), y - y.mean())
    if size == 1:
        return np.array([top])
    return top * np.logspace(0.0, math.log10(ratio), size)


def cv_lambda(x, y, folds: int = 2, lambda_grid=None, tol: float = 1e-6,
              max_iter: int = 10000) -> float:
    """K-fold cross-validated lambda; row i goes to fold ``i % folds``.

    Each training fold is centered, the path runs from the largest lambda
    down with warm starts, and ties in mean held-out MSE go to the larger
    lambda. A fold's path stops once its fit has as many nonzeros as
    training rows minus one (the saturated regime), or once coordinate
    descent fails to converge near that regime; smaller lambdas then count as
    unavailable for that fold.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.shape[0]
    if int(folds) != folds or folds < 2:
        raise ConfigError(f"folds must be an integer >= 2, got {folds}")
    if folds > n:
        raise ConfigError(f"folds={folds} exceeds the {n} samples")
    if lambda_grid is None:
        lambda_grid = lambda_grid_default(x, y)
    grid = np.unique(np.asarray(lambda_grid, dtype=np.float64))[::-1]
    if grid.size == 0:
        raise ConfigError("lambda grid is empty")
    if np.any(grid < 0) or not np.all(np.isfinite(grid)):
        raise ConfigError("lambda grid values must be finite and >= 0")
    if grid.size == 1:
        return float(grid[0])
    fold_of = np.arange(n) % folds
    err = np.zeros(grid.size)
    for f in range(folds):
        tr, te = fold_of != f, fold_of == f
        xm, ym = x[tr].mean(axis=0), y[tr].mean()
        xt, yt = x[tr] - xm, y[tr] - ym
        xv = x[te] - xm
        b = None
        for g, lam in enumerate(grid):
            if b is not None and np.count_nonzero(b) >= xt.shape[0] - 1:
                err[g:] = np.inf
                break
            try:
                b = lasso_cd(xt, yt, lam, tol=tol, max_iter=max_iter, b0=b)
            except NonConvergence:
                err[g:] = np.inf
                break
            e = y[te] - (ym + xv @ b)
            err[g] += float(e @ e) / e.shape[0]
    err /= folds
    best = float(np.min(err))
    # descending grid: the first index within rounding of the minimum is the largest lambda
    g = int(np.flatnonzero(err <= best * (1.0 + 1e-12) + 1e-300)[0])
    return float(grid[g])


def lasso_support(x, y, l: int, folds: int = 2, grid_size: int = 20,
                  grid_ratio: float = 1e-2) -> tuple:
    """Top-l variables by |coefficient| of the cross-validated LASSO fit."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    grid = lambda_grid_default(x, y, grid_size, grid_ratio)
    lam = cv_lambda(x, y, folds, grid)
    xc, yc = x - x.mean(axis=0), y - y.mean()
    b = None
    for g in grid[grid >= lam]:
        b = lasso_cd(xc, yc, g, tol=1e-6, b0=b)
    s = np.abs(b)
    order = np.lexsort((np.arange(s.size), -s))[:l]
    return tuple(int(i) for i in order)


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

_TUPLE_FIELDS = ("n_grid", "t_grid", "p_grid", "phi_grid", "rho_grid", "xi_targets", "methods")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    p: int = 1000
    k: int = 10
    n: Optional[int] = None
    t: Optional[int] = None
    n_grid: tuple = ()
    t_grid: tuple = ()
    p_grid: tuple = ()
    phi_grid: tuple = ()
    rho_grid: tuple = ()
    xi_targets: tuple = ()
    sweep: str = "phi"
    sigma: float = 0.1
    noise_var: Optional[float] = None
    coefficients: Optional[str] = None
    covariance: Any = None
    l: Optional[int] = None
    n_factor: float = 25.0
    test_size: int = 10000
    test_chunk: int = 1000
    trials: int = 100
    master_seed: int = 0
    methods: tuple = ("SIS", "PCS")
    cv_folds: int = 2
    lasso_grid_size: int = 20
    lasso_grid_ratio: float = 0.01
    output_path: Optional[str] = None

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            v = getattr(self, name)
            if isinstance(v, (str, bytes)) or not isinstance(v, Iterable):
                raise ConfigError(f"{name} must be a list")
            object.__setattr__(self, name, tuple(v))
        object.__setattr__(self, "methods",
                           tuple(str(m).strip().upper().replace("-", "_") for m in self.methods))
        self._validate()

    # -- defaults that depend on the experiment ---------------------------
    @property
    def noise(self) -> float:
        if self.noise_var is not None:
            return float(self.noise_var)
        return 0.0 if self.experiment_id == "fwer" else 0.05

    @property
    def coefficient_law(self) -> str:
        if self.coefficients is not None:
            return self.coefficients
        return "bernoulli_gaussian" if self.experiment_id == "fwer" else "unit_normal"

    @property
    def support_size(self) -> int:
        return self.k if self.l is None else self.l

    def covariance_spec(self, p: Optional[int] = None) -> CovarianceSpec:
        p = self.p if p is None else p
        cov = self.covariance if self.covariance is not None else _DEFAULT_COVARIANCE.get(
            self.experiment_id)
        try:
            if cov in (None, "identity"):
                return CovarianceSpec.identity(p)
            if cov == "block_sparse":
                return CovarianceSpec.default(p)
            if isinstance(cov, dict):
                return CovarianceSpec(p, **cov)
        except (TypeError, SparcsError) as exc:
            raise ConfigError(f"bad covariance settings: {exc}") from None
        raise ConfigError(f"unknown covariance {cov!r}")

    def _validate(self):
        e = self.experiment_id
        if e not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment_id {e!r}; choose from {', '.join(EXPERIMENTS)}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ConfigError("master_seed must be a nonnegative integer")
        if self.p < 2:
            raise ConfigError("p must be >= 2")
        kmin = 0 if e == "discovery_counts" else 1
        if not kmin <= self.k < self.p:
            raise ConfigError(f"k must lie in [{kmin}, p), got {self.k}")
        if self.l is not None and not 1 <= self.l <= self.p:
            raise ConfigError("l must lie in [1, p]")
        if self.noise < 0:
            raise ConfigError("noise_var must be >= 0")
        if self.coefficient_law not in ("unit_normal", "bernoulli_gaussian"):
            raise ConfigError(f"unknown coefficient law {self.coefficient_law!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.test_size < 1 or self.test_chunk < 1:
            raise ConfigError("test_size and test_chunk must be >= 1")
        if self.cv_folds < 2 or self.lasso_grid_size < 1 or not 0 < self.lasso_grid_ratio <= 1:
            raise ConfigError("bad LASSO cross-validation settings")
        if e != "discovery_counts":
            if not self.methods:
                raise ConfigError("methods must be nonempty")
            bad = [m for m in self.methods if m not in _ALLOWED_METHODS[e]]
            if bad:
                raise ConfigError(f"methods {bad} not available for {e}")
        if e in ("selection_error", "fwer"):
            if not self.n_grid or any(int(n) != n or n < 3 for n in self.n_grid):
                raise ConfigError("n_grid must be a nonempty list of integers >= 3")
        if e == "two_stage_rmse":
            if not self.t_grid:
                raise ConfigError("t_grid must be nonempty")
            for t in self.t_grid:
                n = stage1_size(t, self.n_factor)
                if n < 3 or n > t or self.support_size >= t:
                    raise ConfigError(f"t={t} gives stage-1 size {n}; need 3 <= n <= t and l < t")
        if e == "ar_sweep":
            if self.n is None or self.t is None or not 3 <= self.n <= self.t:
                raise ConfigError("ar_sweep needs integers 3 <= n <= t")
            if self.sweep not in ("p", "phi"):
                raise ConfigError("sweep must be 'p' or 'phi'")
            if self.sweep == "p" and (not self.p_grid or any(q <= self.k for q in self.p_grid)):
                raise ConfigError("p sweep needs a nonempty p_grid with every p > k")
            if self.sweep == "phi" and not self.phi_grid:
                raise ConfigError("phi sweep needs a nonempty phi_grid")
            if any(not -1.0 < f < 1.0 for f in self.phi_grid):
                raise ConfigError("phi values must lie in (-1, 1)")
        if e == "discovery_counts":
            if self.n is None or self.n < 3:
                raise ConfigError("discovery_counts needs n >= 3")
            if not self.rho_grid and not self.xi_targets:
                raise ConfigError("give rho_grid or xi_targets")
            if any(not 0.0 <= r <= 1.0 for r in self.rho_grid):
                raise ConfigError("rho values must lie in [0, 1]")
            if any(not 0.0 < x < self.p for x in self.xi_targets):
                raise ConfigError("xi targets must lie in (0, p)")
        self.covariance_spec()

    # -- (de)serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        for name in _TUPLE_FIELDS:
            d[name] = list(d[name])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if "experiment_id" not in d:
            raise ConfigError("configuration lacks experiment_id")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_json(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def override(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update({k: v for k, v in changes.items() if v is not None})
        return type(self).from_dict(d)


@dataclass(frozen=True)
class TrialResult:
    grid_name: str
    grid_value: float
    trial_index: int
    method: str
    metric_name: str
    metric_value: float
    seed_used: int


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list
    aggregated: list
    summary: dict
    elapsed_seconds: float = 0.0

    def table(self, statistic: str, method: Optional[str] = None) -> dict:
        """``{grid_value: value}`` for one aggregated statistic."""
        return {row[1]: row[4] for row in self.aggregated
                if row[3] == statistic and (method is None or row[2] == method)}


def stage1_size(t: int, factor: float = 25.0) -> int:
    return int(math.ceil(factor * math.log(t)))


def parallel_map(fn: Callable, items, threads: int = 1) -> list:
    """Ordered map over ``items``, on a thread pool when ``threads > 1``."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# per-trial machinery
# ---------------------------------------------------------------------------

def _select(method: str, x, y, l: int, cfg: ExperimentConfig, truth=None) -> tuple:
    if method == "ORACLE":
        return tuple(truth.support)
    if method == "LASSO":
        return lasso_support(x, y, l, cfg.cv_folds, cfg.lasso_grid_size, cfg.lasso_grid_ratio)
    return screen(x, y, Method.parse(method), l=l).indices


def _heldout_rmse(models: dict, truth, covariance: Callable, size: int, chunk: int,
                  rng) -> dict:
    """Held-out RMSE of each ``(indices, coef, intercept)`` model.

    Test rows are drawn only for the columns that matter (the true support
    plus every selected column) from their exact joint Gaussian law;
    ``covariance(idx)`` gives the covariance of those columns.
    """
    cols = sorted(set(truth.support).union(*(set(m[0]) for m in models.values())))
    where = {c: i for i, c in enumerate(cols)}
    factor = np.linalg.cholesky(covariance(np.asarray(cols, dtype=int)))
    sup = [where[i] for i in truth.support]
    a = truth.a[list(truth.support)]
    sd = math.sqrt(truth.noise_var)
    local = {name: ([where[i] for i in idx], coef, icpt)
             for name, (idx, coef, icpt) in models.items()}
    sse = {name: 0.0 for name in models}
    done = 0
    while done < size:
        m = min(chunk, size - done)
        x = rng.standard_normal((m, len(cols))) @ factor.T
        y = x[:, sup] @ a
        if sd > 0:
            y = y + sd * rng.standard_normal(m)
        for name, (idx, coef, icpt) in local.items():
            e = y - (icpt + x[:, idx] @ coef)
            sse[name] += float(e @ e)
        done += m
    return {name: math.sqrt(v / size) for name, v in sse.items()}


def _fit_methods(cfg, x, y, n, truth) -> dict:
    """Stage-1 selection on the first n rows, OLS on all rows."""
    l = cfg.support_size
    models = {}
    for method in cfg.methods:
        if method in SCREEN_METHODS:
            mdl = fit(x[:n], y[:n], x[n:], y[n:], Method.parse(method), l)
            models[method] = (mdl.support.indices, mdl.coefficients, mdl.intercept)
        else:
            idx = _select(method, x[:n], y[:n], l, cfg, truth)
            coef, icpt, _ = ols_fit(x[:, list(idx)], y)
            models[method] = (idx, coef, icpt)
    return models


def _tasks(cfg, grid_name, grid):
    return [(grid_name, gi, g, ti) for gi, g in enumerate(grid) for ti in range(cfg.trials)]


def _rows(task, seq, metrics: Iterable) -> list:
    grid_name, _, g, ti = task
    sid = seed_id(seq)
    return [TrialResult(grid_name, g, ti, m, name, float(v), sid) for m, name, v in metrics]


def _selection_trial(cfg, task):
    _, gi, n, ti = task
    seq = trial_seed(cfg.master_seed, gi, ti)
    rng = make_rng(seq)
    truth = gen_coefficients(cfg.p, cfg.k, cfg.coefficient_law, cfg.sigma, rng, cfg.noise)
    x = sample_gaussian(cfg.covariance_spec(), int(n), rng).values
    y = gen_response(x, truth, rng)
    true = set(truth.support)
    out = []
    for method in cfg.methods:
        sel = set(_select(method, x, y, cfg.support_size, cfg, truth))
        out.append((method, "mis_selected", len(sel - true)))
        if cfg.experiment_id == "fwer":
            out.append((method, "selection_error", float(sel != true)))
    return _rows(task, seq, out)


def _two_stage_trial(cfg, task):
    _, gi, t, ti = task
    t = int(t)
    seq = trial_seed(cfg.master_seed, gi, ti)
    rng = make_rng(seq)
    spec = cfg.covariance_spec()
    n = stage1_size(t, cfg.n_factor)
    truth = gen_coefficients(cfg.p, cfg.k, cfg.coefficient_law, cfg.sigma, rng, cfg.noise)
    x = sample_gaussian(spec, t, rng).values
    y = gen_response(x, truth, rng)
    models = _fit_methods(cfg, x, y, n, truth)
    err = _heldout_rmse(models, truth, spec.submatrix, cfg.test_size, cfg.test_chunk, rng)
    return _rows(task, seq, [(m, "rmse", err[m]) for m in cfg.methods])


def _ar_trial(cfg, task):
    grid_name, gi, g, ti = task
    if grid_name == "p":
        p, phi = int(g), (cfg.phi_grid[0] if cfg.phi_grid else 0.99)
    else:
        p, phi = cfg.p, float(g)
    seq = trial_seed(cfg.master_seed, gi, ti)
    rng = make_rng(seq)
    truth = gen_coefficients(p, cfg.k, cfg.coefficient_law, cfg.sigma, rng, cfg.noise)
    x = ar_design(cfg.t, truth, phi, rng)
    y = gen_response(x, truth, rng)
    models = _fit_methods(cfg, x, y, cfg.n, truth)
    err = _heldout_rmse(models, truth, lambda idx: ar_design_covariance(truth, phi, idx),
                        cfg.test_size, cfg.test_chunk, rng)
    return _rows(task, seq, [(m, "rmse", err[m]) for m in cfg.methods])


def discovery_grid(cfg: ExperimentConfig) -> list:
    rhos = [float(r) for r in cfg.rho_grid]
    rhos += [rho_for_xi(cfg.p, cfg.n, float(x)) for x in cfg.xi_targets]
    return rhos


def _discovery_trial(cfg, rhos, ti):
    seq = trial_seed(cfg.master_seed, 0, ti)
    rng = make_rng(seq)
    x = sample_gaussian(cfg.covariance_spec(), cfg.n, rng).values
    if cfg.k == 0:
        y = rng.standard_normal(cfg.n)
    else:
        truth = gen_coefficients(cfg.p, cfg.k, cfg.coefficient_law, cfg.sigma, rng, cfg.noise)
        y = gen_response(x, truth, rng)
    r = np.abs(cross_correlation(compute_uscores(x), response_uscores(y)))
    sid = seed_id(seq)
    return [TrialResult("rho", rho, ti, "correlation", "count",
                        float(np.count_nonzero(r > rho)), sid) for rho in rhos]


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _group(trials) -> dict:
    groups = {}
    for tr in trials:
        groups.setdefault((tr.grid_name, tr.grid_value, tr.method, tr.metric_name),
                          []).append(tr.metric_value)
    return groups


def _describe(groups) -> list:
    rows = []
    for (gname, g, method, metric), vals in groups.items():
        v = np.asarray(vals)
        sd = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
        rows.append((gname, g, method, f"{metric}_mean", float(np.mean(v))))
        rows.append((gname, g, method, f"{metric}_se", sd / math.sqrt(v.size)))
        rows.append((gname, g, method, f"{metric}_trials", float(v.size)))
    return rows


def _paired_rows(groups, metric: str, reference: str = "PCS") -> list:
    rows = []
    keys = list(groups)
    for (gname, g, method, m) in keys:
        if m != metric or method == reference:
            continue
        ref = groups.get((gname, g, reference, m))
        if ref is None:
            continue
        try:
            pv = paired_ttest_onesided(ref, groups[(gname, g, method, m)])
        except (DegenerateVariance, InvalidParams):
            pv = float("nan")
        rows.append((gname, g, reference, f"pvalue_vs_{method}", pv))
    return rows


def log_linear_fit(xs, ys):
    """Least-squares line through ``(x, log y)`` over points with ``y > 0``.

    Returns ``(slope, intercept, r_squared, points_used)``.
    """
    pts = [(float(x), math.log(y)) for x, y in zip(xs, ys) if y > 0]
    if len(pts) < 2:
        return float("nan"), float("nan"), float("nan"), len(pts)
    a = np.array(pts)
    slope, icpt = np.polyfit(a[:, 0], a[:, 1], 1)
    fitted = icpt + slope * a[:, 0]
    ss_res = float(np.sum((a[:, 1] - fitted) ** 2))
    ss_tot = float(np.sum((a[:, 1] - a[:, 1].mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(icpt), r2, len(pts)


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

def _finish(cfg, trials, aggregated, summary, started) -> ExperimentResult:
    return ExperimentResult(cfg, trials, aggregated, summary, time.perf_counter() - started)


def _run_grid(cfg, trial_fn, grid_name, grid, threads):
    results = parallel_map(lambda task: trial_fn(cfg, task), _tasks(cfg, grid_name, grid), threads)
    return [tr for chunk in results for tr in chunk]


def _require(cfg, experiment_id):
    if not isinstance(cfg, ExperimentConfig):
        raise ConfigError("expected an ExperimentConfig")
    if cfg.experiment_id != experiment_id:
        raise ConfigError(f"config is for {cfg.experiment_id!r}, not {experiment_id!r}")


def run_selection_error(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Mean count of selected-but-inactive variables per (n, method), l = k."""
    _require(cfg, "selection_error")
    started = time.perf_counter()
    trials = _run_grid(cfg, _selection_trial, "n", cfg.n_grid, threads)
    groups = _group(trials)
    agg = _describe(groups) + _paired_rows(groups, "mis_selected")
    return _finish(cfg, trials, agg, {}, started)


def run_two_stage_rmse(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Held-out RMSE of each two-stage predictor with n = ceil(n_factor ln t)."""
    _require(cfg, "two_stage_rmse")
    started = time.perf_counter()
    trials = _run_grid(cfg, _two_stage_trial, "t", cfg.t_grid, threads)
    groups = _group(trials)
    agg = _describe(groups) + _paired_rows(groups, "rmse")
    agg += [("t", t, "all", "n_stage1", float(stage1_size(t, cfg.n_factor))) for t in cfg.t_grid]
    return _finish(cfg, trials, agg, {}, started)


def run_ar_sweep(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """RMSE under AR(1) inactive variables, swept over p or over phi."""
    _require(cfg, "ar_sweep")
    started = time.perf_counter()
    grid = cfg.p_grid if cfg.sweep == "p" else cfg.phi_grid
    trials = _run_grid(cfg, _ar_trial, cfg.sweep, grid, threads)
    groups = _group(trials)
    agg = _describe(groups) + _paired_rows(groups, "rmse")
    if cfg.sweep == "phi":
        agg += [("phi", f, "all", "multicollinearity", -math.log10(1.0 - f)) for f in grid]
    return _finish(cfg, trials, agg, {}, started)


def run_fwer(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Probability that the selected set differs from the true support, per n,
    with a log-linear fit of that probability against n."""
    _require(cfg, "fwer")
    started = time.perf_counter()
    trials = _run_grid(cfg, _selection_trial, "n", cfg.n_grid, threads)
    groups = _group(trials)
    agg = _describe(groups)
    summary = {}
    for method in cfg.methods:
        ns = list(cfg.n_grid)
        rates = [float(np.mean(groups[("n", n, method, "selection_error")])) for n in ns]
        slope, icpt, r2, used = log_linear_fit(ns, rates)
        summary[method] = {"slope": slope, "intercept": icpt, "r_squared": r2,
                           "points": used, "fwer": dict(zip(ns, rates))}
        agg += [("fit", "log_fwer_vs_n", method, "slope", slope),
                ("fit", "log_fwer_vs_n", method, "intercept", icpt),
                ("fit", "log_fwer_vs_n", method, "r_squared", r2),
                ("fit", "log_fwer_vs_n", method, "points", float(used))]
    return _finish(cfg, trials, agg, summary, started)


def run_discovery_counts(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Empirical discovery counts against the closed-form Poisson predictions."""
    _require(cfg, "discovery_counts")
    started = time.perf_counter()
    rhos = discovery_grid(cfg)
    chunks = parallel_map(lambda ti: _discovery_trial(cfg, rhos, ti), range(cfg.trials), threads)
    trials = [tr for c in chunks for tr in c]
    counts = np.array([[tr.metric_value for tr in c] for c in chunks])
    agg = []
    m = cfg.trials
    for j, rho in enumerate(rhos):
        c = counts[:, j]
        mean = float(np.mean(c))
        q = float(np.mean(c > 0))
        prob = p0(rho, cfg.n)
        xi_v = cfg.p * prob
        agg += [("rho", rho, "correlation", "count_mean", mean),
                ("rho", rho, "correlation", "count_ratio", mean / cfg.p),
                ("rho", rho, "correlation", "p_any", q),
                ("rho", rho, "correlation", "p_any_se", math.sqrt(q * (1.0 - q) / m)),
                ("rho", rho, "correlation", "p0", prob),
                ("rho", rho, "correlation", "xi", xi_v),
                ("rho", rho, "correlation", "poisson", -math.expm1(-xi_v))]
    return _finish(cfg, trials, agg, {"rho_grid": rhos}, started)


RUNNERS = {
    "selection_error": run_selection_error,
    "two_stage_rmse": run_two_stage_rmse,
    "ar_sweep": run_ar_sweep,
    "fwer": run_fwer,
    "discovery_counts": run_discovery_counts,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    return RUNNERS[cfg.experiment_id](cfg, threads)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    f = float(v)
    if f.is_integer() and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def tidy_csv(result: ExperimentResult) -> str:
    header = ["grid_name", "grid_value", "trial_index", "method", "metric_name",
              "metric_value", "seed_used"]
    return _csv_text(header, [(t.grid_name, t.grid_value, t.trial_index, t.method,
                               t.metric_name, t.metric_value, t.seed_used)
                              for t in result.trials])


def aggregated_csv(result: ExperimentResult) -> str:
    return _csv_text(["grid_name", "grid_value", "method", "statistic", "value"],
                     result.aggregated)


def manifest(result: ExperimentResult, threads: int = 1, extra: Optional[dict] = None) -> dict:
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, float) and not math.isfinite(o):
            return None
        return o

    m = {"experiment_id": result.config.experiment_id,
         "config": result.config.to_dict(),
         "master_seed": result.config.master_seed,
         "version": __version__,
         "rng_algorithm": RNG_ALGORITHM,
         "threads": threads,
         "elapsed_seconds": result.elapsed_seconds,
         "summary": clean(result.summary)}
    if extra:
        m.update(extra)
    return m


def write_outputs(result: ExperimentResult, out_dir, threads: int = 1) -> dict:
    """Write tidy.csv, aggregated.csv and manifest.json into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("tidy.csv", "aggregated.csv", "manifest.json")}
    atomic_write_text(paths["tidy.csv"], tidy_csv(result))
    atomic_write_text(paths["aggregated.csv"], aggregated_csv(result))
    atomic_write_text(paths["manifest.json"],
                      json.dumps(manifest(result, threads), indent=2, sort_keys=True) + "\n")
    return paths
