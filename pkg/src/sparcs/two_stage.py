"""Two-stage predictor: screen on n full samples, then OLS on the l survivors.

Stage 1 sees all p variables on ``n`` expensive samples. Stage 2 fits OLS on
the selected columns, using all ``t`` samples by default (``n|t``) or only
the ``t - n`` fresh ones (``n|(t-n)``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidParams,
    SingularRestrictedCovariance,
    SupportMismatch,
    TooFewSamples,
)
from .linalg import DataMatrix
from .screening import Method, SupportSet, screen

COV_COND_LIMIT = 1e12
N_MIN = 3


@dataclass(frozen=True)
class BudgetPlan:
    mu: float
    p: int
    k: int
    t: int
    c: float
    n_alloc: int
    feasible: bool
    n_min: int = N_MIN

    @property
    def cost(self) -> int:
        return self.n_alloc * self.p + (self.t - self.n_alloc) * self.k


def allocate_budget(mu: float, p: int, k: int, t: int, c: float,
                    n_min: int = N_MIN) -> BudgetPlan:
    """Stage-1 sample allocation under the budget ``n p + (t - n) k <= mu``.

    Feasible when ``c (p - k) ln t + k t <= mu``; then
    ``n = max(ceil(c ln t), n_min)``, lowered if needed so the integer budget
    inequality still holds and ``n <= t``. Otherwise ``n = 0``.
    """
    if not (isinstance(p, (int, np.integer)) and isinstance(k, (int, np.integer))
            and isinstance(t, (int, np.integer))):
        raise InvalidParams("p, k and t must be integers")
    if not p > k >= 1:
        raise InvalidParams(f"need p > k >= 1, got p={p}, k={k}")
    if t < 1:
        raise InvalidParams(f"need t >= 1, got {t}")
    if not c > 0:
        raise InvalidParams(f"need c > 0, got {c}")
    if not mu >= 0:
        raise InvalidParams(f"need mu >= 0, got {mu}")
    log_t = math.log(t)
    feasible = c * (p - k) * log_t + k * t <= mu
    if not feasible:
        return BudgetPlan(mu, p, k, t, c, 0, False, n_min)
    n = max(math.ceil(c * log_t), n_min)
    # largest n keeping n p + (t - n) k <= mu
    n_cap = int(math.floor((mu - k * t) / (p - k)))
    while n_cap * (p - k) + k * t > mu:
        n_cap -= 1
    n = min(n, n_cap, t)
    return BudgetPlan(mu, p, k, t, c, int(n), True, n_min)


@dataclass(frozen=True)
class TwoStageModel:
    support: SupportSet
    coefficients: np.ndarray
    intercept: float
    n_stage1: int
    t_total: int
    method: Method
    reuse_stage1: bool = True
    ridge: bool = False
    column_ids: Optional[tuple] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def l(self) -> int:
        return len(self.support)

    def to_dict(self) -> dict:
        return {
            "support": self.support.to_dict(),
            "coefficients": [float(v) for v in self.coefficients],
            "intercept": float(self.intercept),
            "n_stage1": self.n_stage1,
            "t_total": self.t_total,
            "method": self.method.value,
            "reuse_stage1": self.reuse_stage1,
            "ridge": self.ridge,
            "column_ids": None if self.column_ids is None else list(self.column_ids),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TwoStageModel":
        ids = d.get("column_ids")
        return cls(SupportSet.from_dict(d["support"]),
                   np.asarray(d["coefficients"], dtype=np.float64),
                   float(d["intercept"]), int(d["n_stage1"]), int(d["t_total"]),
                   Method.parse(d["method"]), bool(d.get("reuse_stage1", True)),
                   bool(d.get("ridge", False)), None if ids is None else tuple(ids),
                   dict(d.get("diagnostics", {})))

    @classmethod
    def from_json(cls, text: str) -> "TwoStageModel":
        return cls.from_dict(json.loads(text))


def ols_fit(x, y, ridge: bool = False):
    """OLS with intercept: ``S_x^{-1} S_xy`` plus the centering intercept.

    Returns ``(coefficients, intercept, condition_number)``. Raises
    SingularRestrictedCovariance when the sample covariance is too
    ill-conditioned, unless ``ridge`` adds ``1e-8 * trace / l`` to its
    diagonal.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    m, l = x.shape
    if y.shape[0] != m:
        raise DimensionMismatch("response length does not match design rows")
    if m < 2:
        raise TooFewSamples(m, 2)
    xm, ym = x.mean(axis=0), y.mean()
    xc = x - xm
    s = xc.T @ xc / (m - 1)
    sxy = xc.T @ (y - ym) / (m - 1)
    if ridge:
        s = s + np.eye(l) * (1e-8 * np.trace(s) / l)
    w = np.linalg.eigvalsh(s)
    cond = np.inf if w[0] <= 0 else w[-1] / w[0]
    if not cond <= COV_COND_LIMIT:
        raise SingularRestrictedCovariance(
            f"restricted covariance condition number {cond:.3g} exceeds {COV_COND_LIMIT:.0e}")
    coef = np.linalg.solve(s, sxy)
    return coef, float(ym - xm @ coef), float(cond)


def _stage2_columns(x2, support: SupportSet, p: int, stage1_ids) -> np.ndarray:
    l = len(support)
    if isinstance(x2, DataMatrix):
        vals, ids = x2.values, x2.column_ids
    else:
        vals, ids = np.asarray(x2, dtype=np.float64), None
        if vals.ndim == 1:
            vals = vals.reshape(-1, l) if l else vals.reshape(-1, 0)
    idx = list(support.indices)
    if ids is not None and stage1_ids is not None:
        want = [stage1_ids[i] for i in idx]
        pos = {c: j for j, c in enumerate(ids)}
        missing = [c for c in want if c not in pos]
        if missing:
            raise SupportMismatch(f"stage-2 data lacks selected columns {missing[:5]}")
        return vals[:, [pos[c] for c in want]]
    if vals.shape[1] == l:
        return vals
    if vals.shape[1] == p:
        return vals[:, idx]
    raise SupportMismatch(
        f"stage-2 data has {vals.shape[1]} columns; expected l={l} or p={p}")


def fit(stage1, y1=None, stage2=None, y2=None, method="PCS_H", l: int = 1,
        reuse_stage1: bool = True, ridge: bool = False) -> TwoStageModel:
    """Screen on ``stage1`` and fit OLS on the selected variables.

    ``stage2`` holds the extra ``t - n`` samples, either restricted to the
    selected columns (in support order, or matched by column id) or with all
    p columns. It may be None when only stage-1 samples exist.
    """
    if y1 is None and isinstance(stage1, DataMatrix):
        y1 = stage1.response
    if y2 is None and isinstance(stage2, DataMatrix):
        y2 = stage2.response
    x1 = stage1.values if isinstance(stage1, DataMatrix) else np.asarray(stage1, float)
    ids1 = stage1.column_ids if isinstance(stage1, DataMatrix) else None
    n, p = x1.shape
    if n < 3:
        raise TooFewSamples(n)
    y1 = np.asarray(y1, dtype=np.float64).ravel()
    support = screen(x1, y1, method, l=l)
    idx = list(support.indices)
    parts_x, parts_y = [], []
    if reuse_stage1:
        parts_x.append(x1[:, idx])
        parts_y.append(y1)
    if stage2 is not None:
        x2 = _stage2_columns(stage2, support, p, ids1)
        if y2 is None:
            raise DimensionMismatch("stage-2 data needs a response")
        y2 = np.asarray(y2, dtype=np.float64).ravel()
        if y2.shape[0] != x2.shape[0]:
            raise DimensionMismatch("stage-2 response length does not match")
        parts_x.append(x2)
        parts_y.append(y2)
    if not parts_x:
        raise TooFewSamples(0, 2)
    xf, yf = np.vstack(parts_x), np.concatenate(parts_y)
    coef, intercept, cond = ols_fit(xf, yf, ridge)
    t_total = n + (0 if stage2 is None else parts_x[-1].shape[0])
    resid = yf - (intercept + xf @ coef)
    diag = {"restricted_cov_condition": cond,
            "train_rmse": float(np.sqrt(np.mean(resid ** 2))),
            "fit_samples": int(xf.shape[0])}
    ids = None if ids1 is None else tuple(ids1[i] for i in idx)
    return TwoStageModel(support, coef, intercept, n, t_total, support.method,
                         reuse_stage1, ridge, ids, diag)


def predict(model: TwoStageModel, x):
    """``intercept + coefficients . x`` for one l-vector or an m x l array."""
    a = np.asarray(x, dtype=np.float64)
    l = model.coefficients.shape[0]
    if a.shape[-1:] != (l,) or a.ndim > 2:
        raise DimensionMismatch(f"expected inputs of dimension {l}, got shape {a.shape}")
    out = model.intercept + a @ model.coefficients
    return float(out) if a.ndim == 1 else out


def predict_stream(model: TwoStageModel, rows: Iterable) -> Iterable[float]:
    for row in rows:
        yield predict(model, row)


def rmse(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise DimensionMismatch(f"lengths differ: {y.shape[0]} vs {yhat.shape[0]}")
    if y.shape[0] < 1:
        raise DimensionMismatch("rmse needs at least one value")
    return float(np.sqrt(np.mean((y - yhat) ** 2)))
