"""Stage-1 variable screening: SIS and PCS scores plus support selection."""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import DataError, DimensionMismatch, InvalidL
from .linalg import (
    MomentSummary,
    UScoreSet,
    _response_vector,
    cholesky_gram,
    compute_moments,
    compute_uscores,
    cross_correlation,
    gram,
    response_uscores,
    scaled_uscore_design,
)


class Method(str, Enum):
    SIS = "SIS"
    PCS_H = "PCS_H"
    PCS_B = "PCS_B"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("-", "_")
        if key == "PCS":
            return cls.PCS_H
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"unknown screening method {value!r}") from None


@dataclass(frozen=True)
class ScreeningScores:
    scores: np.ndarray
    method: Method
    signed: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class SupportSet:
    """Selected variables, best first (descending score, then ascending index).

    Indices are 0-based column positions.
    """

    indices: tuple
    rho: tuple
    method: Method
    threshold_used: Optional[float] = None

    def __len__(self):
        return len(self.indices)

    def as_set(self) -> frozenset:
        return frozenset(self.indices)

    def to_dict(self, column_ids=None) -> dict:
        entries = []
        for i, s in zip(self.indices, self.rho):
            e = {"index": int(i), "score": float(s)}
            if column_ids is not None:
                e["id"] = column_ids[i]
            entries.append(e)
        return {"method": self.method.value,
                "threshold": self.threshold_used,
                "entries": entries}

    def to_json(self, column_ids=None) -> str:
        return json.dumps(self.to_dict(column_ids), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SupportSet":
        entries = d["entries"]
        return cls(tuple(int(e["index"]) for e in entries),
                   tuple(float(e["score"]) for e in entries),
                   Method.parse(d["method"]),
                   None if d.get("threshold") is None else float(d["threshold"]))

    @classmethod
    def from_json(cls, text: str) -> "SupportSet":
        return cls.from_dict(json.loads(text))


def sis_scores(ux: UScoreSet, uy) -> ScreeningScores:
    r = cross_correlation(ux, uy)
    return ScreeningScores(np.abs(r), Method.SIS, r)


def _pcs_solve(ux: UScoreSet):
    """Unnormalized columns of U-tilde, ``(U U^T)^+ U``.

    With p >= n-1 this is ``G^{-1} U``. With fewer variables than U-score
    dimensions the Gram matrix is singular by construction, and the same
    pseudo-inverse product equals ``U (U^T U)^{-1}``.
    """
    u = ux.scores
    if ux.p < ux.dim:
        cf = cholesky_gram(u.T @ u)
        return sla.cho_solve(cf, u.T, check_finite=False).T
    cf = cholesky_gram(gram(ux))
    return sla.cho_solve(cf, u, check_finite=False)


def tilde_uscores(ux: UScoreSet) -> UScoreSet:
    """``(U U^T)^{-1} U`` with columns rescaled to unit norm."""
    m = _pcs_solve(ux)
    m /= np.sqrt(np.einsum("ij,ij->j", m, m))
    return UScoreSet(m, ux.source_n)


def pcs_h_parts(ux: UScoreSet, uy):
    """Return (H^xy, diag of U^T G^{-2} U) for the PCS_H representation."""
    u = _response_vector(uy)
    if u.shape[0] != ux.dim:
        raise DimensionMismatch("U-score row dimensions differ")
    m = _pcs_solve(ux)
    dtilde = np.einsum("ij,ij->j", m, m)
    h = (m.T @ u) / np.sqrt(dtilde)
    return np.clip(h, -1.0, 1.0), dtilde


def ols_from_h(h, dtilde, moments: MomentSummary) -> np.ndarray:
    """Assemble regression coefficients from H^xy with the per-variable factors
    ``sqrt(dtilde_i) * sqrt(s^y) / sd_i``.

    Exact min-norm OLS when all column sds are equal; otherwise an
    approximation whose per-variable factors differ from the true ones.
    """
    return np.sqrt(dtilde) * np.sqrt(moments.sy) / moments.column_sds * h


def pcs_scores(ux: UScoreSet, uy, variant="H",
               moments: Optional[MomentSummary] = None) -> ScreeningScores:
    """PCS scores.

    ``variant="H"`` gives ``|H^xy|`` with ``H^xy = (U-tilde^x)^T U^y`` (bounded
    by 1). ``variant="B"`` gives ``|B^xy|`` for the exact min-norm OLS solution,
    which needs column sds and the response variance from ``moments``.
    """
    variant = str(variant).upper()
    if variant.startswith("PCS_"):
        variant = variant[4:]
    if variant == "H":
        h, _ = pcs_h_parts(ux, uy)
        return ScreeningScores(np.abs(h), Method.PCS_H, h)
    if variant != "B":
        raise DataError(f"unknown PCS variant {variant!r}")
    if moments is None:
        raise DataError("PCS_B needs a MomentSummary")
    u = _response_vector(uy)
    if u.shape[0] != ux.dim:
        raise DimensionMismatch("U-score row dimensions differ")
    a = scaled_uscore_design(ux, moments.column_sds)
    rhs = u * np.sqrt((ux.source_n - 1.0) * moments.sy)
    if ux.p < ux.dim:
        b = sla.cho_solve(cholesky_gram(a.T @ a), a.T @ rhs, check_finite=False)
    else:
        b = a.T @ sla.cho_solve(cholesky_gram(a @ a.T), rhs, check_finite=False)
    return ScreeningScores(np.abs(b), Method.PCS_B, b)


def _ranked(scores: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return idx[np.lexsort((idx, -scores[idx]))]


def select_top_l(scores: ScreeningScores, l: int) -> SupportSet:
    p = scores.p
    if isinstance(l, bool) or int(l) != l or not 1 <= l <= p:
        raise InvalidL(f"l must be an integer in [1, {p}], got {l!r}")
    s = scores.scores
    order = np.lexsort((np.arange(p), -s))[: int(l)]
    return SupportSet(tuple(int(i) for i in order),
                      tuple(float(s[i]) for i in order), scores.method)


def select_by_threshold(scores: ScreeningScores, rho: float) -> SupportSet:
    if not 0.0 <= rho <= 1.0:
        raise DataError(f"threshold must lie in [0, 1], got {rho}")
    s = scores.scores
    order = _ranked(s, np.flatnonzero(s > rho))
    return SupportSet(tuple(int(i) for i in order),
                      tuple(float(s[i]) for i in order), scores.method, float(rho))


def score_data(data, response=None, method="PCS_H") -> ScreeningScores:
    """Screening scores straight from raw data."""
    method = Method.parse(method)
    x = data.values if hasattr(data, "values") else np.asarray(data, float)
    if response is None:
        response = getattr(data, "response", None)
    if response is None:
        raise DataError("screening needs a response")
    ux = compute_uscores(x)
    uy = response_uscores(response)
    if method is Method.SIS:
        return sis_scores(ux, uy)
    if method is Method.PCS_H:
        return pcs_scores(ux, uy, "H")
    return pcs_scores(ux, uy, "B", compute_moments(x, response))


def screen(data, response=None, method="PCS_H", l=None, rho=None) -> SupportSet:
    """Score and select in one call; give exactly one of ``l`` or ``rho``."""
    if (l is None) == (rho is None):
        raise DataError("give exactly one of l or rho")
    sc = score_data(data, response, method)
    return select_top_l(sc, l) if l is not None else select_by_threshold(sc, rho)
