"""False-discovery analytics for correlation screening.

Closed forms for the null probability that a U-score pair lands in a pair of
antipodal spherical caps, the expected discovery count, approximate
p-values, the critical screening threshold, and the J-function of separable
von Mises-Fisher U-score densities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceFailure, DomainError
from .linalg import UScoreSet

_TINY = 1e-300
_EPS = 1e-16


def _betacf(x, a, b, max_iter=10000):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ConvergenceFailure(
        f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _ibeta_scalar(x, a, b):
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if not (a > 0 and b > 0):
        raise DomainError(f"a and b must be positive, got a={a}, b={b}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(x, a, b) / a
    return 1.0 - math.exp(log_front) * _betacf(1.0 - x, b, a) / b


def reg_incomplete_beta(x, a, b):
    """Regularized incomplete beta function ``I_x(a, b)``.

    Continued fraction on whichever side of the mean converges fast, the
    other side through ``I_x(a, b) = 1 - I_{1-x}(b, a)``. Accepts scalars or
    arrays for ``x``.
    """
    if np.ndim(x) == 0:
        return _ibeta_scalar(float(x), float(a), float(b))
    xs = np.asarray(x, dtype=np.float64)
    out = np.empty_like(xs)
    for i, xi in np.ndenumerate(xs):
        out[i] = _ibeta_scalar(float(xi), float(a), float(b))
    return out


def sphere_area(n: int) -> float:
    """Surface area of the unit (n-2)-sphere in R^(n-1)."""
    if int(n) != n or n < 3:
        raise DomainError(f"sphere_area needs an integer n >= 3, got {n}")
    d = (n - 1) / 2.0
    return 2.0 * math.exp(d * math.log(math.pi) - math.lgamma(d))


def _check_rho(rho):
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [0, 1], got {rho}")


def _check_n(n):
    if int(n) != n or n < 3:
        raise DomainError(f"n must be an integer >= 3, got {n}")


def p0(rho: float, n: int) -> float:
    """Null probability that two uniform points on S_{n-2} have
    ``|u^T v| >= rho`` (cap distance ``sqrt(2(1-rho))`` to ``v`` or ``-v``)."""
    _check_rho(rho)
    _check_n(n)
    # 1 - rho^2 computed as (1-rho)(1+rho) keeps precision near rho = 1
    return reg_incomplete_beta((1.0 - rho) * (1.0 + rho), (n - 2) / 2.0, 0.5)


def xi(p: int, n: int, rho: float) -> float:
    """Expected null discovery count ``p * P0(rho, n)``."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    return p * p0(rho, n)


def pvalue(p: int, n: int, rho_i: float) -> float:
    """Poisson-approximation p-value ``1 - exp(-xi)`` of a variable whose
    screening score is ``rho_i``."""
    return -math.expm1(-xi(p, n, rho_i))


def rho_for_xi(p: int, n: int, target: float) -> float:
    """Threshold at which the expected null discovery count equals ``target``."""
    if not 0.0 < target < p:
        raise DomainError(f"target must lie in (0, p), got {target}")
    return brentq(lambda r: xi(p, n, r) - target, 0.0, 1.0, xtol=1e-15, rtol=1e-15)


def xi_slope(p: int, n: int, rho: float) -> float:
    """Analytic derivative of ``xi`` with respect to ``rho`` on (0, 1)."""
    _check_n(n)
    if not 0.0 < rho < 1.0:
        raise DomainError("slope is defined for rho in (0, 1)")
    a = (n - 2) / 2.0
    x = (1.0 - rho) * (1.0 + rho)
    return -2.0 * p * math.exp((a - 1.0) * math.log(x) - _log_beta(a, 0.5))


def critical_threshold(p: int, n: int, method: str = "formula") -> float:
    """Critical screening threshold.

    ``method="formula"``: ``sqrt(1 - (a_n p)^(-2/(n-4)))`` with ``a_n`` the
    sphere area. ``method="slope"``: the exact root of
    ``d xi / d rho = -p`` on (0, 1), which does not depend on ``p``.
    """
    _check_n(n)
    if n <= 4:
        raise DomainError(f"critical threshold needs n >= 5, got n={n}")
    if method == "formula":
        an_p = sphere_area(n) * p
        if an_p <= 1.0:
            raise DomainError(f"a_n * p = {an_p:.4g} must exceed 1")
        return math.sqrt(-math.expm1(-2.0 / (n - 4) * math.log(an_p)))
    if method == "slope":
        a = (n - 2) / 2.0
        # -2 p x^(a-1) / B(a, 1/2) = -p  =>  x = (B(a, 1/2) / 2)^(1/(a-1))
        log_x = (_log_beta(a, 0.5) - math.log(2.0)) / (a - 1.0)
        if log_x >= 0.0:
            raise DomainError(f"d xi / d rho = -p has no root in (0, 1) for n={n}")
        return math.sqrt(-math.expm1(log_x))
    raise DomainError(f"unknown method {method!r}")


def limit_e(p: int, n: int, rho: float) -> float:
    """Finite-p term ``p (1 - rho^2)^((n-2)/2)`` of the threshold sequence."""
    _check_rho(rho)
    return p * ((1.0 - rho) * (1.0 + rho)) ** ((n - 2) / 2.0)


def zeta(e_n: float, n: int) -> float:
    """Limit rate ``e_n a_n / (n - 2)`` for a user-supplied limit ``e_n``."""
    _check_n(n)
    return e_n * sphere_area(n) / (n - 2)


@dataclass(frozen=True)
class DiscoveryStats:
    p: int
    n: int
    rho: float
    p0: float
    xi: float
    rho_c: Optional[float]
    a_n: float


def discovery_stats(p: int, n: int, rho: float, method: str = "formula") -> DiscoveryStats:
    prob = p0(rho, n)
    try:
        rc = critical_threshold(p, n, method)
    except DomainError:
        rc = None
    return DiscoveryStats(p, n, rho, prob, p * prob, rc, sphere_area(n))


# ---------------------------------------------------------------------------
# von Mises-Fisher J-function
# ---------------------------------------------------------------------------

def log_bessel_i(order: float, x: float, tol: float = 1e-12, max_terms: int = 10000) -> float:
    """log of the modified Bessel function of the first kind by power series.

    Summation ``sum_l (x/2)^(2l+m) / (l! Gamma(l+m+1))`` in log space, stopped
    once a term past the peak falls below ``tol`` times the partial sum.
    """
    if x < 0 or order < 0:
        raise DomainError("log_bessel_i needs x >= 0 and order >= 0")
    if x == 0.0:
        return 0.0 if order == 0 else -math.inf
    log_half = math.log(x / 2.0)
    log_term = order * log_half - math.lgamma(order + 1.0)
    log_sum = log_term
    log_tol = math.log(tol)
    for l in range(1, max_terms + 1):
        log_term += 2.0 * log_half - math.log(l) - math.log(l + order)
        hi, lo = (log_sum, log_term) if log_sum >= log_term else (log_term, log_sum)
        log_sum = hi + math.log1p(math.exp(lo - hi))
        # terms decrease once l (l + order) > (x/2)^2
        if l * (l + order) > (x / 2.0) ** 2 and log_term - log_sum < log_tol:
            return log_sum
    raise ConvergenceFailure(f"Bessel series needs more than {max_terms} terms (x={x})")


def vmf_log_normalizer(kappa: float, n: int, tol: float = 1e-12,
                       max_terms: int = 10000) -> float:
    """log C_{n-1}(kappa) for the vMF density on S_{n-2} in R^(n-1).

    ``kappa = 0`` is the uniform density ``1 / a_n``.
    """
    _check_n(n)
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    if kappa == 0.0:
        return -math.log(sphere_area(n))
    d = n - 1
    nu = d / 2.0 - 1.0
    return ((nu * math.log(kappa)) - (d / 2.0) * math.log(2.0 * math.pi)
            - log_bessel_i(nu, kappa, tol, max_terms))


def j_separable_vmf(kappa1: float, kappa2: float, alpha1: int, alpha2: int, n: int,
                    tol: float = 1e-12, max_terms: int = 10000) -> float:
    """J of a product of two vMF marginals on S_{n-2} with mean directions
    ``alpha_i * 1 / sqrt(n-1)``, ``alpha_i`` in {-1, +1}.

    ``J = a_n C(kappa1) C(kappa2) / C(|alpha1 kappa1 + alpha2 kappa2|)``.
    """
    if alpha1 not in (-1, 1) or alpha2 not in (-1, 1):
        raise DomainError("alpha1 and alpha2 must be -1 or +1")
    if kappa1 < 0 or kappa2 < 0:
        raise DomainError("concentrations must be >= 0")
    if kappa1 == 0.0 and kappa2 == 0.0:
        return 1.0
    kappa_sum = abs(alpha1 * kappa1 + alpha2 * kappa2)
    log_j = (math.log(sphere_area(n))
             + vmf_log_normalizer(kappa1, n, tol, max_terms)
             + vmf_log_normalizer(kappa2, n, tol, max_terms)
             - vmf_log_normalizer(kappa_sum, n, tol, max_terms))
    return math.exp(log_j)


def coherency_diagnostic(ux: UScoreSet, p: Optional[int] = None) -> float:
    """Operator norm of ``(n-1)/p U U^T - I``; small when rows of the U-score
    matrix are nearly orthogonal with equal energy."""
    if p is None:
        p = ux.p
    u = ux.scores
    m = (u.shape[0] / p) * (u @ u.T) - np.eye(u.shape[0])
    return float(np.max(np.abs(np.linalg.eigvalsh(m))))
