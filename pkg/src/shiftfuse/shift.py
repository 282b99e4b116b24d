"""Shift-induced weights and the calibration identities they satisfy.

Covariate shift ``a(x) = q(x)/p(x)`` and concept shift
``b(x, y) = q(y|x)/p(y|x)`` are handled through their propensity
reparameterisations

    k(x)      = kappa / {kappa + (1 - kappa) a(x)}
    rho(x, y) = kappa (1 - pi) / {kappa (1 - pi) + (1 - kappa) a(x) b(x, y)}

where ``kappa`` is the trial share of the pooled sample and ``pi`` the trial
treatment probability.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DomainError, UnsupportedError
from .nuisance import (INTERCEPT, OUTCOME, FeatureBasis, LogisticModel, exp,
                       linear, rho_rows, square)

__all__ = ["ShiftWeights", "CLAMP", "eval_weights", "oracle_weights", "a_from_k",
           "k_from_a", "ab_from_rho", "rho_from_ab", "true_gaussian_k",
           "true_gaussian_rho", "log_b_coefficients", "calibration_terms",
           "calibration_residuals", "K_BASIS", "RHO_BASIS"]

CLAMP = 1e-12

K_BASIS = FeatureBasis([INTERCEPT, linear(0), square(0)])
RHO_BASIS = FeatureBasis([INTERCEPT, linear(0), square(0), exp(0), OUTCOME])


@dataclass(frozen=True, eq=False)
class ShiftWeights:
    """Row-wise ``k`` and ``rho`` values.

    ``rho`` is NaN on treated rows, where it is undefined.  ``clamped`` counts
    values that had to be pulled into ``[CLAMP, 1 - CLAMP]``.
    """

    k: np.ndarray
    rho: np.ndarray
    source: str = "fitted"
    clamped: int = 0

    def rho_or_zero(self):
        return np.where(np.isnan(self.rho), 0.0, self.rho)


def _clamp(v):
    lo, hi = CLAMP, 1.0 - CLAMP
    out = np.clip(v, lo, hi)
    return out, int(np.count_nonzero((v < lo) | (v > hi)))


def eval_weights(ds, k_model, rho_model, source="fitted"):
    """Evaluate fitted (or oracle) ``k`` on every row and ``rho`` on untreated rows."""
    for m in (k_model, rho_model):
        if m.basis.max_index >= ds.p:
            raise DimensionError(f"model basis needs covariate {m.basis.max_index}, p={ds.p}")
    k, nk = _clamp(k_model.predict(ds.x))
    rho = np.full(ds.N, np.nan)
    u = rho_rows(ds)
    rho_u, nr = _clamp(rho_model.predict(ds.x[u], ds.y[u]))
    rho[u] = rho_u
    return ShiftWeights(k, rho, source, nk + nr)


def _open_unit(name, v):
    v = np.asarray(v, dtype=float)
    if np.any(~((v > 0) & (v < 1))):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return v


def a_from_k(k, kappa):
    k = _open_unit("k", k)
    kappa = _open_unit("kappa", kappa)
    return kappa * (1 - k) / ((1 - kappa) * k)


def k_from_a(a, kappa):
    return kappa / (kappa + (1 - kappa) * np.asarray(a, dtype=float))


def ab_from_rho(rho, kappa, pi):
    rho = _open_unit("rho", rho)
    kappa = _open_unit("kappa", kappa)
    pi = _open_unit("pi", pi)
    return kappa * (1 - pi) * (1 - rho) / ((1 - kappa) * rho)


def rho_from_ab(ab, kappa, pi):
    c = kappa * (1 - pi)
    return c / (c + (1 - kappa) * np.asarray(ab, dtype=float))


def _check_gaussian(dgp):
    for attr in ("trial_x", "ec_x", "mu0_coef", "outcome_sd", "ec_offset", "n", "N", "pi"):
        if not hasattr(dgp, attr):
            raise UnsupportedError(f"closed-form oracle needs a Gaussian DGP (missing {attr})")
    ec_sd = getattr(dgp, "ec_outcome_sd", None)
    if ec_sd is not None and ec_sd != dgp.outcome_sd:
        raise UnsupportedError("closed-form oracle needs a common outcome variance; "
                               "unequal variances make log b quadratic in y")


def _log_a_coefficients(dgp):
    """(const, x, x^2) coefficients of log q(x)/p(x) for two normal laws."""
    m1, s1 = dgp.trial_x
    m0, s0 = dgp.ec_x
    quad = -0.5 / s0 ** 2 + 0.5 / s1 ** 2
    lin = m0 / s0 ** 2 - m1 / s1 ** 2
    const = math.log(s1 / s0) - m0 ** 2 / (2 * s0 ** 2) + m1 ** 2 / (2 * s1 ** 2)
    return np.array([const, lin, quad])


def log_b_coefficients(dgp):
    """(const, x, x^2, exp(x), y) coefficients of log b(x, y) under a location shift.

    With EC outcomes ``N(offset + mu0(x), s^2)`` against trial ``N(mu0(x), s^2)``,
    ``log b = offset (y - mu0(x)) / s^2 - offset^2 / (2 s^2)``.
    """
    _check_gaussian(dgp)
    c0, c1, c2 = dgp.mu0_coef
    d, s2 = dgp.ec_offset, dgp.outcome_sd ** 2
    return np.array([-d * c0 / s2 - d * d / (2 * s2), -d * c1 / s2, 0.0, -d * c2 / s2, d / s2])


def true_gaussian_k(dgp):
    """Exact ``k`` coefficients on ``[1, x, x^2]`` for the Gaussian family."""
    _check_gaussian(dgp)
    kappa = dgp.n / dgp.N
    coef = -_log_a_coefficients(dgp)
    coef[0] += math.log(kappa / (1 - kappa))
    return LogisticModel(K_BASIS, coef, True, 0)


def true_gaussian_rho(dgp):
    """Exact ``rho`` coefficients on ``[1, x, x^2, exp(x), y]`` for the Gaussian family."""
    _check_gaussian(dgp)
    kappa = dgp.n / dgp.N
    coef = -log_b_coefficients(dgp)
    coef[:3] -= _log_a_coefficients(dgp)
    coef[0] += math.log(kappa * (1 - dgp.pi) / (1 - kappa))
    return LogisticModel(RHO_BASIS, coef, True, 0)


def oracle_weights(ds, dgp):
    return eval_weights(ds, true_gaussian_k(dgp), true_gaussian_rho(dgp), source="oracle")


def calibration_terms(ds, w, pi, kappa=None):
    """Row-wise calibration contrasts.

    Returns ``(term_a, term_ab)`` with

        term_a  = (r / kappa) a(x) - (1 - r) / (1 - kappa)
        term_ab = r (1 - t) / {kappa (1 - pi)} a(x) b(x, y) - (1 - r) / (1 - kappa)

    ``a`` and ``a b`` are recovered from ``w`` with the same ``kappa`` and ``pi``.
    """
    kappa = ds.kappa_hat if kappa is None else kappa
    r = ds.r.astype(float)
    t = ds.t.astype(float)
    a = a_from_k(w.k, kappa)
    ec = (1 - r) / (1 - kappa)
    term_a = r / kappa * a - ec
    ctrl = (ds.r == 1) & (ds.t == 0)
    if np.isnan(w.rho[ctrl]).any():
        raise DomainError("rho is undefined on a trial-control row")
    ab = np.zeros(ds.N)
    ab[ctrl] = ab_from_rho(w.rho[ctrl], kappa, pi)
    term_ab = r * (1 - t) / (kappa * (1 - pi)) * ab - ec
    return term_a, term_ab


def calibration_residuals(ds, w, pi, g1, g2):
    """Sample means of the two calibration equations for test functions ``g1(x)``
    and ``g2(x, y)``; both are near zero when the weights are correct."""
    term_a, term_ab = calibration_terms(ds, w, pi)
    m1 = float(np.mean(term_a * np.asarray(g1(ds.x), dtype=float)))
    m2 = float(np.mean(term_ab * np.asarray(g2(ds.x, ds.y), dtype=float)))
    return m1, m2
