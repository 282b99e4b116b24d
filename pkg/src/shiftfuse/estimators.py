"""Trial-only, EC-augmented and shrinkage estimators of the arm means.

Estimands are the trial-population means ``tau1``, ``tau0`` and their
difference ``tau``.  Every estimator here is a sample mean of an estimating
function, so variances come from influence values:

* trial-only (doubly robust) uses
  ``psi~_1 = RT/(kappa pi) (Y - mu1) + R/kappa (mu1 - tau1)``;
* the augmented estimator replaces ``R`` by the fitted ``k(X)`` in the second
  term and, for the control arm, the trial-control residual weight by
  ``(1 - T) rho(X, Y) / (1 - pi)`` so that external controls contribute.

Influence values are kept in an :class:`InfluenceValues` object whose
:meth:`~InfluenceValues.cov` method gives the covariance of any linear
combination of the four estimators, optionally including the extra
variability from estimating the shift models on a separate sample.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional

import numpy as np

from .exceptions import DomainError, ShiftFuseError, SizeError, UsageError
from .nuisance import (LogisticModel, OutcomeModel, design_matrix, estimate_pi,
                       logistic_influence, rho_rows)
from .shift import ShiftWeights, a_from_k, ab_from_rho, calibration_terms, eval_weights

__all__ = ["Z975", "Estimate", "ShrinkageDiagnostics", "InfluenceValues",
           "ValidationVariance", "Nuisances", "tau_gold", "tau_trial_dr", "tau1_aug",
           "tau0_aug", "influence_values", "var_plugin", "primary_correction",
           "var_validation", "shrink", "shrink_combined", "analyze", "Analysis",
           "bootstrap_se", "calibration_coefficients", "stratified_resample"]

Z975 = 1.959964

GOLD = "GoldStandard"
TRIAL_DR = "TrialDR"
AUGMENTED = "Augmented"
SHRINKAGE = "Shrinkage"
SHRINKAGE_COMBINED = "ShrinkageCombined"

ARMS = ("tau1", "tau0", "tau")


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    method: str
    arm: str
    variant: str = ""

    @property
    def ci(self):
        return (self.value - Z975 * self.se, self.value + Z975 * self.se)

    def to_dict(self):
        lo, hi = self.ci
        return {"estimand": self.arm, "method": self.method, "variant": self.variant,
                "value": self.value, "se": self.se, "ci": [lo, hi]}


@dataclass(frozen=True)
class ShrinkageDiagnostics:
    lambda_star: float
    delta: float
    lambda_n: float
    var_diff: float
    cov_term: float
    sigma2: float
    var_tilde: float
    var_hat: float

    def to_dict(self):
        return {"lambda_star": self.lambda_star, "delta": self.delta,
                "lambda_n": self.lambda_n, "sigma2": self.sigma2}


@dataclass(frozen=True)
class Nuisances:
    """Fitted working models plus where the shift models came from
    (``"primary"``, ``"validation"`` or ``"oracle"``)."""

    k: LogisticModel
    rho: LogisticModel
    mu1: OutcomeModel
    mu0: OutcomeModel
    source: str = "primary"


# index of each estimator in the (tilde1, tilde0, hat1, hat0) coordinate system
_T1, _T0, _H1, _H0 = range(4)


def _weights(**kw):
    w = np.zeros(4)
    for k, v in kw.items():
        w[{"t1": _T1, "t0": _T0, "h1": _H1, "h0": _H0}[k]] = v
    return w


_TILDE = {"tau1": _weights(t1=1), "tau0": _weights(t0=1), "tau": _weights(t1=1, t0=-1)}
_HAT = {"tau1": _weights(h1=1), "tau0": _weights(h0=1), "tau": _weights(h1=1, h0=-1)}


@dataclass(frozen=True, eq=False)
class InfluenceValues:
    """Row-wise influence values on the primary sample.

    ``psi_tilde`` and ``psi`` have shape (2, N) with rows ordered (arm 1,
    arm 0).  ``grad`` (2, q) and ``param_cov`` (q, q) carry the first-order
    effect of shift-model parameters estimated on an independent sample:
    the augmented estimator of arm ``t`` picks up ``grad[t] @ delta`` with
    ``var(delta) = param_cov``.  Both are empty when there is no such sample.
    """

    psi_tilde: np.ndarray
    psi: np.ndarray
    kappa_hat: float
    pi_hat: float
    grad: np.ndarray = field(default_factory=lambda: np.zeros((2, 0)))
    param_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def N(self):
        return self.psi.shape[1]

    @property
    def psi_tilde1(self):
        return self.psi_tilde[0]

    @property
    def psi_tilde0(self):
        return self.psi_tilde[1]

    @property
    def psi1(self):
        return self.psi[0]

    @property
    def psi0(self):
        return self.psi[1]

    def rows(self, w):
        return (w[_T1] * self.psi_tilde[0] + w[_T0] * self.psi_tilde[1]
                + w[_H1] * self.psi[0] + w[_H0] * self.psi[1])

    def cov(self, wa, wb):
        """Covariance of two linear combinations of (tilde1, tilde0, hat1, hat0)."""
        N = self.N
        c = float(self.rows(wa) @ self.rows(wb)) / N ** 2
        if self.param_cov.size:
            ga = wa[_H1] * self.grad[0] + wa[_H0] * self.grad[1]
            gb = wb[_H1] * self.grad[0] + wb[_H0] * self.grad[1]
            c += float(ga @ self.param_cov @ gb)
        return c

    def var(self, w):
        return max(self.cov(w, w), 0.0)


def _arm_index(arm):
    return {"tau1": 0, "tau0": 1}[arm]


def _check_pi(pi_hat):
    if not 0.0 < pi_hat < 1.0:
        raise DomainError(f"treatment probability must be in (0, 1), got {pi_hat}")


def _se(psi):
    return math.sqrt(float(np.mean(psi ** 2)) / len(psi))


def tau_gold(ds):
    """Treated and control sample means within the trial.

    SEs are arm sample SDs (``ddof=1``; 0 for a singleton arm) over the square
    root of the arm size; the difference uses the sum of arm variances.
    """
    trial = ds.r == 1
    out = []
    for arm in (1, 0):
        yy = ds.y[trial & (ds.t == arm)]
        if yy.size == 0:
            raise SizeError(f"trial arm t={arm} is empty")
        sd = float(np.std(yy, ddof=1)) if yy.size > 1 else 0.0
        out.append((float(np.mean(yy)), sd / math.sqrt(yy.size)))
    (v1, s1), (v0, s0) = out
    return (Estimate(v1, s1, GOLD, "tau1"), Estimate(v0, s0, GOLD, "tau0"),
            Estimate(v1 - v0, math.hypot(s1, s0), GOLD, "tau"))


@dataclass(frozen=True, eq=False)
class _Parts:
    """Row-wise building blocks shared by all estimators."""

    r: np.ndarray
    k: np.ndarray
    rho0: np.ndarray      # rho on untreated rows, 0 on treated rows
    m1: np.ndarray
    m0: np.ndarray
    res1: np.ndarray      # r t (y - mu1) / pi
    res0_trial: np.ndarray  # r (1 - t) (y - mu0) / (1 - pi)
    res0_aug: np.ndarray    # (1 - t) rho (y - mu0) / (1 - pi)
    kappa: float
    pi: float

    @property
    def tilde(self):
        n = self.r.sum()
        return (float(np.sum(self.res1 + self.r * self.m1) / n),
                float(np.sum(self.res0_trial + self.r * self.m0) / n))

    @property
    def hat(self):
        sk = float(self.k.sum())
        if sk <= 0:
            raise DomainError("sum of k weights is zero")
        return (float(np.sum(self.res1 + self.k * self.m1) / sk),
                float(np.sum(self.res0_aug + self.k * self.m0) / sk))

    def psi_tilde(self, tau1, tau0):
        return np.vstack([(self.res1 + self.r * (self.m1 - tau1)) / self.kappa,
                          (self.res0_trial + self.r * (self.m0 - tau0)) / self.kappa])

    def psi(self, tau1, tau0):
        return np.vstack([(self.res1 + self.k * (self.m1 - tau1)) / self.kappa,
                          (self.res0_aug + self.k * (self.m0 - tau0)) / self.kappa])


def _parts(ds, pi_hat, mu1, mu0, weights=None):
    _check_pi(pi_hat)
    if ds.n == 0:
        raise SizeError("no trial rows")
    r = ds.r.astype(float)
    t = ds.t.astype(float)
    m1 = mu1.predict(ds.x) if mu1 is not None else np.zeros(ds.N)
    m0 = mu0.predict(ds.x) if mu0 is not None else np.zeros(ds.N)
    if weights is None:
        k = np.ones(ds.N)
        rho0 = np.zeros(ds.N)
    else:
        k = weights.k
        rho0 = weights.rho_or_zero()
    y = ds.y
    return _Parts(r=r, k=k, rho0=rho0, m1=m1, m0=m0,
                  res1=r * t * (y - m1) / pi_hat,
                  res0_trial=r * (1 - t) * (y - m0) / (1 - pi_hat),
                  res0_aug=(1 - t) * rho0 * (y - m0) / (1 - pi_hat),
                  kappa=ds.kappa_hat, pi=pi_hat)


def tau_trial_dr(ds, mu1, mu0, pi_hat):
    """Trial-only doubly robust estimates of (tau1, tau0, tau) with plug-in SEs."""
    P = _parts(ds, pi_hat, mu1, mu0)
    t1, t0 = P.tilde
    psi = P.psi_tilde(t1, t0)
    return (Estimate(t1, _se(psi[0]), TRIAL_DR, "tau1"),
            Estimate(t0, _se(psi[1]), TRIAL_DR, "tau0"),
            Estimate(t1 - t0, _se(psi[0] - psi[1]), TRIAL_DR, "tau"))


def _shift_weights(ds, k_model, rho_model=None):
    if isinstance(k_model, ShiftWeights):
        return k_model
    if rho_model is None:
        k = np.clip(k_model.predict(ds.x), 1e-12, 1 - 1e-12)
        return ShiftWeights(k, np.full(ds.N, np.nan))
    return eval_weights(ds, k_model, rho_model)


def tau1_aug(ds, k_model, mu1, pi_hat):
    """EC-augmented treated-arm mean

    ``sum_i [r_i t_i (y_i - mu1(x_i)) / pi + k(x_i) mu1(x_i)] / sum_i k(x_i)``.
    """
    P = _parts(ds, pi_hat, mu1, None, _shift_weights(ds, k_model))
    t1, _ = P.hat
    return Estimate(t1, _se(P.psi(t1, 0.0)[0]), AUGMENTED, "tau1")


def tau0_aug(ds, k_model, rho_model, mu0, pi_hat):
    """EC-augmented control-arm mean; every untreated row (trial or EC)
    contributes the residual ``rho(x, y) (y - mu0(x)) / (1 - pi)``."""
    P = _parts(ds, pi_hat, None, mu0, _shift_weights(ds, k_model, rho_model))
    _, t0 = P.hat
    return Estimate(t0, _se(P.psi(0.0, t0)[1]), AUGMENTED, "tau0")


def influence_values(ds, nuis, pi_hat, tau1, tau0, tilde_tau1=None, tilde_tau0=None,
                     weights=None):
    """Row-wise ``psi~_t`` (at the tilde values, default ``tau_t``) and ``psi_t``."""
    w = weights if weights is not None else eval_weights(ds, nuis.k, nuis.rho)
    P = _parts(ds, pi_hat, nuis.mu1, nuis.mu0, w)
    tt1 = tau1 if tilde_tau1 is None else tilde_tau1
    tt0 = tau0 if tilde_tau0 is None else tilde_tau0
    return InfluenceValues(P.psi_tilde(tt1, tt0), P.psi(tau1, tau0), P.kappa, pi_hat)


def var_plugin(iv, target, kind="hat"):
    """Plug-in SE ``sqrt(mean(psi^2) / N)`` for ``target`` in tau1/tau0/tau.

    ``kind="tilde"`` uses the trial-only influence values instead.
    """
    psi = iv.psi if kind == "hat" else iv.psi_tilde
    if target == "tau":
        return _se(psi[0] - psi[1])
    return _se(psi[_arm_index(target)])


def calibration_coefficients(ds, nuis, pi_hat, tau1, tau0, weights=None):
    """Coefficients ``(c1, c2, c3)`` with

        psi_1 = psi~_1 + c1 * term_a
        psi_0 = psi~_0 + c2 * term_a + c3 * term_ab

    where ``term_a``/``term_ab`` are :func:`shiftfuse.shift.calibration_terms`.
    Solving the identities row-wise gives ``c_t = -(1 - kappa) k (mu_t - tau_t) / kappa``
    and ``c3 = -(1 - kappa) rho (y - mu0) / {kappa (1 - pi)}``.
    """
    w = weights if weights is not None else eval_weights(ds, nuis.k, nuis.rho)
    kap = ds.kappa_hat
    m1 = nuis.mu1.predict(ds.x)
    m0 = nuis.mu0.predict(ds.x)
    c1 = -(1 - kap) * w.k * (m1 - tau1) / kap
    c2 = -(1 - kap) * w.k * (m0 - tau0) / kap
    c3 = -(1 - kap) * w.rho_or_zero() * (ds.y - m0) / (kap * (1 - pi_hat))
    return c1, c2, c3


# --- shift-model estimation corrections -------------------------------------------

def _gammas(ds, nuis, pi_hat, tau1, tau0, w):
    """Sample analogues of the derivatives of mean(psi_t) with respect to the
    k-model and rho-model coefficients."""
    kap = ds.kappa_hat
    Dk = design_matrix(nuis.k.basis, ds.x)
    dk = Dk * (w.k * (1 - w.k))[:, None]
    g1 = ((nuis.mu1.predict(ds.x) - tau1) / kap) @ dk / ds.N
    m0 = nuis.mu0.predict(ds.x)
    g0 = ((m0 - tau0) / kap) @ dk / ds.N
    u = rho_rows(ds)
    rho_u = w.rho[u]
    Dr = design_matrix(nuis.rho.basis, ds.x[u], ds.y[u]) * (rho_u * (1 - rho_u))[:, None]
    grho = ((ds.y[u] - m0[u]) / (kap * (1 - pi_hat))) @ Dr / ds.N
    return g1, g0, grho


def _shift_phi(sample, nuis):
    """Per-row MLE influence values of (alpha, beta) on the sample they were fit on."""
    Dk = design_matrix(nuis.k.basis, sample.x)
    phi_a = logistic_influence(nuis.k, Dk, sample.r)
    u = rho_rows(sample)
    y_fill = np.where(u, sample.y, 0.0)
    Dr = design_matrix(nuis.rho.basis, sample.x, y_fill)
    phi_b = logistic_influence(nuis.rho, Dr, sample.r, weights=u.astype(float))
    return np.hstack([phi_a, phi_b])


def primary_correction(ds, iv, nuis, tau1, tau0, weights=None):
    """Add the first-order effect of fitting k and rho on the primary sample itself.

    Returns a copy of ``iv`` whose augmented rows are
    ``psi_t + Gamma_t phi_i`` with ``phi_i`` the MLE influence values of the
    shift-model coefficients on the same rows.
    """
    w = weights if weights is not None else eval_weights(ds, nuis.k, nuis.rho)
    g1, g0, grho = _gammas(ds, nuis, iv.pi_hat, tau1, tau0, w)
    phi = _shift_phi(ds, nuis)
    qa = len(g1)
    psi = iv.psi.copy()
    psi[0] += phi[:, :qa] @ g1
    psi[1] += phi[:, :qa] @ g0 + phi[:, qa:] @ grho
    return replace(iv, psi=psi)


@dataclass(frozen=True, eq=False)
class ValidationVariance:
    gamma1: np.ndarray
    gamma0: np.ndarray
    gamma_rho: np.ndarray
    phi_var: np.ndarray
    xi_hat: float
    sigma2_val: Dict[str, float]

    def se(self, arm, N):
        return math.sqrt(self.sigma2_val[arm] / N)


def var_validation(primary, primary_iv, validation, nuis, pi_hat, tau1, tau0, weights=None):
    """Variance of the augmented estimators when k and rho were fitted on an
    independent validation sample of size ``m``.

    ``sigma2_t = mean(psi_t^2) + (N/m) G_t var(phi) G_t^T`` with
    ``G_1 = (Gamma_1, 0)`` and ``G_0 = (Gamma_0, Gamma_rho)``.
    """
    if validation.N == 0:
        raise SizeError("validation sample is empty")
    w = weights if weights is not None else eval_weights(primary, nuis.k, nuis.rho)
    g1, g0, grho = _gammas(primary, nuis, pi_hat, tau1, tau0, w)
    phi = _shift_phi(validation, nuis)
    m = validation.N
    phi_var = phi.T @ phi / m
    phi_var = (phi_var + phi_var.T) / 2
    xi = m / primary.N
    G1 = np.concatenate([g1, np.zeros(len(grho))])
    G0 = np.concatenate([g0, grho])
    sig = {}
    for arm, psi, G in (("tau1", primary_iv.psi1, G1), ("tau0", primary_iv.psi0, G0),
                        ("tau", primary_iv.psi1 - primary_iv.psi0, G1 - G0)):
        sig[arm] = float(np.mean(psi ** 2)) + float(G @ phi_var @ G) / xi
    return ValidationVariance(g1, g0, grho, phi_var, xi, sig)


def attach_validation(iv, vv):
    """Influence values carrying the validation-sample parameter uncertainty."""
    G1 = np.concatenate([vv.gamma1, np.zeros(len(vv.gamma_rho))])
    G0 = np.concatenate([vv.gamma0, vv.gamma_rho])
    m_over = 1.0 / (vv.xi_hat * iv.N)  # 1/m
    return replace(iv, grad=np.vstack([G1, G0]), param_cov=vv.phi_var * m_over)


# --- shrinkage ---------------------------------------------------------------------

def _shrink(tilde_value, hat_value, iv, wt, wh, arm, method):
    d = hat_value - tilde_value
    wd = wh - wt
    var_diff = iv.var(wd)
    cov_term = iv.cov(wd, wt)
    var_tilde = iv.var(wt)
    var_hat = iv.var(wh)
    cov_ht = iv.cov(wh, wt)
    if var_diff < 1e-14:
        lam_star, delta, sigma2 = 0.0, 1.0, var_tilde
    else:
        lam_star = -cov_term / var_diff
        delta = var_diff / (var_diff + d ** 4)
        sigma2 = (var_tilde * var_hat - cov_ht ** 2) / var_diff
    lam_n = delta * lam_star
    value = tilde_value + lam_n * d
    se = math.sqrt(max(min(sigma2, var_tilde), 0.0))
    diag = ShrinkageDiagnostics(lam_star, delta, lam_n, var_diff, cov_term, sigma2,
                                var_tilde, var_hat)
    return Estimate(value, se, method, arm), diag


def shrink(tau_tilde, tau_hat, iv, arm):
    """Adaptive shrinkage of the trial-only estimate toward the augmented one.

    ``lambda* = -cov(hat - tilde, tilde) / var(hat - tilde)`` is damped by
    ``delta = var(hat - tilde) / {var(hat - tilde) + (hat - tilde)^4}``, which
    vanishes when the two estimates disagree by more than sampling noise.
    Returns ``tilde + delta lambda* (hat - tilde)`` with SE
    ``sqrt(min(sigma2, var(tilde)))`` and the diagnostics.
    """
    if arm not in ("tau1", "tau0"):
        raise UsageError("shrink works per arm; use shrink_combined for tau")
    return _shrink(tau_tilde.value, tau_hat.value, iv, _TILDE[arm], _HAT[arm], arm, SHRINKAGE)


def shrink_combined(tau_tilde, tau_hat, iv):
    """Single shrinkage of the treatment-effect estimate (differenced influence values)."""
    return _shrink(tau_tilde.value, tau_hat.value, iv, _TILDE["tau"], _HAT["tau"], "tau",
                   SHRINKAGE_COMBINED)


def _shrink_difference(s1, d1, s0, d0, iv):
    """tau from separately shrunk arms; SE treats the lambdas as fixed."""
    l1, l0 = d1.lambda_n, d0.lambda_n
    w = _weights(t1=1 - l1, h1=l1, t0=-(1 - l0), h0=-l0)
    return Estimate(s1.value - s0.value, math.sqrt(iv.var(w)), SHRINKAGE, "tau")


# --- full analysis -----------------------------------------------------------------

@dataclass
class Analysis:
    """All estimates for one primary sample and one set of nuisances."""

    estimates: Dict[tuple, Estimate]
    diagnostics: Dict[tuple, ShrinkageDiagnostics]
    iv: InfluenceValues
    weights: ShiftWeights
    validation_variance: Optional[ValidationVariance] = None

    def get(self, method, arm):
        return self.estimates[(method, arm)]

    def value(self, method, arm):
        return self.estimates[(method, arm)].value

    def to_list(self, variant=""):
        out = []
        for key, est in self.estimates.items():
            d = est.to_dict()
            if variant:
                d["variant"] = variant
            diag = self.diagnostics.get(key)
            d["diagnostics"] = diag.to_dict() if diag else None
            out.append(d)
        return out


def analyze(ds, nuis, pi_hat=None, validation=None, correct_primary=None,
            combined=False, gold=False, weights=None):
    """Compute trial-only, augmented and shrinkage estimates of tau1, tau0, tau.

    Parameters
    ----------
    ds : Dataset
        Primary sample.
    nuis : Nuisances
    validation : Dataset, optional
        Independent sample the shift models were fitted on; switches the
        augmented variances to the validation-corrected form.
    correct_primary : bool, optional
        Add the estimated-shift-model term when k and rho were fitted on
        ``ds`` itself.  Defaults to ``nuis.source == "primary"``.
    combined : bool
        Also report the single shrinkage estimator of tau.
    gold : bool
        Also report the unadjusted arm means.
    """
    pi_hat = estimate_pi(ds) if pi_hat is None else pi_hat
    w = weights if weights is not None else eval_weights(ds, nuis.k, nuis.rho)
    P = _parts(ds, pi_hat, nuis.mu1, nuis.mu0, w)
    tt1, tt0 = P.tilde
    th1, th0 = P.hat
    iv = InfluenceValues(P.psi_tilde(tt1, tt0), P.psi(th1, th0), P.kappa, pi_hat)
    vv = None
    if validation is not None:
        vv = var_validation(ds, iv, validation, nuis, pi_hat, th1, th0, weights=w)
        iv = attach_validation(iv, vv)
    elif correct_primary if correct_primary is not None else nuis.source == "primary":
        iv = primary_correction(ds, iv, nuis, th1, th0, weights=w)

    est = {}
    diag = {}
    if gold:
        for e in tau_gold(ds):
            est[(GOLD, e.arm)] = e
    values = {"tau1": (tt1, th1), "tau0": (tt0, th0), "tau": (tt1 - tt0, th1 - th0)}
    for arm, (vt, vh) in values.items():
        est[(TRIAL_DR, arm)] = Estimate(vt, math.sqrt(iv.var(_TILDE[arm])), TRIAL_DR, arm)
        est[(AUGMENTED, arm)] = Estimate(vh, math.sqrt(iv.var(_HAT[arm])), AUGMENTED, arm)
    for arm in ("tau1", "tau0"):
        s, d = shrink(est[(TRIAL_DR, arm)], est[(AUGMENTED, arm)], iv, arm)
        est[(SHRINKAGE, arm)] = s
        diag[(SHRINKAGE, arm)] = d
    est[(SHRINKAGE, "tau")] = _shrink_difference(
        est[(SHRINKAGE, "tau1")], diag[(SHRINKAGE, "tau1")],
        est[(SHRINKAGE, "tau0")], diag[(SHRINKAGE, "tau0")], iv)
    if combined:
        s, d = shrink_combined(est[(TRIAL_DR, "tau")], est[(AUGMENTED, "tau")], iv)
        est[(SHRINKAGE_COMBINED, "tau")] = s
        diag[(SHRINKAGE_COMBINED, "tau")] = d
    return Analysis(est, diag, iv, w, vv)


# --- bootstrap ---------------------------------------------------------------------

def stratified_resample(ds, rng):
    """Row indices of a resample drawn with replacement within each (r, t) cell."""
    parts = []
    for cell in ((1, 1), (1, 0), (0, 0)):
        idx = np.flatnonzero((ds.r == cell[0]) & (ds.t == cell[1]))
        if idx.size:
            parts.append(rng.choice(idx, size=idx.size, replace=True))
    return np.sort(np.concatenate(parts))


def bootstrap_se(ds, estimator, B, seed, max_attempts=10):
    """Stratified nonparametric bootstrap SEs.

    ``estimator(ds) -> dict name -> value`` is re-run (refitting any nuisances
    it fits) on each resample.  Replicate ``b`` draws from the ``b``-th child
    of ``SeedSequence(seed)``, so increasing ``B`` keeps earlier replicates.
    A replicate whose estimator raises is redrawn up to ``max_attempts`` times.

    Returns
    -------
    se : dict name -> float
    replicates : dict name -> ndarray of shape (B,)
    """
    if B < 100:
        raise SizeError(f"bootstrap needs B >= 100, got {B}")
    children = np.random.SeedSequence(seed).spawn(B)
    reps = []
    for child in children:
        rng = np.random.default_rng(child)
        for attempt in range(max_attempts):
            try:
                reps.append(estimator(ds.take(stratified_resample(ds, rng))))
                break
            except ShiftFuseError:
                if attempt == max_attempts - 1:
                    raise
    names = list(reps[0])
    replicates = {k: np.array([rep[k] for rep in reps]) for k in names}
    se = {k: float(np.std(v, ddof=1)) for k, v in replicates.items()}
    return se, replicates
