"""Parametric working models for the shift weights and outcome regressions.

``k(x) = P(R=1 | x)`` and ``rho(x, y) = P(R=1 | x, y, T=0)`` are logistic
regressions over a declared :class:`FeatureBasis`; ``mu_t(x)`` is a
least-squares regression fitted within arm ``t``.
"""

import json
import re
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import expit

from .exceptions import (DimensionError, SeparationError, SingularityError,
                         SizeError, UsageError)

__all__ = ["Term", "FeatureBasis", "LogisticModel", "OutcomeModel", "design_row",
           "design_matrix", "fit_logistic", "fit_outcome", "fit_k", "fit_rho",
           "estimate_pi", "TRIAL_ONLY", "POOLED"]

TRIAL_ONLY = "trial"
POOLED = "pooled"

_KINDS = ("intercept", "linear", "square", "exp", "outcome")


class Term(NamedTuple):
    kind: str
    index: Optional[int] = None

    def label(self, names=None):
        if self.kind == "intercept":
            return "1"
        if self.kind == "outcome":
            return "y"
        name = names[self.index] if names else f"x{self.index}"
        return {"linear": name, "square": f"{name}^2", "exp": f"exp({name})"}[self.kind]


INTERCEPT = Term("intercept")
OUTCOME = Term("outcome")


def linear(j):
    return Term("linear", j)


def square(j):
    return Term("square", j)


def exp(j):
    return Term("exp", j)


_TERM_RE = re.compile(r"^(?:exp\((?P<e>[^)]+)\)|(?P<s>[^\^]+)\^2|(?P<l>.+))$")


class FeatureBasis(tuple):
    """Ordered, duplicate-free tuple of :class:`Term`."""

    def __new__(cls, terms):
        terms = tuple(Term(*t) for t in terms)
        if not terms:
            raise UsageError("a feature basis needs at least one term")
        if len(set(terms)) != len(terms):
            raise UsageError(f"duplicate terms in basis {terms}")
        for t in terms:
            if t.kind not in _KINDS:
                raise UsageError(f"unknown term kind {t.kind!r}")
            if (t.kind in ("intercept", "outcome")) != (t.index is None):
                raise UsageError(f"bad term {t}")
        return super().__new__(cls, terms)

    @property
    def has_outcome(self):
        return OUTCOME in self

    @property
    def max_index(self):
        return max((t.index for t in self if t.index is not None), default=-1)

    def labels(self, names=None):
        return [t.label(names) for t in self]

    @classmethod
    def parse(cls, specs, names):
        """Build a basis from strings such as ``"1"``, ``"age"``, ``"age^2"``,
        ``"exp(x0)"`` or ``"y"``; covariates are looked up in ``names``."""
        names = list(names)
        terms = []
        for s in specs:
            s = s.strip()
            if s == "1":
                terms.append(INTERCEPT)
                continue
            if s == "y":
                terms.append(OUTCOME)
                continue
            m = _TERM_RE.match(s)
            if m is None:
                raise UsageError(f"empty basis term in {list(specs)!r}")
            kind, name = next((k, v) for k, v in zip(("exp", "square", "linear"),
                                                     (m["e"], m["s"], m["l"])) if v)
            if name not in names:
                raise UsageError(f"basis term {s!r} names unknown covariate {name!r}")
            terms.append(Term(kind, names.index(name)))
        return cls(terms)

    @classmethod
    def polynomial(cls, js, square_terms=False, exp_terms=False, outcome=False):
        terms = [INTERCEPT] + [linear(j) for j in js]
        if square_terms:
            terms += [square(j) for j in js]
        if exp_terms:
            terms += [exp(j) for j in js]
        if outcome:
            terms.append(OUTCOME)
        return cls(terms)


def _term_column(term, x, y):
    if term.kind == "intercept":
        return np.ones(x.shape[0])
    if term.kind == "outcome":
        return y
    c = x[:, term.index]
    if term.kind == "linear":
        return c
    if term.kind == "square":
        return c * c
    return np.exp(c)


def design_matrix(basis, x, y=None):
    """Feature matrix of shape (rows, len(basis)), columns in basis order."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if basis.max_index >= x.shape[1]:
        raise DimensionError(f"basis uses covariate {basis.max_index} but p={x.shape[1]}")
    if basis.has_outcome:
        if y is None:
            raise UsageError("basis has an Outcome term but no outcome was supplied")
        y = np.asarray(y, dtype=float).reshape(-1)
    return np.column_stack([_term_column(t, x, y) for t in basis])


def design_row(basis, x, y=None):
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, -1)
    return design_matrix(basis, x, None if y is None else [y])[0]


def _basis_to_json(basis):
    return [[t.kind, t.index] for t in basis]


def _basis_from_json(items):
    return FeatureBasis(Term(k, i) for k, i in items)


@dataclass(frozen=True, eq=False)
class LogisticModel:
    basis: FeatureBasis
    coef: np.ndarray
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float).reshape(-1)
        if len(coef) != len(self.basis):
            raise DimensionError(f"{len(coef)} coefficients for {len(self.basis)} terms")
        if not np.isfinite(coef).all():
            raise UsageError("logistic coefficients must be finite")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def design(self, x, y=None):
        return design_matrix(self.basis, x, y)

    def predict(self, x, y=None):
        return expit(self.design(x, y) @ self.coef)

    def to_dict(self):
        return {"basis": _basis_to_json(self.basis), "coef": self.coef.tolist(),
                "converged": bool(self.converged), "iterations": int(self.iterations)}

    @classmethod
    def from_dict(cls, d):
        return cls(_basis_from_json(d["basis"]), d["coef"], d.get("converged", True),
                   d.get("iterations", 0))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True, eq=False)
class OutcomeModel:
    arm: int
    basis: FeatureBasis
    coef: np.ndarray

    def __post_init__(self):
        if self.basis.has_outcome:
            raise UsageError("outcome-model basis cannot contain the Outcome term")
        coef = np.array(self.coef, dtype=float).reshape(-1)
        if len(coef) != len(self.basis) or not np.isfinite(coef).all():
            raise UsageError("outcome-model coefficients must be finite and match the basis")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def predict(self, x):
        return design_matrix(self.basis, x) @ self.coef

    def to_dict(self):
        return {"arm": self.arm, "basis": _basis_to_json(self.basis), "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["arm"], _basis_from_json(d["basis"]), d["coef"])

    @classmethod
    def constant(cls, arm, value):
        return cls(arm, FeatureBasis([INTERCEPT]), [value])


def log_likelihood(D, labels, coef, weights=None):
    eta = D @ coef
    ll = labels * eta - np.logaddexp(0.0, eta)
    return float(ll.sum() if weights is None else ll @ weights)


def _check_rank(D, what):
    if D.shape[0] < D.shape[1] or np.linalg.matrix_rank(D) < D.shape[1]:
        raise SingularityError(f"{what}: design matrix is rank deficient "
                               f"({D.shape[0]} rows, {D.shape[1]} columns)")


def fit_logistic(D, labels, weights=None, basis=None, max_iter=100, score_tol=1e-8,
                 step_tol=1e-10):
    """Weighted logistic maximum likelihood by Newton-Raphson (IRLS).

    Parameters
    ----------
    D : ndarray, shape (rows, q)
        Feature matrix.
    labels : ndarray of {0, 1}
    weights : ndarray, optional
        Non-negative row weights (default 1).
    basis : FeatureBasis, optional
        Stored on the returned model; a generic basis of the right length is
        used when omitted.

    Returns
    -------
    LogisticModel

    Raises
    ------
    SeparationError
        A label class is empty, the coefficients diverge, the fitted linear
        predictor saturates on correctly classified rows, or the iteration
        cap is hit.
    SingularityError
        The design is rank deficient on the positively weighted rows.
    """
    D = np.asarray(D, dtype=float)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    w = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise UsageError("weights must be non-negative")
    if basis is None:
        basis = FeatureBasis([INTERCEPT] + [linear(j) for j in range(D.shape[1] - 1)])
    active = w > 0
    if not (labels[active] == 1).any() or not (labels[active] == 0).any():
        raise SeparationError("both labels need positively weighted rows; "
                              "the likelihood is unbounded otherwise")
    _check_rank(D[active], "logistic fit")

    coef = np.zeros(D.shape[1])
    ll = log_likelihood(D, labels, coef, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(D @ coef)
        score = D.T @ (w * (labels - p))
        if np.max(np.abs(score)) < score_tol:
            converged = True
            it -= 1
            break
        H = (D * (w * p * (1 - p))[:, None]).T @ D
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            raise SeparationError("information matrix became singular during IRLS") from None
        s = 1.0
        for _ in range(60):
            trial = coef + s * step
            ll_new = log_likelihood(D, labels, trial, w)
            if ll_new >= ll:
                break
            s *= 0.5
        else:
            # no ascent left along the Newton direction: at the optimum up to rounding
            converged = True
            break
        coef, ll = trial, ll_new
        if np.linalg.norm(coef) > 1e6:
            raise SeparationError("coefficients diverge (norm > 1e6): complete separation")
        if np.linalg.norm(s * step) < step_tol:
            converged = True
            break
    if not converged:
        raise SeparationError(f"IRLS did not converge in {max_iter} iterations")
    eta = D[active] @ coef
    lab = labels[active]
    if (np.abs(eta) > 35).any() and np.all((eta > 0) == (lab == 1)):
        raise SeparationError("fitted probabilities saturate at 0/1: complete separation")
    return LogisticModel(basis, coef, converged, it)


def logistic_influence(model, D, labels, weights=None):
    """Per-row MLE influence values ``I^{-1} score_i`` for a fitted model.

    ``I`` is the average information over all rows passed (zero-weight rows
    count in the average), so that ``sqrt(m)(coef - coef*)`` is approximated
    by ``m^{-1/2} sum_i phi_i``.
    """
    labels = np.asarray(labels, dtype=float)
    w = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=float)
    p = expit(D @ model.coef)
    info = (D * (w * p * (1 - p))[:, None]).T @ D / len(labels)
    scores = D * (w * (labels - p))[:, None]
    try:
        return np.linalg.solve(info, scores.T).T
    except np.linalg.LinAlgError:
        raise SingularityError("singular Fisher information") from None


def fit_outcome(ds, arm, basis, population=TRIAL_ONLY):
    """Least-squares regression of y on the basis within arm ``arm``.

    ``population="trial"`` restricts to trial rows; ``"pooled"`` also uses
    external controls (which only ever enter arm 0).
    """
    if basis.has_outcome:
        raise UsageError("outcome-model basis cannot contain the Outcome term")
    mask = ds.t == arm
    if population == TRIAL_ONLY:
        mask &= ds.r == 1
    elif population != POOLED:
        raise UsageError(f"unknown population {population!r}")
    if not mask.any():
        raise SizeError(f"no rows with t={arm} in the {population} sample")
    D = design_matrix(basis, ds.x[mask])
    _check_rank(D, f"outcome model for arm {arm}")
    coef, *_ = np.linalg.lstsq(D, ds.y[mask], rcond=None)
    return OutcomeModel(arm, basis, coef)


def fit_k(ds, basis):
    """Trial-membership model ``P(R=1 | x)`` over all rows."""
    if basis.has_outcome:
        raise UsageError("k-model basis cannot contain the Outcome term")
    return fit_logistic(design_matrix(basis, ds.x), ds.r, basis=basis)


def rho_rows(ds):
    return ds.t == 0


def fit_rho(ds, basis):
    """``P(R=1 | x, y, T=0)``, fitted on the untreated rows only."""
    if not basis.has_outcome:
        raise UsageError("rho-model basis must contain the Outcome term")
    u = rho_rows(ds)
    return fit_logistic(design_matrix(basis, ds.x[u], ds.y[u]), ds.r[u], basis=basis)


def estimate_pi(ds):
    """Share of treated rows within the trial sample."""
    n = ds.n
    if n == 0:
        raise SizeError("no trial rows: treatment probability undefined")
    return float(ds.t[ds.r == 1].sum()) / n
