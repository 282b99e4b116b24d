"""Synthetic data and the two Monte Carlo experiments.

The default :class:`DGPSpec` is the univariate Gaussian design with

    trial  X ~ N(1.5, 0.8^2),   Y_t | x ~ N(mu_t(x), 0.8^2)
    EC     X ~ N(1, 1),         Y   | x ~ N(0.5 + mu_0(x), 0.8^2)
    mu_1(x) = 2 + x + 0.6 e^x,  mu_0(x) = 1 + 1.5 x + 0.5 e^x
    n = 1500, N = 3500, pi = 0.5

Experiment 1 varies how much information about the shift is available
(none, validation samples of several sizes, known shift); experiment 2
varies which working models are misspecified.
"""

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .estimators import AUGMENTED, SHRINKAGE, TRIAL_DR, Nuisances, analyze
from .exceptions import ConfigError, ShiftFuseError, SizeError
from .nuisance import (INTERCEPT, OUTCOME, FeatureBasis, exp, fit_k, fit_outcome,
                       fit_rho, linear)
from .shift import K_BASIS, RHO_BASIS, true_gaussian_k, true_gaussian_rho

__all__ = ["DGPSpec", "ScenarioSpec", "MCSummary", "SummaryRow", "generate", "true_tau",
           "run_experiment1", "run_experiment2", "default_scenarios", "regime_name",
           "worker_count", "MU_BASIS", "MU_BASIS_MIS", "K_BASIS_MIS", "RHO_BASIS_MIS"]

MU_BASIS = FeatureBasis([INTERCEPT, linear(0), exp(0)])
MU_BASIS_MIS = FeatureBasis([INTERCEPT, exp(0)])
K_BASIS_MIS = FeatureBasis([INTERCEPT, linear(0)])
RHO_BASIS_MIS = FeatureBasis([INTERCEPT, linear(0), OUTCOME])

ESTIMATORS = (("trial-only", TRIAL_DR), ("augmented", AUGMENTED), ("shrinkage", SHRINKAGE))
ESTIMANDS = ("tau1", "tau0", "tau")


@dataclass(frozen=True)
class DGPSpec:
    trial_x: Tuple[float, float] = (1.5, 0.8)
    ec_x: Tuple[float, float] = (1.0, 1.0)
    mu1_coef: Tuple[float, float, float] = (2.0, 1.0, 0.6)
    mu0_coef: Tuple[float, float, float] = (1.0, 1.5, 0.5)
    outcome_sd: float = 0.8
    ec_offset: float = 0.5
    n: int = 1500
    N: int = 3500
    pi: float = 0.5

    def __post_init__(self):
        if self.trial_x[1] <= 0 or self.ec_x[1] <= 0 or self.outcome_sd < 0:
            raise ConfigError("standard deviations must be positive")
        if not 0 < self.n < self.N:
            raise ConfigError(f"need 0 < n < N, got n={self.n}, N={self.N}")
        if not 0 < self.pi < 1:
            raise ConfigError(f"pi must be in (0, 1), got {self.pi}")

    def scaled(self, multiplier):
        """Same design with both sample sizes multiplied (at least one row each)."""
        n = max(1, int(round(self.n * multiplier)))
        N = max(n + 1, int(round(self.N * multiplier)))
        return replace(self, n=n, N=N)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("trial_x", "ec_x", "mu1_coef", "mu0_coef"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown DGP fields: {sorted(unknown)}")
        return cls(**d)


def _mu(coef, x):
    c0, c1, c2 = coef
    return c0 + c1 * x + c2 * np.exp(x)


def generate(dgp, seed):
    """Draw a pooled dataset: ``n`` trial rows followed by ``N - n`` EC rows."""
    rng = np.random.default_rng(seed)
    n, m = dgp.n, dgp.N - dgp.n
    xt = rng.normal(dgp.trial_x[0], dgp.trial_x[1], n)
    tt = (rng.random(n) < dgp.pi).astype(np.int8)
    yt = np.where(tt == 1, _mu(dgp.mu1_coef, xt), _mu(dgp.mu0_coef, xt))
    yt = yt + dgp.outcome_sd * rng.standard_normal(n)
    xe = rng.normal(dgp.ec_x[0], dgp.ec_x[1], m)
    ye = dgp.ec_offset + _mu(dgp.mu0_coef, xe) + dgp.outcome_sd * rng.standard_normal(m)
    r = np.concatenate([np.ones(n, np.int8), np.zeros(m, np.int8)])
    t = np.concatenate([tt, np.zeros(m, np.int8)])
    return Dataset(r, t, np.concatenate([xt, xe])[:, None], np.concatenate([yt, ye]), ("x",))


def true_tau(dgp):
    """Closed-form (tau1, tau0, tau) using ``E exp(X) = exp(m + s^2 / 2)``."""
    m, s = dgp.trial_x
    ee = math.exp(m + s * s / 2)
    t1 = dgp.mu1_coef[0] + dgp.mu1_coef[1] * m + dgp.mu1_coef[2] * ee
    t0 = dgp.mu0_coef[0] + dgp.mu0_coef[1] * m + dgp.mu0_coef[2] * ee
    return t1, t0, t1 - t0


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "i"
    mu_correct: bool = True
    k_correct: bool = True
    rho_correct: bool = True
    validation_multiplier: float = 0.0
    weight_source: str = "fitted"

    def __post_init__(self):
        if self.validation_multiplier < 0:
            raise ConfigError("validation multiplier must be >= 0")
        if self.weight_source not in ("fitted", "oracle"):
            raise ConfigError(f"weight_source must be fitted or oracle, got {self.weight_source!r}")

    @property
    def bases(self):
        return (K_BASIS if self.k_correct else K_BASIS_MIS,
                RHO_BASIS if self.rho_correct else RHO_BASIS_MIS,
                MU_BASIS if self.mu_correct else MU_BASIS_MIS)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_scenarios():
    """(i) all correct, (ii) mu wrong, (iii) k and rho wrong, (iv) all wrong."""
    return [ScenarioSpec("i", True, True, True),
            ScenarioSpec("ii", False, True, True),
            ScenarioSpec("iii", True, False, False),
            ScenarioSpec("iv", False, False, False)]


def regime_name(multiplier):
    if multiplier == "oracle":
        return "oracle"
    if multiplier == 0:
        return "no-validation"
    return f"validation-{multiplier:g}"


# --- one replication ---------------------------------------------------------------

def _collect(analysis):
    """(estimator, estimand, value/se) array of shape (3, 3, 2)."""
    out = np.empty((len(ESTIMATORS), len(ESTIMANDS), 2))
    for i, (_, method) in enumerate(ESTIMATORS):
        for j, arm in enumerate(ESTIMANDS):
            e = analysis.get(method, arm)
            out[i, j] = e.value, e.se
    return out


def _run_cell(primary, dgp, scenario, val_seed, mu1, mu0):
    k_basis, rho_basis, _ = scenario.bases
    if scenario.weight_source == "oracle":
        nuis = Nuisances(true_gaussian_k(dgp), true_gaussian_rho(dgp), mu1, mu0, "oracle")
        return analyze(primary, nuis)
    if scenario.validation_multiplier > 0:
        val = generate(dgp.scaled(scenario.validation_multiplier), val_seed)
        nuis = Nuisances(fit_k(val, k_basis), fit_rho(val, rho_basis), mu1, mu0, "validation")
        return analyze(primary, nuis, validation=val)
    nuis = Nuisances(fit_k(primary, k_basis), fit_rho(primary, rho_basis), mu1, mu0, "primary")
    return analyze(primary, nuis)


def _replication(task):
    """All cells of one replication; failed cells are NaN."""
    dgp, scenarios, seed = task
    primary_seed, *cell_seeds = seed.spawn(1 + len(scenarios))
    primary = generate(dgp, primary_seed)
    out = np.full((len(scenarios), len(ESTIMATORS), len(ESTIMANDS), 2), np.nan)
    mu_cache = {}
    for c, (sc, cs) in enumerate(zip(scenarios, cell_seeds)):
        try:
            mu_basis = sc.bases[2]
            if mu_basis not in mu_cache:
                mu_cache[mu_basis] = (fit_outcome(primary, 1, mu_basis),
                                      fit_outcome(primary, 0, mu_basis))
            out[c] = _collect(_run_cell(primary, dgp, sc, cs, *mu_cache[mu_basis]))
        except ShiftFuseError:
            pass
    return out


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("SHIFTFUSE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run(dgp, scenarios, replications, seed, workers):
    if replications < 1:
        raise SizeError("need at least one replication")
    seeds = np.random.SeedSequence(seed).spawn(replications)
    tasks = [(dgp, tuple(scenarios), s) for s in seeds]
    workers = worker_count(workers)
    if workers == 1:
        results = [_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replication, tasks, chunksize=max(1, replications // (8 * workers))))
    return np.stack(results)  # (reps, cells, estimators, estimands, 2)


# --- summaries ---------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    regime: str
    estimator: str
    estimand: str
    reps: int
    mean: float
    bias: float
    sd: float
    mean_se: float
    coverage: float


CSV_COLUMNS = ("regime", "estimator", "estimand", "reps", "mean", "bias", "sd",
               "mean_se", "coverage")


@dataclass
class MCSummary:
    """Per (regime, estimator, estimand) summaries plus the raw replicate values.

    ``values`` has shape (reps, regimes, estimators, estimands, 2) where the
    last axis is (estimate, se); failed replications are NaN.
    """

    rows: List[SummaryRow]
    regimes: List[str]
    values: np.ndarray
    truth: Tuple[float, float, float]
    failures: Dict[str, int] = field(default_factory=dict)

    def row(self, regime, estimator, estimand):
        for r in self.rows:
            if (r.regime, r.estimator, r.estimand) == (regime, estimator, estimand):
                return r
        raise KeyError((regime, estimator, estimand))

    def estimates(self, regime, estimator, estimand):
        c = self.regimes.index(regime)
        i = [e for e, _ in ESTIMATORS].index(estimator)
        j = ESTIMANDS.index(estimand)
        v = self.values[:, c, i, j, 0]
        return v[np.isfinite(v)]

    def write_csv(self, stream, comment=None):
        if comment:
            stream.write(f"# {comment}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.regime, r.estimator, r.estimand, r.reps,
                        *(repr(float(getattr(r, c))) for c in CSV_COLUMNS[4:])])


def _summarize(values, regimes, truth):
    rows = []
    failures = {}
    for c, regime in enumerate(regimes):
        failures[regime] = int(np.count_nonzero(~np.isfinite(values[:, c, 0, 0, 0])))
        for i, (ename, _) in enumerate(ESTIMATORS):
            for j, arm in enumerate(ESTIMANDS):
                v = values[:, c, i, j, 0]
                s = values[:, c, i, j, 1]
                ok = np.isfinite(v) & np.isfinite(s)
                v, s = v[ok], s[ok]
                k = len(v)
                if k == 0:
                    rows.append(SummaryRow(regime, ename, arm, 0, *([math.nan] * 5)))
                    continue
                mean = math.fsum(v) / k
                sd = math.sqrt(math.fsum((v - mean) ** 2) / (k - 1)) if k > 1 else 0.0
                cover = np.count_nonzero(np.abs(v - truth[j]) <= 1.959964 * s) / k
                rows.append(SummaryRow(regime, ename, arm, k, mean, mean - truth[j], sd,
                                       math.fsum(s) / k, cover))
    return rows, failures


def run_experiment1(dgp=None, multipliers=(0, 0.5, 1, 2, 4), replications=2000, seed=0,
                    workers=None):
    """Validation-information sweep with correctly specified working models.

    One regime per multiplier (0 = shift models fitted on the primary sample,
    otherwise on a fresh validation draw ``multiplier`` times the primary size)
    plus the known-shift oracle.  All regimes of a replication share the same
    primary sample.
    """
    dgp = dgp or DGPSpec()
    scenarios = [ScenarioSpec(regime_name(m), validation_multiplier=m) for m in multipliers]
    scenarios.append(ScenarioSpec("oracle", weight_source="oracle"))
    regimes = [regime_name(m) for m in multipliers] + ["oracle"]
    values = _run(dgp, scenarios, replications, seed, workers)
    truth = true_tau(dgp)
    rows, failures = _summarize(values, regimes, truth)
    return MCSummary(rows, regimes, values, truth, failures)


def run_experiment2(dgp=None, scenarios=None, replications=2000, seed=0, workers=None):
    """Working-model misspecification scenarios; regimes are ``scenario-<name>``."""
    dgp = dgp or DGPSpec()
    scenarios = list(scenarios or default_scenarios())
    regimes = [f"scenario-{s.name}" for s in scenarios]
    values = _run(dgp, scenarios, replications, seed, workers)
    truth = true_tau(dgp)
    rows, failures = _summarize(values, regimes, truth)
    return MCSummary(rows, regimes, values, truth, failures)
