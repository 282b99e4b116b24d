"""Trial treatment-effect estimation augmented with shifted external controls."""

__version__ = "0.1.0"

from .data import CsvSchema, Dataset, Record, concat, load_csv, split_half, write_csv
from .estimators import (Estimate, InfluenceValues, Nuisances, ShrinkageDiagnostics, analyze,
                         shrink, shrink_combined, tau0_aug, tau1_aug, tau_gold, tau_trial_dr)
from .exceptions import ShiftFuseError
from .nuisance import (FeatureBasis, LogisticModel, OutcomeModel, estimate_pi, fit_k,
                       fit_logistic, fit_outcome, fit_rho)
from .shift import ShiftWeights, eval_weights, true_gaussian_k, true_gaussian_rho
from .sim import DGPSpec, ScenarioSpec, generate, run_experiment1, run_experiment2, true_tau
