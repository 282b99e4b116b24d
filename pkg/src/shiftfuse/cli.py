"""Command-line front end.

    shiftfuse estimate|simulate|diagnose --config <path> [--seed N] [--out DIR]
    shiftfuse lalonde [--out DIR]

Every run reads one JSON config.  Outputs are staged in a temporary
directory and moved into ``--out`` only when all of them were written.
Errors are reported as a JSON object on standard error with a nonzero
exit status.
"""

import argparse
import hashlib
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import CsvSchema, LALONDE_SCHEMA, load_csv, split_half, write_lalonde_csv
from .diagnostics import (shift_report, write_deciles_csv, write_ecdf_csv, write_pca_csv,
                          write_proportions_csv)
from .estimators import (AUGMENTED, GOLD, SHRINKAGE, SHRINKAGE_COMBINED, TRIAL_DR, Nuisances,
                         analyze, bootstrap_se, tau_gold)
from .exceptions import ConfigError, ShiftFuseError
from .nuisance import POOLED, TRIAL_ONLY, FeatureBasis, fit_k, fit_outcome, fit_rho
from .sim import DGPSpec, ScenarioSpec, default_scenarios, run_experiment1, run_experiment2

log = logging.getLogger("shiftfuse")

ESTIMATOR_NAMES = {"gold": GOLD, "trial_dr": TRIAL_DR, "augmented": AUGMENTED,
                   "shrinkage": SHRINKAGE, "shrinkage_combined": SHRINKAGE_COMBINED}
DEFAULT_ESTIMATORS = ("trial_dr", "augmented", "shrinkage")


@dataclass
class RunConfig:
    command: str
    raw: dict
    base_dir: Path
    config_hash: str
    seed: int = 0
    out: Path = Path("shiftfuse-out")
    schema: Optional[CsvSchema] = None
    bases: dict = field(default_factory=dict)
    validation: dict = field(default_factory=lambda: {"mode": "none"})
    estimators: tuple = DEFAULT_ESTIMATORS
    variance: str = "validation"
    bootstrap_b: int = 0
    mu_population: str = TRIAL_ONLY

    def path(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def comment(self):
        return f"shiftfuse {__version__} config={self.config_hash} seed={self.seed}"


def _parse_bases(raw, names):
    spec = raw.get("bases", {})
    lin = ["1", *names]
    try:
        bases = {"k": FeatureBasis.parse(spec.get("k", lin), names),
                 "rho": FeatureBasis.parse(spec.get("rho", lin + ["y"]), names),
                 "mu": FeatureBasis.parse(spec.get("mu", lin), names)}
    except ShiftFuseError as e:
        raise ConfigError(f"bad basis: {e}") from None
    if bases["k"].has_outcome or bases["mu"].has_outcome:
        raise ConfigError("k and mu bases cannot contain the outcome term 'y'")
    if not bases["rho"].has_outcome:
        raise ConfigError("rho basis must contain the outcome term 'y'")
    return bases


def load_config(command, path, seed=None, out=None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from None
    cfg = RunConfig(command=command, raw=raw, base_dir=path.parent,
                    config_hash=hashlib.sha256(text).hexdigest()[:16])
    cfg.seed = int(seed if seed is not None else raw.get("seed", 0))
    cfg.out = Path(out or raw.get("out", "shiftfuse-out"))
    if command in ("estimate", "diagnose"):
        if "data" not in raw:
            raise ConfigError("config needs a 'data' path")
        cfg.schema = CsvSchema.from_dict(raw.get("schema", {}))
        cfg.bases = _parse_bases(raw, list(cfg.schema.covariate_columns))
    if command == "estimate":
        val = raw.get("validation", {"mode": "none"})
        if isinstance(val, str):
            val = {"mode": val}
        if val.get("mode") not in ("none", "file", "split"):
            raise ConfigError(f"validation mode must be none, file or split, got {val.get('mode')!r}")
        if val["mode"] == "file" and "path" not in val:
            raise ConfigError("validation mode 'file' needs a 'path'")
        cfg.validation = val
        ests = tuple(raw.get("estimators", DEFAULT_ESTIMATORS))
        unknown = set(ests) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}")
        cfg.estimators = ests
        var = raw.get("variance", "validation")
        if isinstance(var, dict):
            if "bootstrap" not in var:
                raise ConfigError("variance object must be {'bootstrap': B}")
            cfg.variance, cfg.bootstrap_b = "bootstrap", int(var["bootstrap"])
            if cfg.bootstrap_b < 100:
                raise ConfigError("bootstrap needs B >= 100")
        elif var in ("plugin", "validation"):
            cfg.variance = var
        else:
            raise ConfigError(f"variance must be plugin, validation or {{'bootstrap': B}}, got {var!r}")
        cfg.mu_population = raw.get("mu_population", TRIAL_ONLY)
        if cfg.mu_population not in (TRIAL_ONLY, POOLED):
            raise ConfigError("mu_population must be 'trial' or 'pooled'")
    return cfg


def _read_dataset(cfg, p):
    p = cfg.path(p)
    if not p.exists():
        raise ConfigError(f"input file not found: {p}")
    with open(p, encoding="utf-8", newline="") as fh:
        return load_csv(fh, cfg.schema)


def _fit(cfg, primary, shift_sample, source):
    b = cfg.bases
    return Nuisances(fit_k(shift_sample, b["k"]), fit_rho(shift_sample, b["rho"]),
                     fit_outcome(primary, 1, b["mu"], cfg.mu_population),
                     fit_outcome(primary, 0, b["mu"], cfg.mu_population), source)


def _bootstrap_values(cfg, shift_sample_fixed):
    """Estimator for bootstrap replicates: refits every nuisance on the resample."""
    def run(ds):
        shift_sample = shift_sample_fixed if shift_sample_fixed is not None else ds
        an = analyze(ds, _fit(cfg, ds, shift_sample, "primary"), correct_primary=False)
        return {f"{m}|{a}": e.value for (m, a), e in an.estimates.items()}
    return run


def _with_se(entry, se):
    lo = entry["value"] - 1.959964 * se
    hi = entry["value"] + 1.959964 * se
    return {**entry, "se": se, "ci": [lo, hi]}


def cmd_estimate(cfg, out_dir):
    primary = _read_dataset(cfg, cfg.raw["data"])
    validation = None
    mode = cfg.validation["mode"]
    if mode == "split":
        primary, validation = split_half(primary, cfg.validation.get("seed", cfg.seed))
    elif mode == "file":
        validation = _read_dataset(cfg, cfg.validation["path"])
    wanted = {ESTIMATOR_NAMES[e] for e in cfg.estimators}
    entries = []
    influence = []
    clamped = 0
    if GOLD in wanted:
        entries += [dict(e.to_dict(), diagnostics=None) for e in tau_gold(primary)]
    needs_models = wanted - {GOLD}
    variants = []
    if needs_models:
        variants.append(("primary", primary))
        if validation is not None:
            variants.append(("validation", validation))
    seen_trial = False
    for variant, shift_sample in variants:
        nuis = _fit(cfg, primary, shift_sample, variant)
        corrected = cfg.variance == "validation"
        an = analyze(primary, nuis, validation=validation if (variant == "validation" and corrected) else None,
                     correct_primary=corrected and variant == "primary",
                     combined=SHRINKAGE_COMBINED in wanted)
        clamped += an.weights.clamped
        boot = None
        if cfg.variance == "bootstrap":
            boot, _ = bootstrap_se(primary, _bootstrap_values(
                cfg, shift_sample if variant == "validation" else None), cfg.bootstrap_b, cfg.seed)
        for item in an.to_list():
            method = item["method"]
            if method not in wanted:
                continue
            if method == TRIAL_DR:
                if seen_trial:
                    continue
                item["variant"] = ""
            else:
                item["variant"] = variant
            if boot is not None:
                item = _with_se(item, boot[f"{method}|{item['estimand']}"])
            entries.append(item)
        seen_trial = True
        iv = an.iv
        for i in range(primary.N):
            influence.append([variant, i, int(primary.r[i]), int(primary.t[i]),
                              *(repr(float(v)) for v in (iv.psi_tilde1[i], iv.psi_tilde0[i],
                                                         iv.psi1[i], iv.psi0[i]))])
        (out_dir / f"models_{variant}.json").write_text(json.dumps(
            {"comment": cfg.comment, "k": nuis.k.to_dict(), "rho": nuis.rho.to_dict(),
             "mu1": nuis.mu1.to_dict(), "mu0": nuis.mu0.to_dict()}, indent=2) + "\n")
    report = {"comment": cfg.comment, "n": primary.n, "N": primary.N,
              "kappa_hat": primary.kappa_hat,
              "validation": {"mode": mode, "m": validation.N if validation is not None else 0},
              "variance": cfg.variance, "clamped_weights": clamped, "estimates": entries}
    (out_dir / "estimates.json").write_text(json.dumps(report, indent=2) + "\n")
    if influence:
        with open(out_dir / "influence.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {cfg.comment}\n")
            fh.write("variant,row,r,t,psi_tilde1,psi_tilde0,psi1,psi0\n")
            for row in influence:
                fh.write(",".join(str(v) for v in row) + "\n")
    return report


def cmd_simulate(cfg, out_dir, workers=None):
    raw = cfg.raw
    dgp = DGPSpec.from_dict(raw.get("dgp", {}))
    reps = int(raw.get("replications", 2000))
    workers = raw.get("workers", workers)
    exp = int(raw.get("experiment", 1))
    if exp == 1:
        summary = run_experiment1(dgp, tuple(raw.get("multipliers", (0, 0.5, 1, 2, 4))),
                                  reps, cfg.seed, workers)
    elif exp == 2:
        scen = raw.get("scenarios")
        scenarios = [ScenarioSpec.from_dict(s) for s in scen] if scen else default_scenarios()
        summary = run_experiment2(dgp, scenarios, reps, cfg.seed, workers)
    else:
        raise ConfigError(f"experiment must be 1 or 2, got {exp}")
    with open(out_dir / f"experiment{exp}.csv", "w", encoding="utf-8", newline="") as fh:
        summary.write_csv(fh, cfg.comment)
    return summary


def cmd_diagnose(cfg, out_dir):
    ds = _read_dataset(cfg, cfg.raw["data"])
    score_basis = None
    if "score_basis" in cfg.raw:
        score_basis = FeatureBasis.parse(cfg.raw["score_basis"], list(cfg.schema.covariate_columns))
    report = shift_report(ds, score_basis)
    for name, writer in (("pca", write_pca_csv), ("proportions", write_proportions_csv),
                         ("ecdf", write_ecdf_csv), ("deciles", write_deciles_csv)):
        with open(out_dir / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
            writer(report, fh, cfg.comment)
    return report


LALONDE_ESTIMATE = {
    "data": "lalonde.csv",
    "schema": {"source": "r", "treatment": "t",
               "covariates": list(LALONDE_SCHEMA.covariate_columns),
               "outcome_difference": ["re78", "re75"]},
    "validation": {"mode": "split", "seed": 0},
    "estimators": ["trial_dr", "augmented", "shrinkage"],
    "variance": "plugin",
}


def cmd_lalonde(out_dir):
    with open(out_dir / "lalonde.csv", "w", encoding="utf-8", newline="") as fh:
        write_lalonde_csv(fh)
    (out_dir / "estimate.json").write_text(json.dumps(LALONDE_ESTIMATE, indent=2) + "\n")
    diag = {k: LALONDE_ESTIMATE[k] for k in ("data", "schema")}
    (out_dir / "diagnose.json").write_text(json.dumps(diag, indent=2) + "\n")


def _publish(staging, out):
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(staging.iterdir()):
        shutil.move(str(f), str(out / f.name))


def build_parser():
    ap = argparse.ArgumentParser(prog="shiftfuse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"shiftfuse {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("estimate", "simulate", "diagnose"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("lalonde", help="export NSW + PSID-1 data and example configs")
    p.add_argument("--out", default="lalonde")
    p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    staging = None
    try:
        if args.command == "lalonde":
            cfg = None
        else:
            cfg = load_config(args.command, args.config, args.seed, args.out)
            out = cfg.out
        parent = out.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=".shiftfuse-", dir=parent))
        if args.command == "estimate":
            cmd_estimate(cfg, staging)
        elif args.command == "simulate":
            cmd_simulate(cfg, staging)
        elif args.command == "diagnose":
            cmd_diagnose(cfg, staging)
        else:
            cmd_lalonde(staging)
        _publish(staging, out)
        log.info("wrote outputs to %s", out)
        return 0
    except ShiftFuseError as e:
        sys.stderr.write(json.dumps(e.to_dict()) + "\n")
        return 2 if isinstance(e, ConfigError) else 1
    except OSError as e:
        sys.stderr.write(json.dumps({"error": "io", "message": str(e),
                                     "path": getattr(e, "filename", None)}) + "\n")
        return 1
    finally:
        if staging is not None and staging.exists():
            shutil.rmtree(staging, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
