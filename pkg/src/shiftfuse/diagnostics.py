"""Tabular distribution-shift diagnostics for a trial + external-control sample.

Four blocks, each written as one CSV file:

* ``pca``         pooled correlation PCA scores (first two components)
* ``proportions`` trial vs. EC proportions of binary covariates
* ``ecdf``        trial vs. EC empirical CDFs of continuous covariates
* ``deciles``     untreated-outcome five-number summaries within deciles of a
                  pooled prediction score ``s(x)``
"""

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import SizeError
from .nuisance import POOLED, FeatureBasis, fit_outcome

__all__ = ["PCAResult", "ShiftReport", "pca_project", "marginal_shift",
           "decile_outcome_summary", "shift_report", "write_pca_csv",
           "write_proportions_csv", "write_ecdf_csv", "write_deciles_csv"]

GROUPS = ("trial", "external")


@dataclass
class PCAResult:
    scores: np.ndarray        # (N, 2)
    fractions: np.ndarray     # (2,) explained-variance fractions
    loadings: np.ndarray      # (p_used, 2)
    eigenvalues: np.ndarray   # all eigenvalues, descending
    used: List[str]
    dropped: List[str]


def pca_project(ds):
    """Project standardized covariates on the top two correlation eigenvectors.

    Zero-variance covariates are dropped (and listed in ``dropped``).  Each
    component is signed so that its first nonzero loading is positive.
    """
    if ds.N < 3:
        raise SizeError(f"PCA needs at least 3 rows, got {ds.N}")
    sd = ds.x.std(axis=0, ddof=1)
    keep = sd > 0
    used = [nm for nm, k in zip(ds.names, keep) if k]
    dropped = [nm for nm, k in zip(ds.names, keep) if not k]
    if len(used) < 2:
        raise SizeError(f"PCA needs at least 2 non-constant covariates, got {len(used)}")
    z = (ds.x[:, keep] - ds.x[:, keep].mean(axis=0)) / sd[keep]
    corr = z.T @ z / (ds.N - 1)
    evals, evecs = np.linalg.eigh((corr + corr.T) / 2)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    for j in range(evecs.shape[1]):
        nz = np.flatnonzero(np.abs(evecs[:, j]) > 1e-12)
        if nz.size and evecs[nz[0], j] < 0:
            evecs[:, j] = -evecs[:, j]
    load = evecs[:, :2]
    return PCAResult(z @ load, evals[:2] / evals.sum(), load, evals, used, dropped)


def _is_binary(col):
    return np.isin(col, (0.0, 1.0)).all()


def _ecdf(sample, grid):
    if sample.size == 0:
        return np.full(grid.shape, np.nan)
    return np.searchsorted(np.sort(sample), grid, side="right") / sample.size


def marginal_shift(ds):
    """Binary covariates: group proportions.  Continuous: ECDFs on the pooled grid.

    Returns ``(proportions, ecdf)`` where ``proportions`` is a list of
    ``(name, trial, external)`` and ``ecdf`` a list of dicts with keys
    ``name, grid, trial, external, max_gap``.
    """
    trial = ds.r == 1
    props, ecdfs = [], []
    for j, name in enumerate(ds.names):
        col = ds.x[:, j]
        a, b = col[trial], col[~trial]
        if _is_binary(col):
            props.append((name, float(a.mean()) if a.size else np.nan,
                          float(b.mean()) if b.size else np.nan))
        else:
            grid = np.unique(col)
            fa, fb = _ecdf(a, grid), _ecdf(b, grid)
            ecdfs.append({"name": name, "grid": grid, "trial": fa, "external": fb,
                          "max_gap": float(np.nanmax(np.abs(fa - fb)))})
    return props, ecdfs


def _five(y):
    if y.size == 0:
        return [np.nan] * 5
    return [float(v) for v in np.percentile(y, [0, 25, 50, 75, 100])]


def decile_outcome_summary(ds, mu0_pooled, bins=10, sparse_below=3):
    """Untreated outcomes by decile of the score ``s(x) = mu0_pooled(x)``.

    Untreated rows are ranked by score (ties by row order) and cut into
    ``bins`` groups of near-equal size.  For each bin and each group (trial
    controls, external controls) the five-number summary of ``y`` is given;
    cells with fewer than ``sparse_below`` rows are flagged sparse.  A
    constant score collapses to one bin with ``fallback=True``.
    """
    u = np.flatnonzero(ds.t == 0)
    M = u.size
    if M < bins:
        raise SizeError(f"need at least {bins} untreated rows, got {M}")
    s = mu0_pooled.predict(ds.x[u])
    fallback = bool(np.ptp(s) == 0)
    nb = 1 if fallback else bins
    order = np.lexsort((np.arange(M), s))
    bin_of = np.empty(M, dtype=int)
    bin_of[order] = np.arange(M) * nb // M
    rows = []
    for b in range(nb):
        in_bin = bin_of == b
        lo, hi = float(s[in_bin].min()), float(s[in_bin].max())
        for group, gmask in zip(GROUPS, (ds.r[u] == 1, ds.r[u] == 0)):
            yy = ds.y[u][in_bin & gmask]
            rows.append({"bin": b + 1, "group": group, "count": int(yy.size),
                         "summary": _five(yy), "score_lo": lo, "score_hi": hi,
                         "sparse": yy.size < sparse_below, "fallback": fallback})
    return rows


@dataclass
class ShiftReport:
    pca: Optional[PCAResult]
    pca_skipped: str
    proportions: list
    ecdf: list
    deciles: list
    r: np.ndarray = field(repr=False, default=None)


def shift_report(ds, score_basis=None):
    """All four diagnostics; the score model defaults to a linear fit in every covariate."""
    if score_basis is None:
        score_basis = FeatureBasis.polynomial(range(ds.p))
    try:
        pca, skipped = pca_project(ds), ""
    except SizeError as e:
        pca, skipped = None, str(e)
    props, ecdf = marginal_shift(ds)
    score = fit_outcome(ds, 0, score_basis, POOLED)
    return ShiftReport(pca, skipped, props, ecdf, decile_outcome_summary(ds, score), ds.r)


def _writer(stream, comment):
    if comment:
        stream.write(f"# {comment}\n")
    return csv.writer(stream, lineterminator="\n")


def write_pca_csv(report, stream, comment=None):
    w = _writer(stream, comment)
    if report.pca is None:
        w.writerow(["skipped"])
        w.writerow([report.pca_skipped or "PCA requires p >= 2"])
        return
    pca = report.pca
    w.writerow(["row", "group", "pc1", "pc2", "frac_pc1", "frac_pc2"])
    f1, f2 = (repr(float(v)) for v in pca.fractions)
    for i, (a, b) in enumerate(pca.scores):
        w.writerow([i, GROUPS[0] if report.r[i] == 1 else GROUPS[1], repr(float(a)),
                    repr(float(b)), f1, f2])


def write_proportions_csv(report, stream, comment=None):
    w = _writer(stream, comment)
    w.writerow(["covariate", "trial", "external"])
    for name, a, b in report.proportions:
        w.writerow([name, repr(a), repr(b)])


def write_ecdf_csv(report, stream, comment=None):
    w = _writer(stream, comment)
    w.writerow(["covariate", "value", "trial", "external", "max_gap"])
    for block in report.ecdf:
        for v, a, b in zip(block["grid"], block["trial"], block["external"]):
            w.writerow([block["name"], repr(float(v)), repr(float(a)), repr(float(b)),
                        repr(block["max_gap"])])


def write_deciles_csv(report, stream, comment=None):
    w = _writer(stream, comment)
    w.writerow(["bin", "group", "count", "min", "q1", "median", "q3", "max",
                "score_lo", "score_hi", "sparse", "fallback"])
    for row in report.deciles:
        w.writerow([row["bin"], row["group"], row["count"],
                    *(repr(v) for v in row["summary"]), repr(row["score_lo"]),
                    repr(row["score_hi"]), int(row["sparse"]), int(row["fallback"])])
