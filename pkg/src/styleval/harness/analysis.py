"""Aggregate analyses over scored trials and CSV report emission."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sstats

# 66% quantile of chi-square with 2 dof: radius^2 of the confidence ellipse
ELLIPSE_CHI2_66 = -2.0 * np.log(1.0 - 0.66)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSummary:
    method: str
    mean_e: float
    mean_c: float
    cov: np.ndarray  # 2x2 covariance of (e_score, c_score)
    n: int
    admissible: bool


def _ok(trials):
    out = [t for t in trials if t.status == "ok"]
    if any(np.isnan(t.e_score) or np.isnan(t.c_score) for t in out):
        raise AnalysisError("trials are not scored; run score_trials first")
    return out


def summarize(trials):
    """Per-method mean/covariance of (E, C) scores plus Pareto admissibility."""
    trials = _ok(trials)
    methods = sorted({t.method for t in trials})
    summaries = []
    for m in methods:
        pts = np.array([[t.e_score, t.c_score] for t in trials if t.method == m])
        if len(pts) < 3:
            raise AnalysisError(f"method {m} has {len(pts)} trials; need >= 3")
        mean = pts.mean(axis=0)
        cov = np.cov(pts.T, ddof=1)
        summaries.append(
            MethodSummary(m, float(mean[0]), float(mean[1]), cov, len(pts), admissible=True)
        )
    out = []
    for s in summaries:
        dominated = any(
            o.mean_e > s.mean_e and o.mean_c > s.mean_c for o in summaries if o.method != s.method
        )
        out.append(
            MethodSummary(s.method, s.mean_e, s.mean_c, s.cov, s.n, admissible=not dominated)
        )
    return out


def ellipse_points(summary: MethodSummary, scale: str = "chi2", n_points: int = 64) -> np.ndarray:
    """Boundary points of the 66% ellipse ('chi2') or the 1-sigma ellipse."""
    w, v = np.linalg.eigh(summary.cov)
    w = np.maximum(w, 0.0)
    r2 = ELLIPSE_CHI2_66 if scale == "chi2" else 1.0
    angles = np.linspace(0, 2 * np.pi, n_points, endpoint=False)
    circle = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = circle * np.sqrt(r2 * w) @ v.T
    return pts + np.array([summary.mean_e, summary.mean_c])


def weight_effect(trials, method: str):
    """OLS of E-score on weight: (effect, spread, p_value).

    effect = slope * mean(weight); spread = slope * std(weight); the p-value
    is the two-sided t-test on the slope.
    """
    pts = [(t.weight, t.e_score) for t in _ok(trials) if t.method == method]
    if len(pts) < 3:
        raise AnalysisError(f"method {method}: need >= 3 trials")
    w = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.ptp(w) == 0:
        raise AnalysisError("constant weights: no identifiable effect")
    x = np.column_stack([np.ones_like(w), w])
    beta, res, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    dof = len(y) - 2
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(x.T @ x)
    t_stat = beta[1] / np.sqrt(cov[1, 1])
    p = 2.0 * sstats.t.sf(abs(t_stat), dof)
    return float(beta[1] * w.mean()), float(beta[1] * w.std(ddof=1)), float(p)


def style_effect(trials):
    """Per-method centered style coefficients on the E-score with p<0.05 mask.

    Returns (methods, styles, coef matrix, pvalue matrix). Coefficients use
    grand-mean-centered one-hot coding, so they sum to ~0 per method.
    """
    trials = _ok(trials)
    methods = sorted({t.method for t in trials})
    styles = sorted({t.style_id for t in trials})
    s_index = {s: i for i, s in enumerate(styles)}
    coefs = np.zeros((len(methods), len(styles)))
    pvals = np.ones((len(methods), len(styles)))
    for mi, m in enumerate(methods):
        rows = [t for t in trials if t.method == m]
        for s in styles:
            if sum(t.style_id == s for t in rows) < 2:
                raise AnalysisError(f"style {s} has < 2 trials for {m}")
        y = np.array([t.e_score for t in rows])
        onehot = np.zeros((len(rows), len(styles)))
        for ri, t in enumerate(rows):
            onehot[ri, s_index[t.style_id]] = 1.0
        x = np.column_stack([np.ones(len(rows)), onehot - 1.0 / len(styles)])
        beta, *_ = np.linalg.lstsq(x, y, rcond=None)  # min-norm: sum-to-zero
        resid = y - x @ beta
        dof = max(len(rows) - (len(styles) - 1) - 1, 1)
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.pinv(x.T @ x)
        se = np.sqrt(np.maximum(np.diag(cov)[1:], 1e-300))
        t_stats = beta[1:] / se
        coefs[mi] = beta[1:]
        pvals[mi] = 2.0 * sstats.t.sf(np.abs(t_stats), dof)
    return methods, styles, coefs, pvals


def quantile_grid(trials):
    """3x3 tertile grid on (E, C) scores; per-cell method percentages.

    Returns (e_bounds, c_bounds, grid) with grid[ci][ei] a list of
    (method, percentage) sorted descending.
    """
    trials = _ok(trials)
    if len(trials) < 9:
        raise AnalysisError("need at least 9 trials for a 3x3 grid")
    e = np.array([t.e_score for t in trials])
    c = np.array([t.c_score for t in trials])
    e_bounds = np.quantile(e, [1 / 3, 2 / 3])
    c_bounds = np.quantile(c, [1 / 3, 2 / 3])
    counts: dict = {}
    totals = np.zeros((3, 3), dtype=int)
    for t in trials:
        ei = int(np.searchsorted(e_bounds, t.e_score, side="right"))
        ci = int(np.searchsorted(c_bounds, t.c_score, side="right"))
        counts.setdefault((ci, ei), {}).setdefault(t.method, 0)
        counts[(ci, ei)][t.method] += 1
        totals[ci, ei] += 1
    grid = [[[] for _ in range(3)] for _ in range(3)]
    for (ci, ei), per_method in counts.items():
        cell_total = totals[ci, ei]
        ranked = sorted(
            ((m, 100.0 * k / cell_total) for m, k in per_method.items()),
            key=lambda mk: (-mk[1], mk[0]),
        )
        grid[ci][ei] = ranked
    return e_bounds, c_bounds, grid


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_reports(trials, out_dir, scales=("chi2", "sigma")):
    """trials.csv, summary.csv, weight_effect.csv, style_effect.csv,
    quantile_grid.csv and gnuplot-ready ellipse point files."""
    from .runner import LEDGER_FIELDS, trial_to_row

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(trials, key=lambda t: t.key())

    with open(out / "trials.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LEDGER_FIELDS)
        w.writeheader()
        for t in ordered:
            w.writerow(trial_to_row(t))

    summaries = summarize([t for t in trials if t.status == "ok"])
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "meanE", "meanC", "covEE", "covEC", "covCC", "n", "admissible"])
        for s in summaries:
            w.writerow(
                [s.method, _fmt(s.mean_e), _fmt(s.mean_c), _fmt(s.cov[0, 0]),
                 _fmt(s.cov[0, 1]), _fmt(s.cov[1, 1]), s.n, int(s.admissible)]
            )

    with open(out / "weight_effect.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "effect", "spread", "p_value"])
        for s in summaries:
            try:
                eff, spread, p = weight_effect(trials, s.method)
                w.writerow([s.method, _fmt(eff), _fmt(spread), _fmt(p)])
            except AnalysisError:
                w.writerow([s.method, "nan", "nan", "nan"])

    methods, styles, coefs, pvals = style_effect(trials)
    with open(out / "style_effect.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "style", "coef", "p_value", "significant"])
        for mi, m in enumerate(methods):
            for si, s in enumerate(styles):
                w.writerow([m, s, _fmt(coefs[mi, si]), _fmt(pvals[mi, si]), int(pvals[mi, si] < 0.05)])

    e_bounds, c_bounds, grid = quantile_grid(trials)
    with open(out / "quantile_grid.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["c_band", "e_band", "rank", "method", "percent"])
        bands = ("low", "middle", "high")
        for ci in range(3):
            for ei in range(3):
                for rank, (m, pct) in enumerate(grid[ci][ei], 1):
                    w.writerow([bands[ci], bands[ei], rank, m, _fmt(pct)])

    for s in summaries:
        for scale in scales:
            pts = ellipse_points(s, scale=scale)
            path = out / f"ellipse_{scale}_{s.method}.dat"
            with open(path, "w") as f:
                f.write(f"# {s.method} mean {_fmt(s.mean_e)} {_fmt(s.mean_c)}\n")
                for x, y in pts:
                    f.write(f"{_fmt(x)} {_fmt(y)}\n")
    return out
