"""Pairwise logistic calibration of base statistics against preference clicks.

A forced-choice click between two images is modeled as
P(left preferred) = sigma(theta^T (x_left - x_right)) with no intercept, so
scores s = theta^T x are identified up to a shared constant. Model selection
walks the nested feature families and keeps the admissible model (all
weights positive) with the best cross-validated accuracy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

E_FEATURES = ("E1", "E2", "E3", "E4", "E5")
C_FEATURE = "C"

RIDGE = 1e-6
NEWTON_TOL = 1e-9
NEWTON_MAX_ITERS = 200
CV_FOLDS = 10
TIE_STDERRS = 2.0


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ClickRecord:
    pair_id: str
    test: str  # "E" or "C"
    left_id: str
    right_id: str
    chosen: str  # "left" or "right"
    user_id: str
    timestamp: int  # ms since epoch

    def __post_init__(self):
        if self.chosen not in ("left", "right"):
            raise CalibrationError(f"chosen must be left|right, got {self.chosen!r}")
        if self.left_id == self.right_id:
            raise CalibrationError("left_id and right_id must differ")
        if self.test not in ("E", "C"):
            raise CalibrationError(f"test must be E|C, got {self.test!r}")


@dataclass
class CalibratedModel:
    feature_names: tuple
    theta: np.ndarray
    admissible: bool
    cv_accuracy: float
    cv_stderr: float
    ridge: float = RIDGE

    def score(self, stats: dict) -> float:
        missing = [f for f in self.feature_names if f not in stats]
        if missing:
            raise CalibrationError(f"missing features {missing}")
        x = np.array([stats[f] for f in self.feature_names], dtype=np.float64)
        return float(self.theta @ x)


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def pref_prob(s1: float, s2: float) -> float:
    """P(image 1 preferred) = exp(s1) / (exp(s1) + exp(s2)), computed stably."""
    d = s1 - s2
    if d >= 0:
        return 1.0 / (1.0 + np.exp(-d))
    e = np.exp(d)
    return e / (1.0 + e)


def _penalized_ll(theta, z, y, ridge):
    u = z @ theta
    # log sigma(u) with sign trick, stable for large |u|
    ll = np.sum(np.where(y == 1, -np.logaddexp(0.0, -u), -np.logaddexp(0.0, u)))
    return ll - 0.5 * ridge * float(theta @ theta)


def fit_pairwise_logistic(pairs, ridge: float = RIDGE) -> np.ndarray:
    """Damped Newton fit of theta on paired differences.

    `pairs` is a sequence of (x1, x2, y1) with y1 = 1 when the first image
    was chosen. The ridge keeps separable desk-scale data identified.
    """
    pairs = list(pairs)
    if not pairs:
        raise CalibrationError("no pairs")
    z = np.array([np.asarray(x1, dtype=np.float64) - np.asarray(x2, dtype=np.float64) for x1, x2, _ in pairs])
    y = np.array([int(y1) for _, _, y1 in pairs])
    dim = z.shape[1]
    theta = np.zeros(dim)
    ll = _penalized_ll(theta, z, y, ridge)
    for _ in range(NEWTON_MAX_ITERS):
        u = z @ theta
        p = sigmoid(u)
        grad = z.T @ (y - p) - ridge * theta
        if np.max(np.abs(grad)) < NEWTON_TOL:
            return theta
        w = p * (1.0 - p)
        hess = -(z.T * w) @ z - ridge * np.eye(dim)
        step = np.linalg.solve(hess, -grad)
        # damping: the penalized likelihood is concave, so backtracking
        # terminates; the tolerance is relative because near the optimum the
        # true improvement sinks below float resolution of the ll value
        accept_tol = 1e-12 * (1.0 + abs(ll))
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            cand_ll = _penalized_ll(cand, z, y, ridge)
            if cand_ll >= ll - accept_tol:
                theta, ll = cand, cand_ll
                break
            t *= 0.5
        else:
            raise CalibrationError("Newton line search stalled")
    raise CalibrationError(f"no convergence after {NEWTON_MAX_ITERS} iterations")


def cross_validate(pairs, k: int = CV_FOLDS, seed: int = 0, ridge: float = RIDGE):
    """k-fold accuracy of the paired-difference model; returns (acc, stderr)."""
    pairs = list(pairs)
    if k < 2:
        raise CalibrationError("need k >= 2 folds")
    if len(pairs) < k:
        raise CalibrationError(f"{len(pairs)} pairs cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    folds = np.array_split(order, k)
    accs = []
    for fi, fold in enumerate(folds):
        test_idx = set(fold.tolist())
        train = [pairs[i] for i in range(len(pairs)) if i not in test_idx]
        test = [pairs[i] for i in fold]
        ys = {int(y1) for _, _, y1 in train}
        if len(ys) < 2:
            log.warning("fold %d: training labels are single-class", fi)
        theta = fit_pairwise_logistic(train, ridge=ridge)
        score = 0.0
        for x1, x2, y1 in test:
            p = pref_prob(float(theta @ np.asarray(x1)), float(theta @ np.asarray(x2)))
            if p == 0.5:
                score += 0.5
            elif (p > 0.5) == bool(y1):
                score += 1.0
        accs.append(score / len(test))
    accs = np.array(accs)
    return float(accs.mean()), float(accs.std(ddof=1) / np.sqrt(k))


def _candidate_families(family: str):
    if family == "E":
        return [tuple(E_FEATURES[:r]) for r in range(1, 6)]
    if family == "C":
        return [(C_FEATURE,)] + [(C_FEATURE,) + tuple(E_FEATURES[:r]) for r in range(1, 6)]
    raise CalibrationError(f"unknown family {family!r}")


def _restrict(pairs, all_names, feature_names):
    idx = [all_names.index(f) for f in feature_names]
    return [
        (np.asarray(x1)[idx], np.asarray(x2)[idx], y1)
        for x1, x2, y1 in pairs
    ]


def select_model(pairs, family: str, all_names=None, k: int = CV_FOLDS, seed: int = 0) -> CalibratedModel:
    """Evaluate the nested model family and keep the best admissible one.

    Accuracy ties within TIE_STDERRS pooled standard errors of the best
    admissible model are broken toward the larger model.
    """
    pairs = list(pairs)
    if not pairs:
        raise CalibrationError("no clicks for family " + family)
    if all_names is None:
        all_names = list(E_FEATURES) if family == "E" else [C_FEATURE] + list(E_FEATURES)
    candidates = []
    for names in _candidate_families(family):
        sub = _restrict(pairs, all_names, names)
        theta = fit_pairwise_logistic(sub)
        admissible = bool(np.all(theta > 0.0))
        acc, se = cross_validate(sub, k=k, seed=seed)
        candidates.append(CalibratedModel(names, theta, admissible, acc, se))
    admissibles = [m for m in candidates if m.admissible]
    if not admissibles:
        diag = "; ".join(
            f"{'+'.join(m.feature_names)}: acc={m.cv_accuracy:.3f} theta={np.round(m.theta, 3)}"
            for m in candidates
        )
        raise CalibrationError(f"no admissible {family}-model; candidates: {diag}")
    best = max(admissibles, key=lambda m: m.cv_accuracy)
    tied = [
        m
        for m in admissibles
        if best.cv_accuracy - m.cv_accuracy
        <= TIE_STDERRS * np.hypot(best.cv_stderr, m.cv_stderr)
    ]
    return max(tied, key=lambda m: len(m.feature_names))


def score(stats: dict, model: CalibratedModel) -> float:
    return model.score(stats)


def top_quartile_threshold(values) -> float:
    """Threshold for the 'high effectiveness' eligibility rule (top 25%)."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise CalibrationError("empty pool")
    return float(np.quantile(values, 0.75))


# ---------------------------------------------------------------------------
# click-log I/O (JSON lines)
# ---------------------------------------------------------------------------

_FIELDS = ("pair_id", "test", "left_id", "right_id", "chosen", "user_id", "timestamp")


def click_to_json(click: ClickRecord) -> str:
    return json.dumps({f: getattr(click, f) for f in _FIELDS}, sort_keys=True)


def read_click_log(path):
    """Parse a JSON-lines click log; unknown extra fields are ignored."""
    clicks = []
    with open(str(path)) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                clicks.append(ClickRecord(**{f: obj[f] for f in _FIELDS}))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise CalibrationError(f"bad click record on line {line_no}: {e}") from e
    return clicks


def write_click_log(clicks, path) -> None:
    with open(str(path), "w") as f:
        for c in clicks:
            f.write(click_to_json(c) + "\n")


def pairs_from_clicks(clicks, features: dict, feature_names):
    """Assemble (x1, x2, y1) training pairs from clicks and per-image stats.

    `features` maps image id -> dict of named statistics.
    """
    out = []
    for c in clicks:
        x1 = np.array([features[c.left_id][f] for f in feature_names], dtype=np.float64)
        x2 = np.array([features[c.right_id][f] for f in feature_names], dtype=np.float64)
        out.append((x1, x2, 1 if c.chosen == "left" else 0))
    return out
