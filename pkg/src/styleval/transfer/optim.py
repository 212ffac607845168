"""Two-loop-recursion L-BFGS with Armijo backtracking."""

from __future__ import annotations

from collections import deque

import numpy as np

ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 30
MAX_LS_FAILURES = 20
CURVATURE_EPS = 1e-12


class OptimError(RuntimeError):
    pass


def lbfgs_minimize(fun_and_grad, x0: np.ndarray, iterations: int, memory: int = 10, callback=None):
    """Minimize fun_and_grad(x) -> (f, g); returns (best_x, values).

    Deterministic for a fixed starting point. Keeps the best-seen iterate;
    stops early after MAX_LS_FAILURES consecutive line-search failures.
    `callback(i, x, f)` runs once per completed iteration.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_and_grad(x)
    if not np.isfinite(f):
        raise OptimError(f"non-finite loss at start: {f!r}")
    best_x, best_f = x.copy(), f
    values = [f]
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    rho_hist: deque = deque(maxlen=memory)
    failures = 0

    for it in range(iterations):
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_hist:
            s, y = s_hist[-1], y_hist[-1]
            gamma = (s @ y) / (y @ y)
            q *= gamma
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        gd = g @ d
        if gd >= 0:  # not a descent direction: restart from steepest descent
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            d = -g
            gd = g @ d
        if gd == 0.0:
            break

        t = 1.0 if y_hist else min(1.0, 1.0 / max(1.0, float(np.abs(g).sum())))
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = x + t * d
            f_new, g_new = fun_and_grad(x_new)
            if np.isfinite(f_new) and f_new <= f + ARMIJO_C * t * gd:
                accepted = True
                break
            t *= SHRINK
        if not accepted:
            failures += 1
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            if failures >= MAX_LS_FAILURES:
                break
            values.append(f)
            if callback is not None:
                callback(it, x, f)
            continue
        failures = 0
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > CURVATURE_EPS * float(np.linalg.norm(s) * np.linalg.norm(y)):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
        x, f, g = x_new, f_new, g_new
        if f < best_f:
            best_f, best_x = f, x.copy()
        values.append(f)
        if callback is not None:
            callback(it, x, f)
    return best_x, values
