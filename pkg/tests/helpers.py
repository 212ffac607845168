"""Shared numerical oracles for the test suite."""

import numpy as np


def finite_difference(fun, x, step=1e-3):
    """Central finite differences of a scalar function, one entry at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        up = x.copy()
        dn = x.copy()
        up[ix] += step
        dn[ix] -= step
        g[ix] = (fun(up) - fun(dn)) / (2 * step)
        it.iternext()
    return g


def _rel_ok(a, b, rtol, floor):
    scale = max(abs(a), abs(b))
    if scale <= floor:
        return abs(a - b) <= rtol * floor
    return abs(a - b) <= rtol * scale


def assert_grad_matches(fun, x, analytic, rtol=1e-4, floor=1e-6, steps=(1e-3, 1e-4, 1e-5)):
    """Check `analytic` against central differences of `fun` at `x`.

    Components that fail at the nominal step are re-probed at finer steps:
    relu/max-pool kinks inside the difference bracket invalidate the FD
    estimate there, while a genuine gradient bug fails at every step.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = finite_difference(fun, x, step=steps[0])
    bad = []
    flat_a = analytic.ravel()
    flat_fd = fd.ravel()
    for i in range(flat_a.size):
        if not _rel_ok(flat_a[i], flat_fd[i], rtol, floor):
            bad.append(i)
    still_bad = []
    for i in bad:
        ok = False
        for step in steps[1:]:
            up = x.copy().ravel()
            dn = x.copy().ravel()
            up[i] += step
            dn[i] -= step
            est = (fun(up.reshape(x.shape)) - fun(dn.reshape(x.shape))) / (2 * step)
            if _rel_ok(flat_a[i], est, rtol, floor):
                ok = True
                break
        if not ok:
            still_bad.append((i, flat_a[i], flat_fd[i]))
    assert not still_bad, f"gradient mismatch at {len(still_bad)} components: {still_bad[:5]}"
