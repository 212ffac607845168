"""Augmented-Lagrangian solver for the within-layer Gram loss.

The network is cut at the R41 style tap: a dummy feature block V stands in
for f4(I) under the constraint V = f4(I). Each outer iteration minimizes
over the image with V fixed, then over V with the image fixed (the R41 style
term is quartic in V, so this block also runs L-BFGS), then applies the
usual dual update and grows the penalty by a constant factor.
"""

from __future__ import annotations

import numpy as np

from ..nncore import CONTENT_TAP, STYLE_TAPS, FeatureMap, NetworkSpec, forward, input_gradient
from .losses import GramStyleTerm, MethodLoss
from .optim import lbfgs_minimize

CUT_TAP = "R41"


class GalDivergence(RuntimeError):
    pass


def _augmented_value_and_grads(v: np.ndarray, f4: np.ndarray, lam: np.ndarray, rho: float):
    """(1/KP) sum(lam * r + rho * r^2) with r = V - f4; grads wrt V and f4."""
    kp = v.size
    r = v - f4
    value = float(np.sum(lam * r + rho * r * r)) / kp
    dv = (lam + 2.0 * rho * r) / kp
    return value, dv, -dv


def gal_optimize(style_img: np.ndarray, content_img: np.ndarray, net: NetworkSpec, init_img: np.ndarray, alpha: float, layer_weights: dict | None, rho0: float, rho_growth: float, outer_iters: int, inner_iters: int, divergence_limit: float = 1e12):
    """Returns (image, trace_rows). Trace rows are dicts per outer iteration."""
    w = dict(layer_weights) if layer_weights else {}
    style_features = forward(style_img, net, STYLE_TAPS)
    content_f4 = forward(content_img, net, [CUT_TAP])[CUT_TAP].data

    other_taps = tuple(t for t in STYLE_TAPS if t != CUT_TAP)
    style_term = GramStyleTerm(style_features, w, taps=other_taps)
    cut_term = GramStyleTerm(style_features, w, taps=(CUT_TAP,))
    w4 = w.get(CUT_TAP, 1.0)

    img_shape = init_img.shape
    x = np.asarray(init_img, dtype=np.float64).ravel().copy()
    f4 = forward(init_img, net, [CUT_TAP])[CUT_TAP].data
    v = f4.copy()
    lam = np.zeros_like(v)
    rho = float(rho0)
    taps_i = other_taps + (CUT_TAP,)
    trace = []

    for outer in range(outer_iters):
        # (a) primal step in the image, V and lambda fixed
        def image_loss(features, v=v, lam=lam, rho=rho):
            grads: dict = {}
            s_val = alpha * style_term.evaluate(features, grads)
            for tap in grads:
                grads[tap] = alpha * grads[tap]
            a_val, _, df4 = _augmented_value_and_grads(v, features[CUT_TAP].data, lam, rho)
            grads[CUT_TAP] = grads.get(CUT_TAP, 0.0) + df4
            return s_val + a_val, grads

        def fg_image(xv):
            value, g = input_gradient(xv.reshape(img_shape), net, image_loss, taps_i)
            return value, g.ravel()

        x, _ = lbfgs_minimize(fg_image, x, iterations=inner_iters)
        f4 = forward(x.reshape(img_shape), net, [CUT_TAP])[CUT_TAP].data

        # (b) primal step in V, image fixed (quartic in V: L-BFGS as well)
        def fg_v(vflat, f4=f4, lam=lam, rho=rho):
            vmap = FeatureMap(tap=CUT_TAP, data=vflat.reshape(v.shape))
            grads: dict = {}
            s_val = alpha * cut_term.evaluate({CUT_TAP: vmap}, grads)
            dv = alpha * grads[CUT_TAP]
            dc = vmap.data - content_f4
            c_val = 0.5 * float(np.sum(dc * dc))
            a_val, dva, _ = _augmented_value_and_grads(vmap.data, f4, lam, rho)
            return s_val + c_val + a_val, (dv + dc + dva).ravel()

        vflat, _ = lbfgs_minimize(fg_v, v.ravel(), iterations=inner_iters)
        v = vflat.reshape(v.shape)

        r = v - f4
        violation = float(np.mean(r * r))
        style_val = alpha * (
            style_term.evaluate(forward(x.reshape(img_shape), net, other_taps), {})
            + cut_term.evaluate({CUT_TAP: FeatureMap(CUT_TAP, v)}, {})
        )
        dctmp = v - content_f4
        content_val = 0.5 * float(np.sum(dctmp * dctmp))
        aug_val = _augmented_value_and_grads(v, f4, lam, rho)[0]
        total = style_val + content_val + aug_val
        if not np.isfinite(total) or total > divergence_limit:
            raise GalDivergence(f"loss diverged at outer iteration {outer}: {total!r}")
        trace.append(
            {
                "iter": outer,
                "total": total,
                "content": content_val,
                "style": style_val,
                "violation": violation,
                "rho": rho,
                "lambda_norm": float(np.linalg.norm(lam)),
            }
        )

        # (c) dual update, then (d) penalty growth
        lam = lam + rho * r
        rho = rho_growth * rho

    return np.clip(x.reshape(img_shape), 0.0, 1.0), trace
