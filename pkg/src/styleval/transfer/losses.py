"""Style-transfer losses with hand-derived feature gradients.

Every builder returns a MethodLoss: a closure over tap feature maps that
yields (value, {tap: dValue/dFeature}) in the shape nncore.input_gradient
expects, plus the content/style split for tracing. Style targets are
precomputed from the style image's features at construction.
"""

from __future__ import annotations

import numpy as np

from ..nncore import CONTENT_TAP, STYLE_TAPS, FeatureMap, upsample_adjoint, upsample

CROSS_PAIRS = (("R41", "R51"), ("R31", "R41"), ("R21", "R31"), ("R11", "R21"))


class LossError(ValueError):
    pass


def _to_matrix(fm: FeatureMap) -> np.ndarray:
    return fm.matrix()


def _grad_to_map(dmat: np.ndarray, h: int, w: int) -> np.ndarray:
    return dmat.T.reshape(h, w, -1)


def _check_shape(fm: FeatureMap, target: FeatureMap):
    if fm.data.shape != target.data.shape:
        raise LossError(
            f"shape mismatch at {fm.tap}: {fm.data.shape} vs {target.data.shape}"
        )


class Term:
    """One additive loss term: value(features) and gradient accumulation."""

    def evaluate(self, features, grads):
        raise NotImplementedError


class ContentTerm(Term):
    def __init__(self, target: FeatureMap, tap: str = CONTENT_TAP):
        self.tap = tap
        self.target = target

    def evaluate(self, features, grads):
        fm = features[self.tap]
        _check_shape(fm, self.target)
        d = fm.data - self.target.data
        grads[self.tap] = grads.get(self.tap, 0.0) + d
        return 0.5 * float(np.sum(d * d))


class GramStyleTerm(Term):
    """Within-layer Gram (or covariance) matching, Gatys normalization."""

    def __init__(self, style_features: dict, weights: dict, use_covariance: bool = False, taps=STYLE_TAPS):
        self.taps = tuple(taps)
        self.weights = weights
        self.use_cov = use_covariance
        self.targets = {}
        for tap in self.taps:
            f = _to_matrix(style_features[tap])
            if use_covariance:
                f = f - f.mean(axis=1, keepdims=True)
            self.targets[tap] = f @ f.T

    def evaluate(self, features, grads):
        total = 0.0
        for tap in self.taps:
            fm = features[tap]
            n, m = fm.channels, fm.positions
            w = self.weights.get(tap, 1.0)
            f = _to_matrix(fm)
            fc = f - f.mean(axis=1, keepdims=True) if self.use_cov else f
            d = fc @ fc.T - self.targets[tap]
            total += w / (4.0 * n * n * m * m) * float(np.sum(d * d))
            df = (w / (n * n * m * m)) * (d @ fc)
            if self.use_cov:
                df = df - df.mean(axis=1, keepdims=True)
            grads[tap] = grads.get(tap, 0.0) + _grad_to_map(df, fm.height, fm.width)
        return total


class MeanStyleTerm(Term):
    """L2 between per-channel feature means at each style tap."""

    def __init__(self, style_features: dict, taps=STYLE_TAPS):
        self.taps = tuple(taps)
        self.targets = {t: _to_matrix(style_features[t]).mean(axis=1) for t in self.taps}

    def evaluate(self, features, grads):
        total = 0.0
        for tap in self.taps:
            fm = features[tap]
            m = fm.positions
            mu = _to_matrix(fm).mean(axis=1)
            d = mu - self.targets[tap]
            total += float(np.sum(d * d))
            dmap = np.broadcast_to(2.0 * d / m, (fm.height, fm.width, fm.channels))
            grads[tap] = grads.get(tap, 0.0) + dmap
        return total


class HistogramStyleTerm(Term):
    """Per-channel sorted-value matching against style quantiles."""

    def __init__(self, style_features: dict, taps=STYLE_TAPS):
        self.taps = tuple(taps)
        self.style = {t: _to_matrix(style_features[t]) for t in self.taps}

    def evaluate(self, features, grads):
        total = 0.0
        for tap in self.taps:
            fm = features[tap]
            n, m = fm.channels, fm.positions
            f = _to_matrix(fm)
            # style channel resampled at m midpoint quantiles
            q = np.quantile(self.style[tap], (np.arange(m) + 0.5) / m, axis=1).T
            order = np.argsort(f, axis=1, kind="stable")
            sorted_f = np.take_along_axis(f, order, axis=1)
            d = sorted_f - q
            total += float(np.sum(d * d)) / (n * m)
            df = np.zeros_like(f)
            np.put_along_axis(df, order, 2.0 * d / (n * m), axis=1)
            grads[tap] = grads.get(tap, 0.0) + _grad_to_map(df, fm.height, fm.width)
        return total


class CrossLayerStyleTerm(Term):
    """Pairwise-descending cross-layer Gram (or covariance) matching."""

    def __init__(self, style_features: dict, weights: dict, use_covariance: bool = False, pairs=CROSS_PAIRS):
        self.pairs = tuple(pairs)
        self.weights = weights
        self.use_cov = use_covariance
        self.targets = {}
        for fine, coarse in self.pairs:
            self.targets[(fine, coarse)] = self._cross(style_features[fine], style_features[coarse])

    def _cross(self, fm_fine: FeatureMap, fm_coarse: FeatureMap) -> np.ndarray:
        up = upsample(fm_coarse, fm_fine.height, fm_fine.width)
        fl = _to_matrix(fm_fine)
        um = _to_matrix(up)
        if self.use_cov:
            fl = fl - fl.mean(axis=1, keepdims=True)
            um = um - _to_matrix(fm_coarse).mean(axis=1)[:, None]
        return fl @ um.T

    def evaluate(self, features, grads):
        total = 0.0
        for fine, coarse in self.pairs:
            fm_f, fm_c = features[fine], features[coarse]
            if fm_f.height % fm_c.height or fm_f.width % fm_c.width:
                raise LossError(f"non-integer tap ratio for pair {(fine, coarse)}")
            nl, ml = fm_f.channels, fm_f.positions
            nm = fm_c.channels
            w = self.weights.get(fine, 1.0)
            norm = w / (4.0 * nl * nm * ml * ml)
            up = upsample(fm_c, fm_f.height, fm_f.width)
            fl = _to_matrix(fm_f)
            um = _to_matrix(up)
            if self.use_cov:
                fl = fl - fl.mean(axis=1, keepdims=True)
                um = um - _to_matrix(fm_c).mean(axis=1)[:, None]
            d = fl @ um.T - self.targets[(fine, coarse)]
            total += norm * float(np.sum(d * d))
            dfl = 2.0 * norm * (d @ um)
            dum = 2.0 * norm * (d.T @ fl)
            if self.use_cov:
                dfl = dfl - dfl.mean(axis=1, keepdims=True)
            grads[fine] = grads.get(fine, 0.0) + _grad_to_map(dfl, fm_f.height, fm_f.width)
            dcoarse = upsample_adjoint(
                _grad_to_map(dum, fm_f.height, fm_f.width), fm_c.height, fm_c.width
            )
            if self.use_cov:
                dc = dcoarse.reshape(fm_c.positions, nm)
                dcoarse = (dc - dc.mean(axis=0)).reshape(fm_c.data.shape)
            grads[coarse] = grads.get(coarse, 0.0) + dcoarse
        return total


class MethodLoss:
    """Total loss of one transfer method over tap features.

    `combine` is "sum" (content + alpha * style) or "product"
    (content * style). After each call `components` holds the split.
    """

    def __init__(self, content_term, style_terms, alpha: float, taps, combine: str = "sum"):
        self.content_term = content_term
        self.style_terms = list(style_terms)
        self.alpha = alpha
        self.taps = tuple(taps)
        self.combine = combine
        self.components = {"content": 0.0, "style": 0.0}

    def __call__(self, features):
        cgrads: dict = {}
        sgrads: dict = {}
        c_val = self.content_term.evaluate(features, cgrads) if self.content_term else 0.0
        s_val = 0.0
        for term in self.style_terms:
            s_val += term.evaluate(features, sgrads)
        self.components = {"content": c_val, "style": s_val}
        grads: dict = {}
        if self.combine == "sum":
            value = c_val + self.alpha * s_val
            for tap, g in cgrads.items():
                grads[tap] = grads.get(tap, 0.0) + g
            for tap, g in sgrads.items():
                grads[tap] = grads.get(tap, 0.0) + self.alpha * g
        elif self.combine == "product":
            value = c_val * s_val
            for tap, g in cgrads.items():
                grads[tap] = grads.get(tap, 0.0) + s_val * g
            for tap, g in sgrads.items():
                grads[tap] = grads.get(tap, 0.0) + c_val * g
        else:
            raise LossError(f"unknown combine mode {self.combine!r}")
        return value, grads


GATYS_FAMILY = {
    "Gatys",
    "GatysAggressive",
    "GatysH",
    "GatysL",
    "GatysM",
    "GatysC",
    "GatysCM",
}
CROSS_FAMILY = {"XL", "XLAggressive", "XM", "XLC", "XLCM"}
CONTROLS = {"StyleControl", "ContentControl"}
METHODS = tuple(sorted(GATYS_FAMILY | CROSS_FAMILY | {"GAL"} | CONTROLS))


def layerwise_factor_weights(style_features: dict, taps=STYLE_TAPS) -> dict:
    """Per-tap factors 1/C^2 from that tap's channel width."""
    return {t: float(style_features[t].channels) ** -2 for t in taps}


def build_method_loss(method: str, style_features: dict, content_target: FeatureMap, alpha: float, layer_weights: dict | None = None) -> MethodLoss:
    """Assemble the named method's loss from precomputed targets."""
    w = dict(layer_weights) if layer_weights else {}
    content = ContentTerm(content_target)
    taps = tuple(STYLE_TAPS) + (CONTENT_TAP,)
    if method in ("Gatys", "GatysAggressive"):
        style = [GramStyleTerm(style_features, w)]
    elif method == "GatysL":
        factors = layerwise_factor_weights(style_features)
        merged = {t: factors[t] * w.get(t, 1.0) for t in factors}
        style = [GramStyleTerm(style_features, merged)]
    elif method == "GatysM":
        style = [GramStyleTerm(style_features, w), MeanStyleTerm(style_features)]
    elif method == "GatysC":
        style = [GramStyleTerm(style_features, w, use_covariance=True)]
    elif method == "GatysCM":
        style = [
            GramStyleTerm(style_features, w, use_covariance=True),
            MeanStyleTerm(style_features),
        ]
    elif method == "GatysH":
        style = [GramStyleTerm(style_features, w), HistogramStyleTerm(style_features)]
    elif method in ("XL", "XLAggressive"):
        style = [CrossLayerStyleTerm(style_features, w)]
    elif method == "XLC":
        style = [CrossLayerStyleTerm(style_features, w, use_covariance=True)]
    elif method == "XLCM":
        style = [
            CrossLayerStyleTerm(style_features, w, use_covariance=True),
            MeanStyleTerm(style_features),
        ]
    elif method == "XM":
        return MethodLoss(content, [CrossLayerStyleTerm(style_features, w)], alpha, taps, combine="product")
    else:
        raise LossError(f"unknown or non-closure method {method!r}")
    return MethodLoss(content, style, alpha, taps)
