"""Symmetry-group elements of the within-layer Gram statistic.

On whitened features (zero mean, unit second moment), the affine maps
x -> Ax + b with AA^T + bb^T = I leave the normalized Gram 1/N X^T X
unchanged. Elements are built by Cholesky factoring I - bb^T and rotating.
The cross-layer statistic 1/N X^T Y breaks under any such map with b != 0
through a linear layer with a nonzero offset: the deviation is exactly
b n^T. These are local symmetries at the whitened operating point:
composing two elements with nonzero shifts leaves the set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WITHIN_TOL = 1e-8
BREAK_TOL = 1e-3


class SymmetryError(ValueError):
    pass


@dataclass(frozen=True)
class SymmetryElement:
    b: np.ndarray
    u: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        c = self.b.shape[0]
        uu = self.u.T @ self.u - np.eye(c)
        if np.max(np.abs(uu)) > 1e-10:
            raise SymmetryError("U is not orthonormal")
        resid = self.a @ self.a.T + np.outer(self.b, self.b) - np.eye(c)
        if np.max(np.abs(resid)) > WITHIN_TOL:
            raise SymmetryError(f"AA^T + bb^T deviates from I by {np.max(np.abs(resid)):.2e}")


@dataclass(frozen=True)
class LinearLayerMap:
    """Point-sample (1x1) or spatially homogeneous (rxr window) linear map."""

    m: np.ndarray  # (C_out, C_in) or (C_out, r*r*C_in)
    n: np.ndarray  # (C_out,)
    r: int = 1  # window side; 1 = point sample


def gram_op(w: np.ndarray) -> np.ndarray:
    """Normalized second moment (1/N) W^T W."""
    return w.T @ w / w.shape[0]


def cross_gram_op(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Normalized cross statistic (1/N) X^T Y."""
    return x.T @ y / x.shape[0]


def whiten(x: np.ndarray) -> np.ndarray:
    """Zero the column means and set the second moment to the identity."""
    x = np.asarray(x, dtype=np.float64)
    n, c = x.shape
    if n <= c:
        raise SymmetryError(f"need more samples than channels, got {n} x {c}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    w, v = np.linalg.eigh(cov)
    if w.min() <= 1e-12 * w.max():
        raise SymmetryError("singular sample covariance")
    inv_sqrt = v @ np.diag(1.0 / np.sqrt(w)) @ v.T
    return centered @ inv_sqrt


def construct_element(b: np.ndarray, u: np.ndarray) -> SymmetryElement:
    """Element (b, A) with A = chol(I - bb^T) U; needs ||b|| strictly < 1."""
    b = np.asarray(b, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    c = b.shape[0]
    if np.linalg.norm(b) >= 1.0:
        raise SymmetryError(f"||b|| = {np.linalg.norm(b):.4f} >= 1: factoring fails")
    try:
        chol = np.linalg.cholesky(np.eye(c) - np.outer(b, b))
    except np.linalg.LinAlgError as e:
        raise SymmetryError(f"I - bb^T not positive definite: {e}") from e
    return SymmetryElement(b=b, u=u, a=chol @ u)


def random_element(c: int, rng: np.random.Generator, b_scale: float = 0.5) -> SymmetryElement:
    direction = rng.standard_normal(c)
    b = (b_scale * rng.random()) * direction / np.linalg.norm(direction)
    q, _ = np.linalg.qr(rng.standard_normal((c, c)))
    return construct_element(b, q)


def apply_element(x: np.ndarray, g: SymmetryElement) -> np.ndarray:
    """Row-wise action x_i -> A x_i + b, i.e. X -> X A^T + 1 b^T."""
    return x @ g.a.T + g.b


def compose_affine(g1: SymmetryElement, g2: SymmetryElement):
    """Affine map of applying g1 then g2: (A2 A1, A2 b1 + b2)."""
    return g2.a @ g1.a, g2.a @ g1.b + g2.b


def apply_affine(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ a.T + b


def verify_within_invariance(x: np.ndarray, g: SymmetryElement) -> float:
    """Max-abs deviation of the within Gram under the element's action."""
    return float(np.max(np.abs(gram_op(apply_element(x, g)) - gram_op(x))))


def stack_windows(x: np.ndarray, r: int, stride: int = 1) -> np.ndarray:
    """Stack r x r windows of an (H, W, C) map in row-major scan order.

    Returns (positions, r*r*C); windows are centered on interior positions
    (edges excluded). `stride` subsamples the centers, which the homogeneous
    fixtures use to align windows with constant tiles.
    """
    x = np.asarray(x, dtype=np.float64)
    h, w, c = x.shape
    half = r // 2
    if h < r or w < r:
        raise SymmetryError(f"map {h}x{w} smaller than window {r}")
    rows = []
    for i in range(half, h - (r - 1 - half), stride):
        for j in range(half, w - (r - 1 - half), stride):
            win = x[i - half : i - half + r, j - half : j - half + r, :]
            rows.append(win.reshape(r * r * c))
    return np.array(rows)


def layer_output(x_centers: np.ndarray, stacked: np.ndarray, layer: LinearLayerMap) -> np.ndarray:
    src = x_centers if layer.r == 1 else stacked
    return src @ layer.m.T + layer.n


def psi_vector(b: np.ndarray, r: int) -> np.ndarray:
    """b stacked r*r times, matching the window stacking order."""
    return np.tile(b, r * r)


def verify_cross_breaks(x, layer: LinearLayerMap, g: SymmetryElement):
    """(within-second-layer deviation, cross-layer deviation) under g.

    For the point-sample case x is (N, C); for the homogeneous case x is an
    (H, W, C) map of r x r constant tiles and windows are taken at tile
    centers (stride r), which realizes the within-window correlation
    assumption exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if layer.r == 1:
        if x.ndim != 2:
            raise SymmetryError("point-sample verification expects an (N, C) matrix")
        centers, stacked = x, x
        centers_g = apply_element(centers, g)
        stacked_g = centers_g
    else:
        if x.ndim != 3:
            raise SymmetryError("homogeneous verification expects an (H, W, C) map")
        half = layer.r // 2
        centers = x[half::layer.r, half::layer.r, :].reshape(-1, x.shape[2])
        stacked = stack_windows(x, layer.r, stride=layer.r)
        xg = apply_element(x.reshape(-1, x.shape[2]), g).reshape(x.shape)
        centers_g = xg[half::layer.r, half::layer.r, :].reshape(-1, x.shape[2])
        stacked_g = stack_windows(xg, layer.r, stride=layer.r)
    if int(layer.m.shape[1]) != stacked.shape[1]:
        raise SymmetryError(
            f"layer map expects {layer.m.shape[1]} inputs, features provide {stacked.shape[1]}"
        )
    y = layer_output(centers, stacked, layer)
    y_g = layer_output(centers_g, stacked_g, layer)
    within = float(np.max(np.abs(gram_op(y_g) - gram_op(y))))
    cross = float(np.max(np.abs(cross_gram_op(centers_g, y_g) - cross_gram_op(centers, y))))
    return within, cross


def cross_deviation_prediction(g: SymmetryElement, layer: LinearLayerMap) -> np.ndarray:
    """Closed-form cross-layer Gram change b n^T."""
    return np.outer(g.b, layer.n)


def tiled_homogeneous_map(n_tiles_side: int, r: int, c: int, seed: int) -> np.ndarray:
    """(H, W, C) map of r x r constant tiles whose tile vectors are whitened.

    Windows centered on tiles then satisfy the within-window correlation
    assumption exactly: every feature pair inside a window is the same
    whitened tile vector.
    """
    rng = np.random.default_rng(seed)
    k = n_tiles_side * n_tiles_side
    if k <= c:
        raise SymmetryError("need more tiles than channels to whiten")
    z = whiten(rng.standard_normal((k, c)))
    tiles = z.reshape(n_tiles_side, n_tiles_side, c)
    return np.repeat(np.repeat(tiles, r, axis=0), r, axis=1)


def variance_experiment(style_img, content_img, net, methods, trials: int, seed: int, config_kwargs: dict | None = None):
    """Across-seed variance of per-tap channel-mean features per method.

    Runs `trials` transfers per method with seeds seed..seed+trials-1 and
    reports, per tap, the across-trial variance of the per-channel spatial
    means, averaged over channels.
    """
    from .nncore import STYLE_TAPS, forward
    from .transfer import TransferConfig, run_transfer

    config_kwargs = dict(config_kwargs or {})
    out = {}
    for method in methods:
        means = {tap: [] for tap in STYLE_TAPS}
        for t in range(trials):
            cfg = TransferConfig(method=method, seed=seed + t, **config_kwargs)
            img, _ = run_transfer(style_img, content_img, net, cfg)
            fms = forward(img, net, STYLE_TAPS)
            for tap in STYLE_TAPS:
                means[tap].append(fms[tap].matrix().mean(axis=1))
        out[method] = {
            tap: float(np.mean(np.var(np.array(v), axis=0))) for tap, v in means.items()
        }
    return out
