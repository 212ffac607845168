"""Feature summary statistics and the effectiveness measure.

Gram/covariance summaries of feature maps, the fixed low-dimensional
projection basis built from a content corpus, and the per-layer score
E_i = -ln(KL) between projected Gaussian summaries of a transferred image
and a style image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .nncore import STYLE_TAPS, FeatureMap, NetworkSpec, forward, upsample

KL_CLAMP = 1e-8
COV_REG_SCALE = 1e-6
COV_REG_FLOOR = 1e-12


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSummary:
    tap: str
    gram: np.ndarray
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class CrossSummary:
    tap_pair: tuple
    gram: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class GaussianSummary:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class ProjectionBasis:
    """Per-tap orthonormal projection matrices with their eigenvalues."""

    bases: dict  # tap -> (C, t) matrix, orthonormal columns
    eigenvalues: dict  # tap -> (t,) vector, descending

    def dims(self) -> dict:
        return {tap: p.shape[1] for tap, p in self.bases.items()}


def gram(fm: FeatureMap) -> np.ndarray:
    """G_ij = sum_p f_i,p f_j,p (no normalization)."""
    f = fm.matrix()
    return f @ f.T


def covariance(fm: FeatureMap):
    """Channel means and the position-summed covariance matrix."""
    if fm.positions < 2:
        raise StatsError("covariance needs at least two positions")
    f = fm.matrix()
    mean = f.mean(axis=1)
    centered = f - mean[:, None]
    return mean, centered @ centered.T


def _upsampled_matrix(fm_fine: FeatureMap, fm_coarse: FeatureMap) -> np.ndarray:
    hf, wf = fm_fine.height, fm_fine.width
    hc, wc = fm_coarse.height, fm_coarse.width
    if hf % hc != 0 or wf % wc != 0:
        raise StatsError(
            f"non-integer upsampling ratio {(hf, wf)} from {(hc, wc)}; "
            "nearest-neighbor replication cannot map these taps"
        )
    return upsample(fm_coarse, hf, wf).matrix()


def cross_gram(fm_fine: FeatureMap, fm_coarse: FeatureMap) -> np.ndarray:
    """G^{l,m}_ij = sum_p f^l_i,p (up f^m)_j,p with the coarse map upsampled."""
    return fm_fine.matrix() @ _upsampled_matrix(fm_fine, fm_coarse).T


def cross_covariance(fm_fine: FeatureMap, fm_coarse: FeatureMap) -> np.ndarray:
    """Cross gram with per-channel means removed from both maps.

    The coarse map's mean is taken before upsampling; nearest-neighbor
    replication with integer ratios preserves it, so the order is only a
    determinism convention.
    """
    ff = fm_fine.matrix()
    fc = fm_coarse.matrix()
    up = _upsampled_matrix(fm_fine, fm_coarse)
    return (ff - ff.mean(axis=1, keepdims=True)) @ (up - fc.mean(axis=1)[:, None]).T


def layer_summary(fm: FeatureMap) -> LayerSummary:
    mean, cov = covariance(fm)
    return LayerSummary(tap=fm.tap, gram=gram(fm), mean=mean, cov=cov)


def _fix_eigenvector_signs(vecs: np.ndarray) -> np.ndarray:
    """Largest-magnitude component positive; ties broken by lowest index."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        k = int(np.argmax(np.abs(col)))  # argmax takes the first maximal entry
        if col[k] < 0:
            out[:, j] = -col
    return out


def build_projection_basis(corpus, net: NetworkSpec, taps, dims) -> ProjectionBasis:
    """Top eigenvectors of the corpus-averaged feature covariance per tap.

    `dims` maps tap name -> number of kept eigenvectors.
    """
    corpus = list(corpus)
    if not corpus:
        raise StatsError("empty corpus")
    acc = {tap: None for tap in taps}
    for img in corpus:
        fms = forward(img, net, taps)
        for tap in taps:
            _, cov = covariance(fms[tap])
            acc[tap] = cov if acc[tap] is None else acc[tap] + cov
    bases = {}
    eigenvalues = {}
    for tap in taps:
        avg = acc[tap] / len(corpus)
        c = avg.shape[0]
        t = int(dims[tap])
        if not 1 <= t <= c:
            raise StatsError(f"dimension {t} invalid for {c} channels at {tap}")
        if np.allclose(avg, 0.0):
            raise StatsError(f"degenerate corpus: zero covariance at {tap}")
        w, v = np.linalg.eigh(avg)  # ascending
        order = np.argsort(w)[::-1]
        keep = order[:t]
        bases[tap] = _fix_eigenvector_signs(v[:, keep])
        eigenvalues[tap] = w[keep]
    return ProjectionBasis(bases=bases, eigenvalues=eigenvalues)


def desk_dims(net: NetworkSpec, taps=STYLE_TAPS, paper_dims=(18, 100, 128, 280, 256), frac=0.8):
    """min(full-scale dimension, floor(frac * C)) per tap."""
    probe = forward(np.zeros((32, 32, 3)), net, taps)
    return {
        tap: max(1, min(paper_dims[i], int(frac * probe[tap].channels)))
        for i, tap in enumerate(taps)
    }


def project_summary(mean: np.ndarray, cov: np.ndarray, basis: np.ndarray) -> GaussianSummary:
    """mu = mean^T P, sigma = P^T cov P plus a trace-scaled ridge."""
    mu = mean @ basis
    sigma = basis.T @ cov @ basis
    t = sigma.shape[0]
    eps = COV_REG_SCALE * np.trace(sigma) / t + COV_REG_FLOOR
    return GaussianSummary(mu=mu, sigma=sigma + eps * np.eye(t))


def gaussian_kl(n0: GaussianSummary, n1: GaussianSummary) -> float:
    """KL(N0 || N1) for multivariate Gaussians, via Cholesky of sigma1."""
    t = n0.mu.shape[0]
    if n1.mu.shape[0] != t:
        raise StatsError("dimension mismatch")
    try:
        l1 = np.linalg.cholesky(n1.sigma)
        l0 = np.linalg.cholesky(n0.sigma)
    except np.linalg.LinAlgError as e:
        raise StatsError(f"covariance not positive definite: {e}") from e
    from scipy.linalg import solve_triangular

    # tr(S1^-1 S0) = ||L1^-1 L0||_F^2
    a = solve_triangular(l1, l0, lower=True)
    trace_term = float(np.sum(a * a))
    d = solve_triangular(l1, n1.mu - n0.mu, lower=True)
    quad = float(d @ d)
    logdet1 = 2.0 * float(np.sum(np.log(np.diag(l1))))
    logdet0 = 2.0 * float(np.sum(np.log(np.diag(l0))))
    return 0.5 * (trace_term + quad - t + logdet1 - logdet0)


def projected_summary_of(fm: FeatureMap, basis: ProjectionBasis) -> GaussianSummary:
    mean, cov = covariance(fm)
    return project_summary(mean, cov, basis.bases[fm.tap])


def base_e(transferred: np.ndarray, style: np.ndarray, net: NetworkSpec, basis: ProjectionBasis, taps=STYLE_TAPS) -> np.ndarray:
    """E_i = -ln(max(KL(transferred || style), clamp)) per style tap."""
    fms_t = forward(transferred, net, taps)
    fms_s = forward(style, net, taps)
    out = np.empty(len(taps))
    for i, tap in enumerate(taps):
        n0 = projected_summary_of(fms_t[tap], basis)
        n1 = projected_summary_of(fms_s[tap], basis)
        out[i] = -np.log(max(gaussian_kl(n0, n1), KL_CLAMP))
    return out


def base_e_against_summaries(transferred: np.ndarray, style_summaries: dict, net: NetworkSpec, basis: ProjectionBasis, taps=STYLE_TAPS) -> np.ndarray:
    """base_e with the style side precomputed (one style, many transfers)."""
    fms_t = forward(transferred, net, taps)
    out = np.empty(len(taps))
    for i, tap in enumerate(taps):
        n0 = projected_summary_of(fms_t[tap], basis)
        out[i] = -np.log(max(gaussian_kl(n0, style_summaries[tap]), KL_CLAMP))
    return out


def style_summaries(style: np.ndarray, net: NetworkSpec, basis: ProjectionBasis, taps=STYLE_TAPS) -> dict:
    fms = forward(style, net, taps)
    return {tap: projected_summary_of(fms[tap], basis) for tap in taps}


# ---------------------------------------------------------------------------
# ECB1 basis files
# ---------------------------------------------------------------------------

_BASIS_MAGIC = b"ECB1"


def save_basis(basis: ProjectionBasis, path) -> None:
    chunks = [_BASIS_MAGIC, struct.pack("<I", len(basis.bases))]
    for tap in sorted(basis.bases):
        p = basis.bases[tap]
        name = tap.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<II", p.shape[0], p.shape[1]))
        chunks.append(np.asfortranarray(p.astype("<f4")).tobytes(order="F"))
        chunks.append(basis.eigenvalues[tap].astype("<f8").tobytes())
    with open(str(path), "wb") as f:
        f.write(b"".join(chunks))


def load_basis(path) -> ProjectionBasis:
    with open(str(path), "rb") as f:
        raw = f.read()
    if raw[:4] != _BASIS_MAGIC:
        raise StatsError(f"bad basis magic {raw[:4]!r}")
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise StatsError(f"truncated basis file at {what}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "tap count"))
    bases = {}
    eigenvalues = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        c, t = struct.unpack("<II", take(8, "dims"))
        p = np.frombuffer(take(4 * c * t, "projection"), dtype="<f4")
        bases[name] = p.reshape(c, t, order="F").astype(np.float64)
        ev = np.frombuffer(take(8 * t, "eigenvalues"), dtype="<f8")
        eigenvalues[name] = ev.astype(np.float64)
    return ProjectionBasis(bases=bases, eigenvalues=eigenvalues)
