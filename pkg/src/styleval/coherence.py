"""Contour-based coherence scoring.

A single-scale oriented half-disc contour detector (luminance plus two
opponent color channels, chi-squared histogram difference, non-maximum
suppression) stands in for the full gPb machinery; the score of an image is
the maximum F-measure of its detected contours against ground-truth boundary
masks over a threshold sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

N_ORIENTATIONS = 8
DISC_RADIUS = 3
N_BINS = 8
N_THRESHOLDS = 30


class CoherenceError(ValueError):
    pass


@dataclass(frozen=True)
class ContourMap:
    strength: np.ndarray  # (H, W) in [0, 1]

    @property
    def height(self) -> int:
        return self.strength.shape[0]

    @property
    def width(self) -> int:
        return self.strength.shape[1]


def _opponent_channels(image: np.ndarray) -> np.ndarray:
    """Luminance and two opponent color channels, each mapped into [0, 1]."""
    r, g, b = image[:, :, 0], image[:, :, 1], image[:, :, 2]
    lum = (r + g + b) / 3.0
    o1 = (r - g + 1.0) / 2.0
    o2 = ((r + g) / 2.0 - b + 1.0) / 2.0
    return np.stack([lum, o1, o2], axis=-1)


def _disc_offsets(radius: int):
    offs = []
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            if di * di + dj * dj <= radius * radius and (di, dj) != (0, 0):
                offs.append((di, dj))
    return offs


def _shift_sum(onehot: np.ndarray, offsets) -> np.ndarray:
    """Sum of zero-padded shifts of a (H, W, B) one-hot stack."""
    h, w, _ = onehot.shape
    acc = np.zeros_like(onehot)
    for di, dj in offsets:
        src_i = slice(max(0, di), min(h, h + di))
        dst_i = slice(max(0, -di), min(h, h - di))
        src_j = slice(max(0, dj), min(w, w + dj))
        dst_j = slice(max(0, -dj), min(w, w - dj))
        acc[dst_i, dst_j] += onehot[src_i, src_j]
    return acc


def detect_contours(image: np.ndarray) -> ContourMap:
    """Oriented half-disc Pb with non-maximum suppression, scaled to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    channels = _opponent_channels(image)
    offsets = _disc_offsets(DISC_RADIUS)

    onehots = []
    for c in range(3):
        vals = np.clip(channels[:, :, c], 0.0, 1.0)
        bins = np.minimum((vals * N_BINS).astype(int), N_BINS - 1)
        oh = np.zeros((h, w, N_BINS))
        np.put_along_axis(oh, bins[:, :, None], 1.0, axis=2)
        onehots.append(oh)

    responses = np.zeros((N_ORIENTATIONS, h, w))
    for k in range(N_ORIENTATIONS):
        theta = k * np.pi / N_ORIENTATIONS
        uj, ui = np.cos(theta), np.sin(theta)
        side_a, side_b = [], []
        for di, dj in offsets:
            s = uj * di - ui * dj
            if s > 1e-12:
                side_a.append((di, dj))
            elif s < -1e-12:
                side_b.append((di, dj))
        resp = np.zeros((h, w))
        both_sides = None
        for oh in onehots:
            ha = _shift_sum(oh, side_a)
            hb = _shift_sum(oh, side_b)
            na = ha.sum(axis=2, keepdims=True)
            nb = hb.sum(axis=2, keepdims=True)
            if both_sides is None:
                # disc clipped to one side at borders carries no evidence
                both_sides = (na[:, :, 0] > 0) & (nb[:, :, 0] > 0)
            ha = np.divide(ha, na, out=np.zeros_like(ha), where=na > 0)
            hb = np.divide(hb, nb, out=np.zeros_like(hb), where=nb > 0)
            denom = ha + hb
            num = (ha - hb) ** 2
            resp += 0.5 * np.sum(
                np.divide(num, denom, out=np.zeros_like(num), where=denom > 0), axis=2
            )
        responses[k] = resp * both_sides

    best = np.argmax(responses, axis=0)
    strength = np.take_along_axis(responses, best[None], axis=0)[0]

    # suppress along the normal of the maximizing orientation; the strict
    # test on one side thins exact plateaus (e.g. two-tone steps) to 1px
    suppressed = np.zeros_like(strength)
    for k in range(N_ORIENTATIONS):
        theta = k * np.pi / N_ORIENTATIONS
        ni, nj = int(np.rint(np.cos(theta))), int(np.rint(-np.sin(theta)))
        mask = best == k
        fwd = _shifted_values(strength, ni, nj)
        bwd = _shifted_values(strength, -ni, -nj)
        keep = mask & (strength > fwd) & (strength >= bwd)
        suppressed[keep] = strength[keep]

    peak = suppressed.max()
    if peak > 0:
        suppressed = suppressed / peak
    return ContourMap(strength=suppressed)


def _shifted_values(arr: np.ndarray, di: int, dj: int) -> np.ndarray:
    """Value of arr at (i+di, j+dj); out-of-range reads 0."""
    h, w = arr.shape
    out = np.zeros_like(arr)
    src_i = slice(max(0, di), min(h, h + di))
    dst_i = slice(max(0, -di), min(h, h - di))
    src_j = slice(max(0, dj), min(w, w + dj))
    dst_j = slice(max(0, -dj), min(w, w - dj))
    out[dst_i, dst_j] = arr[src_i, src_j]
    return out


# ---------------------------------------------------------------------------
# precision/recall matching
# ---------------------------------------------------------------------------

def greedy_match_count(pred: np.ndarray, gt: np.ndarray, dmax: float) -> int:
    """Greedy nearest-first one-to-one matching between two pixel sets.

    `pred` and `gt` are (n, 2) integer coordinate arrays. Ties in distance
    are broken by prediction index then ground-truth index.
    """
    if len(pred) == 0 or len(gt) == 0:
        return 0
    tree = cKDTree(gt)
    cand = tree.query_ball_point(pred, r=dmax + 1e-9)
    pairs = []
    for ip, neighbors in enumerate(cand):
        for ig in neighbors:
            d = float(np.hypot(*(pred[ip] - gt[ig])))
            pairs.append((d, ip, ig))
    pairs.sort()
    used_p = np.zeros(len(pred), dtype=bool)
    used_g = np.zeros(len(gt), dtype=bool)
    matched = 0
    for _, ip, ig in pairs:
        if not used_p[ip] and not used_g[ig]:
            used_p[ip] = used_g[ig] = True
            matched += 1
    return matched


def _mask_coords(mask: np.ndarray) -> np.ndarray:
    return np.argwhere(mask)


def pr_match(pb: ContourMap, annotations, threshold: float, dmax: float):
    """(precision, recall) of thresholded contours against annotations.

    Recall counts matches against the union of all annotations; precision is
    computed per annotation and averaged. An empty prediction set has
    precision 1 by convention.
    """
    annotations = [np.asarray(a, dtype=bool) for a in annotations]
    if not annotations:
        raise CoherenceError("no annotations")
    for a in annotations:
        if a.shape != pb.strength.shape:
            raise CoherenceError(f"annotation shape {a.shape} != map {pb.strength.shape}")
    pred = _mask_coords(pb.strength > threshold)
    if len(pred) == 0:
        return 1.0, 0.0
    union = annotations[0].copy()
    for a in annotations[1:]:
        union |= a
    gt_union = _mask_coords(union)
    if len(gt_union) == 0:
        return 0.0, 0.0
    matched_union = greedy_match_count(pred, gt_union, dmax)
    recall = matched_union / len(gt_union)
    precisions = []
    for a in annotations:
        coords = _mask_coords(a)
        m = greedy_match_count(pred, coords, dmax) if len(coords) else 0
        precisions.append(m / len(pred))
    return float(np.mean(precisions)), float(recall)


def default_dmax(height: int, width: int) -> float:
    return 0.0075 * float(np.hypot(height, width))


def threshold_sweep(n: int = N_THRESHOLDS) -> np.ndarray:
    """n evenly spaced thresholds strictly inside (0, 1)."""
    return np.linspace(0.0, 1.0, n + 2)[1:-1]


def max_f_score(pb: ContourMap, annotations, dmax: float | None = None) -> float:
    if dmax is None:
        dmax = default_dmax(pb.height, pb.width)
    best = 0.0
    for t in threshold_sweep():
        p, r = pr_match(pb, annotations, float(t), dmax)
        if p + r > 0:
            best = max(best, 2 * p * r / (p + r))
    return best


def base_c(transferred: np.ndarray, annotations, dmax: float | None = None) -> float:
    """Max F-score of the transferred image's contours against ground truth."""
    return max_f_score(detect_contours(transferred), annotations, dmax=dmax)


# ---------------------------------------------------------------------------
# ground-truth files: binary PGM masks plus a JSON manifest
# ---------------------------------------------------------------------------

def save_pgm_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask, dtype=bool)
    with open(str(path), "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (mask.shape[1], mask.shape[0]))
        f.write((mask.astype(np.uint8) * 255).tobytes())


def load_pgm_mask(path) -> np.ndarray:
    with open(str(path), "rb") as f:
        raw = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        tokens.append(raw[i:j])
        i = j
    if tokens[0] != b"P5":
        raise CoherenceError(f"unsupported PGM magic {tokens[0]!r}")
    w, h = int(tokens[1]), int(tokens[2])
    i += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=i)
    return data.reshape(h, w) > 127


def load_gt_manifest(path):
    """JSON manifest mapping content id -> list of mask file paths."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    out = {}
    for content_id, files in manifest.items():
        out[content_id] = [load_pgm_mask(path.parent / f) for f in files]
    return out


def save_gt_manifest(gt: dict, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for content_id, masks in gt.items():
        files = []
        for i, mask in enumerate(masks):
            fname = f"{content_id}_gt{i}.pgm"
            save_pgm_mask(mask, directory / fname)
            files.append(fname)
        manifest[content_id] = files
    mpath = directory / "gt_manifest.json"
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return mpath
