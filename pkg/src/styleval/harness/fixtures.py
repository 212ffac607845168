"""Synthetic desk-scale styles, polygon-scene contents, and ground truth."""

from __future__ import annotations

import numpy as np

from ..images import save_image
from ..coherence import save_gt_manifest


def _convex_polygon(rng, size, n_vertices):
    center = rng.uniform(0.25 * size, 0.75 * size, 2)
    radius = rng.uniform(0.15 * size, 0.4 * size)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n_vertices))
    return center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _fill_polygon(label, verts, value):
    size = label.shape[0]
    ii, jj = np.mgrid[0:size, 0:size]
    pts = np.stack([ii.ravel(), jj.ravel()], axis=1).astype(float)
    inside = np.ones(len(pts), dtype=bool)
    n = len(verts)
    for k in range(n):
        a, b = verts[k], verts[(k + 1) % n]
        edge = b - a
        rel = pts - a
        inside &= edge[0] * rel[:, 1] - edge[1] * rel[:, 0] >= 0
    label.ravel()[inside] = value


def polygon_scene(seed: int, size: int = 64):
    """Flat-colored convex polygons on a flat background, plus the exact
    boundary mask of the label map (transitions marked once, on the
    earlier pixel of each changing horizontal/vertical neighbor pair)."""
    rng = np.random.default_rng(seed)
    label = np.zeros((size, size), dtype=int)
    n_polys = int(rng.integers(2, 5))
    for p in range(1, n_polys + 1):
        verts = _convex_polygon(rng, size, int(rng.integers(3, 7)))
        _fill_polygon(label, verts, p)
    palette = rng.uniform(0.08, 0.92, (n_polys + 1, 3))
    # keep region colors separated so every boundary is a real step
    for p in range(1, n_polys + 1):
        while np.abs(palette[p] - palette[p - 1]).sum() < 0.6:
            palette[p] = rng.uniform(0.08, 0.92, 3)
    img = palette[label]
    boundary = np.zeros((size, size), dtype=bool)
    boundary[:, :-1] |= label[:, :-1] != label[:, 1:]
    boundary[:-1, :] |= label[:-1, :] != label[1:, :]
    return img, boundary


def texture_image(seed: int, size: int = 64):
    """Deterministic style texture; the family cycles with the seed."""
    rng = np.random.default_rng(seed)
    kind = seed % 3
    ii, jj = np.mgrid[0:size, 0:size]
    if kind == 0:  # oriented color stripes
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.2, 0.7)
        phase = (ii * np.sin(theta) + jj * np.cos(theta)) * freq
        img = np.stack(
            [0.5 + 0.45 * np.sin(phase + k * 2.1 + rng.uniform(0, 2 * np.pi)) for k in range(3)],
            axis=-1,
        )
    elif kind == 1:  # checkerboard with jittered palette
        cell = int(rng.integers(4, 10))
        checker = ((ii // cell + jj // cell) % 2).astype(float)
        c0, c1 = rng.uniform(0.05, 0.95, (2, 3))
        img = checker[:, :, None] * c0 + (1 - checker[:, :, None]) * c1
    else:  # smoothed color blobs
        img = rng.random((size, size, 3))
        from scipy.ndimage import gaussian_filter

        img = gaussian_filter(img, sigma=(rng.uniform(2, 4),) * 2 + (0,))
        img = (img - img.min()) / max(float(np.ptp(img)), 1e-9)
    return np.clip(img + 0.02 * rng.standard_normal((size, size, 3)), 0, 1)


def make_desk_pool(n_styles: int, n_contents: int, size: int = 64, seed: int = 0):
    """Named desk-scale pools: styles, contents, and gt masks per content."""
    styles = {f"s{k:02d}": texture_image(seed * 1000 + k, size) for k in range(n_styles)}
    contents = {}
    gt = {}
    for k in range(n_contents):
        cid = f"c{k:02d}"
        img, boundary = polygon_scene(seed * 2000 + 17 + k, size)
        contents[cid] = img
        gt[cid] = [boundary]
    return styles, contents, gt


def trial_id(trial) -> str:
    return "|".join(str(k) for k in trial.key())


def features_by_id(trials) -> dict:
    return {trial_id(t): t.stats() for t in trials if t.status == "ok"}


def simulate_clicks(trials, test: str, n_clicks: int, seed: int, rater_theta: dict):
    """Forced-choice clicks from a planted rater over trial base statistics.

    Pairs come from the same style/content cell, mirroring the study design;
    C-test pairs are restricted to trials whose summed effectiveness sits in
    the top quartile of the pool. The rater prefers by a logistic draw on
    the weighted stat difference.
    """
    from ..calibration import ClickRecord, sigmoid, top_quartile_threshold

    rng = np.random.default_rng(seed)
    ok = [t for t in trials if t.status == "ok"]
    pool = ok
    if test == "C":
        thr = top_quartile_threshold([sum(t.e) for t in ok])
        pool = [t for t in ok if sum(t.e) >= thr]
    cells: dict = {}
    for t in pool:
        cells.setdefault((t.style_id, t.content_id), []).append(t)
    eligible = [c for c in sorted(cells) if len(cells[c]) >= 2]
    if not eligible:
        raise ValueError(f"no eligible {test}-test cells")
    clicks = []
    names = sorted(rater_theta)
    theta = np.array([rater_theta[k] for k in names])
    for i in range(n_clicks):
        cell = eligible[rng.integers(0, len(eligible))]
        a, b = rng.choice(len(cells[cell]), size=2, replace=False)
        ta, tb = cells[cell][a], cells[cell][b]
        xa = np.array([ta.stats()[k] for k in names])
        xb = np.array([tb.stats()[k] for k in names])
        p_left = float(sigmoid(np.array([theta @ (xa - xb)]))[0])
        chosen = "left" if rng.random() < p_left else "right"
        clicks.append(
            ClickRecord(
                pair_id=f"sim{i:06d}",
                test=test,
                left_id=trial_id(ta),
                right_id=trial_id(tb),
                chosen=chosen,
                user_id=f"sim_user{int(rng.integers(0, 8))}",
                timestamp=1_700_000_000_000 + i,
            )
        )
    return clicks


def write_pool_to_disk(styles, contents, gt, out_dir):
    """Write PNG pools plus the gt manifest; returns the manifest path."""
    from pathlib import Path

    out = Path(out_dir)
    (out / "styles").mkdir(parents=True, exist_ok=True)
    (out / "contents").mkdir(parents=True, exist_ok=True)
    for sid, img in styles.items():
        save_image(img, out / "styles" / f"{sid}.png")
    for cid, img in contents.items():
        save_image(img, out / "contents" / f"{cid}.png")
    return save_gt_manifest(gt, out / "gt")
