"""RGB image container plus PNG/PPM I/O and bilinear resizing.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1].
Everything downstream (feature extraction, losses, contour detection)
consumes this representation.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as _PILImage

MIN_SIDE = 8


class ImageError(ValueError):
    pass


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the (H, W, 3) float convention and return the array as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected (H, W, 3) array, got shape {img.shape}")
    if img.shape[0] < MIN_SIDE or img.shape[1] < MIN_SIDE:
        raise ImageError(f"image smaller than {MIN_SIDE}px: {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ImageError("image contains non-finite values")
    return img


def load_image(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".ppm") or path.endswith(".pnm"):
        return _load_ppm(path)
    with _PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return validate_image(arr)


def save_image(img: np.ndarray, path) -> None:
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.rint(img * 255.0).astype(np.uint8)
    _PILImage.fromarray(data, mode="RGB").save(str(path))


def _load_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    i = 0
    # header: magic, width, height, maxval; '#' comments allowed
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
    if tokens[0] != b"P6":
        raise ImageError(f"unsupported PPM magic {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    i += 1  # single whitespace after maxval
    data = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=i)
    return validate_image(data.reshape(h, w, 3).astype(np.float64) / maxval)


def save_ppm(img: np.ndarray, path) -> None:
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.rint(img * 255.0).astype(np.uint8)
    with open(str(path), "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(data.tobytes())


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers, channels untouched."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_to_width(img: np.ndarray, width: int) -> np.ndarray:
    """Resize preserving aspect ratio; height rounded, floor of MIN_SIDE."""
    h, w = img.shape[:2]
    out_h = max(MIN_SIDE, int(round(h * width / w)))
    return resize_bilinear(img, out_h, width)


def noise_image(height: int, width: int, seed: int, mean: float = 0.5, std: float = 0.1) -> np.ndarray:
    """Seeded Gaussian noise image clamped to [0, 1]."""
    rng = np.random.default_rng(seed)
    img = mean + std * rng.standard_normal((height, width, 3))
    return np.clip(img, 0.0, 1.0)
