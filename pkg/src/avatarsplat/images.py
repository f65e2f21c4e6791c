"""8-bit PNG exchange.  Files hold straight (unpremultiplied) color; memory holds linear floats."""
from __future__ import annotations

import numpy as np
from PIL import Image


def to_uint8(x):
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img):
    arr = to_uint8(img)
    try:
        Image.fromarray(arr).save(path, format="PNG")
    except OSError as e:
        raise OSError(f"cannot write image {path}: {e}") from e


def read_png(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im, dtype=np.float64) / 255.0
    except OSError as e:
        raise OSError(f"cannot read image {path}: {e}") from e


def unpremultiply(rgb, alpha):
    a = np.asarray(alpha)[..., None]
    return np.where(a > 0, rgb / np.where(a > 0, a, 1.0), 0.0)


def write_rgba_pair(rgb_path, alpha_path, premult_rgb, alpha):
    """Store premultiplied-over-black color as straight color plus a separate mask."""
    write_png(rgb_path, unpremultiply(premult_rgb, alpha))
    write_png(alpha_path, alpha)


def read_rgba_pair(rgb_path, alpha_path):
    """Inverse of write_rgba_pair: returns (premultiplied rgb, alpha)."""
    rgb = read_png(rgb_path)[..., :3]
    alpha = read_png(alpha_path)
    if alpha.ndim == 3:
        alpha = alpha[..., 0]
    return rgb * alpha[..., None], alpha
