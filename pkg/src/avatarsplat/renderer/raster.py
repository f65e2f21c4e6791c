"""Tile binning, depth-ordered compositing dispatch and its backward pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..parallel import get_threads
from . import _backend
from .camera import Camera
from .projection import Projected


@dataclass
class RenderSettings:
    tile_size: int = 16
    t_min: float = 1e-4
    eps_cut: float = 1e-9  # footprint ends where a Gaussian's alpha falls below this
    dilation: float = 0.3
    backend: str | None = None
    threads: int | None = None


@dataclass
class RenderTarget:
    rgb: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    transmittance: np.ndarray  # (H, W)
    n_contrib: np.ndarray  # (H, W) list entries walked per pixel
    state: dict | None = field(default=None, repr=False)


def footprint_cutoff(alpha, eps_cut):
    """Mahalanobis^2 beyond which alpha * exp(-q/2) < eps_cut; -inf if never visible."""
    with np.errstate(divide="ignore"):
        return np.where(alpha > eps_cut, 2.0 * np.log(np.maximum(alpha, 1e-300) / eps_cut), -np.inf)


def bin_gaussians(proj: Projected, qcut, width, height, tile_size):
    """Global (tile, depth, index) sort; returns per-tile [start, end) and the point list."""
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    n_tiles = tiles_x * tiles_y
    live = ~proj.culled & (qcut > 0)
    idx = np.nonzero(live)[0]
    q = qcut[idx]
    m = proj.mean2d[idx]
    rx = np.sqrt(q * proj.cov2d[idx, 0, 0])
    ry = np.sqrt(q * proj.cov2d[idx, 1, 1])
    tx0 = np.floor((m[:, 0] - rx) / tile_size)
    tx1 = np.floor((m[:, 0] + rx) / tile_size)
    ty0 = np.floor((m[:, 1] - ry) / tile_size)
    ty1 = np.floor((m[:, 1] + ry) / tile_size)
    onscreen = (tx1 >= 0) & (tx0 < tiles_x) & (ty1 >= 0) & (ty0 < tiles_y)
    idx = idx[onscreen]
    tx0 = np.clip(tx0[onscreen], 0, tiles_x - 1).astype(np.int64)
    tx1 = np.clip(tx1[onscreen], 0, tiles_x - 1).astype(np.int64)
    ty0 = np.clip(ty0[onscreen], 0, tiles_y - 1).astype(np.int64)
    ty1 = np.clip(ty1[onscreen], 0, tiles_y - 1).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(idx)), counts)
    offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = tx0[owner] + offset % nx[owner]
    tile_y = ty0[owner] + offset // nx[owner]
    tile_id = tile_y * tiles_x + tile_x
    gid = idx[owner]
    order = np.lexsort((gid, proj.depth[gid], tile_id))
    point_list = np.ascontiguousarray(gid[order], dtype=np.int64)
    sorted_tiles = tile_id[order]
    tiles = np.arange(n_tiles)
    tile_start = np.searchsorted(sorted_tiles, tiles, side="left").astype(np.int64)
    tile_end = np.searchsorted(sorted_tiles, tiles, side="right").astype(np.int64)
    return tile_start, tile_end, point_list


def pack_pairs(point_list, means, conic, qcut, alphas, colors):
    """Per-(tile, Gaussian) rows in list order so the compositor streams memory linearly.

    Columns: mean_x, mean_y, conic (a, b, c), qcut, alpha, rgb, footprint half-width x and y.
    """
    pd = np.empty((len(point_list), 12))
    pd[:, 0:2] = means[point_list]
    pd[:, 2:5] = conic[point_list]
    pd[:, 5] = qcut[point_list]
    pd[:, 6] = alphas[point_list]
    pd[:, 7:10] = colors[point_list]
    # footprint half-widths: extent of the ellipse q = qcut along each axis
    a, b, c = pd[:, 2], pd[:, 3], pd[:, 4]
    det = a * c - b * b
    pd[:, 10] = np.sqrt(pd[:, 5] * c / det)
    pd[:, 11] = np.sqrt(pd[:, 5] * a / det)
    return pd


def rasterize(proj: Projected, colors, alphas, cam: Camera, background=(0.0, 0.0, 0.0),
              settings: RenderSettings | None = None) -> RenderTarget:
    s = settings or RenderSettings()
    colors = np.ascontiguousarray(colors, dtype=np.float64)
    alphas = np.ascontiguousarray(alphas, dtype=np.float64)
    qcut = np.ascontiguousarray(footprint_cutoff(alphas, s.eps_cut))
    W, H = cam.width, cam.height
    tile_start, tile_end, point_list = bin_gaussians(proj, qcut, W, H, s.tile_size)
    pd = pack_pairs(point_list, proj.mean2d, proj.conic, qcut, alphas, colors)
    rgb = np.empty((H, W, 3))
    T = np.empty((H, W))
    last = np.empty((H, W), dtype=np.int64)
    bg = [float(b) for b in background]
    _backend.get(s.backend).raster_forward(
        pd, tile_start, tile_end, bg[0], bg[1], bg[2], W, H, s.tile_size, s.t_min,
        s.threads or get_threads(), rgb, T, last)
    state = {
        "pairs": pd, "n_gaussians": len(alphas), "tile_start": tile_start, "tile_end": tile_end,
        "point_list": point_list, "background": bg, "width": W, "height": H, "settings": s,
    }
    return RenderTarget(rgb, 1.0 - T, T, last, state)


PAIR_COLUMNS = ("mean_x", "mean_y", "conic_a", "conic_b", "conic_c", "red", "green", "blue", "alpha")


def rasterize_backward(target: RenderTarget, d_rgb, d_alpha):
    """Gradients w.r.t. 2D means, conics, colors and alphas.

    Each (tile, Gaussian) pair accumulates into its own row; rows are then
    reduced per Gaussian in a fixed order, so results do not depend on the
    thread schedule.
    """
    st = target.state
    if st is None:
        raise ValueError("render target carries no forward state; re-render before calling backward")
    s = st["settings"]
    H, W = st["height"], st["width"]
    d_rgb = np.ascontiguousarray(np.broadcast_to(d_rgb, (H, W, 3)), dtype=np.float64)
    d_alpha = np.ascontiguousarray(np.broadcast_to(d_alpha, (H, W)), dtype=np.float64)
    pl = st["point_list"]
    pair = np.zeros((len(pl), 9))
    bg = st["background"]
    _backend.get(s.backend).raster_backward(
        st["pairs"], st["tile_start"], st["tile_end"], bg[0], bg[1], bg[2], W, H, s.tile_size,
        d_rgb, d_alpha, target.n_contrib, pair, s.threads or get_threads())
    n = st["n_gaussians"]
    g = np.stack([np.bincount(pl, weights=pair[:, j], minlength=n) for j in range(9)], axis=1)
    return g[:, 0:2], g[:, 2:5], g[:, 5:8], g[:, 8]
