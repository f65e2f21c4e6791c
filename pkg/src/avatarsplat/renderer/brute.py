"""Reference compositor: every pixel walks every Gaussian in global depth order.

No tiles, no footprint culling.  Only used to check the tiled path.
"""
import numpy as np

from .camera import Camera
from .projection import Projected
from .raster import RenderTarget


def render_brute_force(proj: Projected, colors, alphas, cam: Camera, background=(0.0, 0.0, 0.0),
                       t_min: float = 1e-4) -> RenderTarget:
    H, W = cam.height, cam.width
    py, px = np.mgrid[0:H, 0:W]
    pts = np.stack([px.reshape(-1) + 0.5, py.reshape(-1) + 0.5], axis=1)
    n_pix = len(pts)
    rgb = np.zeros((n_pix, 3))
    T = np.ones(n_pix)
    done = np.zeros(n_pix, dtype=bool)
    count = np.zeros(n_pix, dtype=np.int64)
    live = np.nonzero(~proj.culled)[0]
    order = live[np.lexsort((live, proj.depth[live]))]
    colors = np.asarray(colors, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    for g in order:
        inv = np.linalg.inv(proj.cov2d[g])
        d = pts - proj.mean2d[g]
        q = np.einsum("ni,ij,nj->n", d, inv, d)
        a = np.where(done, 0.0, alphas[g] * np.exp(-0.5 * q))
        rgb += colors[g] * (a * T)[:, None]
        T = T * (1.0 - a)
        count += ~done
        done |= T < t_min
    out = rgb + T[:, None] * np.asarray(background, dtype=np.float64)
    return RenderTarget(out.reshape(H, W, 3), (1.0 - T).reshape(H, W), T.reshape(H, W), count.reshape(H, W))
