"""Perspective projection of 3D Gaussians to screen-space ellipses (local affine approximation)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import quaternion as quat
from .camera import Camera

DILATION = 0.3
DET_MIN = 1e-12


@dataclass
class Projected:
    mean2d: np.ndarray  # (N, 2) px
    cov2d: np.ndarray  # (N, 2, 2) px^2, dilation included
    conic: np.ndarray  # (N, 3) inverse covariance (A, B, C)
    depth: np.ndarray  # (N,) view-space z
    culled: np.ndarray  # (N,) bool
    cache: dict

    def __len__(self):
        return len(self.depth)


def covariance_3d(scale, rot):
    R = quat.to_matrix(rot)
    M = R * scale[:, None, :]
    return M @ np.swapaxes(M, 1, 2), R, M


def project(mu, scale, rot, cam: Camera, dilation: float = DILATION) -> Projected:
    W = cam.rotation
    t = mu @ W.T + cam.translation
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    culled = z < cam.near
    zs = np.where(culled, 1.0, z)
    n = len(mu)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / (zs * zs)
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / (zs * zs)
    T = J @ W
    sigma, R, M = covariance_3d(scale, rot)
    cov = T @ sigma @ np.swapaxes(T, 1, 2)
    cov[:, 0, 0] += dilation
    cov[:, 1, 1] += dilation
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    culled = culled | (det <= DET_MIN)
    ds = np.where(culled, 1.0, det)
    conic = np.stack([cov[:, 1, 1] / ds, -cov[:, 0, 1] / ds, cov[:, 0, 0] / ds], axis=1)
    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    cache = {"t": t, "zs": zs, "J": J, "T": T, "sigma": sigma, "R": R, "M": M, "scale": scale, "rot": rot,
             "W": W, "fx": cam.fx, "fy": cam.fy}
    return Projected(mean2d, cov, conic, z, culled, cache)


def project_backward(proj: Projected, d_mean2d, d_conic):
    """Gradients w.r.t. world mean, world scale and (unnormalized) world rotation."""
    c = proj.cache
    t, z, J, T, sigma, R, M = c["t"], c["zs"], c["J"], c["T"], c["sigma"], c["R"], c["M"]
    fx, fy = c["fx"], c["fy"]
    live = ~proj.culled
    d_mean2d = np.where(live[:, None], d_mean2d, 0.0)
    d_conic = np.where(live[:, None], d_conic, 0.0)

    A, B, C = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    K = np.stack([np.stack([A, B], -1), np.stack([B, C], -1)], -2)
    gk = np.stack([np.stack([d_conic[:, 0], 0.5 * d_conic[:, 1]], -1),
                   np.stack([0.5 * d_conic[:, 1], d_conic[:, 2]], -1)], -2)
    g_cov = -K @ gk @ K
    Tt = np.swapaxes(T, 1, 2)
    g_sigma = Tt @ g_cov @ T
    g_T = 2.0 * g_cov @ T @ sigma
    g_J = g_T @ c["W"].T

    x, y = t[:, 0], t[:, 1]
    z2, z3 = z * z, z * z * z
    dt = np.zeros_like(t)
    dt[:, 0] = g_J[:, 0, 2] * (-fx / z2) + d_mean2d[:, 0] * fx / z
    dt[:, 1] = g_J[:, 1, 2] * (-fy / z2) + d_mean2d[:, 1] * fy / z
    dt[:, 2] = (g_J[:, 0, 0] * (-fx / z2) + g_J[:, 0, 2] * (2.0 * fx * x / z3)
                + g_J[:, 1, 1] * (-fy / z2) + g_J[:, 1, 2] * (2.0 * fy * y / z3)
                - d_mean2d[:, 0] * fx * x / z2 - d_mean2d[:, 1] * fy * y / z2)
    d_mu = dt @ c["W"]

    g_M = 2.0 * g_sigma @ M
    d_scale = np.sum(g_M * R, axis=1)
    d_R = g_M * c["scale"][:, None, :]
    d_rot = quat.matrix_grad_to_quat(c["rot"], d_R)
    return d_mu, d_scale, d_rot
