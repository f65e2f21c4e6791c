"""Rigid attachment of triangle-local Gaussians to posed mesh faces."""
from __future__ import annotations

import numpy as np

from .. import quaternion as quat
from ..geometry import Bindings, FaceFrames, Mesh, TriangleFrame, compute_frames
from ..parallel import get_threads
from . import _backend
from .gaussians import LocalGaussianSet, WorldGaussianSet


class PoseContext:
    """Everything posing needs from the mesh, flattened for the kernels.

    With a mesh, each Gaussian sits at its binding's barycentric point.  With
    bare frames (no mesh) the frame origin is used, which is what a
    single-face hand example expects.
    """

    def __init__(self, frames: FaceFrames, bindings: Bindings, mesh: Mesh | None = None):
        n_faces = len(frames.scale)
        fi = bindings.face_index
        if len(fi) and (fi.min() < 0 or fi.max() >= n_faces):
            raise IndexError("binding face index out of range")
        self.frames = frames
        self.bindings = bindings
        if mesh is not None:
            self.vertices = np.ascontiguousarray(mesh.vertices)
            self.faces = np.ascontiguousarray(mesh.faces)
            self.bary = np.ascontiguousarray(bindings.barycentric)
        else:
            self.vertices = np.ascontiguousarray(frames.origin)
            self.faces = np.repeat(np.arange(n_faces, dtype=np.int64)[:, None], 3, axis=1)
            self.bary = np.full((len(fi), 3), 1.0 / 3.0)

    @classmethod
    def from_mesh(cls, mesh: Mesh, bindings: Bindings):
        return cls(compute_frames(mesh.vertices, mesh.faces), bindings, mesh)

    @classmethod
    def from_triangle_frames(cls, frames: list[TriangleFrame], bindings: Bindings):
        ff = FaceFrames(
            origin=np.array([f.origin for f in frames], dtype=np.float64).reshape(-1, 3),
            basis=np.array([f.basis for f in frames]).reshape(-1, 3, 3),
            rotation=quat.normalize(np.array([f.rotation for f in frames]).reshape(-1, 4)),
            scale=np.array([f.scale_k for f in frames], dtype=np.float64),
        )
        return cls(ff, bindings)

    def __len__(self):
        return len(self.bindings)


def pose_gaussians(local: LocalGaussianSet, ctx: PoseContext, backend=None, n_threads=None,
                   out: WorldGaussianSet | None = None) -> WorldGaussianSet:
    """World-space Gaussians for the current mesh; ``out`` lets a render loop reuse buffers."""
    n = len(local)
    if n != len(ctx):
        raise ValueError(f"{n} Gaussians but {len(ctx)} bindings")
    if out is None or len(out.alpha) != n:
        out = WorldGaussianSet(np.empty((n, 3)), np.empty((n, 3)), np.empty((n, 4)), np.empty((n, 3)),
                               np.empty(n))
    np.exp(local.log_scale, out=out.scale)
    np.negative(local.opacity, out=out.alpha)
    with np.errstate(over="ignore"):  # exp overflow gives alpha exactly 0, as intended
        np.exp(out.alpha, out=out.alpha)
    fr = ctx.frames
    c = np.ascontiguousarray
    _backend.get(backend).pose(
        ctx.vertices, ctx.faces, c(fr.basis), c(fr.rotation), c(fr.scale),
        c(ctx.bindings.face_index), ctx.bary,
        c(local.mu), c(local.rot), c(local.color),
        out.mu, out.scale, out.rot, out.color, out.alpha,
        n_threads or get_threads(),
    )
    return out


def pose_backward(local: LocalGaussianSet, world: WorldGaussianSet, ctx: PoseContext, d_world: WorldGaussianSet):
    """Chain world-space gradients back to the local parameters.

    Frames and bindings are constants.  Colors use a clamp whose gradient is
    passed through whenever following it would move the value back toward
    [0, 1], so a clamped color never gets stuck.
    """
    fi = ctx.bindings.face_index
    k = ctx.frames.scale[fi]
    basis = ctx.frames.basis[fi]
    d_mu = k[:, None] * np.einsum("nji,nj->ni", basis, d_world.mu)
    d_ls = d_world.scale * world.scale
    qf = ctx.frames.rotation[fi]
    p = quat.multiply(qf, local.rot)
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    dp = quat.normalize_backward(p / pn, pn, d_world.rot)
    d_rot = np.einsum("nji,nj->ni", quat.left_matrix(qf), dp)
    c = local.color
    g = d_world.color
    pass_c = ((c > 0.0) & (c < 1.0)) | ((c <= 0.0) & (g < 0.0)) | ((c >= 1.0) & (g > 0.0))
    d_color = np.where(pass_c, g, 0.0)
    a = world.alpha
    d_op = d_world.alpha * a * (1.0 - a)
    return LocalGaussianSet(d_mu, d_ls, d_rot, d_color, d_op)
