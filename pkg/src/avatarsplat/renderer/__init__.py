"""Differentiable splat renderer for mesh-attached Gaussians.

``render`` chains posing, projection and tiled compositing; ``render_backward``
walks the same chain in reverse down to the triangle-local parameters.
"""
from __future__ import annotations

import numpy as np

from ._backend import available as available_backends
from .brute import render_brute_force
from .camera import Camera, default_focal
from .gaussians import FIELDS, LocalGaussianSet, RenderGradients, WorldGaussianSet
from .posing import PoseContext, pose_backward, pose_gaussians
from .projection import Projected, project, project_backward
from .raster import RenderSettings, RenderTarget, rasterize, rasterize_backward

__all__ = [
    "Camera", "default_focal", "LocalGaussianSet", "WorldGaussianSet", "RenderGradients", "FIELDS",
    "PoseContext", "pose_gaussians", "pose_backward", "Projected", "project", "project_backward",
    "RenderSettings", "RenderTarget", "rasterize", "rasterize_backward", "render_brute_force",
    "render_world", "render", "render_backward", "world_backward", "available_backends",
]


def render_world(world: WorldGaussianSet, cam: Camera, background=(0.0, 0.0, 0.0),
                 settings: RenderSettings | None = None) -> RenderTarget:
    s = settings or RenderSettings()
    proj = project(world.mu, world.scale, world.rot, cam, s.dilation)
    target = rasterize(proj, world.color, world.alpha, cam, background, s)
    target.state.update(world=world, proj=proj)
    return target


def render(local: LocalGaussianSet, ctx: PoseContext, cam: Camera, background=(0.0, 0.0, 0.0),
           settings: RenderSettings | None = None) -> RenderTarget:
    s = settings or RenderSettings()
    world = pose_gaussians(local, ctx, s.backend, s.threads)
    target = render_world(world, cam, background, s)
    target.state.update(local=local, ctx=ctx)
    return target


def world_backward(target: RenderTarget, d_rgb, d_alpha):
    """Gradients w.r.t. world-space attributes plus the screen-space intermediates."""
    if target.state is None or "proj" not in target.state:
        raise ValueError("render target carries no forward state; re-render before calling backward")
    d_mean2d, d_conic, d_color, d_alpha_w = rasterize_backward(target, d_rgb, d_alpha)
    d_mu, d_scale, d_rot = project_backward(target.state["proj"], d_mean2d, d_conic)
    return WorldGaussianSet(d_mu, d_scale, d_rot, d_color, d_alpha_w), d_mean2d, d_conic


def render_backward(target: RenderTarget, d_rgb, d_alpha) -> RenderGradients:
    if target.state is None or "local" not in target.state:
        raise ValueError("render target carries no forward state; re-render before calling backward")
    d_world, d_mean2d, d_conic = world_backward(target, d_rgb, d_alpha)
    st = target.state
    d_local = pose_backward(st["local"], st["world"], st["ctx"], d_world)
    return RenderGradients(d_local, d_world, d_mean2d, d_conic)

