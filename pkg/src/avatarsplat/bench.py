"""Wall-clock throughput of posing and of full pose+project+rasterize frames."""
from __future__ import annotations

import json
import math
import time

import numpy as np

from .geometry import Bindings, build_bindings_from_uv, build_toy_head, pose_head
from .parallel import get_threads
from .renderer import PoseContext, RenderSettings, pose_gaussians, render
from .renderer.camera import Camera
from .renderer.gaussians import LocalGaussianSet

# published reference points, kept for the report footer
REFERENCE_RENDER_FPS = 70.0
REFERENCE_POSING_FPS = 67.0
REFERENCE_GAUSSIANS = 187_779
POSING_FLOOR = 30.0


def bench_bindings(model, n: int) -> Bindings:
    """Exactly ``n`` UV-ordered bindings on the neutral toy head."""
    if n < 1:
        raise ValueError("n must be positive")
    mesh = pose_head(model, np.zeros(model.n_identity_dims), np.zeros(model.n_expression_dims))
    res = max(1, math.isqrt(n))
    while True:
        b = build_bindings_from_uv(mesh, res)
        if len(b) >= n:
            break
        res = int(res * 1.1) + 1
    keep = np.linspace(0, len(b) - 1, n).round().astype(np.int64)
    return b.subset(keep)


def random_gaussians(n: int, seed=0) -> LocalGaussianSet:
    rng = np.random.default_rng(seed)
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return LocalGaussianSet(rng.normal(0.0, 0.1, (n, 3)), rng.normal(-2.0, 0.3, (n, 3)), rot,
                            rng.uniform(0.0, 1.0, (n, 3)), rng.normal(0.0, 1.0, n))


def _stats(times):
    t = np.asarray(times)
    med = float(np.median(t))
    p95 = float(np.percentile(t, 95))
    return {"median_s": med, "p95_s": p95, "per_sec_median": 1.0 / med, "per_sec_p95": 1.0 / p95}


def _expressions(model, n, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, (n, model.n_expression_dims))


def bench_posing(n_gaussians: int, n_poses: int = 20, warmup: int = 3, backend=None, threads=None, seed=0,
                 model=None):
    """Per pose: deform the mesh, rebuild triangle frames, pose every Gaussian.

    Mesh deformation is included because a new expression is what triggers a
    re-pose.  Output buffers are reused across poses as a render loop would.
    Reports median and p95 over the timed repetitions.
    """
    if n_gaussians < 1 or n_poses < 1:
        raise ValueError("counts must be positive")
    model = model or build_toy_head(0)
    bindings = bench_bindings(model, n_gaussians)
    local = random_gaussians(n_gaussians, seed)
    ident = np.zeros(model.n_identity_dims)
    expr = _expressions(model, warmup + n_poses, seed)
    threads = threads or get_threads()
    times = []
    world = None
    for i in range(warmup + n_poses):
        t0 = time.perf_counter()
        mesh = pose_head(model, ident, expr[i])
        ctx = PoseContext.from_mesh(mesh, bindings)
        world = pose_gaussians(local, ctx, backend=backend, n_threads=threads, out=world)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt)
    out = {"bench": "posing", "n_gaussians": n_gaussians, "n_poses": n_poses, "threads": threads,
           "backend": backend or "default"}
    out.update(_stats(times))
    out["poses_per_sec"] = out.pop("per_sec_median")
    return out


def bench_render(n_gaussians: int = 2304, image_size: int = 64, n_frames: int = 20, warmup: int = 3,
                 backend=None, threads=None, seed=0, model=None):
    """Pose + project + rasterize per frame on an orbiting camera."""
    if n_gaussians < 1 or n_frames < 1 or image_size < 1:
        raise ValueError("counts must be positive")
    model = model or build_toy_head(0)
    bindings = bench_bindings(model, n_gaussians)
    local = random_gaussians(n_gaussians, seed)
    local.mu[:] = 0.0
    ident = np.zeros(model.n_identity_dims)
    expr = _expressions(model, warmup + n_frames, seed)
    threads = threads or get_threads()
    settings = RenderSettings(backend=backend, threads=threads)
    times = []
    for i in range(warmup + n_frames):
        az = 360.0 * i / (warmup + n_frames)
        cam = Camera.orbit(az, 10.0, 4.5, image_size)
        t0 = time.perf_counter()
        ctx = PoseContext.from_mesh(pose_head(model, ident, expr[i]), bindings)
        render(local, ctx, cam, settings=settings)
        dt = time.perf_counter() - t0
        if i >= warmup:
            times.append(dt)
    out = {"bench": "render", "n_gaussians": n_gaussians, "image_size": image_size, "n_frames": n_frames,
           "threads": threads, "backend": backend or "default"}
    out.update(_stats(times))
    out["fps"] = out.pop("per_sec_median")
    return out


def report_line(result: dict) -> str:
    """One JSON line; posing results carry the reference figures and the desk floor."""
    r = dict(result)
    r["reference"] = {"render_fps": REFERENCE_RENDER_FPS, "posing_fps": REFERENCE_POSING_FPS,
                      "n_gaussians": REFERENCE_GAUSSIANS}
    if r.get("bench") == "posing":
        r["floor_poses_per_sec"] = POSING_FLOOR
        r["meets_floor"] = bool(r["poses_per_sec"] >= POSING_FLOOR)
    return json.dumps(r, sort_keys=True)
