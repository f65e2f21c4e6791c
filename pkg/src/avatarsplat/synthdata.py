"""Procedural toy-head dataset: random identities x random expressions x random orbit cameras.

Ground truth comes from a classical z-buffered triangle rasterizer that shares
no code with the Gaussian renderer.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (Identity, Mesh, ToyHeadModel, build_toy_head, hair_shell_mesh, head_texture, pose_head,
                       toy_head_from_params)
from .images import read_rgba_pair, write_rgba_pair
from .renderer.camera import Camera, default_focal

SKIN_LIGHT = np.array([0.96, 0.80, 0.69])
SKIN_DARK = np.array([0.42, 0.28, 0.20])
HAIR_PALETTE = np.array([
    [0.08, 0.06, 0.05],  # black
    [0.35, 0.20, 0.10],  # brown
    [0.85, 0.70, 0.40],  # blonde
    [0.65, 0.25, 0.10],  # red
    [0.75, 0.75, 0.75],  # grey
])
EYE_PALETTE = np.array([[0.25, 0.15, 0.08], [0.2, 0.4, 0.7], [0.3, 0.5, 0.3], [0.45, 0.35, 0.2]])


@dataclass
class DatasetConfig:
    n_identities: int = 50
    images_per_identity: int = 30
    image_size: int = 64
    azimuth_range: tuple = (-180.0, 180.0)
    elevation_range: tuple = (-20.0, 45.0)
    camera_radius: float = 4.5
    focal: float | None = None  # default 1.6 * image_size
    supersample: int = 2
    head_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.azimuth_range = tuple(float(a) for a in self.azimuth_range)
        self.elevation_range = tuple(float(a) for a in self.elevation_range)
        if self.azimuth_range[0] > self.azimuth_range[1] or self.elevation_range[0] > self.elevation_range[1]:
            raise ValueError("ranges must be ordered (low, high)")
        if min(self.n_identities, self.images_per_identity, self.image_size, self.supersample) < 1:
            raise ValueError("sizes must be positive")
        if self.camera_radius <= 0:
            raise ValueError("camera radius must be positive")

    def to_dict(self):
        d = asdict(self)
        d["azimuth_range"] = list(self.azimuth_range)
        d["elevation_range"] = list(self.elevation_range)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @property
    def focal_px(self):
        return default_focal(self.image_size) if self.focal is None else self.focal


@dataclass
class ToyHeadSample:
    sample_id: str
    identity_index: int
    identity_coeffs: np.ndarray
    expression_coeffs: np.ndarray
    camera: Camera
    rgb: np.ndarray | None = None  # premultiplied over black
    alpha: np.ndarray | None = None
    azimuth: float = 0.0
    elevation: float = 0.0


@dataclass
class Dataset:
    config: DatasetConfig
    model: ToyHeadModel
    identities: list
    samples: list
    root: str | None = None
    manifest: dict = field(default_factory=dict)

    def samples_of(self, identity_index):
        return [s for s in self.samples if s.identity_index == identity_index]


def sample_identity(seed, model: ToyHeadModel) -> Identity:
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(0.0, 1.0, size=model.n_identity_dims)
    tone = rng.uniform()
    skin = (1 - tone) * SKIN_LIGHT + tone * SKIN_DARK + rng.normal(0.0, 0.02, 3)
    hair = HAIR_PALETTE[rng.integers(len(HAIR_PALETTE))] + rng.normal(0.0, 0.04, 3)
    eye = EYE_PALETTE[rng.integers(len(EYE_PALETTE))]
    return Identity(coeffs, np.clip(skin, 0, 1), np.clip(hair, 0, 1), eye.copy(), float(rng.uniform()))


def camera_from_angles(azimuth, elevation, cfg: DatasetConfig) -> Camera:
    return Camera.orbit(azimuth, elevation, cfg.camera_radius, cfg.image_size, focal=cfg.focal_px)


def sample_camera(seed, cfg: DatasetConfig, stratum: int = 0, n_strata: int = 1):
    """Orbit camera looking at the head center.  Returns (camera, azimuth, elevation).

    With ``n_strata`` > 1 the azimuth is drawn uniformly inside one of that
    many equal slices of the range, which guarantees coverage of small sets.
    """
    rng = np.random.default_rng(seed)
    lo, hi = cfg.azimuth_range
    width = (hi - lo) / n_strata
    az = lo + width * (stratum + rng.uniform())
    el = rng.uniform(*cfg.elevation_range)
    return camera_from_angles(az, el, cfg), float(az), float(el)


# ---------------------------------------------------------------------------
# z-buffer rasterizer

def render_ground_truth(mesh: Mesh, texture, cam: Camera, supersample: int = 2):
    """Flat-lit textured mesh; returns (rgb premultiplied over black, alpha).

    ``texture`` maps an (M, 2) array of UVs to (M, 3) colors.  Back faces and
    faces crossing the near plane are dropped.  Each output pixel averages a
    ``supersample`` x ``supersample`` grid of point samples.
    """
    ss = int(supersample)
    H, W = cam.height * ss, cam.width * ss
    t = mesh.vertices @ cam.rotation.T + cam.translation
    z = t[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = cam.fx * ss * t[:, 0] / z + cam.cx * ss
        sy = cam.fy * ss * t[:, 1] / z + cam.cy * ss
    f = mesh.faces
    v = mesh.vertices
    normal = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    to_cam = cam.position - v[f].mean(axis=1)
    keep = (np.sum(normal * to_cam, axis=1) > 0) & np.all(z[f] >= cam.near, axis=1)

    depth = np.full((H, W), np.inf)
    face_id = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    for fi in np.nonzero(keep)[0]:
        a, b, c = f[fi]
        xa, ya, xb, yb, xc, yc = sx[a], sy[a], sx[b], sy[b], sx[c], sy[c]
        area = (xb - xa) * (yc - ya) - (xc - xa) * (yb - ya)
        if abs(area) < 1e-12:
            continue
        x0 = max(int(np.floor(min(xa, xb, xc) - 0.5)), 0)
        x1 = min(int(np.ceil(max(xa, xb, xc) - 0.5)), W - 1)
        y0 = max(int(np.floor(min(ya, yb, yc) - 0.5)), 0)
        y1 = min(int(np.ceil(max(ya, yb, yc) - 0.5)), H - 1)
        if x1 < x0 or y1 < y0:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)
        l1 = ((px - xa) * (yc - ya) - (xc - xa) * (py - ya)) / area
        l2 = ((xb - xa) * (py - ya) - (px - xa) * (yb - ya)) / area
        l0 = 1.0 - l1 - l2
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        # perspective-correct weights
        w0, w1, w2 = l0 / z[a], l1 / z[b], l2 / z[c]
        inv_z = w0 + w1 + w2
        zz = 1.0 / inv_z
        sub_d = depth[y0:y1 + 1, x0:x1 + 1]
        win = inside & (zz < sub_d)
        if not win.any():
            continue
        sub_d[win] = zz[win]
        face_id[y0:y1 + 1, x0:x1 + 1][win] = fi
        lam = np.stack([w0, w1, w2], axis=-1) * zz[..., None]
        bary[y0:y1 + 1, x0:x1 + 1][win] = lam[win]

    covered = face_id >= 0
    rgb = np.zeros((H, W, 3))
    if covered.any():
        uv_tri = mesh.uv[f[face_id[covered]]]
        uv = np.einsum("nk,nkj->nj", bary[covered], uv_tri)
        rgb[covered] = texture(uv)
    alpha = covered.astype(np.float64)
    if ss > 1:
        rgb = rgb.reshape(cam.height, ss, cam.width, ss, 3).mean(axis=(1, 3))
        alpha = alpha.reshape(cam.height, ss, cam.width, ss).mean(axis=(1, 3))
    return rgb, alpha


def render_identity(model: ToyHeadModel, ident: Identity, expression, cam: Camera, supersample: int = 2):
    mesh = pose_head(model, ident.identity_coeffs, expression)
    shell = hair_shell_mesh(model, mesh, ident)
    return render_ground_truth(shell, lambda uv: head_texture(uv, ident), cam, supersample)


# ---------------------------------------------------------------------------
# dataset generation

def _identity_seed(cfg, i):
    return (cfg.seed, 1, i)


def _sample_seed(cfg, i, k):
    return (cfg.seed, 2, i, k)


def generate_samples(cfg: DatasetConfig, model: ToyHeadModel | None = None, render: bool = True):
    model = model or build_toy_head(cfg.head_seed)
    identities, samples = [], []
    for i in range(cfg.n_identities):
        ident = sample_identity(_identity_seed(cfg, i), model)
        identities.append(ident)
        strata = np.random.default_rng((cfg.seed, 3, i)).permutation(cfg.images_per_identity)
        for k in range(cfg.images_per_identity):
            rng = np.random.default_rng(_sample_seed(cfg, i, k))
            expr = rng.uniform(-1.0, 1.0, size=model.n_expression_dims)
            cam, az, el = sample_camera(_sample_seed(cfg, i, k) + (0,), cfg, int(strata[k]), cfg.images_per_identity)
            s = ToyHeadSample(f"{i:04d}_{k:03d}", i, ident.identity_coeffs.copy(), expr, cam, azimuth=az, elevation=el)
            if render:
                s.rgb, s.alpha = render_identity(model, ident, expr, cam, cfg.supersample)
            samples.append(s)
    return model, identities, samples


def generate_dataset(cfg: DatasetConfig, output_path) -> Dataset:
    out = os.fspath(output_path)
    img_dir = os.path.join(out, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {img_dir}: {e}") from e
    model, identities, samples = generate_samples(cfg)
    records = []
    for s in samples:
        rgb_rel = f"images/{s.sample_id}_rgb.png"
        alpha_rel = f"images/{s.sample_id}_alpha.png"
        write_rgba_pair(os.path.join(out, rgb_rel), os.path.join(out, alpha_rel), s.rgb, s.alpha)
        records.append({
            "id": s.sample_id,
            "identity": s.identity_index,
            "identity_coeffs": [float(x) for x in s.identity_coeffs],
            "expression_coeffs": [float(x) for x in s.expression_coeffs],
            "azimuth": s.azimuth,
            "elevation": s.elevation,
            "camera": s.camera.to_dict(),
            "rgb": rgb_rel,
            "alpha": alpha_rel,
        })
    manifest = {
        "format": "avatarsplat-dataset",
        "version": 1,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "head_model": model.params,
        "identities": [dict(index=i, **ident.to_dict()) for i, ident in enumerate(identities)],
        "samples": records,
    }
    path = os.path.join(out, "manifest.json")
    try:
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
    except OSError as e:
        raise OSError(f"cannot write manifest {path}: {e}") from e
    return load_dataset(out)


def load_dataset(path, load_images: bool = True) -> Dataset:
    root = os.fspath(path)
    mpath = os.path.join(root, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except OSError as e:
        raise OSError(f"cannot read manifest {mpath}: {e}") from e
    if manifest.get("format") != "avatarsplat-dataset":
        raise ValueError(f"{mpath} is not a dataset manifest")
    cfg = DatasetConfig.from_dict(manifest["config"])
    model = toy_head_from_params(manifest["head_model"])
    identities = [Identity.from_dict(d) for d in manifest["identities"]]
    samples = []
    for r in manifest["samples"]:
        s = ToyHeadSample(r["id"], int(r["identity"]), np.array(r["identity_coeffs"]),
                          np.array(r["expression_coeffs"]), Camera.from_dict(r["camera"]),
                          azimuth=r["azimuth"], elevation=r["elevation"])
        if load_images:
            s.rgb, s.alpha = read_rgba_pair(os.path.join(root, r["rgb"]), os.path.join(root, r["alpha"]))
        samples.append(s)
    return Dataset(cfg, model, identities, samples, root, manifest)


def in_memory_dataset(cfg: DatasetConfig) -> Dataset:
    """Same samples as generate_dataset, quantized the same way, without touching disk."""
    from .images import to_uint8, unpremultiply

    model, identities, samples = generate_samples(cfg)
    for s in samples:
        a = to_uint8(s.alpha) / 255.0
        s.rgb = to_uint8(unpremultiply(s.rgb, s.alpha)) / 255.0 * a[..., None]
        s.alpha = a
    return Dataset(cfg, model, identities, samples)


def make_enrollment(model: ToyHeadModel, ident: Identity, views, cfg: DatasetConfig, expression=None,
                    identity_index: int = -1, prefix: str = "enroll"):
    """Render samples of one identity from (azimuth, elevation) pairs, neutral expression by default."""
    expr = np.zeros(model.n_expression_dims) if expression is None else np.asarray(expression, dtype=np.float64)
    out = []
    for k, (az, el) in enumerate(views):
        cam = camera_from_angles(az, el, cfg)
        rgb, alpha = render_identity(model, ident, expr, cam, cfg.supersample)
        out.append(ToyHeadSample(f"{prefix}_{k:03d}", identity_index, ident.identity_coeffs.copy(), expr.copy(),
                                 cam, rgb, alpha, float(az), float(el)))
    return out
