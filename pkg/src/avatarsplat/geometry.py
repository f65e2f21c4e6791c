"""Toy parametric head, triangle-local frames and UV-texel Gaussian bindings.

The head is a lat-long sphere deformed into a head-like ellipsoid.  Latitude
rings use an equal-area v coordinate so that UV texels map to roughly equal
surface patches, which keeps the texel-driven Gaussian density even.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat


class DegenerateFaceError(ValueError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.uv = np.asarray(self.uv, dtype=np.float64)
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3)")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise ValueError("face index out of range")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("face with repeated vertex index")
        if self.uv.shape != (nv, 2):
            raise ValueError("uv must be (V, 2)")

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points):
        return points @ np.asarray(self.rotation).T + np.asarray(self.translation)


@dataclass
class Identity:
    """Per-subject parameters sampled by the data generator.

    ``hair_length`` and ``hair_color`` double as labels for latent editing.
    """

    identity_coeffs: np.ndarray
    skin_color: np.ndarray
    hair_color: np.ndarray
    eye_color: np.ndarray
    hair_length: float

    def to_dict(self):
        return {
            "identity_coeffs": [float(x) for x in self.identity_coeffs],
            "skin_color": [float(x) for x in self.skin_color],
            "hair_color": [float(x) for x in self.hair_color],
            "eye_color": [float(x) for x in self.eye_color],
            "hair_length": float(self.hair_length),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            identity_coeffs=np.asarray(d["identity_coeffs"], dtype=np.float64),
            skin_color=np.asarray(d["skin_color"], dtype=np.float64),
            hair_color=np.asarray(d["hair_color"], dtype=np.float64),
            eye_color=np.asarray(d["eye_color"], dtype=np.float64),
            hair_length=float(d["hair_length"]),
        )


@dataclass
class ToyHeadModel:
    base_vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray
    directions: np.ndarray
    identity_basis: np.ndarray
    expression_basis: np.ndarray
    scalp_face_mask: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        nv = len(self.base_vertices)
        if self.identity_basis.shape[:2] != (nv, 3) or self.expression_basis.shape[:2] != (nv, 3):
            raise ValueError("basis shapes must be (V, 3, K)")
        if len(self.scalp_face_mask) != len(self.faces):
            raise ValueError("scalp mask must have one entry per face")

    @property
    def n_identity_dims(self) -> int:
        return self.identity_basis.shape[2]

    @property
    def n_expression_dims(self) -> int:
        return self.expression_basis.shape[2]


@dataclass
class TriangleFrame:
    origin: np.ndarray
    rotation: np.ndarray
    scale_k: float

    @property
    def basis(self):
        return quat.to_matrix(self.rotation)


@dataclass
class FaceFrames:
    """Triangle frames for every face of a posed mesh, struct-of-arrays."""

    origin: np.ndarray  # (F, 3)
    basis: np.ndarray  # (F, 3, 3), columns (edge, normal, edge x normal)
    rotation: np.ndarray  # (F, 4)
    scale: np.ndarray  # (F,)

    def __getitem__(self, i) -> TriangleFrame:
        return TriangleFrame(self.origin[i].copy(), self.rotation[i].copy(), float(self.scale[i]))


@dataclass
class Binding:
    face_index: int
    barycentric: np.ndarray


@dataclass
class Bindings:
    face_index: np.ndarray  # (N,) int64
    barycentric: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.face_index = np.asarray(self.face_index, dtype=np.int64)
        self.barycentric = np.asarray(self.barycentric, dtype=np.float64)

    def __len__(self):
        return len(self.face_index)

    def __getitem__(self, i) -> Binding:
        return Binding(int(self.face_index[i]), self.barycentric[i].copy())

    def subset(self, idx):
        return Bindings(self.face_index[idx], self.barycentric[idx])

    def float32(self) -> "Bindings":
        """Storage precision: first two weights rounded to float32, third completed to sum 1."""
        return Bindings(self.face_index.copy(), complete_barycentric(self.barycentric[:, :2].astype(np.float32)))


def complete_barycentric(ab):
    """(N, 2) leading weights -> (N, 3) with the third as 1 - a - b, evaluated in float64."""
    ab = np.asarray(ab, dtype=np.float64)
    return np.concatenate([ab, (1.0 - ab[:, 0] - ab[:, 1])[:, None]], axis=1)


# ---------------------------------------------------------------------------
# toy head construction

HEAD_RADII = np.array([0.8, 1.0, 0.9])
_NOSE_DIR = np.array([0.0, -0.1, 1.0]) / np.linalg.norm([0.0, -0.1, 1.0])


def uv_to_direction(uv):
    """Unit-sphere direction for UV coordinates (u: longitude, v: equal-area latitude)."""
    uv = np.asarray(uv, dtype=np.float64)
    phi = 2.0 * np.pi * uv[..., 0] - np.pi
    cos_t = 1.0 - 2.0 * uv[..., 1]
    sin_t = np.sqrt(np.clip(1.0 - cos_t * cos_t, 0.0, None))
    return np.stack([sin_t * np.sin(phi), cos_t, sin_t * np.cos(phi)], axis=-1)


def hair_coverage(directions, hair_length):
    """Soft hair membership in [0, 1]; longer hair reaches further down the back."""
    d = np.asarray(directions, dtype=np.float64)
    back_w = np.clip((0.3 - d[..., 2]) / 1.3, 0.0, 1.0)
    hairline = 0.42 - back_w * (0.15 + 0.75 * hair_length)
    return 1.0 / (1.0 + np.exp(-(d[..., 1] - hairline) / 0.04))


def hair_thickness(hair_length):
    return 0.05 + 0.2 * hair_length


def _bump(d, center, width):
    center = np.asarray(center, dtype=np.float64)
    center = center / np.linalg.norm(center)
    return np.exp(-(1.0 - d @ center) / width)


def _sphere_grid(n_lat, n_lon):
    uvs = []
    index = {}
    for k in range(n_lat + 1):
        v = (1.0 - np.cos(np.pi * k / n_lat)) / 2.0
        pole = k in (0, n_lat)
        for m in range(n_lon if pole else n_lon + 1):
            u = (m + 0.5) / n_lon if pole else m / n_lon
            index[k, m] = len(uvs)
            uvs.append((u, v))
    uvs = np.array(uvs)
    verts = uv_to_direction(uvs)
    faces = []
    for k in range(n_lat):
        for m in range(n_lon):
            if k == 0:
                faces.append((index[0, m], index[1, m], index[1, m + 1]))
            elif k == n_lat - 1:
                faces.append((index[k, m], index[k + 1, m], index[k, m + 1]))
            else:
                a, b = index[k, m], index[k, m + 1]
                c, d = index[k + 1, m], index[k + 1, m + 1]
                faces.append((a, c, d))
                faces.append((a, d, b))
    return verts, np.array(faces, dtype=np.int64), uvs


def build_toy_head(seed: int = 0, n_lat: int = 20, n_lon: int = 40,
                   n_identity: int = 8, n_expression: int = 4) -> ToyHeadModel:
    """Procedural head: deformed lat-long sphere with smooth identity/expression bases."""
    rng = np.random.default_rng(seed)
    dirs, faces, uv = _sphere_grid(n_lat, n_lon)
    base = dirs * HEAD_RADII + 0.12 * _bump(dirs, _NOSE_DIR, 0.006)[:, None] * dirs

    # outward winding
    v0, v1, v2 = base[faces[:, 0]], base[faces[:, 1]], base[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    centroid = (v0 + v1 + v2) / 3.0
    flip = np.sum(normals * centroid, axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]

    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    poly = np.stack([x, y, z, x * x - y * y, y * y - z * z, x * y, y * z, x * z, x * y * z], axis=1)
    id_basis = np.zeros((len(dirs), 3, n_identity))
    for k in range(n_identity):
        field_k = poly @ rng.normal(size=poly.shape[1])
        field_k *= 0.07 / np.max(np.abs(field_k))
        id_basis[:, :, k] = field_k[:, None] * dirs

    # (center, angular width, displacement); off-midline anchors are mirrored in x
    anchors = [
        ((0.0, -0.7, 0.7), 0.08, (0.0, -0.12, 0.02)),  # jaw
        ((0.25, -0.45, 0.9), 0.02, (0.05, 0.06, 0.0)),  # smile
        ((0.32, 0.3, 0.9), 0.02, (0.0, 0.06, 0.01)),  # brows
        ((0.5, -0.2, 0.8), 0.03, (0.06, 0.0, 0.03)),  # cheeks
    ]
    mirror = np.array([-1.0, 1.0, 1.0])
    ex_basis = np.zeros((len(dirs), 3, n_expression))
    for k in range(n_expression):
        center, width, disp = anchors[k % len(anchors)]
        center, disp = np.array(center), np.array(disp)
        ex_basis[:, :, k] += _bump(dirs, center, width)[:, None] * disp
        if center[0] != 0.0:
            ex_basis[:, :, k] += _bump(dirs, center * mirror, width)[:, None] * (disp * mirror)

    face_dirs = dirs[faces].mean(axis=1)
    face_dirs /= np.linalg.norm(face_dirs, axis=1, keepdims=True)
    scalp = hair_coverage(face_dirs, 1.0) > 0.5

    return ToyHeadModel(
        base_vertices=base, faces=faces, uv=uv, directions=dirs,
        identity_basis=id_basis, expression_basis=ex_basis, scalp_face_mask=scalp,
        params={"seed": seed, "n_lat": n_lat, "n_lon": n_lon,
                "n_identity": n_identity, "n_expression": n_expression},
    )


def toy_head_from_params(params: dict) -> ToyHeadModel:
    """Rebuild a head model from the ``params`` dict it was created with."""
    return build_toy_head(int(params["seed"]), int(params["n_lat"]), int(params["n_lon"]),
                          int(params["n_identity"]), int(params["n_expression"]))


def pose_head(model: ToyHeadModel, identity_coeffs, expression_coeffs, rigid: RigidTransform | None = None) -> Mesh:
    id_c = np.asarray(identity_coeffs, dtype=np.float64)
    ex_c = np.asarray(expression_coeffs, dtype=np.float64)
    if id_c.shape != (model.n_identity_dims,):
        raise ValueError(f"expected {model.n_identity_dims} identity coefficients, got {id_c.shape}")
    if ex_c.shape != (model.n_expression_dims,):
        raise ValueError(f"expected {model.n_expression_dims} expression coefficients, got {ex_c.shape}")
    verts = model.base_vertices + model.identity_basis @ id_c + model.expression_basis @ ex_c
    if rigid is not None:
        verts = rigid.apply(verts)
    return Mesh(verts, model.faces, model.uv)


def head_texture(uv, ident: Identity):
    """Flat-shaded procedural albedo: skin, eyes, brows, mouth and hair."""
    d = uv_to_direction(uv)
    shape = d.shape[:-1]
    col = np.broadcast_to(np.asarray(ident.skin_color, dtype=np.float64), shape + (3,)).copy()
    ax = np.abs(d[..., 0])
    front = d[..., 2] > 0.3

    mouth = front & (ax < 0.22) & (np.abs(d[..., 1] + 0.45) < 0.05)
    col[mouth] = 0.55 * np.asarray(ident.skin_color) + np.array([0.3, 0.02, 0.05])

    brow = front & (np.abs(ax - 0.3) < 0.13) & (np.abs(d[..., 1] - 0.3) < 0.035)
    col[brow] = 0.6 * np.asarray(ident.hair_color)

    eye_c = np.array([0.32, 0.12, 0.94]) / np.linalg.norm([0.32, 0.12, 0.94])
    dist_eye = 1.0 - (ax * eye_c[0] + d[..., 1] * eye_c[1] + d[..., 2] * eye_c[2])
    col[dist_eye < 0.006] = (0.95, 0.95, 0.95)
    col[dist_eye < 0.0022] = np.asarray(ident.eye_color)

    h = hair_coverage(d, ident.hair_length)[..., None]
    col = (1.0 - h) * col + h * np.asarray(ident.hair_color)
    return np.clip(col, 0.0, 1.0)


def hair_shell_mesh(model: ToyHeadModel, mesh: Mesh, ident: Identity) -> Mesh:
    """Mesh with scalp vertices pushed out along the radial direction by the hair volume.

    Only the ground-truth renderer sees this surface; Gaussians bound to the
    bald mesh have to reach it through their local displacements.
    """
    h = hair_coverage(model.directions, ident.hair_length)
    offset = hair_thickness(ident.hair_length) * h
    normals = vertex_normals(mesh)
    return Mesh(mesh.vertices + offset[:, None] * normals, mesh.faces, mesh.uv)


def vertex_normals(mesh: Mesh):
    v = mesh.vertices
    f = mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    vn = np.zeros_like(v)
    for k in range(3):
        np.add.at(vn, f[:, k], fn)
    # seam and pole duplicates share a position but not adjacency: merge by position
    key = np.round(v, 9)
    _, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    merged = np.zeros((inv.max() + 1, 3))
    np.add.at(merged, inv, vn)
    vn = merged[inv]
    return vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-12)


# ---------------------------------------------------------------------------
# triangle frames

def compute_frames(vertices, faces) -> FaceFrames:
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    v0, v1, v2 = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    edge = v1 - v0
    cross = np.cross(edge, v2 - v0)
    cross_len = np.linalg.norm(cross, axis=1)
    if np.any(0.5 * cross_len <= 1e-12):
        bad = int(np.argmax(0.5 * cross_len <= 1e-12))
        raise DegenerateFaceError(f"face {bad} is degenerate (area <= 1e-12)")
    edge_len = np.linalg.norm(edge, axis=1)
    e1 = edge / edge_len[:, None]
    n = cross / cross_len[:, None]
    e3 = np.cross(e1, n)
    basis = np.stack([e1, n, e3], axis=2)
    height = cross_len / edge_len
    return FaceFrames(
        origin=(v0 + v1 + v2) / 3.0,
        basis=basis,
        rotation=quat.from_matrix(basis),
        scale=0.5 * (edge_len + height),
    )


def compute_triangle_frame(mesh: Mesh, face_index: int) -> TriangleFrame:
    if not 0 <= face_index < mesh.n_faces:
        raise IndexError(f"face index {face_index} out of range")
    fr = compute_frames(mesh.vertices, mesh.faces[face_index:face_index + 1])
    return fr[0]


# ---------------------------------------------------------------------------
# UV bindings

def build_bindings_from_uv(mesh: Mesh, resolution: int) -> Bindings:
    """One binding per texel whose center falls inside a face's UV triangle.

    Texels are visited row-major (v, then u); on overlap the lowest face index wins.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    res = int(resolution)
    owner = np.full((res, res), -1, dtype=np.int64)
    bary = np.zeros((res, res, 3))
    uv = mesh.uv * res
    eps = 1e-12
    for fi, (a, b, c) in enumerate(mesh.faces):
        pa, pb, pc = uv[a], uv[b], uv[c]
        lo = np.minimum(np.minimum(pa, pb), pc)
        hi = np.maximum(np.maximum(pa, pb), pc)
        x0 = max(int(np.floor(lo[0] - 0.5)), 0)
        x1 = min(int(np.ceil(hi[0] - 0.5)), res - 1)
        y0 = max(int(np.floor(lo[1] - 0.5)), 0)
        y1 = min(int(np.ceil(hi[1] - 0.5)), res - 1)
        if x1 < x0 or y1 < y0:
            continue
        det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])
        if abs(det) < 1e-18:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        px, py = np.meshgrid(xs, ys)
        l1 = ((px - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (py - pa[1])) / det
        l2 = ((pb[0] - pa[0]) * (py - pa[1]) - (px - pa[0]) * (pb[1] - pa[1])) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -eps) & (l1 >= -eps) & (l2 >= -eps)
        sub = owner[y0:y1 + 1, x0:x1 + 1]
        take = inside & (sub < 0)
        if not take.any():
            continue
        sub[take] = fi
        lam = np.clip(np.stack([l0, l1, l2], axis=-1), 0.0, None)
        lam /= lam.sum(axis=-1, keepdims=True)
        bary[y0:y1 + 1, x0:x1 + 1][take] = lam[take]
    covered = owner.reshape(-1) >= 0
    return Bindings(owner.reshape(-1)[covered], bary.reshape(-1, 3)[covered])


def binding_world_origin(mesh: Mesh, binding: Binding):
    if not 0 <= binding.face_index < mesh.n_faces:
        raise IndexError(f"face index {binding.face_index} out of range")
    tri = mesh.vertices[mesh.faces[binding.face_index]]
    return np.asarray(binding.barycentric) @ tri


def binding_origins(mesh: Mesh, bindings: Bindings):
    """Vectorized binding_world_origin over all bindings."""
    tri = mesh.vertices[mesh.faces[bindings.face_index]]
    return np.einsum("nk,nkj->nj", bindings.barycentric, tri)


def scalp_gaussian_mask(model: ToyHeadModel, bindings: Bindings):
    return model.scalp_face_mask[bindings.face_index]
