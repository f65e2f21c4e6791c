import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avatarsplat import quaternion as quat
from avatarsplat.geometry import (Binding, DegenerateFaceError, Mesh, RigidTransform, binding_origins,
                                  binding_world_origin, build_bindings_from_uv, compute_frames,
                                  compute_triangle_frame, pose_head, toy_head_from_params)

UNIT_TRI = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], [[0, 0], [1, 0], [0, 1]])


def random_rotation(seed):
    rng = np.random.default_rng(seed)
    return quat.to_matrix(rng.normal(size=4))


# --- pose_head ---------------------------------------------------------------

def test_zero_coefficients_give_base_vertices(head):
    m = pose_head(head, np.zeros(head.n_identity_dims), np.zeros(head.n_expression_dims))
    np.testing.assert_array_equal(m.vertices, head.base_vertices)
    np.testing.assert_array_equal(m.faces, head.faces)
    np.testing.assert_array_equal(m.uv, head.uv)


def test_pure_translation_shifts_every_vertex(head):
    t = np.array([0.3, -1.0, 2.5])
    m = pose_head(head, np.zeros(head.n_identity_dims), np.zeros(head.n_expression_dims),
                  RigidTransform(np.eye(3), t))
    np.testing.assert_allclose(m.vertices - head.base_vertices, np.broadcast_to(t, m.vertices.shape), atol=1e-15)


def test_unit_expression_coefficient_adds_its_basis_column(head):
    e = np.zeros(head.n_expression_dims)
    e[0] = 1.0
    m = pose_head(head, np.zeros(head.n_identity_dims), e)
    expected = head.base_vertices + head.expression_basis[:, :, 0]
    np.testing.assert_allclose(m.vertices, expected, atol=1e-15)


def test_coefficient_length_mismatch_rejected(head):
    with pytest.raises(ValueError):
        pose_head(head, np.zeros(head.n_identity_dims + 1), np.zeros(head.n_expression_dims))
    with pytest.raises(ValueError):
        pose_head(head, np.zeros(head.n_identity_dims), np.zeros(2 * head.n_expression_dims))


@given(st.integers(0, 10_000))
def test_pose_is_affine_in_coefficients(head, seed):
    rng = np.random.default_rng(seed)
    rigid = RigidTransform(random_rotation(seed), rng.normal(size=3))
    ni, ne = head.n_identity_dims, head.n_expression_dims
    a = rng.normal(size=ni), rng.normal(size=ne)
    b = rng.normal(size=ni), rng.normal(size=ne)
    pa = pose_head(head, *a, rigid).vertices
    pb = pose_head(head, *b, rigid).vertices
    p0 = pose_head(head, np.zeros(ni), np.zeros(ne), rigid).vertices
    pab = pose_head(head, a[0] + b[0], a[1] + b[1], rigid).vertices
    np.testing.assert_allclose(pa + pb - p0, pab, atol=1e-9)


def test_head_rebuilds_from_its_params(head):
    again = toy_head_from_params(head.params)
    np.testing.assert_array_equal(again.base_vertices, head.base_vertices)
    np.testing.assert_array_equal(again.identity_basis, head.identity_basis)


def test_head_mesh_is_valid(head):
    assert len(head.uv) == len(head.base_vertices)
    assert head.faces.max() < len(head.base_vertices)
    assert len(head.scalp_face_mask) == len(head.faces)
    assert 0 < head.scalp_face_mask.sum() < len(head.faces)


def test_mesh_rejects_bad_faces():
    with pytest.raises(ValueError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], np.zeros((2, 2)))


# --- triangle frames -----------------------------------------------------------

def test_unit_triangle_frame_origin_and_scale():
    fr = compute_triangle_frame(UNIT_TRI, 0)
    np.testing.assert_allclose(fr.origin, [1 / 3, 1 / 3, 0], atol=1e-15)
    assert fr.scale_k == pytest.approx(1.0, abs=1e-15)


def test_unit_triangle_basis_columns():
    B = compute_triangle_frame(UNIT_TRI, 0).basis
    np.testing.assert_allclose(B[:, 0], [1, 0, 0], atol=1e-12)  # edge v0 -> v1
    np.testing.assert_allclose(B[:, 1], [0, 0, 1], atol=1e-12)  # face normal
    np.testing.assert_allclose(B[:, 2], np.cross([1, 0, 0], [0, 0, 1]), atol=1e-12)


def test_scale_uses_edge_and_height():
    # edge 0->1 has length 4, apex height 2: k = (4 + 2) / 2
    m = Mesh([[0, 0, 0], [4, 0, 0], [1, 2, 0]], [[0, 1, 2]], np.zeros((3, 2)))
    assert compute_triangle_frame(m, 0).scale_k == pytest.approx(3.0)


def test_degenerate_face_rejected():
    m = Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]], np.zeros((3, 2)))
    with pytest.raises(DegenerateFaceError):
        compute_triangle_frame(m, 0)


def test_face_index_out_of_range():
    with pytest.raises(IndexError):
        compute_triangle_frame(UNIT_TRI, 1)


def test_rotated_triangle_keeps_scale_and_rotates_origin():
    R = random_rotation(3)
    m = Mesh(UNIT_TRI.vertices @ R.T, UNIT_TRI.faces, UNIT_TRI.uv)
    fr = compute_triangle_frame(m, 0)
    np.testing.assert_allclose(fr.origin, R @ [1 / 3, 1 / 3, 0], atol=1e-12)
    assert fr.scale_k == pytest.approx(1.0, abs=1e-12)


def test_head_frames_are_proper_orthonormal(head):
    fr = compute_frames(head.base_vertices, head.faces)
    B = fr.basis
    np.testing.assert_allclose(np.einsum("fji,fjk->fik", B, B), np.broadcast_to(np.eye(3), B.shape), atol=1e-6)
    np.testing.assert_allclose(np.linalg.det(B), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(fr.rotation, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(quat.to_matrix(fr.rotation), B, atol=1e-6)
    assert np.all(fr.scale > 0)


@given(st.integers(0, 100_000))
def test_frames_are_rigidly_equivariant(head, seed):
    R = random_rotation(seed)
    t = np.random.default_rng(seed).normal(size=3) * 3
    a = compute_frames(head.base_vertices, head.faces)
    b = compute_frames(head.base_vertices @ R.T + t, head.faces)
    np.testing.assert_allclose(b.origin, a.origin @ R.T + t, atol=1e-6)
    np.testing.assert_allclose(b.basis, np.einsum("ij,fjk->fik", R, a.basis), atol=1e-6)
    np.testing.assert_allclose(b.scale, a.scale, atol=1e-6)
    qr = quat.from_matrix(R)
    composed = quat.multiply(np.broadcast_to(qr, a.rotation.shape), a.rotation)
    sign = np.sign(np.sum(composed * b.rotation, axis=1, keepdims=True))
    np.testing.assert_allclose(b.rotation, sign * composed, atol=1e-6)


# --- bindings --------------------------------------------------------------------

def test_single_triangle_covering_the_only_texel():
    m = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], [[0, 0], [2, 0], [0, 2]])
    b = build_bindings_from_uv(m, 1)
    assert len(b) == 1
    assert b.face_index[0] == 0
    np.testing.assert_allclose(b.barycentric[0], [0.5, 0.25, 0.25])


def scanline_texel_oracle(mesh, res):
    """Independent count: test every texel center against every UV triangle with edge functions."""
    uv = mesh.uv
    a, b, c = uv[mesh.faces[:, 0]], uv[mesh.faces[:, 1]], uv[mesh.faces[:, 2]]
    count = 0
    for row in range(res):
        py = (row + 0.5) / res
        px = (np.arange(res) + 0.5) / res

        def edge(p, q):
            return (q[:, 0] - p[:, 0])[None, :] * (py - p[:, 1])[None, :] - \
                   (q[:, 1] - p[:, 1])[None, :] * (px[:, None] - p[:, 0][None, :])

        e0, e1, e2 = edge(a, b), edge(b, c), edge(c, a)
        tol = 1e-12
        inside = ((e0 >= -tol) & (e1 >= -tol) & (e2 >= -tol)) | ((e0 <= tol) & (e1 <= tol) & (e2 <= tol))
        area = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
        inside &= (area > 1e-18)[None, :]
        count += int(inside.any(axis=1).sum())
    return count


def test_head_binding_count_matches_scanline_oracle(head):
    mesh = pose_head(head, np.zeros(head.n_identity_dims), np.zeros(head.n_expression_dims))
    assert len(build_bindings_from_uv(mesh, 64)) == scanline_texel_oracle(mesh, 64)


@given(st.integers(1, 40))
def test_bindings_are_convex_combinations(head, res):
    b = build_bindings_from_uv(pose_head(head, np.zeros(head.n_identity_dims), np.zeros(head.n_expression_dims)),
                               res)
    assert np.all(b.barycentric >= 0)
    np.testing.assert_allclose(b.barycentric.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((b.face_index >= 0) & (b.face_index < len(head.faces)))


def test_bindings_are_deterministic(head):
    m = pose_head(head, np.zeros(head.n_identity_dims), np.zeros(head.n_expression_dims))
    a, b = build_bindings_from_uv(m, 32), build_bindings_from_uv(m, 32)
    np.testing.assert_array_equal(a.face_index, b.face_index)
    np.testing.assert_array_equal(a.barycentric, b.barycentric)


def test_overlapping_uv_lowest_face_wins():
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    uv = [[0, 0], [2, 0], [0, 2], [2, 2]]
    m = Mesh(v, [[0, 1, 2], [3, 1, 2], [0, 1, 2][::-1]], uv)
    b = build_bindings_from_uv(m, 1)
    assert list(b.face_index) == [0]


def test_resolution_must_be_positive():
    with pytest.raises(ValueError):
        build_bindings_from_uv(UNIT_TRI, 0)


# --- binding origins ---------------------------------------------------------------

def test_corner_barycentric_gives_vertex():
    np.testing.assert_array_equal(binding_world_origin(UNIT_TRI, Binding(0, np.array([1.0, 0, 0]))), [0, 0, 0])


def test_uniform_barycentric_gives_centroid():
    p = binding_world_origin(UNIT_TRI, Binding(0, np.full(3, 1 / 3)))
    np.testing.assert_allclose(p, compute_triangle_frame(UNIT_TRI, 0).origin, atol=1e-15)


def test_binding_origin_out_of_range():
    with pytest.raises(IndexError):
        binding_world_origin(UNIT_TRI, Binding(5, np.full(3, 1 / 3)))


@given(st.integers(0, 10_000))
def test_random_binding_origin_matches_weighted_sum(head, seed):
    rng = np.random.default_rng(seed)
    f = int(rng.integers(len(head.faces)))
    lam = rng.dirichlet(np.ones(3))
    v = head.base_vertices
    expected = sum(lam[k] * v[head.faces[f, k]] for k in range(3))
    mesh = Mesh(v, head.faces, head.uv)
    np.testing.assert_allclose(binding_world_origin(mesh, Binding(f, lam)), expected, atol=1e-14)


def test_vectorized_origins_agree(head):
    mesh = Mesh(head.base_vertices, head.faces, head.uv)
    b = build_bindings_from_uv(mesh, 16)
    vec = binding_origins(mesh, b)
    for i in range(0, len(b), 37):
        np.testing.assert_allclose(vec[i], binding_world_origin(mesh, b[i]), atol=1e-14)


def test_storage_precision_bindings_sum_to_one(head):
    from avatarsplat.geometry import complete_barycentric
    b = build_bindings_from_uv(pose_head(head, np.zeros(head.n_identity_dims), np.zeros(head.n_expression_dims)), 24)
    f = b.float32()
    np.testing.assert_array_equal(f.barycentric[:, :2], f.barycentric[:, :2].astype(np.float32))
    np.testing.assert_allclose(f.barycentric.sum(axis=1), 1.0, atol=1e-15)
    assert np.abs(f.barycentric - b.barycentric).max() < 1e-7
    np.testing.assert_array_equal(complete_barycentric(f.barycentric[:, :2].astype(np.float32)), f.barycentric)
