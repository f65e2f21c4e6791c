"""Quaternion helpers, (w, x, y, z) convention, vectorized over leading axes."""
import numpy as np


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def multiply(a, b):
    """Hamilton product a * b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def left_matrix(a):
    """Matrix L(a) such that multiply(a, b) == L(a) @ b."""
    a = np.asarray(a, dtype=np.float64)
    w, x, y, z = np.moveaxis(a, -1, 0)
    rows = [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def to_matrix(q):
    """Rotation matrix of the normalized quaternion."""
    w, x, y, z = np.moveaxis(normalize(q), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def matrix_grad_to_quat(q, dR):
    """Backpropagate dL/dR (..., 3, 3) through to_matrix to the unnormalized q."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = np.moveaxis(qn, -1, 0)
    g = dR
    gw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    gx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0]
              - 2 * x * g[..., 1, 1] - w * g[..., 1, 2] + z * g[..., 2, 0]
              + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    gy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2]
              + x * g[..., 1, 0] + z * g[..., 1, 2] - w * g[..., 2, 0]
              + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    gz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2]
              + w * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
              + x * g[..., 2, 0] + y * g[..., 2, 1])
    gn = np.stack([gw, gx, gy, gz], axis=-1)
    return normalize_backward(qn, norm, gn)


def normalize_backward(qn, norm, g):
    """Gradient through q -> q/|q|: tangent projection scaled by 1/|q|."""
    return (g - qn * np.sum(g * qn, axis=-1, keepdims=True)) / norm


def from_matrix(R):
    """Unit quaternion (w >= 0) from rotation matrices, Shepperd's branch selection."""
    R = np.asarray(R, dtype=np.float64)
    shape = R.shape[:-2]
    m = R.reshape(-1, 3, 3)
    m00, m11, m22 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    tr = m00 + m11 + m22
    branch = np.where(tr > 0, 0, np.where((m00 > m11) & (m00 > m22), 1, np.where(m11 > m22, 2, 3)))
    with np.errstate(invalid="ignore", divide="ignore"):
        s0 = 2.0 * np.sqrt(np.maximum(tr + 1.0, 0.0))
        s1 = 2.0 * np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0))
        s2 = 2.0 * np.sqrt(np.maximum(1.0 + m11 - m00 - m22, 0.0))
        s3 = 2.0 * np.sqrt(np.maximum(1.0 + m22 - m00 - m11, 0.0))
        cand = np.stack([
            np.stack([0.25 * s0, (m[:, 2, 1] - m[:, 1, 2]) / s0,
                      (m[:, 0, 2] - m[:, 2, 0]) / s0, (m[:, 1, 0] - m[:, 0, 1]) / s0], -1),
            np.stack([(m[:, 2, 1] - m[:, 1, 2]) / s1, 0.25 * s1,
                      (m[:, 0, 1] + m[:, 1, 0]) / s1, (m[:, 0, 2] + m[:, 2, 0]) / s1], -1),
            np.stack([(m[:, 0, 2] - m[:, 2, 0]) / s2, (m[:, 0, 1] + m[:, 1, 0]) / s2,
                      0.25 * s2, (m[:, 1, 2] + m[:, 2, 1]) / s2], -1),
            np.stack([(m[:, 1, 0] - m[:, 0, 1]) / s3, (m[:, 0, 2] + m[:, 2, 0]) / s3,
                      (m[:, 1, 2] + m[:, 2, 1]) / s3, 0.25 * s3], -1),
        ])
    out = cand[branch, np.arange(m.shape[0])]
    out = normalize(out)
    out[out[:, 0] < 0] *= -1
    return out.reshape(shape + (4,))


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])
