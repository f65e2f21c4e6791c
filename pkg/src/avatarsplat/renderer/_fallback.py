"""Numpy implementations with the same signatures and semantics as ``_kernels``.

Per tile the forward pass works on a (pixels x list-entries) matrix; the
cumulative product reproduces the sequential transmittance update exactly.
"""
import numpy as np


def pose(vertices, faces, face_basis, face_quat, face_scale, face_index, bary,
         mu, rot, color, mu_w, scale_w, rot_w, color_w, alpha_w, n_threads=1):
    # scale_w arrives holding exp(log_scale), alpha_w holding exp(-opacity)
    tri = vertices[faces[face_index]]
    origin = np.einsum("nk,nkj->nj", bary, tri)
    k = face_scale[face_index]
    basis = face_basis[face_index]
    mu_w[:] = origin + k[:, None] * np.einsum("nij,nj->ni", basis, mu)
    scale_w *= k[:, None]
    q = face_quat[face_index]
    qw, qx, qy, qz = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rw, rx, ry, rz = rot[:, 0], rot[:, 1], rot[:, 2], rot[:, 3]
    p = np.stack([
        qw * rw - qx * rx - qy * ry - qz * rz,
        qw * rx + qx * rw + qy * rz - qz * ry,
        qw * ry - qx * rz + qy * rw + qz * rx,
        qw * rz + qx * ry - qy * rx + qz * rw,
    ], axis=1)
    rot_w[:] = p / np.sqrt(np.sum(p * p, axis=1, keepdims=True))
    color_w[:] = np.clip(color, 0.0, 1.0)
    alpha_w[:] = 1.0 / (1.0 + alpha_w)


def _tile_bounds(t, tiles_x, tile_size, width, height):
    x0 = (t % tiles_x) * tile_size
    y0 = (t // tiles_x) * tile_size
    return x0, min(x0 + tile_size, width), y0, min(y0 + tile_size, height)


def _tile_alpha(rows, fx, fy):
    # rows: packed [mean_x, mean_y, conic_a, conic_b, conic_c, qcut, alpha, r, g, b]
    dx = fx[:, None] - rows[None, :, 0]
    dy = fy[:, None] - rows[None, :, 1]
    q = rows[:, 2] * dx * dx + 2.0 * rows[:, 3] * dx * dy + rows[:, 4] * dy * dy
    inside = q <= rows[:, 5]
    a = np.where(inside, rows[:, 6] * np.exp(-0.5 * q), 0.0)
    return a, inside, dx, dy


def _pixel_centers(x0, x1, y0, y1):
    py, px = np.mgrid[y0:y1, x0:x1]
    return px.reshape(-1) + 0.5, py.reshape(-1) + 0.5


def raster_forward(pd, tile_start, tile_end, bg0, bg1, bg2, width, height, tile_size, t_min, n_threads,
                   out_rgb, out_T, out_last):
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    bg = np.array([bg0, bg1, bg2])
    for t in range(tiles_x * tiles_y):
        x0, x1, y0, y1 = _tile_bounds(t, tiles_x, tile_size, width, height)
        fx, fy = _pixel_centers(x0, x1, y0, y1)
        rows = pd[tile_start[t]:tile_end[t]]
        npix, k = len(fx), len(rows)
        if k == 0:
            out_rgb[y0:y1, x0:x1] = bg
            out_T[y0:y1, x0:x1] = 1.0
            out_last[y0:y1, x0:x1] = 0
            continue
        a, inside, _, _ = _tile_alpha(rows, fx, fy)
        # stop after the first contributor that drives transmittance under t_min
        t_incl = np.cumprod(1.0 - a, axis=1)
        stop = inside & (t_incl < t_min)
        has_stop = stop.any(axis=1)
        k_stop = np.argmax(stop, axis=1)
        keep = np.where(has_stop[:, None], np.arange(k)[None, :] <= k_stop[:, None], True)
        a = np.where(keep, a, 0.0)
        inside &= keep
        t_incl = np.cumprod(1.0 - a, axis=1)
        t_excl = np.concatenate([np.ones((npix, 1)), t_incl[:, :-1]], axis=1)
        w = a * t_excl
        T = t_incl[:, -1]
        rgb = np.empty((npix, 3))
        for ch in range(3):
            # cumsum accumulates left to right, the compiled loop's order
            rgb[:, ch] = np.cumsum(rows[None, :, 7 + ch] * w, axis=1)[:, -1]
        last = np.where(inside.any(axis=1), k - np.argmax(inside[:, ::-1], axis=1), 0)
        out_rgb[y0:y1, x0:x1] = (rgb + T[:, None] * bg).reshape(y1 - y0, x1 - x0, 3)
        out_T[y0:y1, x0:x1] = T.reshape(y1 - y0, x1 - x0)
        out_last[y0:y1, x0:x1] = last.reshape(y1 - y0, x1 - x0)


def raster_backward(pd, tile_start, tile_end, bg0, bg1, bg2, width, height, tile_size,
                    g_rgb, g_alpha, last_arr, pair_grad, n_threads=1):
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    bg = np.array([bg0, bg1, bg2])
    for t in range(tiles_x * tiles_y):
        start, end = tile_start[t], tile_end[t]
        if end <= start:
            continue
        x0, x1, y0, y1 = _tile_bounds(t, tiles_x, tile_size, width, height)
        fx, fy = _pixel_centers(x0, x1, y0, y1)
        rows = pd[start:end]
        k_count = end - start
        n = last_arr[y0:y1, x0:x1].reshape(-1)
        g3 = g_rgb[y0:y1, x0:x1].reshape(-1, 3)
        ga = g_alpha[y0:y1, x0:x1].reshape(-1)
        a, inside, dx, dy = _tile_alpha(rows, fx, fy)
        inside &= np.arange(k_count)[None, :] < n[:, None]
        a = np.where(inside, a, 0.0)
        t_excl = np.concatenate([np.ones((len(fx), 1)), np.cumprod(1.0 - a, axis=1)[:, :-1]], axis=1)
        c = rows[:, 7:10]
        R = np.broadcast_to(bg, (len(fx), 3)).copy()
        P = np.ones(len(fx))
        d_alpha = np.zeros_like(a)
        for k in range(k_count - 1, -1, -1):
            m = inside[:, k]
            if not m.any():
                continue
            ak = a[:, k]
            tb = t_excl[:, k]
            d_alpha[:, k] = np.where(m, tb * (np.sum(g3 * (c[k] - R), axis=1) + ga * P), 0.0)
            pair_grad[start + k, 5:8] += np.sum(np.where(m[:, None], g3 * (ak * tb)[:, None], 0.0), axis=0)
            R = np.where(m[:, None], c[k] * ak[:, None] + (1.0 - ak)[:, None] * R, R)
            P = np.where(m, P * (1.0 - ak), P)
        G = a / rows[None, :, 6]
        dq = -0.5 * a * d_alpha
        A, B, C = rows[:, 2], rows[:, 3], rows[:, 4]
        pair_grad[start:end, 8] += np.sum(d_alpha * G, axis=0)
        pair_grad[start:end, 0] += np.sum(-dq * (2.0 * A * dx + 2.0 * B * dy), axis=0)
        pair_grad[start:end, 1] += np.sum(-dq * (2.0 * B * dx + 2.0 * C * dy), axis=0)
        pair_grad[start:end, 2] += np.sum(dq * dx * dx, axis=0)
        pair_grad[start:end, 3] += np.sum(dq * 2.0 * dx * dy, axis=0)
        pair_grad[start:end, 4] += np.sum(dq * dy * dy, axis=0)
