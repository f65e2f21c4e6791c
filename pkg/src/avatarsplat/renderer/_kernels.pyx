# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: Gaussian posing and tile-based alpha compositing.

Semantics match ``_fallback.py`` operation for operation; tests compare both.
"""
from cython.parallel cimport prange, parallel
from libc.math cimport ceil, exp, floor, sqrt
from libc.stdlib cimport malloc, free
cimport numpy as cnp

ctypedef cnp.int64_t i64


def pose(const double[:, ::1] vertices, const i64[:, ::1] faces,
         const double[:, :, ::1] face_basis, const double[:, ::1] face_quat, const double[::1] face_scale,
         const i64[::1] face_index, const double[:, ::1] bary,
         const double[:, ::1] mu, const double[:, ::1] rot, const double[:, ::1] color,
         double[:, ::1] mu_w, double[:, ::1] scale_w, double[:, ::1] rot_w,
         double[:, ::1] color_w, double[::1] alpha_w, int n_threads):
    # on entry scale_w holds exp(log_scale) and alpha_w holds exp(-opacity);
    # the caller computes those with vectorized exp, which is far cheaper
    cdef Py_ssize_t n = mu.shape[0]
    cdef Py_ssize_t i, f, a, b, c, j
    cdef double k, ox, oy, oz, qw, qx, qy, qz, pw, px, py, pz, nrm, cc
    for i in prange(n, nogil=True, num_threads=n_threads, schedule="static"):
        f = face_index[i]
        a = faces[f, 0]
        b = faces[f, 1]
        c = faces[f, 2]
        k = face_scale[f]
        ox = bary[i, 0] * vertices[a, 0] + bary[i, 1] * vertices[b, 0] + bary[i, 2] * vertices[c, 0]
        oy = bary[i, 0] * vertices[a, 1] + bary[i, 1] * vertices[b, 1] + bary[i, 2] * vertices[c, 1]
        oz = bary[i, 0] * vertices[a, 2] + bary[i, 1] * vertices[b, 2] + bary[i, 2] * vertices[c, 2]
        for j in range(3):
            mu_w[i, j] = (face_basis[f, j, 0] * mu[i, 0] + face_basis[f, j, 1] * mu[i, 1]
                          + face_basis[f, j, 2] * mu[i, 2])
        mu_w[i, 0] = ox + k * mu_w[i, 0]
        mu_w[i, 1] = oy + k * mu_w[i, 1]
        mu_w[i, 2] = oz + k * mu_w[i, 2]
        for j in range(3):
            scale_w[i, j] = k * scale_w[i, j]
        qw = face_quat[f, 0]
        qx = face_quat[f, 1]
        qy = face_quat[f, 2]
        qz = face_quat[f, 3]
        pw = qw * rot[i, 0] - qx * rot[i, 1] - qy * rot[i, 2] - qz * rot[i, 3]
        px = qw * rot[i, 1] + qx * rot[i, 0] + qy * rot[i, 3] - qz * rot[i, 2]
        py = qw * rot[i, 2] - qx * rot[i, 3] + qy * rot[i, 0] + qz * rot[i, 1]
        pz = qw * rot[i, 3] + qx * rot[i, 2] - qy * rot[i, 1] + qz * rot[i, 0]
        nrm = sqrt(pw * pw + px * px + py * py + pz * pz)
        rot_w[i, 0] = pw / nrm
        rot_w[i, 1] = px / nrm
        rot_w[i, 2] = py / nrm
        rot_w[i, 3] = pz / nrm
        for j in range(3):
            cc = color[i, j]
            if cc < 0.0:
                cc = 0.0
            elif cc > 1.0:
                cc = 1.0
            color_w[i, j] = cc
        alpha_w[i] = 1.0 / (1.0 + alpha_w[i])


# Compositing works on per-pair rows packed in list order:
# [mean_x, mean_y, conic_a, conic_b, conic_c, qcut, alpha, red, green, blue, radius_x, radius_y]
# Each tile walks its list Gaussian-outer and touches only the pixels inside
# that Gaussian's footprint box.  Every pixel still sees its contributors in
# list order, so results equal a pixel-outer walk bit for bit.

cdef inline void _box(const double *row, Py_ssize_t x0, Py_ssize_t x1, Py_ssize_t y0, Py_ssize_t y1,
                      Py_ssize_t *bx0, Py_ssize_t *bx1, Py_ssize_t *by0, Py_ssize_t *by1) noexcept nogil:
    # pixel i is in the box when |i + 0.5 - mean| <= radius (padded against rounding)
    cdef double pad = 1e-3
    cdef Py_ssize_t a = <Py_ssize_t> ceil(row[0] - row[10] - pad - 0.5)
    cdef Py_ssize_t b = <Py_ssize_t> floor(row[0] + row[10] + pad - 0.5)
    cdef Py_ssize_t c = <Py_ssize_t> ceil(row[1] - row[11] - pad - 0.5)
    cdef Py_ssize_t d = <Py_ssize_t> floor(row[1] + row[11] + pad - 0.5)
    bx0[0] = a if a > x0 else x0
    bx1[0] = b + 1 if b + 1 < x1 else x1
    by0[0] = c if c > y0 else y0
    by1[0] = d + 1 if d + 1 < y1 else y1


cdef void _forward_tile(Py_ssize_t t, Py_ssize_t tiles_x, int tile_size, int width, int height,
                        const double[:, ::1] pd, const i64[::1] tile_start, const i64[::1] tile_end,
                        double bg0, double bg1, double bg2, double t_min,
                        double[:, :, ::1] out_rgb, double[:, ::1] out_T, i64[:, ::1] out_last) noexcept nogil:
    cdef Py_ssize_t x0 = (t % tiles_x) * tile_size
    cdef Py_ssize_t y0 = (t // tiles_x) * tile_size
    cdef Py_ssize_t x1 = x0 + tile_size
    cdef Py_ssize_t y1 = y0 + tile_size
    cdef Py_ssize_t start = tile_start[t]
    cdef Py_ssize_t end = tile_end[t]
    cdef Py_ssize_t px, py, k, tw, i, npix, alive
    cdef Py_ssize_t bx0, bx1, by0, by1
    cdef double fx, fy, dx, dy, q, a, w, Ti
    cdef const double *row
    if x1 > width:
        x1 = width
    if y1 > height:
        y1 = height
    tw = x1 - x0
    npix = tw * (y1 - y0)
    cdef double *T = <double *> malloc(npix * 4 * sizeof(double))
    cdef double *rgb = T + npix
    cdef Py_ssize_t *last = <Py_ssize_t *> malloc(npix * sizeof(Py_ssize_t))
    cdef char *done = <char *> malloc(npix * sizeof(char))
    for i in range(npix):
        T[i] = 1.0
        rgb[3 * i] = 0.0
        rgb[3 * i + 1] = 0.0
        rgb[3 * i + 2] = 0.0
        last[i] = 0
        done[i] = 0
    alive = npix
    for k in range(start, end):
        if alive == 0:
            break
        row = &pd[k, 0]
        _box(row, x0, x1, y0, y1, &bx0, &bx1, &by0, &by1)
        for py in range(by0, by1):
            fy = py + 0.5
            dy = fy - row[1]
            for px in range(bx0, bx1):
                i = (py - y0) * tw + (px - x0)
                if done[i]:
                    continue
                dx = px + 0.5 - row[0]
                q = row[2] * dx * dx + 2.0 * row[3] * dx * dy + row[4] * dy * dy
                if q > row[5]:
                    continue
                a = row[6] * exp(-0.5 * q)
                Ti = T[i]
                w = a * Ti
                rgb[3 * i] = rgb[3 * i] + row[7] * w
                rgb[3 * i + 1] = rgb[3 * i + 1] + row[8] * w
                rgb[3 * i + 2] = rgb[3 * i + 2] + row[9] * w
                Ti = Ti * (1.0 - a)
                T[i] = Ti
                last[i] = k - start + 1
                if Ti < t_min:
                    done[i] = 1
                    alive = alive - 1
    for py in range(y0, y1):
        for px in range(x0, x1):
            i = (py - y0) * tw + (px - x0)
            out_rgb[py, px, 0] = rgb[3 * i] + T[i] * bg0
            out_rgb[py, px, 1] = rgb[3 * i + 1] + T[i] * bg1
            out_rgb[py, px, 2] = rgb[3 * i + 2] + T[i] * bg2
            out_T[py, px] = T[i]
            out_last[py, px] = last[i]
    free(T)
    free(last)
    free(done)


def raster_forward(const double[:, ::1] pd, const i64[::1] tile_start, const i64[::1] tile_end,
                   double bg0, double bg1, double bg2, int width, int height, int tile_size,
                   double t_min, int n_threads,
                   double[:, :, ::1] out_rgb, double[:, ::1] out_T, i64[:, ::1] out_last):
    cdef Py_ssize_t tiles_x = (width + tile_size - 1) // tile_size
    cdef Py_ssize_t tiles_y = (height + tile_size - 1) // tile_size
    cdef Py_ssize_t t
    for t in prange(tiles_x * tiles_y, nogil=True, num_threads=n_threads, schedule="dynamic"):
        _forward_tile(t, tiles_x, tile_size, width, height, pd, tile_start, tile_end,
                      bg0, bg1, bg2, t_min, out_rgb, out_T, out_last)


cdef void _backward_tile(Py_ssize_t t, Py_ssize_t tiles_x, int tile_size, int width, int height,
                         const double[:, ::1] pd, const i64[::1] tile_start, const i64[::1] tile_end,
                         double bg0, double bg1, double bg2,
                         const double[:, :, ::1] g_rgb, const double[:, ::1] g_alpha,
                         const i64[:, ::1] last_arr, double[:, ::1] pair_grad) noexcept nogil:
    cdef Py_ssize_t x0 = (t % tiles_x) * tile_size
    cdef Py_ssize_t y0 = (t // tiles_x) * tile_size
    cdef Py_ssize_t x1 = x0 + tile_size
    cdef Py_ssize_t y1 = y0 + tile_size
    cdef Py_ssize_t start = tile_start[t]
    cdef Py_ssize_t end = tile_end[t]
    cdef Py_ssize_t px, py, k, tw, i, npix, slot, total, off
    cdef Py_ssize_t bx0, bx1, by0, by1
    cdef double fx, fy, dx, dy, q, a, G, Tb, dalpha, dq, c0, c1, c2, gr, gg, gb, ga
    cdef const double *row
    cdef double *out
    if end <= start:
        return
    if x1 > width:
        x1 = width
    if y1 > height:
        y1 = height
    tw = x1 - x0
    npix = tw * (y1 - y0)
    # per-entry offsets into the (alpha, T_before) scratch buffer
    cdef Py_ssize_t *offs = <Py_ssize_t *> malloc((end - start + 1) * sizeof(Py_ssize_t))
    total = 0
    for k in range(start, end):
        offs[k - start] = total
        _box(&pd[k, 0], x0, x1, y0, y1, &bx0, &bx1, &by0, &by1)
        if bx1 > bx0 and by1 > by0:
            total = total + (bx1 - bx0) * (by1 - by0)
    offs[end - start] = total
    cdef double *abuf = <double *> malloc((total + 1) * 2 * sizeof(double))
    cdef double *tbuf = abuf + total + 1
    cdef double *T = <double *> malloc(npix * 5 * sizeof(double))
    cdef double *R = T + npix
    cdef double *P = T + 4 * npix
    cdef char *skip = <char *> malloc(npix * sizeof(char))
    for py in range(y0, y1):
        for px in range(x0, x1):
            i = (py - y0) * tw + (px - x0)
            T[i] = 1.0
            R[3 * i] = bg0
            R[3 * i + 1] = bg1
            R[3 * i + 2] = bg2
            P[i] = 1.0
            skip[i] = (g_rgb[py, px, 0] == 0.0 and g_rgb[py, px, 1] == 0.0
                       and g_rgb[py, px, 2] == 0.0 and g_alpha[py, px] == 0.0)

    for k in range(start, end):
        row = &pd[k, 0]
        _box(row, x0, x1, y0, y1, &bx0, &bx1, &by0, &by1)
        off = offs[k - start]
        for py in range(by0, by1):
            fy = py + 0.5
            dy = fy - row[1]
            for px in range(bx0, bx1):
                i = (py - y0) * tw + (px - x0)
                if skip[i] or k - start >= last_arr[py, px]:
                    abuf[off] = -1.0
                    off = off + 1
                    continue
                dx = px + 0.5 - row[0]
                q = row[2] * dx * dx + 2.0 * row[3] * dx * dy + row[4] * dy * dy
                if q > row[5]:
                    abuf[off] = -1.0
                    off = off + 1
                    continue
                a = row[6] * exp(-0.5 * q)
                abuf[off] = a
                tbuf[off] = T[i]
                T[i] = T[i] * (1.0 - a)
                off = off + 1

    for k in range(end - 1, start - 1, -1):
        row = &pd[k, 0]
        _box(row, x0, x1, y0, y1, &bx0, &bx1, &by0, &by1)
        off = offs[k - start]
        slot = k
        out = &pair_grad[slot, 0]
        c0 = row[7]
        c1 = row[8]
        c2 = row[9]
        for py in range(by0, by1):
            fy = py + 0.5
            dy = fy - row[1]
            for px in range(bx0, bx1):
                i = (py - y0) * tw + (px - x0)
                a = abuf[off]
                Tb = tbuf[off]
                off = off + 1
                if a < 0.0:
                    continue
                gr = g_rgb[py, px, 0]
                gg = g_rgb[py, px, 1]
                gb = g_rgb[py, px, 2]
                ga = g_alpha[py, px]
                dalpha = Tb * (gr * (c0 - R[3 * i]) + gg * (c1 - R[3 * i + 1]) + gb * (c2 - R[3 * i + 2])
                               + ga * P[i])
                out[5] += gr * a * Tb
                out[6] += gg * a * Tb
                out[7] += gb * a * Tb
                R[3 * i] = c0 * a + (1.0 - a) * R[3 * i]
                R[3 * i + 1] = c1 * a + (1.0 - a) * R[3 * i + 1]
                R[3 * i + 2] = c2 * a + (1.0 - a) * R[3 * i + 2]
                P[i] = P[i] * (1.0 - a)
                dx = px + 0.5 - row[0]
                G = a / row[6]
                out[8] += dalpha * G
                dq = -0.5 * a * dalpha
                out[0] += -dq * (2.0 * row[2] * dx + 2.0 * row[3] * dy)
                out[1] += -dq * (2.0 * row[3] * dx + 2.0 * row[4] * dy)
                out[2] += dq * dx * dx
                out[3] += dq * 2.0 * dx * dy
                out[4] += dq * dy * dy
    free(offs)
    free(abuf)
    free(T)
    free(skip)


def raster_backward(const double[:, ::1] pd, const i64[::1] tile_start, const i64[::1] tile_end,
                    double bg0, double bg1, double bg2, int width, int height, int tile_size,
                    const double[:, :, ::1] g_rgb, const double[:, ::1] g_alpha,
                    const i64[:, ::1] last_arr, double[:, ::1] pair_grad, int n_threads):
    cdef Py_ssize_t tiles_x = (width + tile_size - 1) // tile_size
    cdef Py_ssize_t tiles_y = (height + tile_size - 1) // tile_size
    cdef Py_ssize_t t
    for t in prange(tiles_x * tiles_y, nogil=True, num_threads=n_threads, schedule="dynamic"):
        _backward_tile(t, tiles_x, tile_size, width, height, pd, tile_start, tile_end,
                       bg0, bg1, bg2, g_rgb, g_alpha, last_arr, pair_grad)
