# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-point kernels. `_numpy` holds the reference semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, exp, floor, hypot, sqrt

cnp.import_array()


def point_ranges(positions):
    cdef double[:, ::1] p = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = sqrt(p[i, 0] * p[i, 0] + p[i, 1] * p[i, 1] + p[i, 2] * p[i, 2])
    return out


def pitch_angles(positions):
    cdef double[:, ::1] p = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = atan2(p[i, 2], hypot(p[i, 0], p[i, 1]))
    return out


def softmax_confidence(logits):
    cdef double[:, ::1] lg = np.ascontiguousarray(logits, dtype=np.float64)
    cdef Py_ssize_t n = lg.shape[0], c = lg.shape[1], i, j, best
    if c == 0:
        raise ValueError("logits need at least one class column")
    labels = np.empty(n, dtype=np.int64)
    conf = np.empty(n, dtype=np.float64)
    cdef long long[::1] lab = labels
    cdef double[::1] cf = conf
    cdef double m, s
    for i in range(n):
        best = 0
        m = lg[i, 0]
        for j in range(1, c):
            if lg[i, j] > m:
                m = lg[i, j]
                best = j
        s = 0.0
        for j in range(c):
            s += exp(lg[i, j] - m)
        lab[i] = best
        cf[i] = 1.0 / s
    return labels, conf


def decay_weights(d_norm, alpha, raw):
    cdef double[::1] d = np.ascontiguousarray(d_norm, dtype=np.float64)
    cdef double[::1] r = np.ascontiguousarray(raw, dtype=np.float64)
    cdef double a = alpha
    cdef Py_ssize_t n = d.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = r[i] * exp(-a * d[i])
    return out


def bin_indices(ranges, step):
    cdef double[::1] r = np.ascontiguousarray(ranges, dtype=np.float64)
    cdef double s = step
    cdef Py_ssize_t n = r.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] o = out
    for i in range(n):
        o[i] = <long long> floor(r[i] / s) + 1
    return out


def apply_clamped_noise(positions, noise, scale, clamp):
    cdef double[:, ::1] p = np.ascontiguousarray(positions, dtype=np.float64)
    cdef double[:, ::1] nz = np.ascontiguousarray(noise, dtype=np.float64)
    cdef double[:, ::1] sc = np.ascontiguousarray(scale, dtype=np.float64)
    cdef double c = clamp
    cdef Py_ssize_t n = p.shape[0], i, k
    out = np.empty((n, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double d
    for i in range(n):
        for k in range(3):
            d = nz[i, k] * sc[i, k]
            if d > c:
                d = c
            elif d < -c:
                d = -c
            o[i, k] = p[i, k] + d
    return out


def radius_stats(positions, radius, workers=1):
    """Grid-hashed neighbor count and z std within `radius` per point."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = pos.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if radius <= 0:
        raise ValueError("radius must be positive")
    cells = np.floor(pos / radius).astype(np.int64)
    cells -= cells.min(axis=0)
    spans = cells.max(axis=0) + 1
    codes = (cells[:, 0] * spans[1] + cells[:, 1]) * spans[2] + cells[:, 2]
    order = np.argsort(codes, kind="stable").astype(np.int64)
    sorted_codes = codes[order]

    counts = np.empty(n, dtype=np.int64)
    zstd = np.empty(n, dtype=np.float64)
    _radius_stats_core(
        pos, cells, spans.astype(np.int64), sorted_codes, order,
        float(radius), counts, zstd,
    )
    return counts, zstd


cdef Py_ssize_t _lower_bound(long long[::1] a, long long v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _radius_stats_core(
    double[:, ::1] pos,
    long long[:, ::1] cells,
    long long[::1] spans,
    long long[::1] sorted_codes,
    long long[::1] order,
    double radius,
    long long[::1] counts,
    double[::1] zstd,
):
    cdef Py_ssize_t n = pos.shape[0], i, t, lo, hi, j
    cdef long long cx, cy, cz, nx, ny, nz_, code
    cdef long long dx, dy, dz
    cdef double r2 = radius * radius
    cdef double ddx, ddy, ddz, d2, sz, sz2, mean, var
    cdef long long cnt
    with nogil:
        for i in range(n):
            cx = cells[i, 0]
            cy = cells[i, 1]
            cz = cells[i, 2]
            cnt = 0
            sz = 0.0
            sz2 = 0.0
            for dx in range(-1, 2):
                nx = cx + dx
                if nx < 0 or nx >= spans[0]:
                    continue
                for dy in range(-1, 2):
                    ny = cy + dy
                    if ny < 0 or ny >= spans[1]:
                        continue
                    for dz in range(-1, 2):
                        nz_ = cz + dz
                        if nz_ < 0 or nz_ >= spans[2]:
                            continue
                        code = (nx * spans[1] + ny) * spans[2] + nz_
                        lo = _lower_bound(sorted_codes, code)
                        hi = _lower_bound(sorted_codes, code + 1)
                        for t in range(lo, hi):
                            j = order[t]
                            ddx = pos[j, 0] - pos[i, 0]
                            ddy = pos[j, 1] - pos[i, 1]
                            ddz = pos[j, 2] - pos[i, 2]
                            d2 = ddx * ddx + ddy * ddy + ddz * ddz
                            if d2 <= r2:
                                cnt += 1
                                sz += pos[j, 2]
                                sz2 += pos[j, 2] * pos[j, 2]
            counts[i] = cnt
            mean = sz / cnt
            var = sz2 / cnt - mean * mean
            if var < 0.0:
                var = 0.0
            zstd[i] = sqrt(var)
