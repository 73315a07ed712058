# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: BVH closest-hit ray casting and z-buffer splatting.

Arithmetic mirrors ``_fallback`` operation for operation so both backends
return bit-identical hits. Build with ``-ffp-contract=off``.
"""

import numpy as np
cimport cython
from cython.parallel cimport prange
from libc.math cimport fabs, INFINITY

cdef enum:
    STACK_SIZE = 256


cdef inline bint _slab(double lo, double hi, double o, double inv, double d,
                       double* tnear, double* tfar) noexcept nogil:
    cdef double t0, t1
    if d == 0.0:
        return lo <= o <= hi
    t0 = (lo - o) * inv
    t1 = (hi - o) * inv
    if t0 > t1:
        t0, t1 = t1, t0
    if t0 > tnear[0]:
        tnear[0] = t0
    if t1 < tfar[0]:
        tfar[0] = t1
    return tnear[0] <= tfar[0]


cdef inline bint _box_hit(const double[:, ::1] lo, const double[:, ::1] hi, Py_ssize_t k,
                          const double* o, const double* d, const double* inv,
                          double t_min, double t_best) noexcept nogil:
    cdef double tnear = -INFINITY
    cdef double tfar = INFINITY
    if lo[k, 0] > hi[k, 0]:
        return False
    if not _slab(lo[k, 0], hi[k, 0], o[0], inv[0], d[0], &tnear, &tfar):
        return False
    if not _slab(lo[k, 1], hi[k, 1], o[1], inv[1], d[1], &tnear, &tfar):
        return False
    if not _slab(lo[k, 2], hi[k, 2], o[2], inv[2], d[2], &tnear, &tfar):
        return False
    return tfar >= t_min and tnear <= t_best


cdef inline bint _intersect(const double* o, const double* d,
                            const double[:, :, ::1] tris, Py_ssize_t j,
                            double eps_ray, double edge_tol, double par_eps,
                            double* t_out, double* u_out, double* v_out) noexcept nogil:
    cdef double e1x = tris[j, 1, 0] - tris[j, 0, 0]
    cdef double e1y = tris[j, 1, 1] - tris[j, 0, 1]
    cdef double e1z = tris[j, 1, 2] - tris[j, 0, 2]
    cdef double e2x = tris[j, 2, 0] - tris[j, 0, 0]
    cdef double e2y = tris[j, 2, 1] - tris[j, 0, 1]
    cdef double e2z = tris[j, 2, 2] - tris[j, 0, 2]
    cdef double px = d[1] * e2z - d[2] * e2y
    cdef double py = d[2] * e2x - d[0] * e2z
    cdef double pz = d[0] * e2y - d[1] * e2x
    cdef double det = e1x * px + e1y * py + e1z * pz
    cdef double inv, sx, sy, sz, u, v, t, qx, qy, qz
    if fabs(det) < par_eps:
        return False
    inv = 1.0 / det
    sx = o[0] - tris[j, 0, 0]
    sy = o[1] - tris[j, 0, 1]
    sz = o[2] - tris[j, 0, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if u >= -edge_tol and v >= -edge_tol and (u + v) <= 1.0 + edge_tol and t > eps_ray:
        t_out[0] = t
        u_out[0] = u
        v_out[0] = v
        return True
    return False


cdef void _cast_one(const double[:, ::1] lo, const double[:, ::1] hi,
                    const double[:, :, ::1] tris, const long long[::1] order,
                    Py_ssize_t n_inner, Py_ssize_t leaf_size, Py_ssize_t n_tris,
                    const double* o, const double* d,
                    double eps_ray, double edge_tol, double par_eps,
                    long long* hit_tri, double* hit_t, double* hit_u, double* hit_v) noexcept nogil:
    cdef Py_ssize_t stack[STACK_SIZE]
    cdef Py_ssize_t sp = 0
    cdef Py_ssize_t k, j, start, stop, a, b
    cdef double inv[3]
    cdef double t, u, v
    cdef double best_t = INFINITY
    cdef long long best_tri = -1
    cdef double best_u = 0.0, best_v = 0.0
    cdef long long orig
    cdef int ax
    for ax in range(3):
        inv[ax] = 1.0 / d[ax] if d[ax] != 0.0 else INFINITY
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        k = stack[sp]
        if not _box_hit(lo, hi, k, o, d, inv, eps_ray, best_t):
            continue
        if k >= n_inner:
            start = (k - n_inner) * leaf_size
            stop = start + leaf_size
            if stop > n_tris:
                stop = n_tris
            for j in range(start, stop):
                if _intersect(o, d, tris, j, eps_ray, edge_tol, par_eps, &t, &u, &v):
                    orig = order[j]
                    if t < best_t or (t == best_t and orig < best_tri):
                        best_t = t
                        best_tri = orig
                        best_u = u
                        best_v = v
        else:
            a = 2 * k + 1
            b = 2 * k + 2
            if sp + 2 > STACK_SIZE:
                continue
            stack[sp] = b
            stack[sp + 1] = a
            sp += 2
    hit_tri[0] = best_tri
    hit_t[0] = best_t
    hit_u[0] = best_u
    hit_v[0] = best_v


def cast_rays(const double[:, ::1] lo, const double[:, ::1] hi,
              const double[:, :, ::1] tris, const long long[::1] order,
              Py_ssize_t n_inner, Py_ssize_t leaf_size,
              const double[:, ::1] origins, const double[:, ::1] dirs,
              double eps_ray, double edge_tol, double par_eps, int nthreads=0):
    """Closest hit per ray. Returns ``(tri, t, u, v)``; ``tri == -1`` on miss."""
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t n_tris = tris.shape[0]
    out_tri = np.full(n, -1, dtype=np.int64)
    out_t = np.full(n, np.inf)
    out_u = np.zeros(n)
    out_v = np.zeros(n)
    cdef long long[::1] otri = out_tri
    cdef double[::1] ot = out_t
    cdef double[::1] ou = out_u
    cdef double[::1] ov = out_v
    cdef Py_ssize_t i
    if n == 0 or n_tris == 0:
        return out_tri, out_t, out_u, out_v
    if nthreads <= 0:
        nthreads = 1
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        _cast_one(lo, hi, tris, order, n_inner, leaf_size, n_tris,
                  &origins[i, 0], &dirs[i, 0], eps_ray, edge_tol, par_eps,
                  &otri[i], &ot[i], &ou[i], &ov[i])
    return out_tri, out_t, out_u, out_v


def splat_nearest(const long long[::1] target, const double[::1] z, Py_ssize_t n_pixels):
    """Z-buffer: per target pixel, the source index with the smallest z.

    Sources are visited in index order and only a strictly smaller depth
    replaces the current winner, so ties go to the smaller source index.
    ``target < 0`` marks sources that land nowhere.
    """
    cdef Py_ssize_t n = target.shape[0]
    winner = np.full(n_pixels, -1, dtype=np.int64)
    zbuf = np.full(n_pixels, np.inf)
    cdef long long[::1] w = winner
    cdef double[::1] zb = zbuf
    cdef Py_ssize_t i
    cdef long long p
    with nogil:
        for i in range(n):
            p = target[i]
            if p < 0:
                continue
            if z[i] < zb[p]:
                zb[p] = z[i]
                w[p] = i
    return winner
