"""Pure numpy implementations of the ``_core`` kernels.

The BVH traversal is a wavefront: all live (ray, node) pairs advance one tree
level per iteration. Because every leaf of the implicit tree sits at the same
depth, a plain wavefront would never prune with an earlier hit, so each ray
first descends greedily to the leaf under its nearest child box; that hit
bounds the full traversal. Rays go through in chunks to cap memory. Triangle
tests use the same operation order as the compiled kernel, so hits agree bit
for bit.
"""

import numpy as np


def intersect(o, d, v0, v1, v2, eps_ray, edge_tol, par_eps):
    """Broadcasting ray/triangle test.

    Component arrays are taken from the last axis. Returns ``(hit, t, u, v)``.
    """
    ox, oy, oz = o[..., 0], o[..., 1], o[..., 2]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    e1x = v1[..., 0] - v0[..., 0]
    e1y = v1[..., 1] - v0[..., 1]
    e1z = v1[..., 2] - v0[..., 2]
    e2x = v2[..., 0] - v0[..., 0]
    e2y = v2[..., 1] - v0[..., 1]
    e2z = v2[..., 2] - v0[..., 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    ok = np.abs(det) >= par_eps
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(ok, det, 1.0)
        sx = ox - v0[..., 0]
        sy = oy - v0[..., 1]
        sz = oz - v0[..., 2]
        u = (sx * px + sy * py + sz * pz) * inv
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        v = (dx * qx + dy * qy + dz * qz) * inv
        t = (e2x * qx + e2y * qy + e2z * qz) * inv
        hit = ok & (u >= -edge_tol) & (v >= -edge_tol) & ((u + v) <= 1.0 + edge_tol) & (t > eps_ray)
    return hit, t, u, v


CHUNK = 8192


def _box_hit(lo, hi, o, d, t_min, t_best):
    """Slab test; returns ``(hit, t_near)``."""
    empty = lo[:, 0] > hi[:, 0]
    tnear = np.full(len(o), -np.inf)
    tfar = np.full(len(o), np.inf)
    ok = ~empty
    with np.errstate(divide="ignore", invalid="ignore"):
        for ax in range(3):
            da = d[:, ax]
            flat = da == 0.0
            inv = np.where(flat, np.inf, 1.0 / np.where(flat, 1.0, da))
            t0 = (lo[:, ax] - o[:, ax]) * inv
            t1 = (hi[:, ax] - o[:, ax]) * inv
            a = np.minimum(t0, t1)
            b = np.maximum(t0, t1)
            inside = (lo[:, ax] <= o[:, ax]) & (o[:, ax] <= hi[:, ax])
            ok &= np.where(flat, inside, True)
            tnear = np.where(flat, tnear, np.maximum(tnear, a))
            tfar = np.where(flat, tfar, np.minimum(tfar, b))
    return ok & (tnear <= tfar) & (tfar >= t_min) & (tnear <= t_best), tnear


def _take_best(ray, tri, t, u, v, best_tri, best_t, best_u, best_v):
    """Fold candidate hits into the running best with (t, triangle) ordering."""
    if len(ray) == 0:
        return
    key = np.lexsort((tri, t, ray))
    ray, tri, t, u, v = ray[key], tri[key], t[key], u[key], v[key]
    first = np.ones(len(ray), dtype=bool)
    first[1:] = ray[1:] != ray[:-1]
    ray, tri, t, u, v = ray[first], tri[first], t[first], u[first], v[first]
    better = (t < best_t[ray]) | ((t == best_t[ray]) & (tri < best_tri[ray]))
    r = ray[better]
    best_t[r] = t[better]
    best_tri[r] = tri[better]
    best_u[r] = u[better]
    best_v[r] = v[better]


def _leaf_tests(ray, node, tris, order, n_inner, leaf_size, origins, dirs, eps_ray, edge_tol, par_eps, best):
    n_tris = len(tris)
    start = (node - n_inner) * leaf_size
    slot = start[:, None] + np.arange(leaf_size)[None, :]
    present = slot < n_tris
    cr = np.broadcast_to(ray[:, None], slot.shape)[present]
    cs = slot[present]
    hit, t, u, v = intersect(origins[cr], dirs[cr], tris[cs, 0], tris[cs, 1], tris[cs, 2],
                             eps_ray, edge_tol, par_eps)
    _take_best(cr[hit], order[cs[hit]], t[hit], u[hit], v[hit], *best)


def _cast_chunk(lo, hi, tris, order, n_inner, leaf_size, origins, dirs, eps_ray, edge_tol, par_eps, best):
    best_t = best[1]
    n = len(origins)
    args = (tris, order, n_inner, leaf_size, origins, dirs, eps_ray, edge_tol, par_eps, best)

    # greedy probe: follow the nearer child box down to one leaf
    ray = np.arange(n)
    node = np.zeros(n, dtype=np.int64)
    keep, _ = _box_hit(lo[node], hi[node], origins, dirs, eps_ray, best_t)
    ray, node = ray[keep], node[keep]
    while len(ray) and node[0] < n_inner:  # all live nodes share one level
        kids = 2 * node + 1
        o, d = origins[ray], dirs[ray]
        hit_a, near_a = _box_hit(lo[kids], hi[kids], o, d, eps_ray, best_t[ray])
        hit_b, near_b = _box_hit(lo[kids + 1], hi[kids + 1], o, d, eps_ray, best_t[ray])
        take_b = hit_b & (~hit_a | (near_b < near_a))
        alive = hit_a | hit_b
        ray, node = ray[alive], np.where(take_b, kids + 1, kids)[alive]
    if len(ray):
        _leaf_tests(ray, node, *args)

    # full wavefront, pruned by the probe hits
    ray = np.arange(n)
    node = np.zeros(n, dtype=np.int64)
    while len(ray):
        keep, _ = _box_hit(lo[node], hi[node], origins[ray], dirs[ray], eps_ray, best_t[ray])
        ray, node = ray[keep], node[keep]
        if len(ray) == 0:
            break
        if node[0] >= n_inner:
            _leaf_tests(ray, node, *args)
            break
        ray = np.repeat(ray, 2)
        node = 2 * np.repeat(node, 2) + 1 + np.tile([0, 1], len(node))


def cast_rays(lo, hi, tris, order, n_inner, leaf_size, origins, dirs,
              eps_ray, edge_tol, par_eps, nthreads=0):
    n = len(origins)
    best_tri = np.full(n, -1, dtype=np.int64)
    best_t = np.full(n, np.inf)
    best_u = np.zeros(n)
    best_v = np.zeros(n)
    if n == 0 or len(tris) == 0:
        return best_tri, best_t, best_u, best_v
    for s in range(0, n, CHUNK):
        sl = slice(s, min(s + CHUNK, n))
        best = (best_tri[sl], best_t[sl], best_u[sl], best_v[sl])  # views, updated in place
        _cast_chunk(lo, hi, tris, order, n_inner, leaf_size, origins[sl], dirs[sl],
                    eps_ray, edge_tol, par_eps, best)
    return best_tri, best_t, best_u, best_v


def splat_nearest(target, z, n_pixels):
    winner = np.full(n_pixels, -1, dtype=np.int64)
    src = np.flatnonzero(target >= 0)
    if len(src) == 0:
        return winner
    key = np.lexsort((src, z[src], target[src]))
    src = src[key]
    tgt = target[src]
    first = np.ones(len(src), dtype=bool)
    first[1:] = tgt[1:] != tgt[:-1]
    winner[tgt[first]] = src[first]
    return winner
