"""Bounding volume hierarchy over triangles: binned SAH build, 4-wide leaves.

The build is fully deterministic (no randomness, stable orderings), so a
scene loads to the same BVH every time. Traversal lives in the compiled
kernels; this module only builds the flat node arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 4
N_BINS = 16


@dataclass
class Bvh:
    bmin: np.ndarray    # (n_nodes, 3)
    bmax: np.ndarray    # (n_nodes, 3)
    left: np.ndarray    # (n_nodes,) child index, -1 for leaves
    right: np.ndarray   # (n_nodes,)
    first: np.ndarray   # (n_nodes,) leaf range start into `order`
    count: np.ndarray   # (n_nodes,) leaf triangle count, 0 for internal
    order: np.ndarray   # (n_tris,) triangle permutation


def build_bvh(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray) -> Bvh:
    """Build from triangle corner arrays, each (n, 3)."""
    n = len(v0)
    tri_min = np.minimum(np.minimum(v0, v1), v2)
    tri_max = np.maximum(np.maximum(v0, v1), v2)
    centroid = (tri_min + tri_max) * 0.5

    order = np.arange(n, dtype=np.int64)
    bmin, bmax, left, right, first, count = [], [], [], [], [], []

    def new_node():
        bmin.append(np.zeros(3))
        bmax.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        first.append(0)
        count.append(0)
        return len(bmin) - 1

    def surface(mn, mx):
        d = np.maximum(mx - mn, 0.0)
        return 2.0 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2])

    root = new_node()
    stack = [(root, 0, n)]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        nb_min = tri_min[idx].min(axis=0)
        nb_max = tri_max[idx].max(axis=0)
        bmin[node], bmax[node] = nb_min, nb_max
        m = hi - lo
        if m <= LEAF_SIZE:
            first[node], count[node] = lo, m
            continue

        cen = centroid[idx]
        cmin, cmax = cen.min(axis=0), cen.max(axis=0)
        extent = cmax - cmin
        axis = int(np.argmax(extent))
        if extent[axis] < 1e-12:
            # all centroids coincide: split in the middle, stable order
            mid = lo + m // 2
        else:
            scale = N_BINS * (1.0 - 1e-9) / extent[axis]
            bins = ((cen[:, axis] - cmin[axis]) * scale).astype(np.int64)
            # accumulate bin bounds and counts
            bin_cnt = np.bincount(bins, minlength=N_BINS)
            bin_min = np.full((N_BINS, 3), np.inf)
            bin_max = np.full((N_BINS, 3), -np.inf)
            for b in range(N_BINS):
                sel = bins == b
                if bin_cnt[b]:
                    bin_min[b] = tri_min[idx[sel]].min(axis=0)
                    bin_max[b] = tri_max[idx[sel]].max(axis=0)
            # sweep SAH costs for the N_BINS-1 split planes
            lmin = np.minimum.accumulate(bin_min, axis=0)
            lmax = np.maximum.accumulate(bin_max, axis=0)
            rmin = np.minimum.accumulate(bin_min[::-1], axis=0)[::-1]
            rmax = np.maximum.accumulate(bin_max[::-1], axis=0)[::-1]
            lcnt = np.cumsum(bin_cnt)
            best_cost, best_split = np.inf, -1
            for s in range(N_BINS - 1):
                nl, nr = lcnt[s], m - lcnt[s]
                if nl == 0 or nr == 0:
                    continue
                cost = nl * surface(lmin[s], lmax[s]) + nr * surface(rmin[s + 1], rmax[s + 1])
                if cost < best_cost:
                    best_cost, best_split = cost, s
            if best_split < 0:
                mid = lo + m // 2
            else:
                sel_left = bins <= best_split
                # stable partition keeps the build deterministic
                order[lo:hi] = np.concatenate([idx[sel_left], idx[~sel_left]])
                mid = lo + int(sel_left.sum())
        if mid == lo or mid == hi:
            mid = lo + m // 2
        lchild = new_node()
        rchild = new_node()
        left[node], right[node] = lchild, rchild
        stack.append((rchild, mid, hi))
        stack.append((lchild, lo, mid))

    return Bvh(
        bmin=np.array(bmin), bmax=np.array(bmax),
        left=np.array(left, dtype=np.int64), right=np.array(right, dtype=np.int64),
        first=np.array(first, dtype=np.int64), count=np.array(count, dtype=np.int64),
        order=order,
    )
