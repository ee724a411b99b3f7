"""Closest-point and signed-distance queries accelerated by an AABB tree.

Queries are exact: results match a brute-force scan over all elements,
with ties broken by lowest element index.  Batched queries traverse the
tree with a per-node frontier so the heavy lifting stays in numpy.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import SurfaceMesh

# relative tolerance deciding when a closest point counts as lying on the
# element boundary (normal information is unreliable there)
BOUNDARY_TOL = 1e-9

SIDE_OUTSIDE = 0
SIDE_INSIDE = 1
SIDE_BOUNDARY = 2
_SIDE_NAMES = {SIDE_OUTSIDE: "outside", SIDE_INSIDE: "inside", SIDE_BOUNDARY: "on_element_boundary"}


@dataclass(frozen=True)
class ClosestPointResult:
    """Closest point on a mesh to one query point."""

    point: np.ndarray
    element: int
    barycentric: np.ndarray
    distance: float
    side: str


@dataclass(frozen=True)
class ClosestPointBatch:
    """Struct-of-arrays result for a batch of queries."""

    point: np.ndarray        # (n, d)
    element: np.ndarray      # (n,) int64
    barycentric: np.ndarray  # (n, d)
    distance: np.ndarray     # (n,)
    side: np.ndarray         # (n,) int8, see SIDE_* codes

    def __len__(self):
        return self.point.shape[0]

    def __getitem__(self, i) -> ClosestPointResult:
        return ClosestPointResult(
            point=self.point[i].copy(),
            element=int(self.element[i]),
            barycentric=self.barycentric[i].copy(),
            distance=float(self.distance[i]),
            side=_SIDE_NAMES[int(self.side[i])],
        )


class Bvh:
    """Median-split AABB tree over mesh elements (immutable after build).

    Queries against meshes with at most ``brute_cutoff`` elements skip the
    tree and scan all elements vectorized (faster at that scale, identical
    results); set it to 0 to force traversal.
    """

    def __init__(self, mesh: SurfaceMesh, leaf_size: int = 4, brute_cutoff: int = 96):
        if mesh.n_elements == 0:
            raise ValueError("cannot build a BVH over an empty mesh")
        self.dim = mesh.dim
        self.leaf_size = int(leaf_size)
        self.brute_cutoff = int(brute_cutoff)
        self.n_elements = mesh.n_elements
        corners = mesh.element_corners()  # (k, d, d)
        elem_min = corners.min(axis=1)
        elem_max = corners.max(axis=1)
        centroids = corners.mean(axis=1)

        box_min, box_max, left, right, start, count = [], [], [], [], [], []
        perm = np.arange(mesh.n_elements, dtype=np.int64)
        # stack of (node_index, lo, hi) ranges into perm
        box_min.append(None); box_max.append(None)
        left.append(-1); right.append(-1); start.append(0); count.append(0)
        stack = [(0, 0, mesh.n_elements)]
        while stack:
            node, lo, hi = stack.pop()
            idx = perm[lo:hi]
            box_min[node] = elem_min[idx].min(axis=0)
            box_max[node] = elem_max[idx].max(axis=0)
            start[node] = lo
            count[node] = hi - lo
            if hi - lo <= self.leaf_size:
                continue
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            order = np.argsort(cen[:, axis], kind="stable")
            perm[lo:hi] = idx[order]
            mid = lo + (hi - lo) // 2
            for child_lo, child_hi, setter in ((lo, mid, "l"), (mid, hi, "r")):
                child = len(left)
                box_min.append(None); box_max.append(None)
                left.append(-1); right.append(-1); start.append(0); count.append(0)
                if setter == "l":
                    left[node] = child
                else:
                    right[node] = child
                stack.append((child, child_lo, child_hi))

        self.box_min = np.array(box_min)
        self.box_max = np.array(box_max)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.perm = perm
        # geometry snapshots so query results cannot drift from the build mesh
        self._corners = corners
        self._normals = mesh.element_normals()
        self._vertex_tree = cKDTree(mesh.vertices)
        self.n_nodes = len(left)


def build_bvh(mesh: SurfaceMesh, leaf_size: int = 4, brute_cutoff: int = 96) -> Bvh:
    """AABB tree whose queries reproduce brute-force scans exactly."""
    return Bvh(mesh, leaf_size=leaf_size, brute_cutoff=brute_cutoff)


def closest_on_segments(a, b, p):
    """Closest points on segments [a,b] to points p; returns (points, bary).

    All inputs are (k, 2) pairs; bary holds the endpoint weights (1-t, t).
    """
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    safe = np.where(denom > 0.0, denom, 1.0)
    t = np.einsum("ij,ij->i", p - a, ab) / safe
    t = np.clip(np.where(denom > 0.0, t, 0.0), 0.0, 1.0)
    bary = np.stack([1.0 - t, t], axis=1)
    point = bary[:, 0, None] * a + bary[:, 1, None] * b
    return point, bary


def closest_on_triangles(a, b, c, p):
    """Closest points on triangles (a,b,c) to points p; returns (points, bary).

    Exact Voronoi-region classification (vertex/edge/face regions), so the
    barycentric rows are suitable for system assembly.
    """
    k = a.shape[0]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    bary = np.zeros((k, 3))
    assigned = np.zeros(k, dtype=bool)

    def take(mask, u, v, w):
        m = mask & ~assigned
        if np.any(m):
            bary[m, 0] = u[m] if isinstance(u, np.ndarray) else u
            bary[m, 1] = v[m] if isinstance(v, np.ndarray) else v
            bary[m, 2] = w[m] if isinstance(w, np.ndarray) else w
            assigned[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        take((d1 <= 0.0) & (d2 <= 0.0), 1.0, 0.0, 0.0)
        take((d3 >= 0.0) & (d4 <= d3), 0.0, 1.0, 0.0)
        t_ab = d1 / np.where(d1 - d3 != 0.0, d1 - d3, 1.0)
        take((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), 1.0 - t_ab, t_ab, 0.0)
        take((d6 >= 0.0) & (d5 <= d6), 0.0, 0.0, 1.0)
        t_ac = d2 / np.where(d2 - d6 != 0.0, d2 - d6, 1.0)
        take((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), 1.0 - t_ac, 0.0, t_ac)
        num = d4 - d3
        den = num + (d5 - d6)
        t_bc = num / np.where(den != 0.0, den, 1.0)
        take((va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0), 0.0, 1.0 - t_bc, t_bc)
        denom = va + vb + vc
        face = ~assigned & (denom > 0.0)
        if np.any(face):
            inv = 1.0 / denom[face]
            v = vb[face] * inv
            w = vc[face] * inv
            bary[face, 0] = 1.0 - v - w
            bary[face, 1] = v
            bary[face, 2] = w
            assigned[face] = True

    if not np.all(assigned):
        # degenerate (collinear) triangles: best of the three edges
        rest = np.flatnonzero(~assigned)
        best_d2 = np.full(rest.size, np.inf)
        best_bary = np.zeros((rest.size, 3))
        for (ea, eb), cols in (((a, b), (0, 1)), ((b, c), (1, 2)), ((a, c), (0, 2))):
            pt, sb = closest_on_segments(ea[rest], eb[rest], p[rest])
            d2 = np.einsum("ij,ij->i", p[rest] - pt, p[rest] - pt)
            upd = d2 < best_d2
            best_d2[upd] = d2[upd]
            best_bary[upd] = 0.0
            best_bary[upd, cols[0]] = sb[upd, 0]
            best_bary[upd, cols[1]] = sb[upd, 1]
        bary[rest] = best_bary

    point = bary[:, 0, None] * a + bary[:, 1, None] * b + bary[:, 2, None] * c
    return point, bary


def _closest_to_elements(bvh: Bvh, elem_ids, queries):
    """Exact closest point of each query to its paired element."""
    corners = bvh._corners[elem_ids]
    if bvh.dim == 2:
        return closest_on_segments(corners[:, 0], corners[:, 1], queries)
    return closest_on_triangles(corners[:, 0], corners[:, 1], corners[:, 2], queries)


def _box_sq_dist(q, lo, hi):
    d = np.maximum(np.maximum(lo - q, 0.0), q - hi)
    return np.einsum("ij,ij->i", d, d)


def _scan_all(bvh: Bvh, queries):
    """Box-prefiltered exact scan; same results and tie-break as traversal.

    Element boxes farther than the nearest-vertex upper bound cannot hold the
    winner (or any tie with a lower index), so only surviving pairs get the
    exact kernel.
    """
    nq = queries.shape[0]
    m = bvh.n_elements
    corners = bvh._corners
    elem_lo = corners.min(axis=1)
    elem_hi = corners.max(axis=1)
    ub, _ = bvh._vertex_tree.query(queries)
    # inflate the bound so rounding can never prune an exact tie; extra
    # candidates are harmless, the exact kernel decides
    ub2 = ub * ub * (1.0 + 1e-9) + 1e-300
    best = np.empty(nq, dtype=np.int64)
    best_d2 = np.empty(nq)
    chunk = max(1, 2_000_000 // m)
    for lo in range(0, nq, chunk):
        q = queries[lo:lo + chunk]
        k = q.shape[0]
        d = np.maximum(np.maximum(elem_lo[None] - q[:, None, :], 0.0),
                       q[:, None, :] - elem_hi[None])
        box_d2 = np.einsum("qmd,qmd->qm", d, d)
        keep = box_d2 <= ub2[lo:lo + chunk, None]
        missing = ~keep.any(axis=1)
        if np.any(missing):
            keep[missing] = True
        qi, ei = np.nonzero(keep)
        cs = corners[ei]
        qs = q[qi]
        if bvh.dim == 2:
            pt, _ = closest_on_segments(cs[:, 0], cs[:, 1], qs)
        else:
            pt, _ = closest_on_triangles(cs[:, 0], cs[:, 1], cs[:, 2], qs)
        diff = qs - pt
        d2 = np.einsum("ij,ij->i", diff, diff)
        # pairs are ordered by (query, element); first minimum per query
        # group reproduces the lowest-element-index tie-break
        full = np.full((k, m), np.inf)
        full[qi, ei] = d2
        arg = np.argmin(full, axis=1)
        best[lo:lo + chunk] = arg
        best_d2[lo:lo + chunk] = full[np.arange(k), arg]
    return best, best_d2, 0


def _traverse(bvh: Bvh, queries, count_visits=False):
    """Core batched traversal; returns (best_elem, best_d2, visits)."""
    nq = queries.shape[0]
    best_d2 = np.full(nq, np.inf)
    best_elem = np.full(nq, np.iinfo(np.int64).max, dtype=np.int64)
    ub, _ = bvh._vertex_tree.query(queries)
    # slight inflation so rounding cannot prune an exact tie via the bound
    ub = ub * ub * (1.0 + 1e-9) + 1e-300
    visits = 0

    stack = [(0, np.arange(nq, dtype=np.int64))]
    while stack:
        node, idx = stack.pop()
        visits += 1
        cnt = int(bvh.count[node])
        if bvh.left[node] < 0 or idx.size * cnt <= 4096:  # leaf or small subtree
            lo = bvh.start[node]
            q = queries[idx]
            k = idx.size
            elems = bvh.perm[lo:lo + cnt]
            rep_q = np.repeat(q, cnt, axis=0)
            rep_e = np.tile(elems, k)
            pt, _ = _closest_to_elements(bvh, rep_e, rep_q)
            diff = rep_q - pt
            d2 = np.einsum("ij,ij->i", diff, diff).reshape(k, cnt)
            # lexicographic (distance, element-index) minimum per query
            order = np.argsort(elems, kind="stable")
            d2o = d2[:, order]
            eo = elems[order]
            col = np.argmin(d2o, axis=1)
            cand_d2 = d2o[np.arange(k), col]
            cand_e = eo[col]
            cur_d = best_d2[idx]
            cur_e = best_elem[idx]
            upd = (cand_d2 < cur_d) | ((cand_d2 == cur_d) & (cand_e < cur_e))
            if np.any(upd):
                tgt = idx[upd]
                best_d2[tgt] = cand_d2[upd]
                best_elem[tgt] = cand_e[upd]
            continue
        bound = np.minimum(best_d2[idx], ub[idx])
        q = queries[idx]
        for child in (int(bvh.right[node]), int(bvh.left[node])):
            bd2 = _box_sq_dist(q, bvh.box_min[child], bvh.box_max[child])
            keep = bd2 <= bound
            if np.any(keep):
                stack.append((child, idx[keep]))
    return best_elem, best_d2, visits


def _classify_side(bvh: Bvh, elem_ids, queries, points, bary, distances):
    side = np.full(queries.shape[0], SIDE_OUTSIDE, dtype=np.int8)
    on_boundary = (bary.min(axis=1) <= BOUNDARY_TOL) | (distances == 0.0)
    n = bvh._normals[elem_ids]
    dot = np.einsum("ij,ij->i", queries - points, n)
    side[dot < 0.0] = SIDE_INSIDE
    side[on_boundary] = SIDE_BOUNDARY
    return side


def _worker_count() -> int:
    raw = os.environ.get("SPHERE_REACH_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return min(4, os.cpu_count() or 1)
    return n


def batch_closest_points(bvh: Bvh, mesh: SurfaceMesh, queries, count_visits=False):
    """Closest point on the mesh for every query point (order-preserving).

    Results are identical to a brute-force scan over all elements; among
    equally distant elements the one with the lowest index wins.
    """
    if mesh.n_elements != bvh.n_elements or mesh.dim != bvh.dim:
        raise ValueError("BVH was not built from this mesh")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    nq = queries.shape[0]
    if nq == 0:
        z = np.zeros((0, bvh.dim))
        batch = ClosestPointBatch(z, np.zeros(0, np.int64), z.copy(),
                                  np.zeros(0), np.zeros(0, np.int8))
        return (batch, 0) if count_visits else batch

    workers = _worker_count()
    if bvh.n_elements <= bvh.brute_cutoff and not count_visits:
        elems, _, visits = _scan_all(bvh, queries)
    elif workers > 1 and nq >= 8192 and not count_visits:
        bounds = np.linspace(0, nq, workers + 1, dtype=np.int64)
        elems = np.empty(nq, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = []
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                if hi > lo:
                    futs.append((lo, hi, pool.submit(_traverse, bvh, queries[lo:hi])))
            for lo, hi, fut in futs:
                elems[lo:hi] = fut.result()[0]
        visits = 0
    else:
        elems, _, visits = _traverse(bvh, queries, count_visits)

    points, bary = _closest_to_elements(bvh, elems, queries)
    diff = queries - points
    distances = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    side = _classify_side(bvh, elems, queries, points, bary, distances)
    batch = ClosestPointBatch(points, elems, bary, distances, side)
    return (batch, visits) if count_visits else batch


def brute_force_closest(mesh: SurfaceMesh, queries) -> ClosestPointBatch:
    """Reference scan over all elements in index order (no acceleration)."""
    if mesh.n_elements == 0:
        raise ValueError("empty mesh")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    nq = queries.shape[0]
    corners = mesh.element_corners()
    best_d2 = np.full(nq, np.inf)
    best_elem = np.full(nq, np.iinfo(np.int64).max, dtype=np.int64)
    for e in range(mesh.n_elements):
        if mesh.dim == 2:
            pt, _ = closest_on_segments(
                np.broadcast_to(corners[e, 0], queries.shape),
                np.broadcast_to(corners[e, 1], queries.shape), queries)
        else:
            pt, _ = closest_on_triangles(
                np.broadcast_to(corners[e, 0], queries.shape),
                np.broadcast_to(corners[e, 1], queries.shape),
                np.broadcast_to(corners[e, 2], queries.shape), queries)
        diff = queries - pt
        d2 = np.einsum("ij,ij->i", diff, diff)
        upd = (d2 < best_d2) | ((d2 == best_d2) & (e < best_elem))
        best_d2[upd] = d2[upd]
        best_elem[upd] = e

    bvh_like_corners = corners[best_elem]
    if mesh.dim == 2:
        points, bary = closest_on_segments(bvh_like_corners[:, 0], bvh_like_corners[:, 1], queries)
    else:
        points, bary = closest_on_triangles(
            bvh_like_corners[:, 0], bvh_like_corners[:, 1], bvh_like_corners[:, 2], queries)
    diff = queries - points
    distances = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    normals = mesh.element_normals()
    side = np.full(nq, SIDE_OUTSIDE, dtype=np.int8)
    on_boundary = (bary.min(axis=1) <= BOUNDARY_TOL) | (distances == 0.0)
    dot = np.einsum("ij,ij->i", queries - points, normals[best_elem])
    side[dot < 0.0] = SIDE_INSIDE
    side[on_boundary] = SIDE_BOUNDARY
    return ClosestPointBatch(points, best_elem, bary, distances, side)


def closest_point(bvh: Bvh, mesh: SurfaceMesh, query) -> ClosestPointResult:
    """Globally closest point on the mesh to a single query point."""
    batch = batch_closest_points(bvh, mesh, np.asarray(query, dtype=np.float64)[None, :])
    return batch[0]


def winding_numbers(mesh: SurfaceMesh, queries, chunk: int = 2048) -> np.ndarray:
    """Generalized winding number (3D solid angles / 2D signed angles).

    Approximately 1 inside a consistently oriented closed surface, 0 outside.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    nq = queries.shape[0]
    out = np.empty(nq)
    corners = mesh.element_corners()
    workers = _worker_count()
    if workers > 1 and nq * mesh.n_elements >= 4_000_000:
        bounds = np.linspace(0, nq, workers + 1, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [(int(a), pool.submit(_winding_chunk, corners, queries[a:b], mesh.dim, chunk))
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        for a, fut in futs:
            res = fut.result()
            out[a:a + res.size] = res
        return out
    out[:] = _winding_chunk(corners, queries, mesh.dim, chunk)
    return out


def _winding_chunk(corners, queries, dim, chunk):
    nq = queries.shape[0]
    out = np.empty(nq)
    for lo in range(0, nq, chunk):
        q = queries[lo:lo + chunk]
        if dim == 2:
            a = corners[None, :, 0, :] - q[:, None, :]
            b = corners[None, :, 1, :] - q[:, None, :]
            cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
            dot = np.einsum("qkd,qkd->qk", a, b)
            out[lo:lo + chunk] = np.arctan2(cross, dot).sum(axis=1) / (2.0 * np.pi)
        else:
            a = corners[None, :, 0, :] - q[:, None, :]
            b = corners[None, :, 1, :] - q[:, None, :]
            c = corners[None, :, 2, :] - q[:, None, :]
            la = np.sqrt(np.einsum("qkd,qkd->qk", a, a))
            lb = np.sqrt(np.einsum("qkd,qkd->qk", b, b))
            lc = np.sqrt(np.einsum("qkd,qkd->qk", c, c))
            bxc = np.empty_like(b)
            bxc[..., 0] = b[..., 1] * c[..., 2] - b[..., 2] * c[..., 1]
            bxc[..., 1] = b[..., 2] * c[..., 0] - b[..., 0] * c[..., 2]
            bxc[..., 2] = b[..., 0] * c[..., 1] - b[..., 1] * c[..., 0]
            det = np.einsum("qkd,qkd->qk", a, bxc)
            denom = (la * lb * lc + np.einsum("qkd,qkd->qk", a, b) * lc
                     + np.einsum("qkd,qkd->qk", b, c) * la
                     + np.einsum("qkd,qkd->qk", c, a) * lb)
            out[lo:lo + chunk] = 2.0 * np.arctan2(det, denom).sum(axis=1) / (4.0 * np.pi)
    return out


def batch_signed_distance_arrays(bvh: Bvh, mesh: SurfaceMesh, queries):
    """Signed distances plus the closest-point batch, as raw arrays.

    Sign comes from the element normal at the closest point; queries whose
    closest point lies on an element boundary fall back to the winding
    number, and exact on-surface queries get value 0.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    batch = batch_closest_points(bvh, mesh, queries)
    values = batch.distance.copy()
    values[batch.side == SIDE_INSIDE] *= -1.0
    boundary = np.flatnonzero(batch.side == SIDE_BOUNDARY)
    if boundary.size:
        nonzero = boundary[batch.distance[boundary] > 0.0]
        values[boundary] = 0.0
        if nonzero.size:
            # a closed surface lies inside its bounding box, so queries
            # beyond it are outside with winding exactly 0; only the rest
            # need the O(m)-per-query evaluation
            lo, hi = mesh.bounding_box()
            q = queries[nonzero]
            in_box = np.all((q >= lo) & (q <= hi), axis=1)
            sign = np.ones(nonzero.size)
            if np.any(in_box):
                w = winding_numbers(mesh, q[in_box])
                sign[in_box] = np.where(np.abs(w) > 0.5, -1.0, 1.0)
            values[nonzero] = sign * batch.distance[nonzero]
    return values, batch


def signed_distance(bvh: Bvh, mesh: SurfaceMesh, query):
    """Signed distance (negative inside) and closest point for one query."""
    values, batch = batch_signed_distance_arrays(bvh, mesh, np.asarray(query, dtype=np.float64)[None, :])
    return float(values[0]), batch[0]


def batch_signed_distance(bvh: Bvh, mesh: SurfaceMesh, queries):
    """Element-wise signed_distance over a query list (order-preserving)."""
    values, batch = batch_signed_distance_arrays(bvh, mesh, queries)
    return [(float(values[i]), batch[i]) for i in range(len(batch))]
