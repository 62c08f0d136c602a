"""Exact point-to-mesh signed distance.

The unsigned part is the minimum point-triangle distance over all valid faces
(Ericson's closest-point-on-triangle with Voronoi region classification).
The sign comes from the pseudonormal of the closest feature: the face normal
for interior hits, the averaged normal of an edge, or the angle-weighted
normal of a vertex.  Points are inside (negative) when ``(q - c) . n < 0``.

Two search strategies share one per-triangle kernel so their results agree
bit for bit: an AABB tree traversal (``signed_distance``) and a linear scan
over every face (``signed_distance_bruteforce``).  Ties in distance resolve
to the lowest face index in both.
"""

import warnings

import numba
import numpy as np

from .errors import NoValidFaces

_LEAF_SIZE = 4

# closest-feature codes returned by the kernel
FACE, VERT_A, VERT_B, VERT_C, EDGE_AB, EDGE_BC, EDGE_CA = range(7)


@numba.njit(cache=True, inline="always")
def _closest_on_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az, VERT_A

    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz, VERT_B

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz, EDGE_AB

    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz, VERT_C

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz, EDGE_CA

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz), EDGE_BC

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return (ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w, FACE)


@numba.njit(cache=True, inline="always")
def _face_query(px, py, pz, f, verts, faces):
    i, j, k = faces[f, 0], faces[f, 1], faces[f, 2]
    qx, qy, qz, region = _closest_on_triangle(
        px, py, pz,
        verts[i, 0], verts[i, 1], verts[i, 2],
        verts[j, 0], verts[j, 1], verts[j, 2],
        verts[k, 0], verts[k, 1], verts[k, 2],
    )
    dx, dy, dz = px - qx, py - qy, pz - qz
    return dx * dx + dy * dy + dz * dz, qx, qy, qz, region


@numba.njit(cache=True, inline="always")
def _pseudonormal(f, region, faces, face_normals, vnormals, face_edges, enormals):
    if region == FACE:
        return face_normals[f, 0], face_normals[f, 1], face_normals[f, 2]
    if region == VERT_A or region == VERT_B or region == VERT_C:
        v = faces[f, region - VERT_A]
        return vnormals[v, 0], vnormals[v, 1], vnormals[v, 2]
    # EDGE_AB -> corner 0, EDGE_BC -> corner 1, EDGE_CA -> corner 2
    e = face_edges[f, region - EDGE_AB]
    return enormals[e, 0], enormals[e, 1], enormals[e, 2]


@numba.njit(cache=True, inline="always")
def _signed(px, py, pz, d2, qx, qy, qz, f, region, faces, fn, vn, fe, en):
    if d2 == 0.0:
        return 0.0
    nx, ny, nz = _pseudonormal(f, region, faces, fn, vn, fe, en)
    dot = (px - qx) * nx + (py - qy) * ny + (pz - qz) * nz
    d = np.sqrt(d2)
    return -d if dot < 0.0 else d


@numba.njit(cache=True)
def _brute_kernel(points, verts, faces, valid, fn, vn, fe, en, out, out_face):
    for p in range(points.shape[0]):
        px, py, pz = points[p, 0], points[p, 1], points[p, 2]
        best = np.inf
        bf = -1
        bqx = bqy = bqz = 0.0
        breg = 0
        for f in range(faces.shape[0]):
            if not valid[f]:
                continue
            d2, qx, qy, qz, region = _face_query(px, py, pz, f, verts, faces)
            if d2 < best:
                best, bf, bqx, bqy, bqz, breg = d2, f, qx, qy, qz, region
        out[p] = _signed(px, py, pz, best, bqx, bqy, bqz, bf, breg, faces, fn, vn, fe, en)
        out_face[p] = bf


@numba.njit(cache=True, inline="always")
def _box_d2(px, py, pz, lo, hi, n):
    d2 = 0.0
    t = max(lo[n, 0] - px, 0.0, px - hi[n, 0])
    d2 += t * t
    t = max(lo[n, 1] - py, 0.0, py - hi[n, 1])
    d2 += t * t
    t = max(lo[n, 2] - pz, 0.0, pz - hi[n, 2])
    d2 += t * t
    return d2


@numba.njit(cache=True)
def _bvh_kernel(points, verts, faces, fn, vn, fe, en,
                lo, hi, left, right, start, count, order, out, out_face):
    stack = np.empty(128, dtype=np.int64)
    for p in range(points.shape[0]):
        px, py, pz = points[p, 0], points[p, 1], points[p, 2]
        best = np.inf
        bf = -1
        bqx = bqy = bqz = 0.0
        breg = 0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            n = stack[top]
            # prune only strictly farther boxes so equal-distance faces with a
            # lower index are still found
            if _box_d2(px, py, pz, lo, hi, n) > best:
                continue
            if count[n] > 0:
                for s in range(start[n], start[n] + count[n]):
                    f = order[s]
                    d2, qx, qy, qz, region = _face_query(px, py, pz, f, verts, faces)
                    if d2 < best or (d2 == best and f < bf):
                        best, bf, bqx, bqy, bqz, breg = d2, f, qx, qy, qz, region
            else:
                l, r = left[n], right[n]
                dl = _box_d2(px, py, pz, lo, hi, l)
                dr = _box_d2(px, py, pz, lo, hi, r)
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        out[p] = _signed(px, py, pz, best, bqx, bqy, bqz, bf, breg, faces, fn, vn, fe, en)
        out_face[p] = bf


class AABBTree:
    """Flattened bounding-volume hierarchy over the valid faces of a mesh.

    Built top-down by splitting the longest centroid-bounds axis at the
    median.  Node 0 is the root; leaves hold at most ``leaf_size`` faces.
    """

    def __init__(self, mesh, leaf_size=_LEAF_SIZE):
        valid = np.flatnonzero(~mesh.degenerate)
        if len(valid) == 0:
            raise NoValidFaces("all faces are degenerate")
        tri = mesh.vertices[mesh.faces[valid]]
        tri_lo, tri_hi = tri.min(axis=1), tri.max(axis=1)
        centroid = tri.mean(axis=1)

        lo, hi, left, right, start, count = [], [], [], [], [], []
        order = valid.copy()
        local = np.arange(len(valid))

        def new_node():
            for lst, v in ((lo, None), (hi, None), (left, -1), (right, -1), (start, 0), (count, 0)):
                lst.append(v)
            return len(lo) - 1

        root = new_node()
        todo = [(root, 0, len(valid))]
        while todo:
            node, a, b = todo.pop()
            idx = local[a:b]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if b - a <= leaf_size:
                start[node], count[node] = a, b - a
                continue
            c = centroid[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (b - a) // 2
            part = np.argsort(c[:, axis], kind="stable")
            local[a:b] = idx[part]
            l_node, r_node = new_node(), new_node()
            left[node], right[node] = l_node, r_node
            todo.append((r_node, a + mid, b))
            todo.append((l_node, a, a + mid))

        self.lo = np.array(lo, dtype=np.float64)
        self.hi = np.array(hi, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.order = valid[local]

    def __len__(self):
        return len(self.lo)


def _as_points(query):
    q = np.asarray(query, dtype=np.float64)
    scalar = q.ndim == 1
    return np.ascontiguousarray(q.reshape(-1, 3)), scalar


def _mesh_arrays(mesh):
    return (mesh.vertices, mesh.faces, mesh.face_normals, mesh.vertex_pseudonormals,
            mesh.face_edges, mesh.edge_pseudonormals)


def get_tree(mesh):
    """Return the mesh's AABB tree, building it on first use."""
    if mesh._bvh is None:
        if not mesh.is_watertight:
            warnings.warn(
                "mesh is not watertight; distance signs near open boundaries "
                "come from the nearest-feature pseudonormal as-is",
                stacklevel=3,
            )
        mesh._bvh = AABBTree(mesh)
    return mesh._bvh


def signed_distance(mesh, query, return_face=False):
    """Signed distance from ``query`` (shape ``(3,)`` or ``(n, 3)``) to ``mesh``.

    Negative inside, positive outside, computed in float64.
    """
    points, scalar = _as_points(query)
    tree = get_tree(mesh)
    verts, faces, fn, vn, fe, en = _mesh_arrays(mesh)
    out = np.empty(len(points))
    out_face = np.empty(len(points), dtype=np.int64)
    _bvh_kernel(points, verts, faces, fn, vn, fe, en, tree.lo, tree.hi, tree.left,
                tree.right, tree.start, tree.count, tree.order, out, out_face)
    return _finish(out, out_face, scalar, return_face)


def signed_distance_bruteforce(mesh, query, return_face=False):
    """Reference implementation: scan every valid face for every query."""
    points, scalar = _as_points(query)
    valid = ~mesh.degenerate
    if not valid.any():
        raise NoValidFaces("all faces are degenerate")
    verts, faces, fn, vn, fe, en = _mesh_arrays(mesh)
    out = np.empty(len(points))
    out_face = np.empty(len(points), dtype=np.int64)
    _brute_kernel(points, verts, faces, valid, fn, vn, fe, en, out, out_face)
    return _finish(out, out_face, scalar, return_face)


def _finish(out, out_face, scalar, return_face):
    if scalar:
        out, out_face = float(out[0]), int(out_face[0])
    return (out, out_face) if return_face else out
