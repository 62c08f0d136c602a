"""Synthetic shapes with optional bump/dent anomalies.

These stand in for dataset categories: a clean mesh to train on, and a test
cloud sampled from a copy of the mesh whose geodesic patch around a random
vertex is pushed outward (bump) or inward (dent).
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .mesh import TriangleMesh, PointCloud, save_cloud, save_labels, write_obj
from .npg import build_sampling_table, sample_faces, barycentric_weights
from .rng import make_rng

SHAPES = ("sphere", "box", "torus")
ANOMALIES = ("none", "bump", "dent")


def icosphere(subdivisions=4, radius=1.0):
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.array(verts) * radius, np.array(faces))


def box_mesh(subdivisions=8, half_extent=1.0):
    """Closed axis-aligned cube, each face split into an n x n grid."""
    n = max(int(subdivisions), 1)
    verts, faces, index = [], [], {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    g = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        for side in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = side
                        p[u_ax] = g[i + di]
                        p[v_ax] = g[j + dj]
                        quad.append(vid(p))
                    a, b, c, d = quad
                    tri = [(a, b, c), (a, c, d)]
                    # orient outward: (b - a) x (c - a) must point along side
                    pa, pb, pc = (verts[k] for k in tri[0])
                    if np.cross(pb - pa, pc - pa)[axis] * side < 0:
                        tri = [(a, c, b), (a, d, c)]
                    faces += tri
    return TriangleMesh(np.array(verts) * half_extent, np.array(faces))


def torus_mesh(subdivisions=32, major=0.7, minor=0.3):
    nu, nv = 2 * subdivisions, subdivisions
    u = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    v = np.linspace(0, 2 * np.pi, nv, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major + minor * np.cos(vv)) * np.cos(uu)
    y = (major + minor * np.cos(vv)) * np.sin(uu)
    z = minor * np.sin(vv)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(faces))


def make_shape(shape, subdivisions):
    if shape == "sphere":
        return icosphere(subdivisions)
    if shape == "box":
        return box_mesh(subdivisions)
    if shape == "torus":
        return torus_mesh(subdivisions)
    raise ValueError(f"unknown shape {shape!r}; choose from {SHAPES}")


@dataclass
class SynthSpec:
    shape: str = "sphere"
    subdivisions: int = 4
    anomaly: str = "bump"
    anomaly_radius: float = 0.2
    anomaly_height: float = 0.1
    seed: int = 0
    points: int = 10000

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.anomaly not in ANOMALIES:
            raise ValueError(f"unknown anomaly {self.anomaly!r}; choose from {ANOMALIES}")
        if self.anomaly != "none" and not (self.anomaly_radius > 0 and self.anomaly_height > 0):
            raise ValueError("anomaly_radius and anomaly_height must be > 0")
        if self.points < 1:
            raise ValueError("points must be >= 1")


def geodesic_from(mesh, source):
    """Edge-graph shortest-path distance from vertex ``source`` to every vertex."""
    e = mesh.edges
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    n = len(mesh.vertices)
    graph = coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    return dijkstra(graph, directed=False, indices=source)


def patch_profile(dist, radius):
    """1 inside the patch, cosine taper to 0 over ``[radius, 1.5 radius]``."""
    t = np.clip((dist - radius) / (0.5 * radius), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def displaced_mesh(mesh, spec, rng):
    """Copy of ``mesh`` with the anomaly applied, plus per-vertex offsets."""
    offsets = np.zeros(len(mesh.vertices))
    if spec.anomaly == "none":
        return mesh, offsets
    center = int(rng.integers(len(mesh.vertices)))
    dist = geodesic_from(mesh, center)
    sign = 1.0 if spec.anomaly == "bump" else -1.0
    offsets = sign * spec.anomaly_height * patch_profile(dist, spec.anomaly_radius)
    verts = mesh.vertices + offsets[:, None] * mesh.vertex_pseudonormals
    return TriangleMesh(verts, mesh.faces.copy()), offsets


def synth_cloud(spec):
    """Return ``(clean_mesh, test_cloud)`` for ``spec``.

    Points are drawn on the anomaly-modified mesh; the same face and
    barycentric draw on the clean mesh gives each point's displacement, and
    points displaced by more than half the anomaly height are labelled 1.
    """
    clean = make_shape(spec.shape, spec.subdivisions)
    rng = make_rng(spec.seed, "synth")
    modified, _ = displaced_mesh(clean, spec, rng)
    table = build_sampling_table(modified)
    faces = sample_faces(table, spec.points, rng)
    bary = barycentric_weights(rng.random(spec.points), rng.random(spec.points))
    on_mod = np.einsum("nk,nkd->nd", bary, modified.vertices[modified.faces[faces]])
    on_clean = np.einsum("nk,nkd->nd", bary, clean.vertices[clean.faces[faces]])
    displacement = np.linalg.norm(on_mod - on_clean, axis=1)
    if spec.anomaly == "none":
        labels = np.zeros(spec.points, dtype=np.int64)
    else:
        labels = (displacement > 0.5 * spec.anomaly_height).astype(np.int64)
    return clean, PointCloud(on_mod, labels)


def synth(spec, mesh_out, cloud_out, labels_out):
    clean, cloud = synth_cloud(spec)
    write_obj(mesh_out, clean)
    save_cloud(cloud_out, cloud.points)
    save_labels(labels_out, cloud.labels)
    return clean, cloud
