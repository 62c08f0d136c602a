"""Triangle meshes, point clouds and the normalisation into [-1, 1]^3.

Readers cover ASCII OBJ and ASCII / binary-little-endian PLY.  Polygons are
fan-triangulated on load.  Faces with (numerically) zero area are kept in the
record but flagged through ``TriangleMesh.degenerate``; everything downstream
(sampling, closest-feature search) skips them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateExtent, EmptyMesh, MeshIoError, ParseError

# face is degenerate when area <= _DEGENERATE_REL * (longest edge)^2
_DEGENERATE_REL = 1e-12


def _unit_rows(v):
    n = np.linalg.norm(v, axis=1)
    out = np.zeros_like(v)
    ok = n > 0
    out[ok] = v[ok] / n[ok, None]
    return out


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle surface with the derived data needed for sampling and
    signed distance queries.

    ``face_edges[f, k]`` indexes ``edges`` for the edge running from corner
    ``k`` to corner ``(k + 1) % 3`` of face ``f``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_areas: np.ndarray = field(init=False, repr=False)
    face_normals: np.ndarray = field(init=False, repr=False)
    degenerate: np.ndarray = field(init=False, repr=False)
    vertex_pseudonormals: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)
    face_edges: np.ndarray = field(init=False, repr=False)
    edge_pseudonormals: np.ndarray = field(init=False, repr=False)
    edge_face_count: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) == 0:
            raise EmptyMesh("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise ParseError(
                f"face index out of range [0, {len(self.vertices)})"
            )
        self._bvh = None
        self._derive()

    def _derive(self):
        tri = self.vertices[self.faces]
        e01 = tri[:, 1] - tri[:, 0]
        e02 = tri[:, 2] - tri[:, 0]
        cross = np.cross(e01, e02)
        double_area = np.linalg.norm(cross, axis=1)
        self.face_areas = 0.5 * double_area

        e12 = tri[:, 2] - tri[:, 1]
        longest2 = np.max(
            np.stack([(e01**2).sum(1), (e02**2).sum(1), (e12**2).sum(1)]), axis=0
        )
        self.degenerate = (self.face_areas <= _DEGENERATE_REL * longest2) | (longest2 == 0)
        normals = np.zeros_like(cross)
        ok = ~self.degenerate
        normals[ok] = cross[ok] / double_area[ok, None]
        self.face_normals = normals

        # angle-weighted vertex pseudonormals
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            a = tri[:, (k + 1) % 3] - tri[:, k]
            b = tri[:, (k + 2) % 3] - tri[:, k]
            cosang = (a * b).sum(1) / np.maximum(
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1), 1e-300
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            ang[~ok] = 0.0
            np.add.at(acc, self.faces[:, k], ang[:, None] * normals)
        self.vertex_pseudonormals = _unit_rows(acc)

        # unique undirected edges and their averaged normals
        directed = np.stack(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]], axis=1
        ).reshape(-1, 2)
        undirected = np.sort(directed, axis=1)
        self.edges, inverse = np.unique(undirected, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.face_edges = inverse.reshape(-1, 3)
        edge_acc = np.zeros((len(self.edges), 3))
        np.add.at(edge_acc, inverse, np.repeat(normals, 3, axis=0))
        self.edge_pseudonormals = _unit_rows(edge_acc)
        self.edge_face_count = np.bincount(
            inverse, weights=np.repeat(ok, 3).astype(np.float64), minlength=len(self.edges)
        ).astype(np.int64)

    @property
    def n_valid_faces(self):
        return int((~self.degenerate).sum())

    @property
    def is_watertight(self):
        """Every edge touched by a valid face is shared by exactly two valid faces."""
        used = self.edge_face_count > 0
        return bool(np.all(self.edge_face_count[used] == 2))

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangles(self):
        return self.vertices[self.faces]

    def transformed(self, transform):
        return TriangleMesh(transform.apply(self.vertices), self.faces.copy())


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise ValueError(
                    f"{len(self.labels)} labels for {len(self.points)} points"
                )

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class NormalizationTransform:
    """``x_normalized = (x - center) * scale``."""

    center: tuple
    scale: float
    margin: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale

    def inverse(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.center)

    def to_dict(self):
        return {"center": list(self.center), "scale": self.scale, "margin": self.margin}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(c) for c in d["center"]), float(d["scale"]), float(d["margin"]))


def fit_transform(vertices, margin=0.9):
    """Bounding-box centre and uniform scale mapping ``vertices`` into
    ``[-margin, margin]^3``."""
    if not 0.0 < margin <= 1.0:
        raise ValueError(f"margin must lie in (0, 1], got {margin}")
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    half = 0.5 * float(np.max(hi - lo))
    if not half > 0.0:
        raise DegenerateExtent("bounding box has zero extent")
    center = 0.5 * (lo + hi)
    return NormalizationTransform(tuple(float(c) for c in center), margin / half, float(margin))


def normalize(mesh, margin=0.9):
    transform = fit_transform(mesh.vertices, margin)
    return mesh.transformed(transform), transform


def inject_gaussian_noise(cloud, sigma, rng):
    """Perturb every coordinate with independent N(0, sigma^2) noise."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    labels = None if cloud.labels is None else cloud.labels.copy()
    if sigma == 0:
        return PointCloud(cloud.points.copy(), labels)
    noise = rng.normal(0.0, sigma, size=cloud.points.shape)
    return PointCloud(cloud.points + noise, labels)


# ---------------------------------------------------------------------------
# readers


def fan_triangulate(polygon):
    return [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]


def load_mesh(path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        verts, faces = _read_obj(path)
    elif suffix == ".ply":
        verts, faces = _read_ply(path)
        if faces is None:
            raise EmptyMesh(f"{path}: PLY file has no face element")
    else:
        raise MeshIoError(f"{path}: unsupported mesh format {suffix!r}")
    if len(faces) == 0:
        raise EmptyMesh(f"{path}: mesh has zero faces")
    return TriangleMesh(verts, faces)


def _open_bytes(path):
    try:
        return path.read_bytes()
    except OSError as exc:
        raise MeshIoError(f"cannot read {path}: {exc}") from exc


def _read_obj(path):
    text = _open_bytes(path).decode("utf-8", errors="replace")
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError("vertex record needs 3 coordinates", lineno)
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise ParseError(f"bad vertex coordinate: {exc}", lineno) from None
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError("face record needs at least 3 indices", lineno)
            poly = []
            for tok in parts[1:]:
                try:
                    idx = int(tok.split("/", 1)[0])
                except ValueError:
                    raise ParseError(f"bad face index {tok!r}", lineno) from None
                if idx > 0:
                    idx -= 1
                elif idx < 0:
                    idx += len(verts)
                else:
                    raise ParseError("face index 0 is invalid (OBJ is 1-based)", lineno)
                if not 0 <= idx < len(verts):
                    raise ParseError(f"face index {tok} out of range", lineno)
                poly.append(idx)
            faces.extend(fan_triangulate(poly))
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or end_header)", 1)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            try:
                if parts[1] == "list":
                    elements[-1]["props"].append(
                        (parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])
                    )
                else:
                    elements[-1]["props"].append((parts[2], _PLY_TYPES[parts[1]], None))
            except (KeyError, IndexError):
                raise ParseError(f"unsupported property declaration {line!r}", lineno) from None
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}", 2)
    return fmt, elements, body_start


def _read_ply(path):
    data = _open_bytes(path)
    fmt, elements, offset = _parse_ply_header(data)
    verts = faces = None
    if fmt == "ascii":
        tokens = data[offset:].split()
        pos = 0
        for el in elements:
            rows = []
            for r in range(el["count"]):
                row = {}
                for name, typ, item in el["props"]:
                    try:
                        if item is None:
                            row[name] = float(tokens[pos])
                            pos += 1
                        else:
                            n = int(tokens[pos])
                            row[name] = [int(t) for t in tokens[pos + 1: pos + 1 + n]]
                            if len(row[name]) != n:
                                raise IndexError
                            pos += 1 + n
                    except (IndexError, ValueError):
                        raise ParseError(
                            f"element {el['name']!r} row {r}: truncated or malformed"
                        ) from None
                rows.append(row)
            if el["name"] == "vertex":
                verts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=np.float64)
            elif el["name"] == "face":
                faces = _ply_face_rows([_face_list(r) for r in rows])
    else:
        for el in elements:
            block, offset = _read_binary_element(data, offset, el)
            if el["name"] == "vertex":
                verts = np.stack(
                    [np.asarray(block[c], dtype=np.float64) for c in ("x", "y", "z")], axis=1
                )
            elif el["name"] == "face":
                faces = _ply_face_rows(block)
    if verts is None:
        raise ParseError("PLY file has no vertex element")
    verts = verts.reshape(-1, 3)
    if faces is not None and len(faces) and faces.max() >= len(verts):
        raise ParseError("face index out of range")
    return verts, faces


def _face_list(row):
    for key in ("vertex_indices", "vertex_index"):
        if key in row:
            return row[key]
    raise ParseError("face element lacks a vertex_indices property")


def _ply_face_rows(polys):
    tris = []
    for poly in polys:
        if len(poly) < 3:
            raise ParseError(f"face with {len(poly)} vertices")
        tris.extend(fan_triangulate(list(poly)))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _read_binary_element(data, offset, el):
    props = el["props"]
    if all(item is None for _, _, item in props):
        dtype = np.dtype([(name, "<" + typ) for name, typ, _ in props])
        nbytes = dtype.itemsize * el["count"]
        if offset + nbytes > len(data):
            raise ParseError(f"binary element {el['name']!r} truncated at offset {offset}")
        block = np.frombuffer(data, dtype=dtype, count=el["count"], offset=offset)
        return block, offset + nbytes

    # list properties: try the all-triangles fast path first
    if el["name"] == "face" and len(props) == 1:
        _, ctyp, ityp = props[0]
        dtype = np.dtype([("n", "<" + ctyp), ("idx", "<" + ityp, (3,))])
        nbytes = dtype.itemsize * el["count"]
        if offset + nbytes <= len(data):
            block = np.frombuffer(data, dtype=dtype, count=el["count"], offset=offset)
            if np.all(block["n"] == 3):
                return block["idx"].astype(np.int64), offset + nbytes

    polys = []
    for r in range(el["count"]):
        poly = None
        for name, typ, item in props:
            if item is None:
                offset += np.dtype(typ).itemsize
                continue
            cdt = np.dtype("<" + typ)
            if offset + cdt.itemsize > len(data):
                raise ParseError(f"binary face {r} truncated at offset {offset}")
            n = int(np.frombuffer(data, dtype=cdt, count=1, offset=offset)[0])
            offset += cdt.itemsize
            idt = np.dtype("<" + item)
            if offset + n * idt.itemsize > len(data):
                raise ParseError(f"binary face {r} truncated at offset {offset}")
            vals = np.frombuffer(data, dtype=idt, count=n, offset=offset)
            offset += n * idt.itemsize
            if name in ("vertex_indices", "vertex_index"):
                poly = vals.tolist()
        if poly is None:
            raise ParseError("face element lacks a vertex_indices property")
        polys.append(poly)
    return polys, offset


# ---------------------------------------------------------------------------
# writers and point-cloud files


def write_obj(path, mesh):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    _write_text(path, "\n".join(lines) + "\n")


def write_ply(path, mesh, binary=True):
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x", "property double y", "property double z",
        f"element face {len(mesh.faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        frec = np.empty(len(mesh.faces), dtype=fdt)
        frec["n"] = 3
        frec["idx"] = mesh.faces
        body = mesh.vertices.astype("<f8").tobytes() + frec.tobytes()
    else:
        rows = [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        rows += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
        body = ("\n".join(rows) + "\n").encode("ascii")
    try:
        Path(path).write_bytes(head + body)
    except OSError as exc:
        raise MeshIoError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise MeshIoError(f"cannot write {path}: {exc}") from exc


def save_cloud(path, points):
    """Write ``x,y,z`` CSV rows (repr floats, so the round-trip is exact)."""
    rows = ["x,y,z"] + [f"{x!r},{y!r},{z!r}" for x, y, z in np.asarray(points).tolist()]
    _write_text(path, "\n".join(rows) + "\n")


def load_cloud(path, labels_path=None):
    """Read a point cloud from ``.csv``/``.xyz``/``.txt`` or a vertex-only PLY."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        points, _ = _read_ply(path)
    else:
        text = _open_bytes(path).decode("utf-8", errors="replace")
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            try:
                rows.append([float(v) for v in fields[:3]])
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"bad point record {line!r}", lineno) from None
            if len(rows[-1]) != 3:
                raise ParseError("point record needs 3 coordinates", lineno)
        points = np.array(rows, dtype=np.float64).reshape(-1, 3)
    labels = load_labels(labels_path, len(points)) if labels_path else None
    return PointCloud(points, labels)


def save_labels(path, labels):
    rows = ["index,label"] + [f"{i},{int(v)}" for i, v in enumerate(labels)]
    _write_text(path, "\n".join(rows) + "\n")


def load_labels(path, n=None):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"index", "label"} <= set(reader.fieldnames):
                raise ParseError(f"{path}: expected header 'index,label'", 1)
            pairs = []
            for lineno, row in enumerate(reader, start=2):
                try:
                    pairs.append((int(row["index"]), int(row["label"])))
                except (TypeError, ValueError):
                    raise ParseError(f"{path}: bad label row {row}", lineno) from None
    except OSError as exc:
        raise MeshIoError(f"cannot read {path}: {exc}") from exc
    size = n if n is not None else (max(i for i, _ in pairs) + 1 if pairs else 0)
    labels = np.zeros(size, dtype=np.int64)
    seen = np.zeros(size, dtype=bool)
    for i, v in pairs:
        if not 0 <= i < size:
            raise ParseError(f"{path}: label index {i} out of range")
        if v not in (0, 1):
            raise ParseError(f"{path}: label must be 0 or 1, got {v}")
        labels[i] = v
        seen[i] = True
    if not seen.all():
        raise ParseError(f"{path}: {int((~seen).sum())} points have no label")
    return labels

