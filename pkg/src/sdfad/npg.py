"""Training point generation: surface, near-surface and uniform points.

Faces are drawn with probability proportional to area, points on a face via
the square-root barycentric map, near-surface points by isotropic Gaussian
offsets from fresh surface points, and uniform points over [-1, 1]^3.
Surface points get a target distance of exactly 0; every other point gets
its exact signed distance to the mesh.
"""

from dataclasses import dataclass, field
import enum

import numpy as np

from .distance import signed_distance
from .errors import NoValidFaces
from .rng import make_rng


class Origin(enum.IntEnum):
    SURFACE = 0
    NEAR_SURFACE = 1
    UNIFORM = 2


@dataclass
class SamplingTable:
    cumulative_probability: np.ndarray
    total_area: float

    @property
    def probabilities(self):
        return np.diff(self.cumulative_probability, prepend=0.0)


@dataclass
class SamplingConfig:
    base_surface_count: int = 20000
    ratio: tuple = (2, 2, 1)
    near_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.ratio = tuple(int(r) for r in self.ratio)
        if len(self.ratio) != 3 or min(self.ratio) < 0:
            raise ValueError(f"ratio must be three non-negative integers, got {self.ratio}")
        if self.ratio[0] <= 0:
            raise ValueError("surface ratio must be > 0")
        if self.base_surface_count < 1:
            raise ValueError("base_surface_count must be >= 1")
        if not self.near_sigma > 0:
            raise ValueError("near_sigma must be > 0")

    def counts(self):
        """Points per class: ``round(s * alpha_class / alpha_surf)``."""
        s, a = self.base_surface_count, self.ratio
        return tuple(int(round(s * a[k] / a[0])) for k in range(3))

    def to_dict(self):
        return {"base_surface_count": self.base_surface_count, "ratio": list(self.ratio),
                "near_sigma": self.near_sigma, "seed": self.seed}


@dataclass
class GeneratedPointSet:
    points: np.ndarray
    gt_signed_distance: np.ndarray
    origin: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.points)
        if len(self.gt_signed_distance) != n or len(self.origin) != n:
            raise ValueError("points, distances and origins must have equal length")

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        return GeneratedPointSet(self.points[idx], self.gt_signed_distance[idx], self.origin[idx])

    @classmethod
    def concatenate(cls, sets):
        return cls(
            np.concatenate([s.points for s in sets]),
            np.concatenate([s.gt_signed_distance for s in sets]),
            np.concatenate([s.origin for s in sets]),
        )

    def to_csv(self, path):
        names = {o.value: o.name.lower() for o in Origin}
        rows = ["x,y,z,d,origin"]
        for (x, y, z), d, o in zip(self.points.tolist(), self.gt_signed_distance.tolist(),
                                   self.origin.tolist()):
            rows.append(f"{x!r},{y!r},{z!r},{d!r},{names[o]}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(rows) + "\n")


def build_sampling_table(mesh):
    areas = np.where(mesh.degenerate, 0.0, mesh.face_areas)
    total = float(areas.sum())
    if not total > 0:
        raise NoValidFaces("mesh has no face with positive area")
    cdf = np.cumsum(areas) / total
    cdf[-1] = 1.0
    # trailing degenerate faces must not be reachable
    last_valid = np.flatnonzero(areas > 0)[-1]
    cdf[last_valid:] = 1.0
    return SamplingTable(cdf, total)


def sample_faces(table, count, rng):
    """Inverse-CDF face lookup for ``count`` uniform draws."""
    u = rng.random(count)
    return np.searchsorted(table.cumulative_probability, u, side="right")


def barycentric_weights(u1, u2):
    """Weights of ``(p1, p2, p3)`` for the square-root map, shape ``(n, 3)``."""
    r1 = np.sqrt(u1)
    mu = 1.0 - r1
    nu = r1 * (1.0 - np.sqrt(u2))
    return np.stack([1.0 - mu - nu, mu, nu], axis=-1)


def sample_surface_point(face, u1, u2):
    p1, p2, p3 = (np.asarray(p, dtype=np.float64) for p in face)
    r1 = np.sqrt(u1)
    mu = 1.0 - r1
    nu = r1 * (1.0 - np.sqrt(u2))
    return (1.0 - mu - nu) * p1 + mu * p2 + nu * p3


def sample_surface(mesh, table, count, rng):
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return np.empty((0, 3))
    faces = sample_faces(table, count, rng)
    u1 = rng.random(count)
    u2 = rng.random(count)
    w = barycentric_weights(u1, u2)
    tri = mesh.vertices[mesh.faces[faces]]
    return w[:, 0, None] * tri[:, 0] + w[:, 1, None] * tri[:, 1] + w[:, 2, None] * tri[:, 2]


def sample_near_surface(surface_points, sigma, rng):
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    surface_points = np.asarray(surface_points, dtype=np.float64).reshape(-1, 3)
    return surface_points + rng.normal(0.0, sigma, size=surface_points.shape)


def sample_uniform(count, rng):
    if count < 0:
        raise ValueError("count must be >= 0")
    return rng.uniform(-1.0, 1.0, size=(count, 3))


def generate_training_set(mesh, config, stream_prefix=""):
    """Build the tagged training set for one (already normalised) mesh.

    Near-surface points perturb their own surface draws from the ``near``
    stream, so changing the near count never changes the surface points.
    ``stream_prefix`` separates the random streams of pooled meshes.
    """
    n_surf, n_near, n_uni = config.counts()
    table = build_sampling_table(mesh)
    surf = sample_surface(mesh, table, n_surf, make_rng(config.seed, stream_prefix + "surface"))
    near_rng = make_rng(config.seed, stream_prefix + "near")
    near_base = sample_surface(mesh, table, n_near, near_rng)
    near = sample_near_surface(near_base, config.near_sigma, near_rng) if n_near else near_base
    uni = sample_uniform(n_uni, make_rng(config.seed, stream_prefix + "uniform"))

    noisy = np.concatenate([near, uni])
    d_noisy = signed_distance(mesh, noisy) if len(noisy) else np.empty(0)
    points = np.concatenate([surf, noisy])
    dist = np.concatenate([np.zeros(n_surf), d_noisy])
    origin = np.concatenate([
        np.full(n_surf, Origin.SURFACE, dtype=np.int8),
        np.full(n_near, Origin.NEAR_SURFACE, dtype=np.int8),
        np.full(n_uni, Origin.UNIFORM, dtype=np.int8),
    ])
    return GeneratedPointSet(points, dist, origin)
