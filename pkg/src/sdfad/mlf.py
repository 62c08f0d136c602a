"""Multi-resolution dense feature grids over [-1, 1]^3.

Level ``l`` (1-based) splits each axis into ``2 ** (l + base_lod)`` cells and
stores one learnable feature vector per cell vertex, ``(s + 1) ** 3`` rows in
x-fastest order (``index = ix + (s + 1) * (iy + (s + 1) * iz)``).

Trilinear corner ``j`` of a cell is the bit pattern ``j = bx + 2 by + 4 bz``
(x least significant), so corner 0 is the low corner and corner 7 the high
one.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix

from .errors import MemoryBudgetExceeded

FEATURE_DIM = 32
MAX_LEVELS = 6
# parameters plus two Adam moments per parameter
DEFAULT_MEMORY_CAP = 1 << 30

_CORNER_BITS = np.array(
    [[(j >> 0) & 1, (j >> 1) & 1, (j >> 2) & 1] for j in range(8)], dtype=np.int64
)


@dataclass(eq=False)
class FeatureVolume:
    level: int
    resolution: int
    features: np.ndarray

    @property
    def cell_width(self):
        return 2.0 / self.resolution

    @property
    def n_vertices(self):
        return (self.resolution + 1) ** 3

    @property
    def feature_dim(self):
        return self.features.shape[1]


@dataclass(eq=False)
class FeatureGridPyramid:
    base_lod: int
    levels: list

    @property
    def feature_dim(self):
        return self.levels[0].feature_dim

    @property
    def n_params(self):
        return sum(v.features.size for v in self.levels)


class VoxelLocation(NamedTuple):
    cell_index: np.ndarray  # (n, 3) int
    local: np.ndarray       # (n, 3) in [0, 1]


class Lookup(NamedTuple):
    """Corner vertex rows and trilinear weights for a batch of points."""

    corners: np.ndarray  # (n, 8) int64
    weights: np.ndarray  # (n, 8) float64


def level_resolution(level, base_lod):
    return 2 ** (level + base_lod)


def estimate_bytes(base_lod, n_levels, feature_dim=FEATURE_DIM, itemsize=4):
    n = sum((level_resolution(l, base_lod) + 1) ** 3 for l in range(1, n_levels + 1))
    return 3 * n * feature_dim * itemsize


def init_pyramid(base_lod, n_levels, init_scale, rng, feature_dim=FEATURE_DIM,
                 dtype=np.float32, memory_cap=DEFAULT_MEMORY_CAP):
    if base_lod < 0:
        raise ValueError("base_lod must be >= 0")
    if not 1 <= n_levels <= MAX_LEVELS:
        raise ValueError(f"number of levels must be in [1, {MAX_LEVELS}], got {n_levels}")
    if init_scale < 0:
        raise ValueError("init_scale must be >= 0")
    need = estimate_bytes(base_lod, n_levels, feature_dim, np.dtype(dtype).itemsize)
    if need > memory_cap:
        raise MemoryBudgetExceeded(
            f"grid needs ~{need / 2**20:.0f} MiB (parameters + optimiser state), "
            f"cap is {memory_cap / 2**20:.0f} MiB"
        )
    levels = []
    for level in range(1, n_levels + 1):
        s = level_resolution(level, base_lod)
        shape = ((s + 1) ** 3, feature_dim)
        if init_scale == 0:
            feats = np.zeros(shape, dtype=dtype)
        else:
            feats = rng.normal(0.0, init_scale, size=shape).astype(dtype)
        levels.append(FeatureVolume(level, s, feats))
    return FeatureGridPyramid(base_lod, levels)


def locate(volume, points):
    """Owning cell and in-cell position of each point.

    Coordinates are clamped to [-1, 1].  Interior cell boundaries belong to
    the higher cell; +1 falls in the last cell with ``local = 1``.
    """
    p = np.clip(np.asarray(points, dtype=np.float64), -1.0, 1.0)
    s = volume.resolution
    # (p + 1) / cell_width, exact for power-of-two resolutions
    t = (p + 1.0) * (0.5 * s)
    cell = np.clip(np.floor(t), 0, s - 1).astype(np.int64)
    return VoxelLocation(cell, t - cell)


def trilinear_weights(local):
    """Eight corner weights per point in ``j = bx + 2 by + 4 bz`` order."""
    local = np.asarray(local, dtype=np.float64)
    t = local[..., None, :]
    w = np.where(_CORNER_BITS == 1, t, 1.0 - t)
    return w[..., 0] * w[..., 1] * w[..., 2]


def lookup(volume, points):
    loc = locate(volume, np.asarray(points, dtype=np.float64).reshape(-1, 3))
    n1 = volume.resolution + 1
    base = loc.cell_index[:, 0] + n1 * (loc.cell_index[:, 1] + n1 * loc.cell_index[:, 2])
    offsets = _CORNER_BITS[:, 0] + n1 * (_CORNER_BITS[:, 1] + n1 * _CORNER_BITS[:, 2])
    return Lookup(base[:, None] + offsets[None, :], trilinear_weights(loc.local))


def interpolate_lookup(features, lk, dtype=np.float64):
    """``sum_j w_j f_j`` for every point; accumulation happens in ``dtype``."""
    f = features[lk.corners].astype(dtype, copy=False)      # (n, 8, d)
    w = lk.weights.astype(dtype, copy=False)
    return np.matmul(w[:, None, :], f)[:, 0, :]


def interpolate(volume, points):
    pts = np.asarray(points, dtype=np.float64)
    out = interpolate_lookup(volume.features, lookup(volume, pts))
    return out[0] if pts.ndim == 1 else out


def corner_contributions(lk, upstream):
    """Per-corner gradient rows ``w_j * upstream`` flattened to ``(8 n, d)``."""
    up = np.asarray(upstream)
    contrib = lk.weights.astype(up.dtype, copy=False)[:, :, None] * up[:, None, :]
    return lk.corners.reshape(-1), contrib.reshape(-1, up.shape[-1])


def interpolate_backward(volume, points, upstream, accumulator):
    """Add ``w_j * upstream`` into the accumulator rows of the 8 corners.

    Accumulation runs serially in sample order.  No gradient flows to the
    query points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    up = np.asarray(upstream, dtype=np.float64).reshape(len(pts), -1)
    if accumulator.shape != volume.features.shape:
        raise ValueError(
            f"accumulator shape {accumulator.shape} != features {volume.features.shape}"
        )
    rows, contrib = corner_contributions(lookup(volume, pts), up)
    np.add.at(accumulator, rows, contrib)


def grid_gradient(lk, upstream, n_vertices, sparse=True):
    """Gradient of the interpolated features with respect to one grid.

    Sums ``w_j * upstream`` per vertex through a sparse ``(V, n)`` weight
    matrix in float64.  With ``sparse`` returns ``(rows, grad_rows)`` for the
    vertices touched by the batch, otherwise a dense ``(V, d)`` array.
    """
    up = np.asarray(upstream, dtype=np.float64)
    n = len(up)
    cols = np.repeat(np.arange(n), 8)
    s = coo_matrix((lk.weights.reshape(-1), (lk.corners.reshape(-1), cols)),
                   shape=(n_vertices, n)).tocsr()
    if not sparse:
        return np.asarray(s @ up)
    rows = np.flatnonzero(np.diff(s.indptr))
    return rows, np.asarray(s[rows] @ up)


def query_pyramid(pyramid, points):
    return [interpolate(v, points) for v in pyramid.levels]
