"""End-to-end optimisation of the feature grids and the perceptron with Adam."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import mlf
from .errors import DivergedLoss, ShapeMismatch
from .isd import fuse, init_net, mse_loss, sdf_backward, sdf_forward, SdfNet
from .mesh import NormalizationTransform, fit_transform, load_mesh
from .npg import GeneratedPointSet, SamplingConfig, generate_training_set
from .rng import make_rng

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    base_lod: int = 2
    n_levels: int = 3
    feature_dim: int = mlf.FEATURE_DIM
    init_scale: float = 0.01
    hidden: tuple = (128, 128, 128)
    activation: str = "softplus"
    dtype: str = "float32"
    memory_cap: int = mlf.DEFAULT_MEMORY_CAP

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    steps: int = 2000
    batch_size: int = 4096
    seed: int = 0
    shuffle: bool = True
    sparse_grid: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0 <= b < 1:
                raise ValueError("Adam betas must lie in [0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass(eq=False)
class TrainedModel:
    pyramid: mlf.FeatureGridPyramid
    net: SdfNet
    transform: NormalizationTransform
    sampling: SamplingConfig
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    loss_history: list = field(default_factory=list)

    def astype(self, dtype):
        """Copy with every parameter cast to ``dtype``."""
        dtype = np.dtype(dtype)
        levels = [mlf.FeatureVolume(v.level, v.resolution, v.features.astype(dtype))
                  for v in self.pyramid.levels]
        net = SdfNet([w.astype(dtype) for w in self.net.weights],
                     [b.astype(dtype) for b in self.net.biases], self.net.activation)
        return replace(self, pyramid=mlf.FeatureGridPyramid(self.pyramid.base_lod, levels),
                       net=net, model_cfg=replace(self.model_cfg, dtype=dtype.name),
                       loss_history=list(self.loss_history))


# ---------------------------------------------------------------------------
# optimiser


def _adam_update(p, g, m, v, t, cfg):
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update of every array in ``params``, in place."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeMismatch("params, grads and state differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {np.shape(g)}")
    state.step_count += 1
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        _adam_update(p, np.asarray(g, dtype=p.dtype), m, v, state.step_count, config)


def adam_step_rows(param, rows, grad_rows, m, v, step_count, config):
    """Adam update restricted to ``rows`` of a 2-D parameter.

    Rows outside ``rows`` keep their values and moments untouched.
    """
    p, mm, vv = param[rows], m[rows], v[rows]
    _adam_update(p, grad_rows.astype(param.dtype, copy=False), mm, vv, step_count, config)
    param[rows], m[rows], v[rows] = p, mm, vv


class GridAdam:
    """Adam state for the feature grids, allocated the first time a level is
    touched."""

    def __init__(self, pyramid):
        self.m = [None] * len(pyramid.levels)
        self.v = [None] * len(pyramid.levels)

    def _ensure(self, k, like):
        if self.m[k] is None:
            self.m[k] = np.zeros_like(like)
            self.v[k] = np.zeros_like(like)

    def step_sparse(self, pyramid, level_grads, step_count, config):
        for k, (rows, g) in enumerate(level_grads):
            feats = pyramid.levels[k].features
            self._ensure(k, feats)
            adam_step_rows(feats, rows, g, self.m[k], self.v[k], step_count, config)

    def step_dense(self, pyramid, dense_grads, step_count, config):
        for k, g in enumerate(dense_grads):
            feats = pyramid.levels[k].features
            self._ensure(k, feats)
            _adam_update(feats, g.astype(feats.dtype, copy=False), self.m[k], self.v[k],
                         step_count, config)


# ---------------------------------------------------------------------------
# forward / backward over a batch


def forward_batch(pyramid, net, points):
    """Predictions for ``points`` (already normalised) plus what backward needs."""
    dtype = net.dtype
    lookups = [mlf.lookup(v, points) for v in pyramid.levels]
    per_level = [mlf.interpolate_lookup(v.features, lk, dtype)
                 for v, lk in zip(pyramid.levels, lookups)]
    fused = fuse(per_level)
    pred, tape = sdf_forward(net, fused, points)
    return pred, (lookups, tape)


def backward_batch(pyramid, net, cache, upstream, sparse=True):
    """Gradients of the loss for the net and every grid level.

    With ``sparse`` each level yields ``(rows, summed_grad_rows)`` for the
    touched vertices only; otherwise dense arrays shaped like the features.
    The fused-feature gradient is the same for every level, since fusion is
    a plain sum.
    """
    lookups, tape = cache
    net_grads, input_grad = sdf_backward(net, tape, upstream)
    g_fused = input_grad[:, : pyramid.feature_dim]
    level_grads = [mlf.grid_gradient(lk, g_fused, vol.n_vertices, sparse)
                   for vol, lk in zip(pyramid.levels, lookups)]
    return net_grads, level_grads


def batch_loss(pyramid, net, points, targets):
    pred, _ = forward_batch(pyramid, net, points)
    return mse_loss(pred, targets)[0]


# ---------------------------------------------------------------------------
# training


def init_model(model_cfg, seed):
    dtype = np.dtype(model_cfg.dtype)
    pyramid = mlf.init_pyramid(model_cfg.base_lod, model_cfg.n_levels, model_cfg.init_scale,
                               make_rng(seed, "grid"), model_cfg.feature_dim, dtype,
                               model_cfg.memory_cap)
    net = init_net(make_rng(seed, "net"), model_cfg.feature_dim + 3, model_cfg.hidden,
                   model_cfg.activation, dtype)
    return pyramid, net


def prepare_point_set(meshes, sampling, margin=0.9):
    """Normalise all meshes with one shared transform (union bounding box) and
    pool their generated point sets."""
    transform = fit_transform(np.concatenate([m.vertices for m in meshes]), margin)
    sets = []
    for i, mesh in enumerate(meshes):
        tag = "" if i == 0 else f"mesh{i}/"
        sets.append(generate_training_set(mesh.transformed(transform), sampling, tag))
    return GeneratedPointSet.concatenate(sets), transform


class _Batcher:
    def __init__(self, n, batch_size, shuffle, rng):
        self.n, self.bs, self.shuffle, self.rng = n, min(batch_size, n), shuffle, rng
        self.order, self.pos = self._epoch(), 0

    def _epoch(self):
        return self.rng.permutation(self.n) if self.shuffle else np.arange(self.n)

    def next(self):
        if self.pos + self.bs > self.n:
            self.order, self.pos = self._epoch(), 0
        idx = self.order[self.pos: self.pos + self.bs]
        self.pos += self.bs
        return idx


def fit(point_set, transform, sampling, model_cfg, train_cfg, callback=None):
    """Train a fresh model on an already generated point set."""
    pyramid, net = init_model(model_cfg, train_cfg.seed)
    params = net.parameters()
    net_state = AdamState.zeros_like(params)
    grid_state = GridAdam(pyramid)
    batcher = _Batcher(len(point_set), train_cfg.batch_size, train_cfg.shuffle,
                       make_rng(train_cfg.seed, "batch"))
    points = point_set.points
    targets = point_set.gt_signed_distance
    history = []
    for step in range(train_cfg.steps):
        idx = batcher.next()
        pred, cache = forward_batch(pyramid, net, points[idx])
        loss, upstream = mse_loss(pred, targets[idx])
        if not np.isfinite(loss):
            raise DivergedLoss(f"loss became {loss} at step {step}")
        history.append(loss)
        net_grads, level_grads = backward_batch(pyramid, net, cache, upstream,
                                                sparse=train_cfg.sparse_grid)
        adam_step(params, net_grads, net_state, train_cfg)
        if train_cfg.sparse_grid:
            grid_state.step_sparse(pyramid, level_grads, net_state.step_count, train_cfg)
        else:
            grid_state.step_dense(pyramid, level_grads, net_state.step_count, train_cfg)
        if callback is not None:
            callback(step, loss)
        if step % 200 == 0 or step == train_cfg.steps - 1:
            log.info("step %d loss %.6g", step, loss)
    return TrainedModel(pyramid, net, transform, sampling, model_cfg, train_cfg, history)


def train(mesh_paths, sampling, model_cfg, train_cfg, margin=0.9, meshes=None):
    """Load meshes, generate the pooled training set and optimise a model.

    ``meshes`` may be passed instead of paths (already loaded, not
    normalised).
    """
    if meshes is None:
        meshes = [load_mesh(p) for p in mesh_paths]
    if not meshes:
        raise ValueError("need at least one training mesh")
    point_set, transform = prepare_point_set(meshes, sampling, margin)
    return fit(point_set, transform, sampling, model_cfg, train_cfg)


# ---------------------------------------------------------------------------
# gradient check


def _touched_rows(pyramid, points):
    out = []
    for vol in pyramid.levels:
        lk = mlf.lookup(vol, points)
        out.append(np.unique(lk.corners[lk.weights > 0]))
    return out


def gradient_check(model, batch, epsilon=1e-5, per_layer=12, per_level=8, seed=0,
                   targets=None, floor=1e-8, details=False):
    """Largest relative error between analytic and central-difference gradients
    of the batch MSE loss.

    Runs on a float64 copy of ``model``.  Probes ``per_layer`` entries of every
    network layer (weights and biases) and ``per_level`` feature entries of
    vertices touched by the batch on every grid level.  The relative error of
    one entry is ``|a - n| / max(|a|, |n|, floor)``.  With ``details`` the
    per-probe ``(analytic, numeric, error)`` records are returned as well.
    """
    m = model.astype(np.float64)
    pts = np.asarray(batch.points, dtype=np.float64)
    tgt = batch.gt_signed_distance if targets is None else np.asarray(targets)
    if len(pts) == 0:
        raise ValueError("empty batch")
    rng = make_rng(seed, "gradcheck")

    pred, cache = forward_batch(m.pyramid, m.net, pts)
    _, upstream = mse_loss(pred, tgt)
    net_grads, level_grads = backward_batch(m.pyramid, m.net, cache, upstream, sparse=False)

    probes = []  # (array, flat index, analytic)
    for k, (w, b) in enumerate(zip(m.net.weights, m.net.biases)):
        n_b = max(1, per_layer // 4)
        for arr, grad, n in ((w, net_grads[2 * k], per_layer - n_b),
                             (b, net_grads[2 * k + 1], n_b)):
            for i in rng.choice(arr.size, size=min(n, arr.size), replace=False):
                probes.append((arr, int(i), float(grad.reshape(-1)[i])))
    for vol, grad, rows in zip(m.pyramid.levels, level_grads, _touched_rows(m.pyramid, pts)):
        chosen_rows = rng.choice(rows, size=per_level)
        cols = rng.integers(vol.feature_dim, size=per_level)
        for r, c in zip(chosen_rows, cols):
            probes.append((vol.features, int(r) * vol.feature_dim + int(c), float(grad[r, c])))

    worst = 0.0
    records = []
    for arr, i, analytic in probes:
        flat = arr.reshape(-1)
        orig = flat[i]
        flat[i] = orig + epsilon
        lp = batch_loss(m.pyramid, m.net, pts, tgt)
        flat[i] = orig - epsilon
        lm = batch_loss(m.pyramid, m.net, pts, tgt)
        flat[i] = orig
        numeric = (lp - lm) / (2.0 * epsilon)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
        records.append((analytic, numeric, err))
    return (worst, records) if details else worst
