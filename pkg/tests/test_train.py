from dataclasses import replace

import numpy as np
import pytest

from sdfad.errors import ShapeMismatch
from sdfad.isd import mse_loss
from sdfad.mesh import fit_transform
from sdfad.npg import SamplingConfig
from sdfad.rng import make_rng
from sdfad.synth import box_mesh, icosphere
from sdfad.train import (
    AdamState, ModelConfig, TrainConfig, TrainedModel, adam_step, backward_batch, fit,
    forward_batch, gradient_check, init_model, prepare_point_set,
)

SMALL = ModelConfig(base_lod=1, n_levels=2, feature_dim=8, hidden=(16, 16, 16))


def small_run(mesh, seed=0, steps=10, sparse=True, model_cfg=SMALL, lr=1e-3):
    sampling = SamplingConfig(1000, (2, 2, 1), seed=seed)
    points, tf = prepare_point_set([mesh], sampling)
    cfg = TrainConfig(learning_rate=lr, steps=steps, batch_size=256, seed=seed, sparse_grid=sparse)
    return fit(points, tf, sampling, model_cfg, cfg)


def same_params(a, b):
    pa = [v.features for v in a.pyramid.levels] + a.net.parameters()
    pb = [v.features for v in b.pyramid.levels] + b.net.parameters()
    return all(x.tobytes() == y.tobytes() for x, y in zip(pa, pb))


def batch_of(model, mesh, n=128, seed=0):
    points, _ = prepare_point_set([mesh], replace(model.sampling, seed=seed))
    idx = make_rng(seed, "batch").choice(len(points), n, replace=False)
    return points.subset(np.sort(idx))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState.zeros_like(p)
        adam_step(p, [np.zeros(2)], state, TrainConfig(learning_rate=0.1))
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        assert state.step_count == 1

    def test_first_step(self):
        p = [np.zeros(3)]
        adam_step(p, [np.ones(3)], AdamState.zeros_like(p), TrainConfig(learning_rate=0.1))
        # m_hat = v_hat = 1 after bias correction
        np.testing.assert_allclose(p[0], -0.1 / (1 + 1e-8), rtol=0, atol=1e-15)
        np.testing.assert_allclose(p[0], -0.1, atol=1e-6)

    def test_two_steps_closed_form(self):
        cfg = TrainConfig(learning_rate=0.01)
        b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
        p = [np.array([0.5])]
        state = AdamState.zeros_like(p)
        g1, g2 = 2.0, -1.0
        adam_step(p, [np.array([g1])], state, cfg)
        adam_step(p, [np.array([g2])], state, cfg)
        m = (1 - b1) * (b1 * g1 + g2)
        v = (1 - b2) * (b2 * g1**2 + g2**2)
        step2 = cfg.learning_rate * (m / (1 - b1**2)) / (np.sqrt(v / (1 - b2**2)) + eps)
        step1 = cfg.learning_rate * g1 / (abs(g1) + eps)
        np.testing.assert_allclose(p[0], [0.5 - step1 - step2], rtol=1e-14)

    def test_shape_mismatch(self):
        p = [np.zeros(2), np.zeros(3)]
        with pytest.raises(ShapeMismatch):
            adam_step(p, [np.zeros(2)], AdamState.zeros_like(p), TrainConfig())

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(adam_beta1=1.0)


class TestBatchGradients:
    def test_sparse_matches_dense(self):
        pyramid, net = init_model(replace(SMALL, dtype="float64"), 0)
        pts = make_rng(1).uniform(-1, 1, (300, 3))
        pred, cache = forward_batch(pyramid, net, pts)
        _, up = mse_loss(pred, np.zeros(len(pts)))
        _, dense = backward_batch(pyramid, net, cache, up, sparse=False)
        _, sparse = backward_batch(pyramid, net, cache, up, sparse=True)
        for d, (rows, g) in zip(dense, sparse):
            assert d[rows].tobytes() == np.ascontiguousarray(g).tobytes()
            mask = np.ones(len(d), dtype=bool)
            mask[rows] = False
            assert not d[mask].any()

    def test_sparse_and_dense_training_agree_when_all_rows_touched(self):
        # a 2x2x2-cell grid is fully covered by every batch, so lazy and dense
        # Adam perform identical arithmetic
        cfg = ModelConfig(base_lod=0, n_levels=1, feature_dim=4, hidden=(8, 8, 8))
        mesh = box_mesh(2)
        a = small_run(mesh, steps=5, sparse=True, model_cfg=cfg)
        b = small_run(mesh, steps=5, sparse=False, model_cfg=cfg)
        assert same_params(a, b)
        assert a.loss_history == b.loss_history


class TestFit:
    def test_deterministic(self):
        mesh = icosphere(2)
        assert same_params(small_run(mesh, seed=3), small_run(mesh, seed=3))
        assert not same_params(small_run(mesh, seed=3), small_run(mesh, seed=4))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_decreases(self, seed):
        model = small_run(icosphere(2), seed=seed, steps=10)
        assert len(model.loss_history) == 10
        assert model.loss_history[-1] < model.loss_history[0]

    def test_pooled_meshes_share_transform(self):
        a = icosphere(2)
        b = box_mesh(2).transformed(fit_transform(np.array([[0.0, 0, 0], [4.0, 4, 4]]), 1.0))
        points, tf = prepare_point_set([a, b], SamplingConfig(200, (2, 2, 1)))
        assert len(points) == 2 * 500
        union = np.concatenate([a.vertices, b.vertices])
        assert tf == fit_transform(union)

    def test_default_convergence(self, default_model):
        model, _ = default_model
        assert model.loss_history[-1] < 0.1 * model.loss_history[0]

    def test_astype(self):
        model = small_run(icosphere(1), steps=2)
        m64 = model.astype(np.float64)
        assert m64.net.dtype == np.float64
        assert m64.model_cfg.dtype == "float64"
        assert model.net.dtype == np.float32


class TestGradientCheck:
    def test_default_network(self):
        mesh = icosphere(2)
        model = small_run(mesh, steps=20, model_cfg=ModelConfig())
        err, records = gradient_check(model, batch_of(model, mesh), details=True)
        assert len(records) >= 50
        assert err < 1e-4

    def test_linear_network(self):
        mesh = icosphere(2)
        model = small_run(mesh, steps=5, model_cfg=replace(SMALL, activation="linear"))
        # the loss is exactly quadratic in any single parameter, so central
        # differences carry no truncation error and a wide step only shrinks roundoff
        assert gradient_check(model, batch_of(model, mesh), epsilon=0.1) < 1e-9

    def test_zero_residual_gives_zero_gradients(self):
        mesh = icosphere(2)
        model = small_run(mesh, steps=3)
        batch = batch_of(model, mesh, n=32)
        m64 = model.astype(np.float64)
        pred, _ = forward_batch(m64.pyramid, m64.net, batch.points)
        _, records = gradient_check(model, batch, targets=pred, details=True)
        assert all(a == 0.0 for a, _, _ in records)
        assert all(abs(n) < 1e-8 for _, n, _ in records)

    def test_float32_model_is_checked_in_float64(self):
        mesh = icosphere(2)
        model = small_run(mesh, steps=3)
        before = model.net.weights[0].copy()
        gradient_check(model, batch_of(model, mesh, n=16), per_layer=4, per_level=2)
        assert model.net.weights[0].tobytes() == before.tobytes()


def test_trained_model_fields():
    model = small_run(icosphere(1), steps=2)
    assert isinstance(model, TrainedModel)
    assert isinstance(model.sampling, SamplingConfig)
    assert len(model.pyramid.levels) == SMALL.n_levels
