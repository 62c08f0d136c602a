import time

import numpy as np
import pytest

from sdfad.mesh import TriangleMesh
from sdfad.npg import SamplingConfig
from sdfad.synth import SynthSpec, icosphere, synth_cloud
from sdfad.train import ModelConfig, TrainConfig, train

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def unit_cube(lo=0.0, hi=1.0):
    """Closed cube ``[lo, hi]^3`` as 12 outward-facing triangles."""
    v = np.array([[x, y, z] for z in (lo, hi) for y in (lo, hi) for x in (lo, hi)], dtype=float)
    f = np.array([
        [0, 2, 3], [0, 3, 1],  # z = lo
        [4, 5, 7], [4, 7, 6],  # z = hi
        [0, 1, 5], [0, 5, 4],  # y = lo
        [2, 6, 7], [2, 7, 3],  # y = hi
        [0, 4, 6], [0, 6, 2],  # x = lo
        [1, 3, 7], [1, 7, 5],  # x = hi
    ])
    return TriangleMesh(v, f)


@pytest.fixture
def cube():
    return unit_cube()


@pytest.fixture(scope="session")
def synthetic_task():
    """Clean training sphere, a bump-anomaly test cloud and a clean held-out cloud."""
    mesh, anomalous = synth_cloud(SynthSpec(seed=1))
    _, clean = synth_cloud(SynthSpec(anomaly="none", seed=2))
    return mesh, anomalous, clean


def train_on(mesh, seed=0, ratio=(2, 2, 1), n_levels=3, steps=2000):
    t0 = time.perf_counter()
    model = train(None, SamplingConfig(ratio=ratio, seed=seed), ModelConfig(n_levels=n_levels),
                  TrainConfig(steps=steps, seed=seed), meshes=[mesh])
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def default_model(synthetic_task):
    """Model trained with every default on the clean sphere, plus its wall time."""
    return train_on(synthetic_task[0])


@pytest.fixture(scope="session")
def small_sphere():
    return icosphere(2)
