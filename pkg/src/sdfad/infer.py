"""Scoring test clouds with a trained model."""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import EmptyCloud, MeshIoError
from .mesh import inject_gaussian_noise
from .metrics import aupr, auroc
from .rng import make_rng
from .train import forward_batch

_CHUNK = 65536


@dataclass
class ScoreReport:
    point_scores: np.ndarray
    object_score: float
    metrics: dict = field(default_factory=dict)


def predict(model, points):
    """Signed distance predicted for raw (un-normalised) points."""
    pts = model.transform.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    out = np.empty(len(pts), dtype=np.float64)
    for a in range(0, len(pts), _CHUNK):
        pred, _ = forward_batch(model.pyramid, model.net, pts[a: a + _CHUNK])
        out[a: a + _CHUNK] = pred
    return out


def score_points(model, cloud):
    """Per-point score ``|d|`` and object score ``max |d|``.

    The cloud must already be registered to the training pose; only the
    stored normalisation is applied.  When the cloud carries labels with both
    classes present, point-level AUROC and AUPR are filled in.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot score an empty cloud")
    scores = np.abs(predict(model, cloud.points))
    report = ScoreReport(scores, float(scores.max()))
    if cloud.labels is not None:
        report.metrics = evaluate(scores, cloud.labels)
    return report


def evaluate(scores, labels):
    labels = np.asarray(labels)
    out = {}
    if labels.any():
        out["aupr"] = aupr(scores, labels)
        if not labels.all():
            out["auroc"] = auroc(scores, labels)
    return out


def noise_sweep(model, cloud, sigmas, seed=0):
    """Score ``cloud`` after injecting Gaussian noise of each ``sigma``.

    Row ``i`` draws its noise from stream ``noise/<i>`` of ``seed``; sigma 0
    scores the cloud unchanged.  Returns a list of ``(sigma, ScoreReport)``.
    """
    if cloud.labels is None:
        raise ValueError("noise sweep needs a labelled cloud")
    rows = []
    for i, sigma in enumerate(sigmas):
        noisy = inject_gaussian_noise(cloud, float(sigma), make_rng(seed, f"noise/{i}"))
        rows.append((float(sigma), score_points(model, noisy)))
    return rows


def write_scores(path, report):
    lines = ["index,score"] + [f"{i},{s!r}" for i, s in enumerate(report.point_scores.tolist())]
    lines.append(f"# object_score={report.object_score!r}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise MeshIoError(f"cannot write {path}: {exc}") from exc


def read_scores(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise MeshIoError(f"cannot read {path}: {exc}") from exc
    scores = []
    for line in text.splitlines()[1:]:
        if line and not line.startswith("#"):
            scores.append(float(line.split(",")[1]))
    return np.array(scores)


def metrics_json(metrics):
    return json.dumps({k: metrics[k] for k in ("auroc", "aupr") if k in metrics})
