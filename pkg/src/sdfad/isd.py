"""Feature fusion and the signed-distance perceptron, with hand-written
reverse mode.

The network maps ``concat(fused_feature, xyz)`` through four affine layers;
the first three are followed by the activation, the last is linear so the
output can take either sign.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, NonFiniteActivation, TapeMismatch

ACTIVATIONS = ("softplus", "relu", "linear")


def _act(name, z):
    if name == "softplus":
        # log(1 + e^z) without overflow
        return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    if name == "relu":
        return np.maximum(z, 0)
    return z


def _act_grad(name, z, h):
    """Derivative of the activation given pre-activation ``z`` and output ``h``."""
    if name == "softplus":
        # sigmoid(z) = 1 - exp(-softplus(z))
        return -np.expm1(-h)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


@dataclass(eq=False)
class SdfNet:
    weights: list          # (fan_in, fan_out) per layer
    biases: list           # (fan_out,) per layer
    activation: str = "softplus"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases):
            raise DimensionMismatch("weights and biases differ in length")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise DimensionMismatch(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise DimensionMismatch(f"layer {k} input does not match previous output")
        if self.weights[-1].shape[1] != 1:
            raise DimensionMismatch("output layer must have width 1")

    @property
    def shapes(self):
        return [w.shape for w in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self):
        """Flat list ``[W1, b1, W2, b2, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_net(rng, in_dim=35, hidden=(128, 128, 128),
             activation="softplus", dtype=np.float32):
    """Glorot-uniform weights, zero biases."""
    widths = [in_dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return SdfNet(weights, biases, activation)


def fuse(per_level):
    """Element-wise sum of the per-level feature vectors."""
    if len(per_level) == 0:
        raise DimensionMismatch("need at least one level")
    first = np.asarray(per_level[0])
    out = first.copy()
    for f in per_level[1:]:
        f = np.asarray(f)
        if f.shape != first.shape:
            raise DimensionMismatch(f"level feature shape {f.shape} != {first.shape}")
        out = out + f
    return out


@dataclass
class Tape:
    signature: list
    inputs: list = field(default_factory=list)   # input of each layer
    pre: list = field(default_factory=list)      # pre-activation of each layer


def sdf_forward(net, fused, xyz):
    """Predicted signed distance for each row of ``fused`` (n, d) and ``xyz`` (n, 3)."""
    fused = np.asarray(fused)
    xyz = np.asarray(xyz)
    single = fused.ndim == 1
    x = np.concatenate([fused.reshape(-1, fused.shape[-1]), xyz.reshape(-1, 3)], axis=1)
    x = x.astype(net.dtype, copy=False)
    if x.shape[1] != net.in_dim:
        raise DimensionMismatch(f"input width {x.shape[1]} != network input {net.in_dim}")
    tape = Tape(net.shapes)
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        tape.inputs.append(h)
        z = h @ w + b
        tape.pre.append(z)
        h = z if k == last else _act(net.activation, z)
        if not np.isfinite(h).all():
            raise NonFiniteActivation(f"non-finite activation after layer {k + 1}")
    pred = h[:, 0]
    return (pred[0] if single else pred), tape


def mse_loss(predictions, targets):
    """Mean squared error and its gradient with respect to the predictions."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(p) == 0:
        raise EmptyBatch("empty batch")
    if p.shape != t.shape:
        raise DimensionMismatch(f"{len(p)} predictions vs {len(t)} targets")
    r = p - t
    n = len(p)
    return float(np.dot(r, r) / n), 2.0 * r / n


def sdf_backward(net, tape, upstream):
    """Reverse pass.

    ``upstream`` is dLoss/dPrediction per sample.  Returns ``(grads,
    input_grad)`` where ``grads`` matches ``net.parameters()`` order and
    ``input_grad`` has shape (n, in_dim).
    """
    if tape.signature != net.shapes or len(tape.pre) != len(net.weights):
        raise TapeMismatch("tape was recorded with a different network")
    up = np.asarray(upstream, dtype=net.dtype).reshape(-1, 1)
    if up.shape[0] != tape.pre[-1].shape[0]:
        raise TapeMismatch(f"upstream has {up.shape[0]} rows, tape has {tape.pre[-1].shape[0]}")
    last = len(net.weights) - 1
    grads = [None] * (2 * len(net.weights))
    delta = up
    for k in range(last, -1, -1):
        if k != last:
            delta = delta * _act_grad(net.activation, tape.pre[k], tape.inputs[k + 1])
        grads[2 * k] = tape.inputs[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[k].T
    return grads, delta
