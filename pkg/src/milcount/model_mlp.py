"""Baseline MLP (14 -> 1024 -> 1024 -> 14) on aggregated bag features, with
explicit forward/backward.  Relu + inverted dropout after each hidden layer,
linear output in log-count space."""

import struct
from dataclasses import dataclass

import numpy as np

from .annotations import NUM_CLASSES
from .bags import ShapeError

MLPP_MAGIC = b"MLPP"
MLPP_VERSION = 1

DEFAULT_SIZES = (NUM_CLASSES, 1024, 1024, NUM_CLASSES)


def init_mlp_params(rng, sizes=DEFAULT_SIZES):
    """Uniform(+-sqrt(6/fan_in)) weights, zero biases, one (W, b) per layer."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        params["W%d" % i] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        params["b%d" % i] = np.zeros(fan_out)
    return params


def mlp_sizes(params):
    n_layers = len(params) // 2
    sizes = [params["W0"].shape[1]]
    for i in range(n_layers):
        sizes.append(params["W%d" % i].shape[0])
    return tuple(sizes)


def mlp_fields(params):
    return tuple(k for i in range(len(params) // 2) for k in ("W%d" % i, "b%d" % i))


@dataclass
class MlpForwardTrace:
    activations: list  # input + post-dropout output of each hidden layer
    hidden: list  # post-relu, pre-dropout hidden activations
    masks: list  # dropout masks per hidden layer (None in eval)
    dropout_p: float
    y: np.ndarray


def mlp_forward(params, x, mode="eval", rng=None, dropout=0.25):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params["W0"].shape[1],):
        raise ShapeError("input shape %s != expected (%d,)" % (x.shape, params["W0"].shape[1]))
    n_layers = len(params) // 2
    p = dropout if mode == "train" and dropout > 0.0 else 0.0
    if p and rng is None:
        raise ValueError("train mode needs an rng stream for dropout")
    acts = [x]
    hidden = []
    masks = []
    a = x
    for i in range(n_layers - 1):
        h = np.maximum(params["W%d" % i] @ a + params["b%d" % i], 0.0)
        hidden.append(h)
        if p:
            m = (rng.random(h.shape) >= p).astype(np.float64)
            a = h * m / (1.0 - p)
        else:
            m = None
            a = h
        masks.append(m)
        acts.append(a)
    k = n_layers - 1
    y = params["W%d" % k] @ a + params["b%d" % k]
    return MlpForwardTrace(activations=acts, hidden=hidden, masks=masks, dropout_p=p, y=y)


def mlp_backward(params, trace, grad_output):
    n_layers = len(params) // 2
    if len(trace.activations) != n_layers:
        raise ValueError("trace does not match this parameter set")
    dy = np.asarray(grad_output, dtype=np.float64)
    grads = {}
    k = n_layers - 1
    grads["W%d" % k] = np.outer(dy, trace.activations[k])
    grads["b%d" % k] = dy.copy()
    da = params["W%d" % k].T @ dy
    for i in range(n_layers - 2, -1, -1):
        if trace.masks[i] is not None:
            da = da * trace.masks[i] / (1.0 - trace.dropout_p)
        dpre = da * (trace.hidden[i] > 0.0)
        grads["W%d" % i] = np.outer(dpre, trace.activations[i])
        grads["b%d" % i] = dpre
        if i:
            da = params["W%d" % i].T @ dpre
    return grads


def save_checkpoint(params, path):
    sizes = mlp_sizes(params)
    with open(path, "wb") as fh:
        fh.write(MLPP_MAGIC)
        fh.write(struct.pack("<II", MLPP_VERSION, len(sizes)))
        fh.write(struct.pack("<%dI" % len(sizes), *sizes))
        for name in mlp_fields(params):
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MLPP_MAGIC:
            raise ShapeError("%s: not an MLP checkpoint" % path)
        version, n_sizes = struct.unpack("<II", fh.read(8))
        if version != MLPP_VERSION:
            raise ShapeError("%s: unsupported version %d" % (path, version))
        sizes = struct.unpack("<%dI" % n_sizes, fh.read(4 * n_sizes))
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            params["W%d" % i] = (
                np.frombuffer(fh.read(fan_out * fan_in * 8), dtype="<f8")
                .reshape(fan_out, fan_in)
                .copy()
            )
            params["b%d" % i] = np.frombuffer(fh.read(fan_out * 8), dtype="<f8").copy()
    return params
