"""Attention-pooled MIL head with explicit numpy forward and backward passes.

Per-instance projection -> tanh (optionally gated) attention scores -> softmax
pooling -> dropout -> linear classifier emitting 14 log-space count
predictions.  Gradients are hand-derived; a finite-difference suite in the
tests keeps them honest.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .annotations import NUM_CLASSES
from .bags import ShapeError

MILP_MAGIC = b"MILP"
MILP_VERSION = 1

# Declared parameter order (checkpoint layout and Adam state follow it).
PLAIN_FIELDS = ("W_proj", "b_proj", "V", "w_att", "W_out", "b_out")
GATED_FIELDS = ("W_proj", "b_proj", "V", "w_att", "U", "W_out", "b_out")


@dataclass(frozen=True)
class MilDims:
    feature_dim: int
    hidden: int = 512
    att_dim: int = 256
    gated: bool = False

    @property
    def fields(self):
        return GATED_FIELDS if self.gated else PLAIN_FIELDS


def _uniform_init(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_mil_params(dims, rng):
    """Uniform(+-sqrt(6/fan_in)) weights, zero biases."""
    f, h, d = dims.feature_dim, dims.hidden, dims.att_dim
    params = {
        "W_proj": _uniform_init(rng, (h, f), f),
        "b_proj": np.zeros(h),
        "V": _uniform_init(rng, (d, h), h),
        "w_att": _uniform_init(rng, (d,), h),
        "W_out": _uniform_init(rng, (NUM_CLASSES, h), h),
        "b_out": np.zeros(NUM_CLASSES),
    }
    if dims.gated:
        params["U"] = _uniform_init(rng, (d, h), h)
    return params


@dataclass
class MilForwardTrace:
    h: np.ndarray  # N x H projected instances (post-relu)
    s: np.ndarray  # N attention logits
    a: np.ndarray  # N attention weights
    z: np.ndarray  # pooled vector (pre-dropout)
    y: np.ndarray  # 14 log-space predictions
    n: int
    dropout_mask: np.ndarray = None  # None in eval mode
    dropout_p: float = 0.0
    tanh_vh: np.ndarray = None  # N x D
    sig_uh: np.ndarray = None  # N x D, gated only


def stable_softmax(s):
    """Softmax with max-subtraction stabilization; invariant to logit shifts."""
    e = np.exp(s - s.max())
    return e / e.sum()


def mil_forward(params, features, mode="eval", rng=None, dropout=0.25):
    """Run the MIL head on an N x F instance matrix.

    Train mode applies inverted dropout to the pooled vector; eval mode is
    deterministic.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("bag features must be N x F with N >= 1")
    if x.shape[1] != params["W_proj"].shape[1]:
        raise ShapeError(
            "feature dim %d != projection dim %d" % (x.shape[1], params["W_proj"].shape[1])
        )
    h = np.maximum(x @ params["W_proj"].T + params["b_proj"], 0.0)
    t = np.tanh(h @ params["V"].T)  # N x D
    sig = None
    if "U" in params:
        sig = 1.0 / (1.0 + np.exp(-(h @ params["U"].T)))
        s = (t * sig) @ params["w_att"]
    else:
        s = t @ params["w_att"]
    a = stable_softmax(s)
    z = a @ h
    mask = None
    p = 0.0
    z_used = z
    if mode == "train" and dropout > 0.0:
        if rng is None:
            raise ValueError("train mode needs an rng stream for dropout")
        p = dropout
        mask = (rng.random(z.shape) >= p).astype(np.float64)
        z_used = z * mask / (1.0 - p)
    y = params["W_out"] @ z_used + params["b_out"]
    return MilForwardTrace(
        h=h, s=s, a=a, z=z, y=y, n=x.shape[0], dropout_mask=mask, dropout_p=p, tanh_vh=t, sig_uh=sig
    )


def mil_backward(params, trace, features, grad_output):
    """Gradients of a scalar loss w.r.t. every parameter, given dL/dy."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] != trace.n or x.shape[0] != trace.h.shape[0]:
        raise ValueError("trace does not match this bag")
    dy = np.asarray(grad_output, dtype=np.float64)
    h, a = trace.h, trace.a

    if trace.dropout_mask is not None:
        scale = trace.dropout_mask / (1.0 - trace.dropout_p)
        z_used = trace.z * scale
    else:
        scale = 1.0
        z_used = trace.z

    grads = {"W_out": np.outer(dy, z_used), "b_out": dy.copy()}
    dz = (params["W_out"].T @ dy) * scale

    # Pooling z = sum_i a_i h_i: paths through the weights and the instances.
    da = h @ dz
    dh = np.outer(a, dz)

    # Softmax Jacobian.
    ds = a * (da - float(a @ da))

    t = trace.tanh_vh
    if trace.sig_uh is not None:
        g = trace.sig_uh
        grads["w_att"] = (t * g).T @ ds
        dtg = np.outer(ds, params["w_att"])  # N x D, d/d(t*g)
        dpre_v = dtg * g * (1.0 - t * t)
        dpre_u = dtg * t * g * (1.0 - g)
        grads["V"] = dpre_v.T @ h
        grads["U"] = dpre_u.T @ h
        dh += dpre_v @ params["V"] + dpre_u @ params["U"]
    else:
        grads["w_att"] = t.T @ ds
        dpre_v = np.outer(ds, params["w_att"]) * (1.0 - t * t)
        grads["V"] = dpre_v.T @ h
        dh += dpre_v @ params["V"]

    dpre = dh * (h > 0.0)
    grads["W_proj"] = dpre.T @ x
    grads["b_proj"] = dpre.sum(axis=0)
    return grads


def dims_of(params):
    h, f = params["W_proj"].shape
    d = params["V"].shape[0]
    return MilDims(feature_dim=f, hidden=h, att_dim=d, gated="U" in params)


def save_checkpoint(params, path):
    dims = dims_of(params)
    with open(path, "wb") as fh:
        fh.write(MILP_MAGIC)
        fh.write(
            struct.pack(
                "<IIIII", MILP_VERSION, dims.feature_dim, dims.hidden, dims.att_dim, int(dims.gated)
            )
        )
        for name in dims.fields:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MILP_MAGIC:
            raise ShapeError("%s: not a MIL checkpoint" % path)
        version, f, h, d, gated = struct.unpack("<IIIII", fh.read(20))
        if version != MILP_VERSION:
            raise ShapeError("%s: unsupported version %d" % (path, version))
        dims = MilDims(feature_dim=f, hidden=h, att_dim=d, gated=bool(gated))
        shapes = {
            "W_proj": (h, f),
            "b_proj": (h,),
            "V": (d, h),
            "w_att": (d,),
            "U": (d, h),
            "W_out": (NUM_CLASSES, h),
            "b_out": (NUM_CLASSES,),
        }
        params = {}
        for name in dims.fields:
            shape = shapes[name]
            n = int(np.prod(shape))
            params[name] = np.frombuffer(fh.read(n * 8), dtype="<f8").reshape(shape).copy()
    return params
