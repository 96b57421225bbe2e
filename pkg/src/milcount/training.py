"""Training machinery: inverse-mean-frequency class weights, weighted
log-space MSE, Adam with L2 weight decay, gradient accumulation, and early
stopping on validation MAE."""

import time
from dataclasses import dataclass

import numpy as np

from . import model_mil, model_mlp
from .annotations import NUM_CLASSES
from .evalcv import dataset_metrics
from .rngstreams import stream


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    max_epochs: int = 120  # 200 for the baseline
    patience: int = 5
    accum_steps: int = 8
    dropout: float = 0.25
    seed: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epsilon_freq: float = 1e-6
    decoupled_wd: bool = False
    # Head sizes: MIL projection/attention widths and the MLP hidden width.
    hidden: int = 512
    att_dim: int = 256
    gated: bool = False
    mlp_hidden: int = 1024

    def __post_init__(self):
        if self.patience < 1 or self.accum_steps < 1 or self.max_epochs < 1:
            raise ValueError("patience, accum_steps and max_epochs must be >= 1")
        if min(self.lr, self.beta1, self.beta2, self.eps, self.epsilon_freq) <= 0:
            raise ValueError("optimizer constants must be positive")


def compute_class_weights(train_labels, epsilon_freq=1e-6):
    """Per-class loss weights inversely proportional to the mean per-slide
    class frequency, normalized to mean 1."""
    labels = [np.asarray(l, dtype=np.float64) for l in train_labels]
    if not labels:
        raise ValueError("cannot compute class weights from an empty training set")
    mean_freq = np.mean(labels, axis=0)
    raw = 1.0 / (mean_freq + epsilon_freq)
    return raw * (NUM_CLASSES / raw.sum())


def weighted_log_mse(y_pred_log, y_true_counts, weights):
    """Weighted MSE between log-space predictions and log1p counts.

    Returns (loss, dloss/dy_pred).
    """
    t = np.log1p(np.asarray(y_true_counts, dtype=np.float64))
    diff = np.asarray(y_pred_log, dtype=np.float64) - t
    w = np.asarray(weights, dtype=np.float64)
    loss = float((w * diff * diff).mean())
    grad = (2.0 / diff.size) * w * diff
    return loss, grad


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def init(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state, cfg):
    """One Adam update, in place.  Weight decay is coupled L2 (added to the
    gradient) by default; decoupled_wd applies it directly to the weights."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient for parameter %r" % name)
        if cfg.weight_decay and not cfg.decoupled_wd:
            g = g + cfg.weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay and cfg.decoupled_wd:
            p -= cfg.lr * cfg.weight_decay * p
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


@dataclass
class EarlyStopState:
    patience: int
    best_val_mae: float = np.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    best_params: dict = None

    def update(self, epoch, val_mae, params):
        """Record one epoch; returns True when training should stop."""
        if val_mae < self.best_val_mae:  # strict improvement, min_delta = 0
            self.best_val_mae = val_mae
            self.best_epoch = epoch
            self.best_params = {k: p.copy() for k, p in params.items()}
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mae: float
    val_mse: float
    elapsed_s: float


def _mil_ops(cfg):
    def forward_backward(params, item, weights, rng):
        trace = model_mil.mil_forward(
            params, item.features, mode="train", rng=rng, dropout=cfg.dropout
        )
        loss, dy = weighted_log_mse(trace.y, item.label, weights)
        return loss, model_mil.mil_backward(params, trace, item.features, dy)

    def predict(params, item):
        return model_mil.mil_forward(params, item.features, mode="eval").y

    return forward_backward, predict


def _mlp_ops(cfg):
    def forward_backward(params, item, weights, rng):
        x, _ = item
        trace = model_mlp.mlp_forward(params, x, mode="train", rng=rng, dropout=cfg.dropout)
        loss, dy = weighted_log_mse(trace.y, item[1], weights)
        return loss, model_mlp.mlp_backward(params, trace, dy)

    def predict(params, item):
        return model_mlp.mlp_forward(params, item[0], mode="eval").y

    return forward_backward, predict


def _label_of(model_kind, item):
    return item.label if model_kind == "mil" else item[1]


def init_params(model_kind, cfg, feature_dim):
    rng = stream(cfg.seed, "init")
    if model_kind == "mil":
        dims = model_mil.MilDims(
            feature_dim=feature_dim, hidden=cfg.hidden, att_dim=cfg.att_dim, gated=cfg.gated
        )
        return model_mil.init_mil_params(dims, rng)
    return model_mlp.init_mlp_params(
        rng, sizes=(feature_dim, cfg.mlp_hidden, cfg.mlp_hidden, NUM_CLASSES)
    )


def train_model(model_kind, train_items, val_items, cfg, params=None, weights=None):
    """Epoch loop with bag-level batch size 1 and gradient accumulation.

    Returns (best params, list of EpochLog).  Items are Bags for "mil" and
    (features, label) pairs for "mlp".
    """
    if model_kind not in ("mil", "mlp"):
        raise ValueError("unknown model kind %r" % model_kind)
    if not train_items or not val_items:
        raise ValueError("train and validation splits must be non-empty")
    forward_backward, predict = (_mil_ops if model_kind == "mil" else _mlp_ops)(cfg)
    if weights is None:
        weights = compute_class_weights(
            [_label_of(model_kind, it) for it in train_items], cfg.epsilon_freq
        )
    if params is None:
        feature_dim = (
            train_items[0].features.shape[1] if model_kind == "mil" else len(train_items[0][0])
        )
        params = init_params(model_kind, cfg, feature_dim)
    else:
        params = {k: p.copy() for k, p in params.items()}

    stopper = EarlyStopState(patience=cfg.patience)
    state = AdamState.init(params)
    logs = []
    t0 = time.monotonic()
    for epoch in range(1, cfg.max_epochs + 1):
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(train_items))
        drop_rng = stream(cfg.seed, "dropout", epoch)
        losses = []
        window = []
        for pos, idx in enumerate(order):
            loss, grads = forward_backward(params, train_items[int(idx)], weights, drop_rng)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    "non-finite loss at epoch %d, bag %d" % (epoch, int(idx))
                )
            losses.append(loss)
            window.append(grads)
            if len(window) == cfg.accum_steps or pos == len(order) - 1:
                mean_grads = {
                    k: sum(g[k] for g in window) / len(window) for k in window[0]
                }
                adam_step(params, mean_grads, state, cfg)
                window = []
        val_pairs = [(predict(params, it), _label_of(model_kind, it)) for it in val_items]
        val_mae, val_mse = dataset_metrics(val_pairs)
        logs.append(
            EpochLog(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                val_mae=val_mae,
                val_mse=val_mse,
                elapsed_s=time.monotonic() - t0,
            )
        )
        if stopper.update(epoch, val_mae, params):
            break
    return stopper.best_params, logs
