"""Continuous-output regressors over flattened time x feature inputs.

Three kinds share one interface:

* ``ridge``    closed-form ridge regression with an unpenalized intercept
* ``mlp``      tanh feed-forward network, mini-batch Adam on MSE
* ``gridconv`` one 3x3 convolution over the T x F_t grid, mean-pooled, then
               a dense tanh layer and a linear head

Iterative kinds stop when validation MSE reaches ``stop_threshold``, when
it fails to improve for ``patience`` epochs, or at ``max_epochs``; the best
validation parameters are kept.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from ._rng import derive_rng
from .dataset import Sample, TemporalDataset
from .errors import ConfigError, DataError, NumericError

RIDGE, MLP, GRIDCONV = "ridge", "mlp", "gridconv"
KINDS = (RIDGE, MLP, GRIDCONV)
FLATTEN_ORDER = "temporal-row-major+static"
MODEL_FORMAT = "prunexai.model"
MODEL_VERSION = 1

CONV_CHANNELS = 4
CONV_KERNEL = 3


@dataclass
class RegressorConfig:
    kind: str = MLP
    ridge_lambda: float = 1e-3
    mlp_hidden: list = field(default_factory=lambda: [32, 16])
    learning_rate: float = 1e-2
    max_epochs: int = 500
    stop_threshold: float = 0.003
    patience: float = 20
    batch_size: int = 128
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be nonnegative")
        if not self.mlp_hidden or any(int(h) < 1 for h in self.mlp_hidden):
            raise ConfigError("mlp_hidden must be a non-empty list of positive integers")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience and batch_size must be positive")
        if self.stop_threshold < 0:
            raise ConfigError("stop_threshold must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self

    def to_dict(self):
        d = asdict(self)
        d["mlp_hidden"] = [int(h) for h in self.mlp_hidden]
        for key in ("stop_threshold", "patience"):
            if math.isinf(d[key]):
                d[key] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("stop_threshold", "patience"):
            if d.get(key) in ("inf", "Infinity"):
                d[key] = math.inf
        return cls(**d)


@dataclass
class TrainReport:
    epochs_run: int
    wall_time_seconds: float
    final_train_mse: float
    final_val_mse: float
    halted_by: str

    def to_dict(self):
        return asdict(self)


@dataclass
class MetricSet:
    mse: float
    r2: float
    mae: float
    r2_degenerate: bool = False

    def to_dict(self):
        return asdict(self)


# -- shared numerics ---------------------------------------------------------

def weighted_least_squares(Z, w, t, ridge_eps=1e-10):
    """Minimize ``sum_i w_i (t_i - Z_i . beta)^2 + ridge_eps * |beta|^2``.

    Solved through the normal equations with a Cholesky factorization.
    """
    Z = np.asarray(Z, dtype=float)
    w = np.asarray(w, dtype=float).reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    if Z.ndim != 2 or Z.shape[0] != w.size or w.size != t.size:
        raise DataError(f"inconsistent shapes Z{Z.shape}, w{w.shape}, t{t.shape}")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(w)) and np.all(np.isfinite(t))):
        raise NumericError("non-finite input to weighted least squares")
    if np.any(w < 0):
        raise DataError("weights must be nonnegative")
    if not np.any(w > 0):
        raise NumericError("all weights are zero")
    Zw = Z * w[:, None]
    gram = Zw.T @ Z
    gram[np.diag_indices_from(gram)] += ridge_eps
    rhs = Zw.T @ t
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise NumericError("normal equations are not positive definite; "
                           "increase ridge_eps") from None
    beta = linalg.cho_solve(factor, rhs, check_finite=False)
    if not np.all(np.isfinite(beta)):
        raise NumericError("weighted least squares produced non-finite coefficients")
    return beta


def metrics(y, y_hat) -> MetricSet:
    y = np.asarray(y, dtype=float).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y.size == 0:
        raise DataError("metrics of empty vectors")
    if y.size != y_hat.size:
        raise DataError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    resid = y - y_hat
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    mse = ss_res / y.size
    mae = float(np.mean(np.abs(resid)))
    # decide "perfect" on the residuals themselves: squares of tiny residuals underflow
    perfect = not np.any(resid)
    if ss_tot == 0.0:
        return MetricSet(mse, 1.0 if perfect else -math.inf, mae, r2_degenerate=True)
    r2 = 1.0 - ss_res / ss_tot
    if r2 >= 1.0 and not perfect:
        r2 = math.nextafter(1.0, 0.0)
    return MetricSet(mse, r2, mae)


def improvement_percent(mse_base, mse_new):
    """Relative MSE reduction in percent; negative when the new MSE is worse."""
    if not mse_base > 0:
        raise DataError(f"baseline MSE must be positive, got {mse_base}")
    return 100.0 * (mse_base - mse_new) / mse_base


# -- flattening --------------------------------------------------------------

def flatten(sample: Sample, shape=None):
    """Row-major temporal cells followed by static features."""
    if shape is not None and (sample.temporal.shape != tuple(shape[:2])
                              or sample.static.size != shape[2]):
        raise DataError(f"sample shape {sample.temporal.shape}+{sample.static.size} "
                        f"does not match {tuple(shape)}")
    return np.concatenate([sample.temporal.reshape(-1), sample.static])


def unflatten(vector, shape, sample_id="", target=math.nan):
    t, f_t, f_s = shape
    vector = np.asarray(vector, dtype=float).reshape(-1)
    if vector.size != t * f_t + f_s:
        raise DataError(f"vector of length {vector.size} does not fit shape {tuple(shape)}")
    return Sample(sample_id, vector[: t * f_t].reshape(t, f_t), vector[t * f_t:], target)


def as_flat_inputs(samples, shape=None):
    """Coerce a dataset, sample list, single sample or 2-D array to a design matrix."""
    if isinstance(samples, TemporalDataset):
        if shape is not None and samples.shape != tuple(shape):
            raise DataError(f"dataset shape {samples.shape} does not match model {tuple(shape)}")
        return samples.flat()
    if isinstance(samples, Sample):
        samples = [samples]
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], Sample):
        return np.stack([flatten(s, shape) for s in samples])
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if shape is not None and X.shape[1] != shape[0] * shape[1] + shape[2]:
        raise DataError(f"inputs of width {X.shape[1]} do not match model shape {tuple(shape)}")
    return X


# -- networks ----------------------------------------------------------------

def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class _MLPNet:
    @staticmethod
    def init(rng, shape, config):
        sizes = [shape[0] * shape[1] + shape[2]] + [int(h) for h in config.mlp_hidden] + [1]
        params = {}
        for k in range(len(sizes) - 1):
            params[f"W{k}"] = _glorot(rng, sizes[k], sizes[k + 1])
            params[f"b{k}"] = np.zeros(sizes[k + 1])
        return params

    @staticmethod
    def n_layers(params):
        return sum(1 for k in params if k.startswith("W"))

    @classmethod
    def forward(cls, params, X, shape=None):
        acts = [X]
        n = cls.n_layers(params)
        h = X
        for k in range(n):
            z = h @ params[f"W{k}"] + params[f"b{k}"]
            h = np.tanh(z) if k < n - 1 else z
            acts.append(h)
        return h[:, 0], acts

    @classmethod
    def backward(cls, params, acts, dpred):
        n = cls.n_layers(params)
        grads = {}
        delta = dpred[:, None]
        for k in range(n - 1, -1, -1):
            grads[f"W{k}"] = acts[k].T @ delta
            grads[f"b{k}"] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ params[f"W{k}"].T) * (1.0 - acts[k] ** 2)
        return grads


class _GridConvNet:
    @staticmethod
    def init(rng, shape, config):
        _, _, f_s = shape
        hidden = int(config.mlp_hidden[0])
        taps = CONV_KERNEL * CONV_KERNEL
        return {
            "conv_W": _glorot(rng, taps, CONV_CHANNELS),
            "conv_b": np.zeros(CONV_CHANNELS),
            "W_h": _glorot(rng, CONV_CHANNELS + f_s, hidden),
            "b_h": np.zeros(hidden),
            "W_o": _glorot(rng, hidden, 1),
            "b_o": np.zeros(1),
        }

    @staticmethod
    def forward(params, X, shape):
        t, f_t, f_s = shape
        m = X.shape[0]
        grid = X[:, : t * f_t].reshape(m, t, f_t)
        static = X[:, t * f_t:]
        pad = CONV_KERNEL // 2
        padded = np.pad(grid, ((0, 0), (pad, pad), (pad, pad)))
        # (m, t, f_t, 3, 3) -> (m, t, f_t, 9)
        patches = sliding_window_view(padded, (CONV_KERNEL, CONV_KERNEL), axis=(1, 2))
        patches = patches.reshape(m, t, f_t, -1)
        conv = np.tanh(patches @ params["conv_W"] + params["conv_b"])
        pooled = conv.mean(axis=(1, 2))
        h_in = np.concatenate([pooled, static], axis=1)
        h = np.tanh(h_in @ params["W_h"] + params["b_h"])
        out = h @ params["W_o"] + params["b_o"]
        return out[:, 0], (patches, conv, h_in, h)

    @staticmethod
    def backward(params, cache, dpred):
        patches, conv, h_in, h = cache
        _, t, f_t, _ = conv.shape
        d_out = dpred[:, None]
        grads = {"W_o": h.T @ d_out, "b_o": d_out.sum(axis=0)}
        d_h = (d_out @ params["W_o"].T) * (1.0 - h ** 2)
        grads["W_h"] = h_in.T @ d_h
        grads["b_h"] = d_h.sum(axis=0)
        d_pooled = (d_h @ params["W_h"].T)[:, :CONV_CHANNELS]
        d_conv = np.broadcast_to(d_pooled[:, None, None, :] / (t * f_t), conv.shape)
        d_pre = d_conv * (1.0 - conv ** 2)
        grads["conv_W"] = np.einsum("mtfk,mtfc->kc", patches, d_pre)
        grads["conv_b"] = d_pre.sum(axis=(0, 1, 2))
        return grads


_NETS = {MLP: _MLPNet, GRIDCONV: _GridConvNet}


def loss_and_grad(kind, params, X, y, shape=None):
    """Mean squared error of a network and its gradient w.r.t. every parameter."""
    net = _NETS[kind]
    pred, cache = net.forward(params, X, shape)
    resid = pred - y
    loss = float(np.mean(resid * resid))
    grads = net.backward(params, cache, 2.0 * resid / y.size)
    return loss, grads


# -- trained model -----------------------------------------------------------

class TrainedModel:
    """Immutable fitted regressor; callable on a 2-D array of flattened inputs."""

    def __init__(self, kind, params, input_shape, config=None):
        if kind not in KINDS:
            raise DataError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.params = {k: np.array(v, dtype=float) for k, v in params.items()}
        for v in self.params.values():
            v.setflags(write=False)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.flatten_order = FLATTEN_ORDER
        self.config = config

    @property
    def n_inputs(self):
        t, f_t, f_s = self.input_shape
        return t * f_t + f_s

    def predict_flat(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise DataError(f"model expects {self.n_inputs} inputs, got {X.shape[1]}")
        if self.kind == RIDGE:
            return X @ self.params["coef"] + self.params["intercept"][0]
        pred, _ = _NETS[self.kind].forward(self.params, X, self.input_shape)
        return pred

    __call__ = predict_flat

    def to_dict(self):
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "flatten_order": self.flatten_order,
            "config": self.config.to_dict() if self.config is not None else None,
            "params": {
                name: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                for name, v in self.params.items()
            },
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise DataError("not a model document")
        if d.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported model version {d.get('version')}")
        params = {
            name: np.array(p["values"], dtype=float).reshape(p["shape"])
            for name, p in d["params"].items()
        }
        config = RegressorConfig.from_dict(d["config"]) if d.get("config") else None
        return cls(d["kind"], params, d["input_shape"], config)


def save_model(model: TrainedModel, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=1) + "\n")


def load_model(path) -> TrainedModel:
    return TrainedModel.from_dict(json.loads(Path(path).read_text()))


def predict(model: TrainedModel, samples):
    """One prediction per sample, for a dataset, sample list or flat array."""
    return model.predict_flat(as_flat_inputs(samples, model.input_shape))


# -- training ----------------------------------------------------------------

def _fit_ridge(X, y, lam):
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    coef = weighted_least_squares(Xc, np.ones(len(y)), y - y_mean,
                                  ridge_eps=lam if lam > 0 else 1e-10)
    return {"coef": coef, "intercept": np.array([y_mean - x_mean @ coef])}


def _adam_step(params, grads, state, lr, step, b1=0.9, b2=0.999, eps=1e-8):
    for name, g in grads.items():
        m, v = state[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def _fit_network(kind, X, y, Xv, yv, shape, config):
    net = _NETS[kind]
    params = net.init(derive_rng(config.seed, "init"), shape, config)
    state = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}
    rng = derive_rng(config.seed, "batches")
    n = len(y)
    bs = min(config.batch_size, n)

    def val_mse(p):
        pred, _ = net.forward(p, Xv, shape)
        return float(np.mean((pred - yv) ** 2))

    best_val = math.inf
    best = {k: v.copy() for k, v in params.items()}
    since_best = 0
    step = 0
    halted_by = "max_epochs"
    epoch = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(n)
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                loss, grads = loss_and_grad(kind, params, X[idx], y[idx], shape)
                if not math.isfinite(loss):
                    raise NumericError(f"non-finite training loss at epoch {epoch}",
                                       stage="train")
                step += 1
                _adam_step(params, grads, state, config.learning_rate, step)
            current = val_mse(params)
            if not math.isfinite(current):
                raise NumericError(f"non-finite validation loss at epoch {epoch}", stage="train")
            if current < best_val:
                best_val = current
                best = {k: v.copy() for k, v in params.items()}
                since_best = 0
            else:
                since_best += 1
            if current <= config.stop_threshold:
                halted_by = "threshold"
                break
            if since_best >= config.patience:
                halted_by = "patience"
                break
    return best, epoch, halted_by


def train(dataset_train: TemporalDataset, dataset_val: TemporalDataset | None,
          config: RegressorConfig):
    """Fit a regressor; returns ``(TrainedModel, TrainReport)``.

    ``dataset_val`` drives the halting rule; when None the training set is used.
    """
    config.validate()
    start = time.perf_counter()
    if dataset_train.n_samples == 0:
        raise DataError("training set is empty", stage="train")
    if dataset_val is None:
        dataset_val = dataset_train
    if dataset_val.n_samples == 0:
        raise DataError("validation set is empty", stage="train")
    shape = dataset_train.shape
    if dataset_val.shape != shape:
        raise DataError(f"train shape {shape} != validation shape {dataset_val.shape}")
    X, y = dataset_train.flat(), dataset_train.targets
    Xv, yv = dataset_val.flat(), dataset_val.targets

    if config.kind == RIDGE:
        params = _fit_ridge(X, y, config.ridge_lambda)
        epochs = 1
        model = TrainedModel(RIDGE, params, shape, config)
        val = float(np.mean((model.predict_flat(Xv) - yv) ** 2))
        halted_by = "threshold" if val <= config.stop_threshold else "max_epochs"
    else:
        params, epochs, halted_by = _fit_network(config.kind, X, y, Xv, yv, shape, config)
        model = TrainedModel(config.kind, params, shape, config)
        val = float(np.mean((model.predict_flat(Xv) - yv) ** 2))
    train_mse = float(np.mean((model.predict_flat(X) - y) ** 2))
    if not (math.isfinite(train_mse) and math.isfinite(val)):
        raise NumericError(f"non-finite loss after epoch {epochs}", stage="train")
    elapsed = time.perf_counter() - start
    return model, TrainReport(epochs, elapsed, train_mse, val, halted_by)
