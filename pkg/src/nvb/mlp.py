"""Fully connected regression network written directly in numpy.

ReLU hidden layers, sigmoid output, MSE loss, Adam with decoupled weight
decay, inverted dropout. Parameters live in one flat buffer (W then b for
each layer) so the optimizer and checkpoints handle a single array.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .dataset import FormatError
from .physics import N_RESONANCES

MAGIC = b"NVML"
VERSION = 1
_HEADER = struct.Struct("<4sI4I")

LEARNING_RATES = (1e-2, 1e-3, 1e-4)
BATCH_SIZES = (2, 4, 8, 16, 32)
DROPOUTS = (0.0, 0.2, 0.5)
WEIGHT_DECAYS = (0.0, 1e-6, 1e-5, 1e-4, 1e-3)
MAX_EPOCHS = 100


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_layers: int
    hidden_width: int
    output_dim: int = N_RESONANCES

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("input_dim, hidden_layers and hidden_width must be >= 1")
        if self.output_dim != N_RESONANCES:
            raise ValueError(f"output_dim must be {N_RESONANCES}")

    @property
    def sizes(self) -> List[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    dropout_rate: float = 0.0
    weight_decay: float = 0.0
    max_epochs: int = MAX_EPOCHS
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 1 <= self.max_epochs <= MAX_EPOCHS:
            raise ValueError(f"max_epochs must lie in [1, {MAX_EPOCHS}]")


@dataclass
class TrainRecord:
    train_loss: List[float] = field(default_factory=list)
    valid_mae_mhz: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_mae_mhz: float = float("inf")

    def to_json(self) -> dict:
        return asdict(self)


class MlpModel:
    """Weights ``W[l]`` of shape (k_{l-1}, k_l) and biases ``b[l]``, as views into ``flat``."""

    def __init__(self, arch: Architecture, flat: Optional[np.ndarray] = None, dtype=np.float32):
        self.arch = arch
        if flat is None:
            flat = np.zeros(arch.n_params, dtype=dtype)
        if flat.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got {flat.shape}")
        self.flat = flat
        self.weights, self.biases = _views(arch, flat)

    @property
    def dtype(self):
        return self.flat.dtype

    def copy(self) -> "MlpModel":
        return MlpModel(self.arch, self.flat.copy())

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(self.arch, self.flat.astype(dtype))

    def predict(self, x: np.ndarray, batch: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        return np.concatenate([forward(self, x[i : i + batch]) for i in range(0, len(x), batch)])


def _views(arch: Architecture, flat: np.ndarray):
    weights, biases = [], []
    offset = 0
    sizes = arch.sizes
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[offset : offset + a * b].reshape(a, b))
        offset += a * b
        biases.append(flat[offset : offset + b])
        offset += b
    return weights, biases


def init_model(arch: Architecture, seed: int = 0, dtype=np.float32) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    model = MlpModel(arch, dtype=dtype)
    for w in model.weights:
        fan_in, fan_out = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return model


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]  # input to each layer (post-dropout for hidden)
    pre: List[np.ndarray]  # pre-activations
    masks: List[Optional[np.ndarray]]  # scaled dropout masks per hidden layer
    output: np.ndarray


def forward(
    model: MlpModel,
    x: np.ndarray,
    train_mode: bool = False,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    return_cache: bool = False,
):
    x = np.asarray(x, dtype=model.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != model.arch.input_dim:
        raise ValueError(f"input has {x.shape[1]} features, model expects {model.arch.input_dim}")
    use_dropout = train_mode and dropout_rate > 0
    if use_dropout and rng is None:
        raise ValueError("dropout in train mode needs an rng")

    inputs, pre, masks = [], [], []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        if i == last:
            h = sigmoid(z)
            break
        h = np.maximum(z, 0)
        mask = None
        if use_dropout:
            keep = rng.random(h.shape) >= dropout_rate
            mask = keep.astype(model.dtype) / model.dtype.type(1.0 - dropout_rate)
            h = h * mask
        masks.append(mask)
    out = h[0] if squeeze else h
    if return_cache:
        return out, ForwardCache(inputs, pre, masks, h)
    return out


def mse_loss(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    d = pred - truth
    return float(np.mean(d * d))


def mae(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.abs(pred - truth)))


def backward(model: MlpModel, cache: ForwardCache, truth: np.ndarray, weight_decay: float = 0.0) -> np.ndarray:
    """Gradient of MSE (+ weight_decay/2 * ||theta||^2) as a flat array matching ``model.flat``.

    Training passes ``weight_decay=0`` here and applies decay in the optimizer.
    """
    truth = np.asarray(truth, dtype=model.dtype).reshape(cache.output.shape)
    y = cache.output
    grad = np.empty_like(model.flat)
    gw, gb = _views(model.arch, grad)
    delta = (2.0 / y.size) * (y - truth) * y * (1.0 - y)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i][...] = cache.inputs[i].T @ delta
        gb[i][...] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ model.weights[i].T
        mask = cache.masks[i - 1]
        if mask is not None:
            delta = delta * mask
        delta = delta * (cache.pre[i - 1] > 0)
    if weight_decay:
        grad += weight_decay * model.flat
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params))


try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _adam_numpy(params, grad, m, v, b1, b2, step, eps_t, decay):
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    if decay:
        params -= decay * params
    params -= step * m / (np.sqrt(v) + eps_t)


if njit is not None:

    @njit(cache=True, fastmath=False)
    def _adam_kernel(params, grad, m, v, b1, b2, step, eps_t, decay):
        for i in range(params.size):
            g = grad[i]
            mi = b1 * m[i] + (1.0 - b1) * g
            vi = b2 * v[i] + (1.0 - b2) * g * g
            m[i] = mi
            v[i] = vi
            p = params[i]
            if decay != 0.0:
                p = p - decay * p
            params[i] = p - step * mi / (np.sqrt(vi) + eps_t)

else:  # pragma: no cover
    _adam_kernel = _adam_numpy


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """In-place Adam update with decoupled weight decay.

    Bias correction is folded into the step size and epsilon, which is
    algebraically identical to dividing m and v by (1 - beta^t).
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c2 = np.sqrt(1.0 - b2**t)
    step = lr * c2 / (1.0 - b1**t)
    _adam_kernel(params, grad, state.m, state.v, b1, b2, step, state.eps * c2, lr * weight_decay)


class Trainer:
    """Minibatch Adam training that can be advanced a few epochs at a time.

    Keeps a snapshot of the parameters with the lowest validation MAE.
    """

    def __init__(
        self,
        model: MlpModel,
        train_x: np.ndarray,
        train_y: np.ndarray,
        valid_x: np.ndarray,
        valid_y: np.ndarray,
        config: TrainConfig,
        target_span_mhz: float = 600.0,
    ):
        for x in (train_x, valid_x):
            if x.shape[1] != model.arch.input_dim:
                raise ValueError(f"data has {x.shape[1]} points, model expects {model.arch.input_dim}")
        self.model = model
        dt = model.dtype
        self.train_x = np.ascontiguousarray(train_x, dtype=dt)
        self.train_y = np.ascontiguousarray(train_y, dtype=dt)
        self.valid_x = np.ascontiguousarray(valid_x, dtype=dt)
        self.valid_y = np.asarray(valid_y, dtype=np.float64)
        self.config = config
        self.span = target_span_mhz
        self.adam = AdamState.zeros_like(model.flat)
        self.rng = np.random.default_rng([config.seed, 1])
        self.record = TrainRecord()
        self.best = model.copy()
        self.epoch = 0

    def validation_mae(self, model: Optional[MlpModel] = None) -> float:
        model = model or self.model
        return mae(model.predict(self.valid_x), self.valid_y) * self.span

    def run(self, n_epochs: int) -> TrainRecord:
        cfg = self.config
        n = len(self.train_x)
        bs = cfg.batch_size
        stop = min(self.epoch + n_epochs, cfg.max_epochs)
        while self.epoch < stop:
            order = self.rng.permutation(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                xb, yb = self.train_x[idx], self.train_y[idx]
                out, cache = forward(self.model, xb, True, cfg.dropout_rate, self.rng, return_cache=True)
                d = out - yb
                total += float(np.sum(d * d))
                grad = backward(self.model, cache, yb)
                adam_step(self.model.flat, grad, self.adam, cfg.learning_rate, cfg.weight_decay)
            loss = total / self.train_y.size
            if not np.isfinite(loss) or not np.all(np.isfinite(self.model.flat)):
                raise TrainingDiverged(f"non-finite training loss at epoch {self.epoch + 1}")
            v = self.validation_mae()
            self.record.train_loss.append(loss)
            self.record.valid_mae_mhz.append(v)
            if v < self.record.best_valid_mae_mhz:
                self.record.best_valid_mae_mhz = v
                self.record.best_epoch = self.epoch
                self.best.flat[...] = self.model.flat
            self.epoch += 1
        return self.record

    @property
    def done(self) -> bool:
        return self.epoch >= self.config.max_epochs


def train(
    model: MlpModel,
    train_set: Tuple[np.ndarray, np.ndarray],
    valid_set: Tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    target_span_mhz: float = 600.0,
) -> Tuple[MlpModel, TrainRecord]:
    """Train for ``config.max_epochs`` and return the best-on-validation model.

    Inputs and targets must already be normalized to [0, 1]; validation MAE
    is reported in MHz via ``target_span_mhz``.
    """
    trainer = Trainer(model, *train_set, *valid_set, config, target_span_mhz)
    trainer.run(config.max_epochs)
    return trainer.best, trainer.record


# --- checkpoints ---------------------------------------------------------------


def save_model(model: MlpModel, path, config: Optional[TrainConfig] = None, record: Optional[TrainRecord] = None, extra=None) -> Path:
    path = Path(path)
    a = model.arch
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, a.input_dim, a.hidden_layers, a.hidden_width, a.output_dim))
        fh.write(model.flat.astype("<f4").tobytes())
    sidecar = {
        "architecture": asdict(a),
        "train_config": asdict(config) if config is not None else None,
        "train_record": record.to_json() if record is not None else None,
    }
    if extra:
        sidecar.update(extra)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))
    return path


def load_model(path) -> MlpModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at offset {len(data)} (need {_HEADER.size} bytes)")
    magic, version, n_in, n_layers, width, n_out = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: version {version} at offset 4, expected {VERSION}")
    arch = Architecture(n_in, n_layers, width, n_out)
    expected = _HEADER.size + 4 * arch.n_params
    if len(data) != expected:
        raise FormatError(f"{path}: truncated payload, {len(data)} bytes but expected {expected}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).astype(np.float32)
    return MlpModel(arch, flat)


def load_sidecar(path) -> dict:
    return json.loads(Path(path).with_suffix(".json").read_text())
