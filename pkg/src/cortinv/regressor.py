"""Feed-forward ReLU regressor from context-stacked features to the six TVs.

Plain numpy: forward pass with inverted dropout, reverse-mode gradients of
the mean squared error, Adam, and a mini-batch training loop that keeps the
parameters with the lowest development-set error. Features and targets are
z-scored with training-set statistics stored in the model; the loss lives
in the normalized target space so all six TVs weigh the same.
"""

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ChecksumError, DataError
from .signal_io import FRAME_PERIOD, TV_NAMES, TvTrajectory

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_layers: int = 6
    hidden_width: int = 512
    output_dim: int = 6
    dropout_input: float = 0.1
    dropout_hidden: float = 0.2

    def __post_init__(self):
        if min(self.input_dim, self.hidden_layers, self.hidden_width, self.output_dim) < 1:
            raise ValueError("architecture dimensions must be positive")
        for p in (self.dropout_input, self.dropout_hidden):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probability {p} outside [0, 1)")

    @property
    def layer_sizes(self):
        return (self.input_dim,) + (self.hidden_width,) * self.hidden_layers + (self.output_dim,)

    @property
    def n_params(self):
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(eq=False)
class MlpModel:
    arch: MlpArchitecture
    weights: list
    biases: list
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def params(self):
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self):
        return MlpModel(
            self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            self.feature_mean.copy(), self.feature_std.copy(),
            self.target_mean.copy(), self.target_std.copy(), dict(self.provenance),
        )


def init_mlp(arch, seed=0, dtype=np.float32):
    """He-normal weights for ReLU layers, fan-in normal for the output; zero biases."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = 1.0 if i == len(sizes) - 2 else 2.0
        weights.append((rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(
        arch, weights, biases,
        np.zeros(arch.input_dim, dtype), np.ones(arch.input_dim, dtype),
        np.zeros(arch.output_dim, dtype), np.ones(arch.output_dim, dtype),
        {"seed": int(seed)},
    )


def _check_width(model, x):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != model.arch.input_dim:
        raise DataError(f"expected (N, {model.arch.input_dim}) features, got {x.shape}")
    return x


def normalize_features(model, x):
    x = np.asarray(x, dtype=model.dtype)
    return (x - model.feature_mean) / model.feature_std


def _dropout_mask(rng, shape, p, dtype):
    if rng is None or p == 0.0:
        return None
    return ((rng.random(shape) >= p) / (1.0 - p)).astype(dtype)


def _forward_normalized(model, xn, rng=None):
    """Normalized outputs plus the per-layer cache (inputs, pre-activations, masks)."""
    arch = model.arch
    a = xn
    mask = _dropout_mask(rng, a.shape, arch.dropout_input, model.dtype)
    if mask is not None:
        a = a * mask
    cache = []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        cache.append((a, z, mask))
        if i == last:
            return z, cache
        a = np.maximum(z, 0)
        mask = _dropout_mask(rng, a.shape, arch.dropout_hidden, model.dtype)
        if mask is not None:
            a = a * mask


def forward(model, x, train=False, rng=None):
    """Predictions in TV units. ``train=True`` applies dropout drawn from ``rng``."""
    x = _check_width(model, x)
    if train and rng is None:
        raise ValueError("train-mode forward needs a random generator")
    out, _ = _forward_normalized(model, normalize_features(model, x), rng if train else None)
    return out * model.target_std + model.target_mean


def _loss_and_grads_normalized(model, xn, yn, rng=None):
    out, cache = _forward_normalized(model, xn, rng)
    resid = out - yn
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    delta = (2.0 / resid.size) * resid
    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        a, _, mask = cache[i]
        grads[2 * i] = a.T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0:
            break
        # back through the dropout mask and the ReLU that produced this layer's input
        delta = delta @ model.weights[i].T
        if mask is not None:
            delta = delta * mask
        delta = delta * (cache[i - 1][1] > 0)
    return loss, grads


def loss_and_grads(model, x, targets, rng=None):
    """MSE over all N*6 entries in normalized target space and its gradients.

    Gradients follow the ``model.params`` order. Passing ``rng`` runs the
    forward pass in train mode, sharing its dropout masks with the gradients.
    """
    x = _check_width(model, x)
    targets = np.asarray(targets, dtype=model.dtype)
    if targets.shape != (x.shape[0], model.arch.output_dim):
        raise DataError(f"targets shape {targets.shape} does not match {x.shape[0]} rows")
    yn = (targets - model.target_mean) / model.target_std
    return _loss_and_grads_normalized(model, normalize_features(model, x), yn, rng)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size and max_epochs must be >= 1, patience >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state, config=TrainConfig()):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.dtype)
    return params, state


@dataclass
class TrainReport:
    train_mse: list
    dev_mse: list
    best_epoch: int
    best_dev_mse: float
    seconds: list = field(default_factory=list, compare=False)

    @property
    def wall_time(self):
        return float(sum(self.seconds))

    def log_rows(self):
        return [(e + 1, tr, dv, s) for e, (tr, dv, s) in
                enumerate(zip(self.train_mse, self.dev_mse, self.seconds))]


def _eval_mse(model, xn, yn, chunk=4096):
    total = 0.0
    for start in range(0, len(xn), chunk):
        out, _ = _forward_normalized(model, xn[start:start + chunk])
        total += float(np.sum((out - yn[start:start + chunk]).astype(np.float64) ** 2))
    return total / yn.size


def dev_mse(model, x, targets):
    """Eval-mode MSE in normalized target space."""
    x = _check_width(model, x)
    yn = (np.asarray(targets, dtype=model.dtype) - model.target_mean) / model.target_std
    return _eval_mse(model, normalize_features(model, x), yn)


def train(arch, x_train, y_train, x_dev, y_dev, config=TrainConfig(), dtype=np.float32,
          provenance=None, log=None):
    """Mini-batch Adam training with dev-set model selection and early stopping.

    Returns the parameters from the epoch with the lowest dev MSE, plus the
    per-epoch report. ``log`` (if given) is called with each epoch's row.
    """
    x_train, x_dev = np.asarray(x_train), np.asarray(x_dev)
    y_train, y_dev = np.asarray(y_train, dtype=np.float64), np.asarray(y_dev, dtype=np.float64)
    if len(x_train) == 0 or len(x_dev) == 0:
        raise DataError("training and development sets must be nonempty")
    if x_train.shape[1] != arch.input_dim or x_dev.shape[1] != arch.input_dim:
        raise DataError(f"feature width does not match input_dim {arch.input_dim}")
    if y_train.shape != (len(x_train), arch.output_dim) or y_dev.shape != (len(x_dev), arch.output_dim):
        raise DataError("target shapes do not match features")

    limits = threadpool_limits(1) if config.deterministic else None
    try:
        model = init_mlp(arch, config.seed, dtype)
        xs = np.asarray(x_train, dtype=np.float64)
        model.feature_mean = xs.mean(axis=0).astype(dtype)
        model.feature_std = np.maximum(xs.std(axis=0), STD_FLOOR).astype(dtype)
        model.target_mean = y_train.mean(axis=0).astype(dtype)
        model.target_std = np.maximum(y_train.std(axis=0), STD_FLOOR).astype(dtype)
        del xs
        model.provenance = dict(provenance or {}, seed=int(config.seed))

        xn = normalize_features(model, x_train)
        yn = ((y_train.astype(dtype) - model.target_mean) / model.target_std).astype(dtype)
        xdn = normalize_features(model, x_dev)
        ydn = ((y_dev.astype(dtype) - model.target_mean) / model.target_std).astype(dtype)

        rng = np.random.default_rng(config.seed)
        params = model.params
        state = AdamState.zeros_like(params)
        report = TrainReport([], [], 0, float("inf"))
        best = model.copy()
        since_best = 0
        for epoch in range(config.max_epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(xn))
            total, count = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grads = _loss_and_grads_normalized(model, xn[idx], yn[idx], rng)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch + 1}, batch {start // config.batch_size}"
                    )
                adam_step(params, grads, state, config)
                total += loss * len(idx)
                count += len(idx)
            dev = _eval_mse(model, xdn, ydn)
            report.train_mse.append(total / count)
            report.dev_mse.append(dev)
            report.seconds.append(time.perf_counter() - t0)
            if log is not None:
                log(report.log_rows()[-1])
            if dev < report.best_dev_mse:
                report.best_dev_mse = dev
                report.best_epoch = epoch + 1
                best = model.copy()
                since_best = 0
            else:
                since_best += 1
                if since_best > config.patience:
                    break
        best.provenance["epochs"] = len(report.dev_mse)
        best.provenance["best_epoch"] = report.best_epoch
        return best, report
    finally:
        if limits is not None:
            limits.unregister()


def predict(model, features):
    """Eval-mode predictions as a TV trajectory (not smoothed)."""
    features = np.asarray(features)
    if features.ndim == 2 and features.shape[0] == 0:
        return TvTrajectory(np.zeros((0, len(TV_NAMES))), FRAME_PERIOD)
    out = forward(model, features)
    return TvTrajectory(out.astype(np.float64), FRAME_PERIOD)


# --------------------------------------------------------------------------
# checkpoint file: "MLP1", u16 version, u32 header length, JSON header,
# little-endian f32 arrays, trailing u64 checksum of everything before it

_MAGIC = b"MLP1"
_VERSION = 1


def _checksum(payload):
    return struct.unpack("<Q", hashlib.blake2b(payload, digest_size=8).digest())[0]


def model_to_bytes(model):
    header = json.dumps(
        {"arch": asdict(model.arch), "provenance": model.provenance, "dtype": "f32"},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    parts = [_MAGIC, struct.pack("<HI", _VERSION, len(header)), header]
    arrays = [model.feature_mean, model.feature_std, model.target_mean, model.target_std] + model.params
    parts += [np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays]
    payload = b"".join(parts)
    return payload + struct.pack("<Q", _checksum(payload))


def model_from_bytes(data):
    if len(data) < 18 or data[:4] != _MAGIC:
        raise DataError("not an MLP1 checkpoint")
    payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if _checksum(payload) != stored:
        raise ChecksumError("checkpoint checksum mismatch (truncated or corrupt file)")
    version, header_len = struct.unpack("<HI", payload[4:10])
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    header = json.loads(payload[10:10 + header_len].decode("utf-8"))
    arch = MlpArchitecture(**header["arch"])
    flat = np.frombuffer(payload[10 + header_len:], dtype="<f4")
    sizes = arch.layer_sizes
    shapes = [(arch.input_dim,)] * 2 + [(arch.output_dim,)] * 2
    for a, b in zip(sizes[:-1], sizes[1:]):
        shapes += [(a, b), (b,)]
    if flat.size != sum(int(np.prod(s)) for s in shapes):
        raise DataError("checkpoint body does not match its architecture header")
    arrays, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(flat[pos:pos + n].reshape(s).astype(np.float32))
        pos += n
    return MlpModel(arch, arrays[4::2], arrays[5::2], arrays[0], arrays[1], arrays[2], arrays[3],
                    header["provenance"])


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
