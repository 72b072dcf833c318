"""Minimal dense-tensor CNN: forward, backprop, Adam, checkpoints.

The default network consumes 14x14x4 feature maps and stacks
conv16 -> pool -> conv16 -> conv32 -> pool -> flatten -> 300 -> 100 -> C,
with ReLU after every conv and hidden dense layer, dropout 0.2 after each
hidden dense layer, and a softmax/cross-entropy head. Convolutions are
2x2 cross-correlations with SAME padding (pad bottom/right), stride 1;
pools are 2x2/stride 2 with floor semantics.

Everything runs in float64 so gradients can be validated against central
finite differences. Training is bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheError, ConfigError
from .rng import make_rng


def _glorot_uniform(rng: np.random.Generator, shape, fan_in, fan_out) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv2D:
    """2x2 same-padded cross-correlation, stride 1, NHWC."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = 2 * 2 * in_channels
        fan_out = 2 * 2 * out_channels
        self.w = _glorot_uniform(rng, (2, 2, in_channels, out_channels), fan_in, fan_out)
        self.b = np.zeros(out_channels)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x_pad = None

    def forward(self, x, train=False, rng=None):
        if x.shape[3] != self.in_channels:
            raise ConfigError(f"conv expects {self.in_channels} input channels, got {x.shape[3]}")
        n, h, w_dim, _ = x.shape
        x_pad = np.pad(x, ((0, 0), (0, 1), (0, 1), (0, 0)))
        out = np.tile(self.b, (n, h, w_dim, 1))
        for di in range(2):
            for dj in range(2):
                window = x_pad[:, di:di + h, dj:dj + w_dim, :]
                out += window @ self.w[di, dj]
        self._x_pad = x_pad
        return out

    def backward(self, grad):
        n, h, w_dim, _ = grad.shape
        x_pad = self._x_pad
        dx_pad = np.zeros_like(x_pad)
        self.db = grad.sum(axis=(0, 1, 2))
        for di in range(2):
            for dj in range(2):
                window = x_pad[:, di:di + h, dj:dj + w_dim, :]
                self.dw[di, dj] = np.einsum("nhwc,nhwf->cf", window, grad)
                dx_pad[:, di:di + h, dj:dj + w_dim, :] += grad @ self.w[di, dj].T
        return dx_pad[:, :h, :w_dim, :]

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return grad * self._mask


class MaxPool2x2:
    """2x2 max pooling with stride 2; trailing odd row/column is dropped."""

    def __init__(self):
        self._shape = None
        self._argmax = None

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        if h < 2 or w < 2:
            raise ConfigError(f"maxpool needs spatial dims >= 2, got {h}x{w}")
        h2, w2 = h // 2, w // 2
        windows = (
            x[:, : h2 * 2, : w2 * 2, :]
            .reshape(n, h2, 2, w2, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, h2, w2, c, 4)
        )
        self._shape = x.shape
        self._argmax = windows.argmax(axis=-1)
        return np.take_along_axis(windows, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, h, w, c = self._shape
        h2, w2 = h // 2, w // 2
        dwin = np.zeros((n, h2, w2, c, 4))
        np.put_along_axis(dwin, self._argmax[..., None], grad[..., None], axis=-1)
        dx = np.zeros((n, h, w, c))
        dx[:, : h2 * 2, : w2 * 2, :] = (
            dwin.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h2 * 2, w2 * 2, c)
        )
        return dx


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = _glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        self.b = np.zeros(out_dim)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x, train=False, rng=None):
        if x.shape[1] != self.in_dim:
            raise ConfigError(f"dense expects input dim {self.in_dim}, got {x.shape[1]}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad):
        self.dw = self._x.T @ grad
        self.db = grad.sum(axis=0)
        return grad @ self.w.T

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


class Dropout:
    """Inverted dropout: survivors are rescaled at train time, eval is identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ConfigError("dropout in train mode needs an RNG")
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of max-stabilized softmax; returns (loss, probs)."""
    if logits.shape[1] < 2:
        raise ConfigError("need at least 2 classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -float(log_probs[np.arange(len(labels)), labels].mean())
    return loss, np.exp(log_probs)


def cross_entropy_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean loss)/d(logits) = (probs - onehot) / N."""
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


class Network:
    """The fixed conv/pool/dense stack, sized by channel and unit tuples.

    Defaults materialize the production model: parameter counts per
    trainable layer are (272, 1040, 2080, 86700, 30100, 202), 120394 total
    for two classes.
    """

    def __init__(
        self,
        n_classes: int = 2,
        seed: int = 0,
        input_shape: tuple[int, int, int] = (14, 14, 4),
        conv_channels: tuple[int, int, int] = (16, 16, 32),
        dense_units: tuple[int, int] = (300, 100),
        dropout_rate: float = 0.2,
    ):
        if n_classes < 2:
            raise ConfigError("need at least 2 classes")
        h, w, c = input_shape
        f1, f2, f3 = conv_channels
        d1, d2 = dense_units
        flat = (h // 2 // 2) * (w // 2 // 2) * f3
        if flat < 1:
            raise ConfigError(f"input shape {input_shape} too small for two pooling stages")
        rng = make_rng(seed, "init")
        self.n_classes = n_classes
        self.input_shape = input_shape
        self.conv_channels = conv_channels
        self.dense_units = dense_units
        self.dropout_rate = dropout_rate
        self.layers = [
            Conv2D(c, f1, rng),
            ReLU(),
            MaxPool2x2(),
            Conv2D(f1, f2, rng),
            ReLU(),
            Conv2D(f2, f3, rng),
            ReLU(),
            MaxPool2x2(),
            Flatten(),
            Dense(flat, d1, rng),
            ReLU(),
            Dropout(dropout_rate),
            Dense(d1, d2, rng),
            ReLU(),
            Dropout(dropout_rate),
            Dense(d2, n_classes, rng),
        ]

    def forward(self, x, train=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ConfigError(f"expected batch of shape (N, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dlogits):
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if hasattr(layer, "params"):
                out.extend(layer.params())
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if hasattr(layer, "grads"):
                out.extend(layer.grads())
        return out

    def layer_parameter_counts(self) -> list[int]:
        return [
            sum(p.size for p in layer.params())
            for layer in self.layers
            if hasattr(layer, "params")
        ]

    def parameter_count(self) -> int:
        return sum(self.layer_parameter_counts())


class Adam:
    """Adam with bias correction; one shared step counter for all tensors."""

    def __init__(self, params: list[np.ndarray], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ConfigError("gradient list does not match parameter list")
        self.step_count += 1
        t = self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** t)
            v_hat = self.v[i] / (1 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


def evaluate(model: Network, x, y, batch_size: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy in eval mode (no dropout)."""
    y = np.asarray(y)
    total_loss = 0.0
    correct = 0
    for start in range(0, len(y), batch_size):
        xb = x[start:start + batch_size]
        yb = y[start:start + batch_size]
        loss, probs = softmax_cross_entropy(model.forward(xb), yb)
        total_loss += loss * len(yb)
        correct += int((probs.argmax(axis=1) == yb).sum())
    n = len(y)
    return total_loss / n, correct / n


def train(
    model: Network,
    train_x,
    train_y,
    *,
    epochs: int = 20,
    batch_size: int = 32,
    lr: float = 1e-4,
    seed: int = 0,
    test_x=None,
    test_y=None,
) -> list[EpochStats]:
    """Train in place; returns the per-epoch log.

    Shuffling and dropout masks derive from (seed, stage, epoch), so a
    fixed seed gives a bit-identical trajectory.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    n = len(train_y)
    if n == 0:
        raise ConfigError("empty training set")
    if train_x.shape[1:] != model.input_shape:
        raise ConfigError(
            f"training features {train_x.shape[1:]} do not match model input {model.input_shape}")
    if train_y.min() < 0 or train_y.max() >= model.n_classes:
        raise ConfigError("labels out of range for model class count")

    optimizer = Adam(model.parameters(), lr=lr)
    log: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        order = make_rng(seed, "shuffle", epoch).permutation(n)
        drop_rng = make_rng(seed, "dropout", epoch)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = train_x[idx], train_y[idx]
            logits = model.forward(xb, train=True, rng=drop_rng)
            loss, probs = softmax_cross_entropy(logits, yb)
            model.backward(cross_entropy_grad(probs, yb))
            optimizer.step(model.gradients())
            epoch_loss += loss * len(yb)
            correct += int((probs.argmax(axis=1) == yb).sum())
        test_loss, test_acc = (
            evaluate(model, test_x, test_y) if test_x is not None else (float("nan"), float("nan"))
        )
        log.append(EpochStats(epoch, epoch_loss / n, correct / n, test_loss, test_acc))
    return log


def predict_proba(model: Network, features, batch_size: int = 256) -> np.ndarray:
    """Class probabilities (rows sum to 1) in eval mode."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 3:
        features = features[None]
    chunks = [
        softmax(model.forward(features[s:s + batch_size]))
        for s in range(0, len(features), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# checkpoint format (QVM1)
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"QVM1"
CHECKPOINT_VERSION = 1


def save_model(model: Network, path) -> None:
    """Binary little-endian checkpoint: spec table, then float64 tensors."""
    import os

    path = os.fspath(path)
    tmp = path + ".tmp"
    params = model.parameters()
    try:
        with open(tmp, "wb") as f:
            f.write(struct.pack("<4sI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
            h, w, c = model.input_shape
            f.write(struct.pack("<IIII", model.n_classes, h, w, c))
            f.write(struct.pack("<I", len(model.conv_channels)))
            f.write(struct.pack(f"<{len(model.conv_channels)}I", *model.conv_channels))
            f.write(struct.pack("<I", len(model.dense_units)))
            f.write(struct.pack(f"<{len(model.dense_units)}I", *model.dense_units))
            f.write(struct.pack("<d", model.dropout_rate))
            f.write(struct.pack("<I", len(params)))
            for p in params:
                f.write(struct.pack("<I", p.ndim))
                f.write(struct.pack(f"<{p.ndim}I", *p.shape))
                f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _read(f, fmt: str):
    size = struct.calcsize(fmt)
    buf = f.read(size)
    if len(buf) != size:
        raise CacheError("truncated checkpoint file")
    return struct.unpack(fmt, buf)


def load_model(path) -> Network:
    with open(path, "rb") as f:
        magic, version = _read(f, "<4sI")
        if magic != CHECKPOINT_MAGIC:
            raise CacheError(f"bad magic {magic!r}; not a QVM1 checkpoint")
        if version != CHECKPOINT_VERSION:
            raise CacheError(f"unsupported checkpoint version {version}")
        n_classes, h, w, c = _read(f, "<IIII")
        (n_conv,) = _read(f, "<I")
        conv_channels = _read(f, f"<{n_conv}I")
        (n_dense,) = _read(f, "<I")
        dense_units = _read(f, f"<{n_dense}I")
        (dropout_rate,) = _read(f, "<d")
        model = Network(
            n_classes=n_classes,
            input_shape=(h, w, c),
            conv_channels=tuple(conv_channels),
            dense_units=tuple(dense_units),
            dropout_rate=dropout_rate,
        )
        params = model.parameters()
        (n_tensors,) = _read(f, "<I")
        if n_tensors != len(params):
            raise CacheError(f"checkpoint has {n_tensors} tensors, model needs {len(params)}")
        for p in params:
            (ndim,) = _read(f, "<I")
            shape = _read(f, f"<{ndim}I")
            if tuple(shape) != p.shape:
                raise CacheError(f"checkpoint tensor shape {shape} != expected {p.shape}")
            buf = f.read(8 * p.size)
            if len(buf) != 8 * p.size:
                raise CacheError("truncated checkpoint tensor data")
            p[...] = np.frombuffer(buf, dtype="<f8").reshape(p.shape)
        if f.read(1):
            raise CacheError("trailing bytes after final tensor")
    return model
