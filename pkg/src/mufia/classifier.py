"""A small convolutional victim network written directly in numpy.

Architecture (NHWC layout)::

    conv 3x3, 3->16,  stride 1, pad 1, ReLU
    conv 3x3, 16->32, stride 2, pad 1, ReLU
    conv 3x3, 32->32, stride 2, pad 1, ReLU
    global average pool
    dense 32->k

The network computes in the dtype of its weights: float32 for training and
attacks, float64 when checking gradients against finite differences.
"""

import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .optim import Adam
from .validation import check_images, check_labels

MAGIC = b"MUFIAW01"

# (name, stride) for each convolution
CONV_LAYERS = (("conv1", 1), ("conv2", 2), ("conv3", 2))
CONV_CHANNELS = (3, 16, 32, 32)

# Serialization order.  Kernels are stored as [kh][kw][c_in][c_out].
PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b", "fc_w", "fc_b")


@dataclass(frozen=True)
class NetworkSpec:
    side: int
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.side < 4 or self.side % 4:
            raise ValueError(f"input side must be a positive multiple of 4, got {self.side}")

    def param_shapes(self):
        shapes = {}
        for (name, _), c_in, c_out in zip(CONV_LAYERS, CONV_CHANNELS[:-1], CONV_CHANNELS[1:]):
            shapes[f"{name}_w"] = (3, 3, c_in, c_out)
            shapes[f"{name}_b"] = (c_out,)
        shapes["fc_w"] = (CONV_CHANNELS[-1], self.num_classes)
        shapes["fc_b"] = (self.num_classes,)
        return {name: shapes[name] for name in PARAM_ORDER}

    def parameter_count(self):
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


@dataclass
class ClassifierWeights:
    spec: NetworkSpec
    params: dict

    @property
    def dtype(self):
        return self.params["fc_w"].dtype

    def astype(self, dtype):
        return ClassifierWeights(self.spec, {k: v.astype(dtype) for k, v in self.params.items()})

    def flat(self):
        return np.concatenate([self.params[name].ravel() for name in PARAM_ORDER])

    def equals(self, other):
        return self.spec == other.spec and all(
            np.array_equal(self.params[k], other.params[k]) for k in PARAM_ORDER
        )


def init_weights(spec, seed, dtype=np.float32):
    """Kaiming-uniform (fan-in) kernels, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ClassifierWeights(spec, params)


def _conv_forward(x, w, b, stride):
    n, h, wd, c = x.shape
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, ho, wo, 3, 3, c), dtype=x.dtype)
    for kh in range(3):
        for kw in range(3):
            cols[:, :, :, kh, kw, :] = xp[:, kh:kh + stride * ho:stride, kw:kw + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, 9 * c)
    out = cols @ w.reshape(9 * c, -1) + b
    return out.reshape(n, ho, wo, -1), cols


def _conv_backward(dout, cols, w, x_shape, stride, need_params):
    n, h, wd, c = x_shape
    _, ho, wo, c_out = dout.shape
    d2 = dout.reshape(-1, c_out)
    dw = db = None
    if need_params:
        dw = (cols.T @ d2).reshape(w.shape)
        db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(9 * c, c_out).T).reshape(n, ho, wo, 3, 3, c)
    dxp = np.zeros((n, h + 2, wd + 2, c), dtype=dout.dtype)
    for kh in range(3):
        for kw in range(3):
            dxp[:, kh:kh + stride * ho:stride, kw:kw + stride * wo:stride, :] += dcols[:, :, :, kh, kw, :]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def forward(weights, images):
    """Logits for one image ``(H, W, 3)`` or a batch ``(n, H, W, 3)``.

    Returns ``(logits, cache)``; the cache feeds :func:`backward`.
    """
    p = weights.params
    x = np.asarray(images, dtype=weights.dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    side = weights.spec.side
    if x.ndim != 4 or x.shape[1:] != (side, side, 3):
        raise ValueError(f"expected images of shape ({side}, {side}, 3), got {x.shape[1:]}")
    acts = []
    h = x
    for name, stride in CONV_LAYERS:
        z, cols = _conv_forward(h, p[f"{name}_w"], p[f"{name}_b"], stride)
        acts.append((h.shape, cols, z > 0))
        h = np.maximum(z, 0)
    pooled = h.mean(axis=(1, 2))
    logits = pooled @ p["fc_w"] + p["fc_b"]
    cache = {"weights": weights, "acts": acts, "pooled": pooled, "last_shape": h.shape, "single": single}
    return (logits[0] if single else logits), cache


def backward(cache, grad_logits, need_params=True):
    """Reverse pass: gradient of ``sum(logits * grad_logits)``.

    Returns ``(grad_input, grad_params)``; ``grad_params`` is ``None`` when
    ``need_params`` is false.
    """
    weights = cache["weights"]
    p = weights.params
    g = np.asarray(grad_logits, dtype=weights.dtype)
    if cache["single"]:
        g = g[None]
    n, ho, wo, c = cache["last_shape"]
    if g.shape != (n, weights.spec.num_classes):
        raise ValueError(f"grad_logits shape {g.shape} does not match cached forward pass")
    grads = {}
    if need_params:
        grads["fc_w"] = cache["pooled"].T @ g
        grads["fc_b"] = g.sum(axis=0)
    dh = np.broadcast_to((g @ p["fc_w"].T)[:, None, None, :] / (ho * wo), (n, ho, wo, c))
    for (name, stride), (x_shape, cols, relu_mask) in zip(CONV_LAYERS[::-1], cache["acts"][::-1]):
        dz = np.where(relu_mask, dh, 0).astype(weights.dtype, copy=False)
        dh, dw, db = _conv_backward(dz, cols, p[f"{name}_w"], x_shape, stride, need_params)
        if need_params:
            grads[f"{name}_w"], grads[f"{name}_b"] = dw, db
    grad_input = dh[0] if cache["single"] else dh
    return grad_input, ({k: grads[k] for k in PARAM_ORDER} if need_params else None)


def input_gradient(cache, grad_logits):
    return backward(cache, grad_logits, need_params=False)[0]


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


def train(spec, dataset, epochs, lr, seed, *, batch_size=32, dtype=np.float32, callback=None):
    """Minimize softmax cross-entropy with Adam.

    ``callback(epoch, weights, mean_loss)`` runs after each epoch.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.images.shape[1:] != (spec.side, spec.side, 3):
        raise ValueError(f"dataset images {dataset.images.shape[1:]} do not match network side {spec.side}")
    weights = init_weights(spec, seed, dtype)
    shuffle_rng = np.random.default_rng([seed, 1])
    opt = Adam(lr)
    images = dataset.images.astype(dtype)
    labels = dataset.labels
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(labels))
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            logits, cache = forward(weights, images[idx])
            loss, grad = softmax_cross_entropy(logits, labels[idx])
            _, grads = backward(cache, grad)
            weights = ClassifierWeights(spec, opt.step(weights.params, grads))
            losses.append(loss)
        if callback is not None:
            callback(epoch, weights, float(np.mean(losses)))
    return weights


def predict_logits(weights, images, batch_size=256):
    images = check_images(images)
    out = [forward(weights, images[i:i + batch_size])[0] for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def evaluate(weights, dataset):
    """Accuracy; argmax ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = predict_logits(weights, dataset.images).argmax(axis=1)
    return float(np.mean(preds == dataset.labels))


def save_weights(weights, path):
    from .imageio import _atomic_write

    header = MAGIC + struct.pack("<ii", weights.spec.side, weights.spec.num_classes)
    body = weights.flat().astype("<f4").tobytes()

    def write(tmp):
        with open(tmp, "wb") as fh:
            fh.write(header + body)

    _atomic_write(path, write)


def load_weights(path, spec=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a weight file")
    if len(data) < 16:
        raise ValueError(f"{path}: truncated header")
    side, k = struct.unpack("<ii", data[8:16])
    file_spec = NetworkSpec(side, k)
    if spec is not None and spec != file_spec:
        raise ValueError(f"{path}: weights are for {file_spec}, expected {spec}")
    count = file_spec.parameter_count()
    if len(data) != 16 + 4 * count:
        raise ValueError(f"{path}: expected {16 + 4 * count} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float32)
    params, pos = {}, 0
    for name, shape in file_spec.param_shapes().items():
        size = int(np.prod(shape))
        params[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    if not np.all(np.isfinite(flat)):
        raise ValueError(f"{path}: non-finite parameters")
    return ClassifierWeights(file_spec, params)


class ConvNetClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around the numpy network.

    Labels must be integer class indices ``0..n_classes-1``.
    """

    def __init__(self, n_classes=None, epochs=30, lr=0.01, batch_size=32, seed=0, dtype="float32"):
        self.n_classes = n_classes
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.dtype = dtype

    def fit(self, X, y, callback=None):
        from .imageio import LabeledDataset

        X = check_images(X)
        y = check_labels(y, len(X), self.n_classes)
        k = self.n_classes if self.n_classes is not None else max(int(y.max()) + 1, 2)
        spec = NetworkSpec(X.shape[1], k)
        self.history_ = []

        def record(epoch, weights, loss):
            self.history_.append({"epoch": epoch + 1, "loss": loss})
            if callback is not None:
                callback(epoch, weights, loss)

        self.weights_ = train(spec, LabeledDataset(X, y, k), self.epochs, self.lr, self.seed,
                              batch_size=self.batch_size, dtype=np.dtype(self.dtype), callback=record)
        self.classes_ = np.arange(k)
        return self

    @classmethod
    def from_weights(cls, weights, **params):
        est = cls(n_classes=weights.spec.num_classes, dtype=str(weights.dtype), **params)
        est.weights_ = weights
        est.classes_ = np.arange(weights.spec.num_classes)
        est.history_ = []
        return est

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        return predict_logits(self.weights_, X)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.decision_function(X).argmax(axis=1)
