"""Convolutional feature extractor trained with a temporary dense head.

The default plan has five blocks of valid 3x3 convolutions (ReLU) each
followed by 2x2/2 max pooling, on 150x150x1 inputs:

    conv 32 -> pool -> conv 64 -> conv 64 -> pool -> conv 96 -> pool
    -> conv 96 -> pool -> conv 64 -> pool            (249,536 parameters)

Arrays are NHWC float64 throughout.  Conv weights are ``(3, 3, c_in, c_out)``.
For training, the final pool output is flattened into ``dense-64 (ReLU) ->
dense-k (softmax)``; the head is not part of the extracted features.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import serial
from .errors import InvalidArgumentError
from .imgcore import as_gray

KERNEL = 3
POOL = 2
FEATURE_MODES = ("final", "all-pools")

MAGIC = b"BCNN"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv" | "maxpool" | "flatten" | "dense"
    name: str
    output_shape: tuple
    filters: int = 0
    activation: str = ""
    n_params: int = 0


@dataclass(frozen=True)
class LayerPlan:
    input_shape: tuple = (150, 150, 1)
    blocks: tuple = ((32,), (64, 64), (96,), (96,), (64,))
    head_hidden: int = 64
    n_classes: int = 2

    def extractor_layers(self):
        """Realize the conv/pool ladder; raises if a size collapses."""
        h, w, c = self.input_shape
        layers = []
        for b, convs in enumerate(self.blocks, start=1):
            for k, filters in enumerate(convs, start=1):
                h, w = h - KERNEL + 1, w - KERNEL + 1
                if h < 1 or w < 1:
                    raise InvalidArgumentError(f"input {self.input_shape} too small for plan {self.blocks}")
                n_params = filters * (KERNEL * KERNEL * c + 1)
                layers.append(Layer("conv", f"Block-{b}_Conv-{k}", (h, w, filters),
                                    filters=filters, activation="relu", n_params=n_params))
                c = filters
            h, w = h // POOL, w // POOL
            if h < 1 or w < 1:
                raise InvalidArgumentError(f"input {self.input_shape} too small for plan {self.blocks}")
            layers.append(Layer("maxpool", f"Block-{b}_MP-1", (h, w, c)))
        return layers

    def head_layers(self):
        flat = int(np.prod(self.extractor_layers()[-1].output_shape))
        return [
            Layer("flatten", "Flatten", (flat,)),
            Layer("dense", "Dense-1", (self.head_hidden,), activation="relu",
                  n_params=(flat + 1) * self.head_hidden),
            Layer("dense", "Dense-2", (self.n_classes,), activation="softmax",
                  n_params=(self.head_hidden + 1) * self.n_classes),
        ]

    def layers(self):
        return self.extractor_layers() + self.head_layers()

    def extractor_param_count(self):
        return sum(layer.n_params for layer in self.extractor_layers())

    def feature_length(self, mode="final"):
        pools = [l for l in self.extractor_layers() if l.kind == "maxpool"]
        if mode == "final":
            return int(np.prod(pools[-1].output_shape))
        if mode == "all-pools":
            return int(sum(np.prod(p.output_shape) for p in pools))
        raise InvalidArgumentError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")

    def to_dict(self):
        return {"input_shape": list(self.input_shape),
                "blocks": [list(b) for b in self.blocks],
                "head_hidden": self.head_hidden,
                "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, d):
        return cls(input_shape=tuple(d["input_shape"]),
                   blocks=tuple(tuple(b) for b in d["blocks"]),
                   head_hidden=int(d["head_hidden"]),
                   n_classes=int(d["n_classes"]))


DEFAULT_PLAN = LayerPlan()


@dataclass
class ConvNet:
    plan: LayerPlan
    params: dict  # layer name -> (weights, bias)
    rng_seed: int = 0
    feature_mode: str = "final"
    _order: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise InvalidArgumentError(f"unknown feature mode {self.feature_mode!r}")
        self._order = [l.name for l in self.plan.layers() if l.kind in ("conv", "dense")]

    def param_names(self):
        return list(self._order)

    def extractor_param_count(self):
        return sum(w.size + b.size for name, (w, b) in self.params.items() if name.startswith("Block-"))

    def copy(self):
        params = {k: (w.copy(), b.copy()) for k, (w, b) in self.params.items()}
        return ConvNet(self.plan, params, self.rng_seed, self.feature_mode)

    def to_bytes(self):
        arrays = []
        for name in self._order:
            w, b = self.params[name]
            arrays += [(name + "/w", w), (name + "/b", b)]
        meta = {"plan": self.plan.to_dict(), "rng_seed": self.rng_seed, "feature_mode": self.feature_mode}
        return serial.pack(MAGIC, FORMAT_VERSION, meta, arrays)

    @classmethod
    def from_bytes(cls, blob):
        _, meta, arrays = serial.unpack(blob, MAGIC, FORMAT_VERSION)
        plan = LayerPlan.from_dict(meta["plan"])
        params = {}
        for layer in plan.layers():
            if layer.kind in ("conv", "dense"):
                params[layer.name] = (arrays[layer.name + "/w"], arrays[layer.name + "/b"])
        return cls(plan, params, int(meta["rng_seed"]), meta["feature_mode"])


def build(plan_seed=0, plan=DEFAULT_PLAN, feature_mode="final"):
    """He-uniform weights, zero biases, deterministic in ``plan_seed``."""
    rng = np.random.default_rng(plan_seed)
    params = {}
    c_in = plan.input_shape[2]
    prev = None
    for layer in plan.layers():
        if layer.kind == "conv":
            fan_in = KERNEL * KERNEL * c_in
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(KERNEL, KERNEL, c_in, layer.filters))
            params[layer.name] = (w, np.zeros(layer.filters))
            c_in = layer.filters
        elif layer.kind == "dense":
            fan_in = prev[0]
            limit = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-limit, limit, size=(fan_in, layer.output_shape[0]))
            params[layer.name] = (w, np.zeros(layer.output_shape[0]))
        prev = layer.output_shape
    return ConvNet(plan, params, rng_seed=plan_seed, feature_mode=feature_mode)


# ---------------------------------------------------------------- primitives

def _im2col(x):
    """(N, H, W, C) -> (N*Ho*Wo, 9*C) patches, tap-major then channel."""
    n, h, w, c = x.shape
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(1, 2))  # N,Ho,Wo,C,kh,kw
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, KERNEL * KERNEL * c)


def conv_forward(x, w, b):
    n, h, wd, c = x.shape
    f = w.shape[3]
    out = _im2col(x) @ w.reshape(-1, f)
    return out.reshape(n, h - KERNEL + 1, wd - KERNEL + 1, f) + b


def conv_backward(x, w, dout, need_dx=True):
    n, h, wd, c = x.shape
    f = w.shape[3]
    d2 = dout.reshape(-1, f)
    dw = (_im2col(x).T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    ho, wo = dout.shape[1:3]
    dx = np.zeros_like(x)
    for dy in range(KERNEL):
        for dxx in range(KERNEL):
            dx[:, dy:dy + ho, dxx:dxx + wo, :] += dout @ w[dy, dxx].T
    return dx, dw, db


def _pool_windows(x):
    n, h, w, c = x.shape
    h2, w2 = h // POOL, w // POOL
    cropped = x[:, :h2 * POOL, :w2 * POOL]
    return (cropped.reshape(n, h2, POOL, w2, POOL, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, h2, w2, c, POOL * POOL))


def maxpool_forward(x):
    """2x2 stride-2 max pool; odd trailing rows/columns are dropped."""
    r = _pool_windows(x)
    idx = r.argmax(axis=-1)
    return np.take_along_axis(r, idx[..., None], axis=-1)[..., 0], idx


def maxpool_backward(x_shape, idx, dout):
    # gradient goes to the first maximal element of each window only
    n, h, w, c = x_shape
    h2, w2 = dout.shape[1:3]
    dr = np.zeros(dout.shape + (POOL * POOL,))
    np.put_along_axis(dr, idx[..., None], dout[..., None], axis=-1)
    dr = (dr.reshape(n, h2, w2, c, POOL, POOL)
          .transpose(0, 1, 4, 2, 5, 3)
          .reshape(n, h2 * POOL, w2 * POOL, c))
    dx = np.zeros(x_shape)
    dx[:, :h2 * POOL, :w2 * POOL] = dr
    return dx


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- network

def _as_batch(net, images):
    """Stack images into an NHWC float batch scaled to [0, 1]."""
    h, w, c = net.plan.input_shape
    if isinstance(images, np.ndarray) and images.ndim == 4:
        batch = images.astype(np.float64, copy=False)
    else:
        imgs = [images] if isinstance(images, np.ndarray) and images.ndim == 2 else list(images)
        arrs = []
        for img in imgs:
            img = as_gray(img)
            if img.shape != (h, w):
                raise InvalidArgumentError(f"expected {w}x{h} input, got {img.shape[1]}x{img.shape[0]}")
            arrs.append(img)
        batch = np.stack(arrs).astype(np.float64)[..., None] / 255.0
    if batch.shape[1:] != (h, w, c):
        raise InvalidArgumentError(f"expected input shape {(h, w, c)}, got {batch.shape[1:]}")
    return batch


def _run_extractor(net, x, keep_cache=False):
    acts, cache = [], []
    for layer in net.plan.extractor_layers():
        if layer.kind == "conv":
            w, b = net.params[layer.name]
            z = conv_forward(x, w, b)
            out = np.maximum(z, 0.0)
            if keep_cache:
                cache.append(("conv", layer.name, x, z))
        else:
            out, idx = maxpool_forward(x)
            if keep_cache:
                cache.append(("pool", layer.name, x.shape, idx))
        acts.append((layer.name, out))
        x = out
    return acts, cache


def forward(net, img):
    """Activations of every extractor layer, as a list of ``(name, array)``.

    ``img`` may be a single image (arrays are then unbatched, HWC) or a
    sequence of images / an NHWC batch (arrays keep the batch axis).
    """
    single = isinstance(img, np.ndarray) and img.ndim == 2
    acts, _ = _run_extractor(net, _as_batch(net, img))
    if single:
        return [(name, a[0]) for name, a in acts]
    return acts


def _features_from_acts(net, acts):
    pools = [a for name, a in acts if "_MP-" in name]
    n = pools[-1].shape[0]
    if net.feature_mode == "final":
        return pools[-1].reshape(n, -1)
    return np.concatenate([p.reshape(n, -1) for p in pools], axis=1)


def extract(net, img, chunk=16):
    """Flattened pool outputs with the head discarded.

    Returns a 1-D vector for a single image, or an ``(n, d)`` matrix for a
    sequence of images (processed ``chunk`` at a time to bound memory).
    """
    if isinstance(img, np.ndarray) and img.ndim == 2:
        acts, _ = _run_extractor(net, _as_batch(net, img))
        return _features_from_acts(net, acts)[0]
    images = list(img)
    rows = []
    for start in range(0, len(images), chunk):
        acts, _ = _run_extractor(net, _as_batch(net, images[start:start + chunk]))
        rows.append(_features_from_acts(net, acts))
    if not rows:
        return np.zeros((0, net.plan.feature_length(net.feature_mode)))
    return np.concatenate(rows, axis=0)


def _head_forward(net, flat):
    w1, b1 = net.params["Dense-1"]
    w2, b2 = net.params["Dense-2"]
    z1 = flat @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    return z1, a1, softmax(a1 @ w2 + b2)


def predict_proba(net, images):
    acts, _ = _run_extractor(net, _as_batch(net, images))
    last = acts[-1][1]
    return _head_forward(net, last.reshape(last.shape[0], -1))[2]


def loss_and_grads(net, x, labels):
    """Mean softmax cross-entropy over the batch and its gradients.

    ``x`` is an NHWC batch (or images); ``labels`` are class indices.
    Returns ``(loss, probs, grads)`` with ``grads[name] = (dW, db)``.
    """
    x = _as_batch(net, x)
    labels = np.asarray(labels, dtype=np.intp)
    n = x.shape[0]
    acts, cache = _run_extractor(net, x, keep_cache=True)
    last = acts[-1][1]
    flat = last.reshape(n, -1)
    z1, a1, probs = _head_forward(net, flat)
    loss = -np.mean(np.log(np.clip(probs[np.arange(n), labels], 1e-300, None)))

    grads = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    w2, _ = net.params["Dense-2"]
    grads["Dense-2"] = (a1.T @ dlogits, dlogits.sum(axis=0))
    dz1 = (dlogits @ w2.T) * (z1 > 0)
    w1, _ = net.params["Dense-1"]
    grads["Dense-1"] = (flat.T @ dz1, dz1.sum(axis=0))
    d = (dz1 @ w1.T).reshape(last.shape)

    for i in range(len(cache) - 1, -1, -1):
        entry = cache[i]
        if entry[0] == "pool":
            _, _, shape, idx = entry
            d = maxpool_backward(shape, idx, d)
        else:
            _, name, xin, z = entry
            d = d * (z > 0)
            w, _ = net.params[name]
            d, dw, db = conv_backward(xin, w, d, need_dx=i > 0)
            grads[name] = (dw, db)
    return loss, probs, grads


def loss(net, x, labels):
    """Mean cross-entropy only (used by finite-difference checks)."""
    x = _as_batch(net, x)
    labels = np.asarray(labels, dtype=np.intp)
    acts, _ = _run_extractor(net, x)
    last = acts[-1][1]
    probs = _head_forward(net, last.reshape(last.shape[0], -1))[2]
    return -np.mean(np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)))


@dataclass
class TrainingCurve:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def rows(self):
        return [(i + 1, l, a) for i, (l, a) in enumerate(zip(self.loss, self.accuracy))]


def train(net, images, labels, epochs=50, lr=0.01, batch=16, momentum=0.9, seed=None):
    """Mini-batch SGD with momentum on softmax cross-entropy, in place.

    Per-epoch loss and accuracy are averaged over the samples seen during
    that epoch (weights move within the epoch).
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise InvalidArgumentError("training needs at least two classes")
    if epochs < 1:
        raise InvalidArgumentError("epochs must be >= 1")
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    if labels.min() < 0 or labels.max() >= net.plan.n_classes:
        raise InvalidArgumentError(f"labels must be class indices in [0, {net.plan.n_classes})")
    x = _as_batch(net, images)
    if x.shape[0] != labels.shape[0]:
        raise InvalidArgumentError("images and labels differ in length")

    rng = np.random.default_rng(net.rng_seed if seed is None else seed)
    velocity = {k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in net.params.items()}
    curve = TrainingCurve()
    n = x.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            batch_loss, probs, grads = loss_and_grads(net, x[idx], labels[idx])
            total_loss += batch_loss * idx.size
            correct += int(np.sum(probs.argmax(axis=1) == labels[idx]))
            for name, (dw, db) in grads.items():
                vw, vb = velocity[name]
                vw *= momentum
                vw -= lr * dw
                vb *= momentum
                vb -= lr * db
                w, b = net.params[name]
                w += vw
                b += vb
        curve.loss.append(total_loss / n)
        curve.accuracy.append(correct / n)
    return curve
