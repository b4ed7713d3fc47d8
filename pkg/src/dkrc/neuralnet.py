"""A small numpy neural-network engine with hand-written reverse-mode gradients.

Only what the autoencoders need: dense layers, stride/'same' 2-D
convolutions, nearest-neighbour upsampling, flatten/unflatten, and Adam.
Arrays are batch-first; images are ``(batch, channels, height, width)``.
"""

from __future__ import annotations

import base64
import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, InvalidInputError, NetworkStateError

MODEL_FORMAT_VERSION = 1

ACTIVATIONS = ("tanh", "leaky_relu", "sigmoid", "linear")


@dataclass(frozen=True)
class Activation:
    kind: str = "linear"
    alpha: float = 0.1

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0 < self.alpha < 1:
            raise InvalidInputError("leaky_relu alpha must lie in (0, 1)")

    def __call__(self, z):
        if self.kind == "tanh":
            return np.tanh(z)
        if self.kind == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * z))
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.alpha * z)
        return z

    def grad(self, z, a):
        if self.kind == "tanh":
            return 1.0 - a * a
        if self.kind == "sigmoid":
            return a * (1.0 - a)
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.alpha)
        return np.ones_like(z)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha}


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base layer: ``forward`` returns (output, cache); ``backward`` returns (input grad, param grads)."""

    params: dict

    def __init__(self):
        self.params = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, grad):
        raise NotImplementedError

    def output_shape(self, input_shape):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_dim, out_dim, activation=Activation(), rng=None, weights=None, bias=None):
        super().__init__()
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.activation = activation
        if weights is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weights = glorot_uniform(rng, (self.out_dim, self.in_dim), self.in_dim, self.out_dim)
        self.params["W"] = np.array(weights, dtype=float).reshape(self.out_dim, self.in_dim)
        self.params["b"] = (np.zeros(self.out_dim) if bias is None
                            else np.array(bias, dtype=float).reshape(self.out_dim))

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_dim,):
            raise DimensionError(f"dense layer expects ({self.in_dim},), got {tuple(input_shape)}")
        return (self.out_dim,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"dense layer expects (batch, {self.in_dim}), got {x.shape}")
        z = x @ self.params["W"].T + self.params["b"]
        a = self.activation(z)
        return a, (x, z, a)

    def backward(self, cache, grad):
        x, z, a = cache
        gz = grad * self.activation.grad(z, a)
        grads = {"W": gz.T @ x, "b": gz.sum(axis=0)}
        return gz @ self.params["W"], grads

    def to_dict(self):
        return {"type": "dense", "in_dim": self.in_dim, "out_dim": self.out_dim,
                "activation": self.activation.to_dict()}


def _same_padding(size, kernel, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


class Conv2d(Layer):
    """2-D convolution (cross-correlation) with TensorFlow-style 'same' padding."""

    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), activation=Activation(), rng=None,
                 kernels=None, bias=None):
        super().__init__()
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kernel = tuple(int(k) for k in np.broadcast_to(kernel, 2))
        self.stride = tuple(int(s) for s in np.broadcast_to(stride, 2))
        self.activation = activation
        kh, kw = self.kernel
        shape = (self.out_ch, self.in_ch, kh, kw)
        if kernels is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            kernels = glorot_uniform(rng, shape, self.in_ch * kh * kw, self.out_ch * kh * kw)
        self.params["K"] = np.array(kernels, dtype=float).reshape(shape)
        self.params["b"] = (np.zeros(self.out_ch) if bias is None
                            else np.array(bias, dtype=float).reshape(self.out_ch))

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.in_ch:
            raise DimensionError(f"conv layer expects ({self.in_ch}, H, W), got {tuple(input_shape)}")
        _, h, w = input_shape
        return (self.out_ch, -(-h // self.stride[0]), -(-w // self.stride[1]))

    def _windows(self, x):
        (kh, kw), (sy, sx) = self.kernel, self.stride
        _, _, h, w = x.shape
        ho, top, bottom = _same_padding(h, kh, sy)
        wo, left, right = _same_padding(w, kw, sx)
        xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sy, ::sx]
        return xp.shape, (top, left), win[:, :, :ho, :wo]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise DimensionError(f"conv layer expects (batch, {self.in_ch}, H, W), got {x.shape}")
        padded_shape, offset, win = self._windows(x)
        z = np.einsum("bchwij,ocij->bohw", win, self.params["K"], optimize=True)
        z += self.params["b"][None, :, None, None]
        a = self.activation(z)
        return a, (x.shape, padded_shape, offset, win, z, a)

    def backward(self, cache, grad):
        in_shape, padded_shape, (top, left), win, z, a = cache
        gz = grad * self.activation.grad(z, a)
        K = self.params["K"]
        grads = {"K": np.einsum("bohw,bchwij->ocij", gz, win, optimize=True), "b": gz.sum(axis=(0, 2, 3))}
        (kh, kw), (sy, sx) = self.kernel, self.stride
        ho, wo = gz.shape[2:]
        gxp = np.zeros(padded_shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sy * (ho - 1) + 1:sy, j:j + sx * (wo - 1) + 1:sx] += np.einsum(
                    "bohw,oc->bchw", gz, K[:, :, i, j], optimize=True)
        h, w = in_shape[2:]
        return gxp[:, :, top:top + h, left:left + w], grads

    def to_dict(self):
        return {"type": "conv2d", "in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": list(self.kernel),
                "stride": list(self.stride), "padding": "same", "activation": self.activation.to_dict()}


class Upsample2d(Layer):
    """Nearest-neighbour resize to a fixed spatial size."""

    def __init__(self, out_h, out_w):
        super().__init__()
        self.out_h, self.out_w = int(out_h), int(out_w)

    def output_shape(self, input_shape):
        return (input_shape[0], self.out_h, self.out_w)

    def forward(self, x):
        h, w = x.shape[2:]
        rows = np.arange(self.out_h) * h // self.out_h
        cols = np.arange(self.out_w) * w // self.out_w
        return x[:, :, rows][:, :, :, cols], (x.shape, rows, cols)

    def backward(self, cache, grad):
        in_shape, rows, cols = cache
        gx = np.zeros(in_shape)
        np.add.at(gx, (slice(None), slice(None), rows[:, None], cols[None, :]), grad)
        return gx, {}

    def to_dict(self):
        return {"type": "upsample2d", "out_h": self.out_h, "out_w": self.out_w}


class Flatten(Layer):
    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(len(x), -1), x.shape

    def backward(self, cache, grad):
        return grad.reshape(cache), {}

    def to_dict(self):
        return {"type": "flatten"}


class Unflatten(Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise DimensionError(f"cannot unflatten {tuple(input_shape)} into {self.shape}")
        return self.shape

    def forward(self, x):
        return x.reshape((len(x),) + self.shape), x.shape

    def backward(self, cache, grad):
        return grad.reshape(cache), {}

    def to_dict(self):
        return {"type": "unflatten", "shape": list(self.shape)}


def layer_from_dict(d):
    kind = d["type"]
    if kind == "dense":
        return Dense(d["in_dim"], d["out_dim"], Activation(**d["activation"]), weights=np.zeros((d["out_dim"], d["in_dim"])))
    if kind == "conv2d":
        shape = (d["out_ch"], d["in_ch"], *d["kernel"])
        return Conv2d(d["in_ch"], d["out_ch"], d["kernel"], d["stride"], Activation(**d["activation"]),
                      kernels=np.zeros(shape))
    if kind == "upsample2d":
        return Upsample2d(d["out_h"], d["out_w"])
    if kind == "flatten":
        return Flatten()
    if kind == "unflatten":
        return Unflatten(d["shape"])
    raise InvalidInputError(f"unknown layer type {kind!r}")


class Network:
    """Ordered layer stack split into encoder ``layers[:latent_boundary]`` and decoder."""

    def __init__(self, layers, input_shape, latent_boundary=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.latent_boundary = len(self.layers) if latent_boundary is None else int(latent_boundary)
        if not 0 <= self.latent_boundary <= len(self.layers):
            raise DimensionError("latent_boundary must lie within the layer list")
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
        self._caches = None
        self.metadata = {}

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def latent_shape(self):
        return self.shapes[self.latent_boundary]

    def parameter_keys(self):
        return [(i, name) for i, layer in enumerate(self.layers) for name in layer.params]

    def parameters(self):
        return [self.layers[i].params[name] for i, name in self.parameter_keys()]

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()]) if self.parameters() else np.zeros(0)

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_parameters():
            raise DimensionError(f"expected {self.n_parameters()} parameters, got {flat.size}")
        pos = 0
        for p in self.parameters():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self):
        clone = copy.deepcopy(self)
        clone._caches = None
        return clone

    def _check_input(self, x, shape):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != tuple(shape):
            raise DimensionError(f"expected input of shape (batch, {', '.join(map(str, shape))}), got {x.shape}")
        return x

    def run(self, x, start=0, stop=None):
        """Pure forward pass over ``layers[start:stop]``; returns (output, caches)."""
        stop = len(self.layers) if stop is None else stop
        x = self._check_input(x, self.shapes[start])
        caches = []
        for layer in self.layers[start:stop]:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backprop(self, caches, grad, start=0):
        """Pure backward pass matching :meth:`run`; returns (param grads in declared order, input grad)."""
        by_layer = {}
        for offset in range(len(caches) - 1, -1, -1):
            i = start + offset
            grad, g = self.layers[i].backward(caches[offset], grad)
            by_layer[i] = g
        grads = [by_layer[i][name] if i in by_layer else np.zeros_like(self.layers[i].params[name])
                 for i, name in self.parameter_keys()]
        return grads, grad

    def forward(self, x):
        out, self._caches = self.run(x)
        return out

    def backward(self, loss_grad):
        if self._caches is None:
            raise NetworkStateError("backward() called without a preceding forward()")
        grads, gx = self.backprop(self._caches, np.asarray(loss_grad, dtype=float))
        self._caches = None
        return grads, gx

    def encode(self, x):
        return self.run(x, 0, self.latent_boundary)[0]

    def decode(self, z):
        return self.run(z, self.latent_boundary)[0]

    __call__ = forward

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "latent_boundary": self.latent_boundary,
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls([layer_from_dict(ld) for ld in d["layers"]], d["input_shape"], d["latent_boundary"])


# ----------------------------------------------------------------------------
# architectures

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    loss: str = "mse"
    shuffle: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    workers: int = 1
    max_retries: int = 3

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1:
            raise InvalidInputError("epochs, batch_size and workers must be >= 1")
        if self.loss not in LOSSES:
            raise InvalidInputError(f"unknown loss {self.loss!r}")


@dataclass
class CAEConfig:
    filters: tuple = (8, 16)
    kernel: int = 3
    stride: int = 2
    latent_dim: int = 8
    alpha: float = 0.1
    seed: int = 0


def build_cae(image_h, image_w, latent_dim=None, cfg: CAEConfig = None, channels=1) -> Network:
    """Convolutional autoencoder for ``channels``-channel images.

    Encoder: two LeakyReLU 'same' convolutions, flatten, linear dense to the
    latent code.  The decoder mirrors it with nearest upsampling and ends in
    a Sigmoid so reconstructed pixels stay in (0, 1).
    """
    cfg = cfg or CAEConfig()
    latent_dim = cfg.latent_dim if latent_dim is None else latent_dim
    if min(image_h, image_w, latent_dim) < 1:
        raise DimensionError("image dims and latent_dim must be positive")
    rng = np.random.default_rng(cfg.seed)
    leaky = Activation("leaky_relu", cfg.alpha)
    c1, c2 = cfg.filters
    s = cfg.stride
    h1, w1 = -(-image_h // s), -(-image_w // s)
    h2, w2 = -(-h1 // s), -(-w1 // s)
    flat = c2 * h2 * w2
    layers = [
        Conv2d(channels, c1, cfg.kernel, s, leaky, rng),
        Conv2d(c1, c2, cfg.kernel, s, leaky, rng),
        Flatten(),
        Dense(flat, latent_dim, Activation("linear"), rng),
        Dense(latent_dim, flat, leaky, rng),
        Unflatten((c2, h2, w2)),
        Upsample2d(h1, w1),
        Conv2d(c2, c1, cfg.kernel, 1, leaky, rng),
        Upsample2d(image_h, image_w),
        Conv2d(c1, channels, cfg.kernel, 1, Activation("sigmoid"), rng),
    ]
    return Network(layers, (channels, image_h, image_w), latent_boundary=4)


def build_ae(input_dim, lift_dim, seed=0, state_dim=None) -> Network:
    """Dense autoencoder: tanh encoder to ``lift_dim``, linear decoder back.

    ``lift_dim`` must exceed the physical state dimension (``state_dim``,
    defaulting to ``input_dim``) by at least one.
    """
    state_dim = input_dim if state_dim is None else state_dim
    if input_dim < 1 or lift_dim < state_dim + 1:
        raise DimensionError(f"lift_dim={lift_dim} must be >= state dimension + 1 = {state_dim + 1}")
    rng = np.random.default_rng(seed)
    layers = [Dense(input_dim, lift_dim, Activation("tanh"), rng),
              Dense(lift_dim, input_dim, Activation("linear"), rng)]
    return Network(layers, (input_dim,), latent_boundary=1)


# ----------------------------------------------------------------------------
# training

def mse_loss(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def mae_loss(pred, target):
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


LOSSES = {"mse": mse_loss, "mae": mae_loss}


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def evaluate_loss(net, inputs, targets, loss="mse", chunk=4096):
    total = 0.0
    n = len(inputs)
    for start in range(0, n, chunk):
        pred = net.run(inputs[start:start + chunk])[0]
        value, _ = LOSSES[loss](pred, targets[start:start + chunk])
        total += value * len(pred)
    return total / n


def _batch_gradients(net, x, y, loss_fn, workers, pool):
    """Gradients of the batch-mean loss; data-parallel chunks are reduced in fixed order."""
    if workers == 1 or len(x) < workers:
        pred, caches = net.run(x)
        _, g = loss_fn(pred, y)
        return net.backprop(caches, g)[0]
    bounds = np.linspace(0, len(x), workers + 1).astype(int)

    def work(k):
        lo, hi = bounds[k], bounds[k + 1]
        pred, caches = net.run(x[lo:hi])
        _, g = loss_fn(pred, y[lo:hi])
        return [gi * ((hi - lo) / len(x)) for gi in net.backprop(caches, g)[0]]

    parts = list(pool.map(work, range(workers)))
    total = parts[0]
    for part in parts[1:]:
        total = [a + b for a, b in zip(total, part)]
    return total


def _train_once(net, inputs, targets, cfg, lr, pool):
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = [evaluate_loss(net, inputs, targets, cfg.loss)]
    n = len(inputs)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = _batch_gradients(net, inputs[idx], targets[idx], loss_fn, cfg.workers, pool)
            opt.step(grads)
        value = evaluate_loss(net, inputs, targets, cfg.loss)
        if not math.isfinite(value) or not np.all(np.isfinite(net.get_flat())):
            raise DivergenceError(epoch)
        history.append(value)
    return history


def train(net: Network, inputs, targets, cfg: TrainConfig = None):
    """Minibatch Adam on ``net`` in place; returns ``(net, loss_history)``.

    ``loss_history[0]`` is the loss before training and entry ``e`` the
    full-data loss after epoch ``e``.  If training ends above its starting
    loss the parameters are reset and training restarts at half the
    learning rate, up to ``cfg.max_retries`` times.
    """
    cfg = cfg or TrainConfig()
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(inputs) != len(targets):
        raise DimensionError(f"{len(inputs)} inputs but {len(targets)} targets")
    if len(inputs) == 0:
        raise InvalidInputError("no training data")
    initial = net.get_flat()
    lr = cfg.learning_rate
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for attempt in range(cfg.max_retries + 1):
            history = _train_once(net, inputs, targets, cfg, lr, pool)
            if history[-1] <= history[0] or attempt == cfg.max_retries:
                break
            net.set_flat(initial)
            lr *= 0.5
    finally:
        if pool is not None:
            pool.shutdown()
    net.metadata["train"] = {"attempts": attempt + 1, "learning_rate": lr, "final_loss": history[-1],
                             "initial_loss": history[0], "config": asdict(cfg)}
    return net, history


# ----------------------------------------------------------------------------
# model files

def network_to_json(net: Network, extra=None) -> dict:
    """Serializable model: architecture header plus base64 little-endian float64 parameters."""
    blob = net.get_flat().astype("<f8").tobytes()
    return {
        "version": MODEL_FORMAT_VERSION,
        "architecture": net.to_dict(),
        "parameter_order": [[i, name, list(net.layers[i].params[name].shape)] for i, name in net.parameter_keys()],
        "metadata": extra or {},
        "encoding": "base64-float64-le",
        "parameters": base64.b64encode(blob).decode("ascii"),
    }


def network_from_json(d: dict) -> Network:
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model version {d.get('version')!r}")
    net = Network.from_dict(d["architecture"])
    flat = np.frombuffer(base64.b64decode(d["parameters"]), dtype="<f8")
    net.set_flat(flat)
    net.metadata = dict(d.get("metadata", {}))
    return net
