"""Small numpy network core: conv/linear stacks, losses, SGD.

Tensors are float64 ``numpy.ndarray`` objects. A network is an ordered list of
layers; ``KWTA`` layers are the hook points where the sparse-activation
pipeline (dropout mask -> k-WTA -> ReLU) runs and where filter activity is
reported.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingCacheError, NonFiniteError, ShapeError
from .sparse import k_for, kwta_mask

DTYPE = np.float64


class Conv2d:
    """Stride-1 convolution. Activations are channels-last ``(B, H, W, C)``
    internally; weights keep the ``(F, C, k, k)`` layout."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel=3, padding=None, rng=None):
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": rng.uniform(-bound, bound, (out_channels, in_channels, kernel, kernel)),
            "bias": rng.uniform(-bound, bound, out_channels),
        }

    def out_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        p, k = self.padding, self.kernel
        return (self.out_channels, h + 2 * p - k + 1, w + 2 * p - k + 1)

    def _wmat(self):
        # (F, C, k, k) -> (F, k*k*C), matching the column order built below
        return self.params["weight"].transpose(0, 2, 3, 1).reshape(self.out_channels, -1)

    def forward(self, x):
        p, k = self.padding, self.kernel
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        ho, wo = xp.shape[1] - k + 1, xp.shape[2] - k + 1
        cols = np.concatenate([xp[:, i:i + ho, j:j + wo, :] for i in range(k) for j in range(k)], axis=-1)
        out = cols.reshape(-1, cols.shape[-1]) @ self._wmat().T + self.params["bias"]
        return out.reshape(cols.shape[:3] + (self.out_channels,)), (cols, xp.shape)

    def backward(self, g, cache, need_input_grad=True):
        cols, xp_shape = cache
        f, k, p, c = self.out_channels, self.kernel, self.padding, self.in_channels
        g2 = g.reshape(-1, f)
        gw = g2.T @ cols.reshape(-1, cols.shape[-1])
        grads = {
            "weight": gw.reshape(f, k, k, c).transpose(0, 3, 1, 2),
            "bias": g2.sum(axis=0),
        }
        if not need_input_grad:
            return None, grads
        ho, wo = g.shape[1], g.shape[2]
        dcols = (g2 @ self._wmat()).reshape(g.shape[:3] + (k * k, c))
        dxp = np.zeros(xp_shape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + ho, j:j + wo, :] += dcols[..., i * k + j, :]
        dx = dxp[:, p:xp_shape[1] - p, p:xp_shape[2] - p, :] if p else dxp
        return dx, grads


class Linear:
    kind = "linear"

    def __init__(self, in_features, out_features, rng=None):
        self.in_features, self.out_features = in_features, out_features
        bound = 1.0 / np.sqrt(in_features)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "weight": rng.uniform(-bound, bound, (out_features, in_features)),
            "bias": rng.uniform(-bound, bound, out_features),
        }

    def out_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"linear expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def forward(self, x):
        return x @ self.params["weight"].T + self.params["bias"], x

    def backward(self, g, x):
        grads = {"weight": g.T @ x, "bias": g.sum(axis=0)}
        return g @ self.params["weight"], grads


class ReLU:
    kind = "relu"
    params = {}

    def out_shape(self, shape):
        return shape

    def forward(self, x):
        pos = x > 0
        return np.where(pos, x, 0.0), pos

    def backward(self, g, pos):
        return g * pos, {}


class MaxPool2d:
    """2x2 (or ``size``) max-pooling on channels-last maps; ties go to the
    first position in row-major window order."""

    kind = "maxpool"
    params = {}

    def __init__(self, size=2):
        self.size = size

    def out_shape(self, shape):
        c, h, w = shape
        if h % self.size or w % self.size:
            raise ShapeError(f"max-pool of size {self.size} needs divisible spatial dims, got {h}x{w}")
        return (c, h // self.size, w // self.size)

    def _views(self, x):
        s = self.size
        return [x[:, i::s, j::s, :] for i in range(s) for j in range(s)]

    def forward(self, x):
        views = self._views(x)
        out = views[0]
        for v in views[1:]:
            out = np.maximum(out, v)
        taken = np.zeros(out.shape, dtype=bool)
        winners = []
        for v in views:
            win = (v == out) & ~taken
            taken |= win
            winners.append(win)
        return out, (winners, x.shape)

    def backward(self, g, cache):
        winners, shape = cache
        dx = np.zeros(shape, dtype=DTYPE)
        s = self.size
        for n, win in enumerate(winners):
            i, j = divmod(n, s)
            dx[:, i::s, j::s, :] = np.where(win, g, 0.0)
        return dx, {}


class Flatten:
    kind = "flatten"
    params = {}

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, shape):
        return g.reshape(shape), {}


class KWTA:
    """Hook point: optional dropout pre-mask, filter k-WTA, then ReLU.

    ``ratio=1.0`` keeps every filter, which makes the layer a plain ReLU.
    """

    kind = "kwta"
    params = {}

    def __init__(self, ratio, dropout=False):
        k_for(ratio, 1)  # validates the range
        self.ratio = float(ratio)
        self.dropout = bool(dropout)
        self.n_filters = None

    def out_shape(self, shape):
        self.n_filters = shape[0]
        return shape

    @property
    def k(self):
        return k_for(self.ratio, self.n_filters)

    def forward(self, x, pre_mask=None, frozen=None):
        # x is (B, H, W, C) or (B, N); filters live on the last axis
        if frozen is not None:
            sel = np.asarray(frozen, dtype=DTYPE)
        else:
            sel = kwta_mask(channel_scores(x), self.ratio, candidates=pre_mask)
        gate = (x > 0) & (sel.reshape(sel.shape[:1] + (1,) * (x.ndim - 2) + sel.shape[1:]) > 0)
        return np.where(gate, x, 0.0), gate, sel

    def backward(self, g, gate):
        return g * gate, {}


@dataclass
class ForwardPass:
    logits: np.ndarray
    activity: dict  # hook layer index -> (B, C) post-pipeline filter scores
    selection: dict  # hook layer index -> (B, C) 0/1 filters that survived
    cache: list = field(repr=False, default_factory=list)


class Network:
    """Ordered layer stack with named parameters and k-WTA hook points."""

    def __init__(self, layers, input_shape, class_count):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.class_count = int(class_count)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        if shape != (self.class_count,):
            raise ShapeError(f"network output {shape} does not match class_count {class_count}")

    @property
    def hooks(self):
        return [i for i, layer in enumerate(self.layers) if layer.kind == "kwta"]

    @property
    def dropout_hooks(self):
        return [i for i in self.hooks if self.layers[i].dropout]

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                out[f"{i}.{name}"] = value
        return out

    def n_params(self):
        return sum(v.size for v in self.named_params().values())

    def copy(self):
        return copy.deepcopy(self)

    def load_params(self, params):
        own = self.named_params()
        if set(own) != set(params):
            raise ShapeError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
        for name, value in params.items():
            if own[name].shape != value.shape:
                raise ShapeError(f"{name}: expected {own[name].shape}, got {value.shape}")
            own[name][...] = value

    def forward(self, batch, masks=None, mode="train", frozen=None):
        """Run the stack on ``batch`` of shape ``(B,) + input_shape``.

        ``masks`` maps dropout-enabled hook indices to ``(B, C)`` 0/1 retention
        masks and is only honoured in train mode. ``frozen`` maps hook indices to
        a previously returned ``selection`` so k-WTA reuses it verbatim.
        """
        x = np.asarray(batch, dtype=DTYPE)
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"batch shape {x.shape} does not match input {self.input_shape}")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        masks = dict(masks or {}) if mode == "train" else {}
        for idx, m in masks.items():
            if idx not in self.dropout_hooks:
                raise ShapeError(f"layer {idx} is not a dropout-enabled hook")
            if m.shape != (x.shape[0], self.layers[idx].n_filters):
                raise ShapeError(f"mask for layer {idx} has shape {m.shape}")
            if not np.isin(m, (0.0, 1.0)).all():
                raise ValueError(f"mask for layer {idx} is not binary")
        frozen = frozen or {}
        if x.ndim == 4:
            x = x.transpose(0, 2, 3, 1)  # NCHW -> channels-last
        cache, activity, selection = [], {}, {}
        for i, layer in enumerate(self.layers):
            if layer.kind == "kwta":
                x, c, sel = layer.forward(x, masks.get(i), frozen.get(i))
                activity[i] = channel_scores(x)
                selection[i] = sel
            else:
                x, c = layer.forward(x)
            if not np.isfinite(x).all():
                raise NonFiniteError(i)
            cache.append(c)
        return ForwardPass(x, activity, selection, cache)

    def backward(self, grad_logits, fwd):
        """Gradients of a scalar loss w.r.t. every parameter, given dL/dlogits."""
        if fwd is None or not getattr(fwd, "cache", None):
            raise MissingCacheError("backward needs the ForwardPass of a matching forward call")
        g = np.asarray(grad_logits, dtype=DTYPE)
        if g.shape != fwd.logits.shape:
            raise ShapeError(f"logit gradient {g.shape} vs logits {fwd.logits.shape}")
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and layer.kind == "conv":
                g, pg = layer.backward(g, fwd.cache[i], need_input_grad=False)
            else:
                g, pg = layer.backward(g, fwd.cache[i])
            for name, value in pg.items():
                grads[f"{i}.{name}"] = value
                if not np.isfinite(value).all():
                    raise NonFiniteError(i, "backward")
        return grads


def channel_scores(x):
    """Absolute activation sum per filter for channels-last activations, ``(B, C)``."""
    return np.abs(x).sum(axis=(1, 2)) if x.ndim == 4 else np.abs(x)


def small_conv(input_shape, class_count, channels=(16, 32), hidden=128, ratios=None,
               dropout_layer=-1, hidden_ratio=None, rng=None):
    """Conv(3x3)->act->pool blocks, one hidden linear layer and a linear head.

    ``ratios`` gives %k per conv block; ``None`` builds plain ReLU blocks.
    ``dropout_layer`` picks which conv hook consults dropout masks (``None`` for
    none).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    c, h, w = input_shape
    layers = []
    hooks = []
    for j, out_ch in enumerate(channels):
        layers.append(Conv2d(c, out_ch, 3, rng=rng))
        if ratios is None:
            layers.append(ReLU())
        else:
            layers.append(KWTA(ratios[j]))
            hooks.append(layers[-1])
        layers.append(MaxPool2d(2))
        c, h, w = out_ch, h // 2, w // 2
    if hooks and dropout_layer is not None:
        hooks[dropout_layer].dropout = True
    layers.append(Flatten())
    layers.append(Linear(c * h * w, hidden, rng=rng))
    layers.append(KWTA(hidden_ratio) if hidden_ratio is not None else ReLU())
    layers.append(Linear(hidden, class_count, rng=rng))
    return Network(layers, input_shape, class_count)


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the true class, with its exact gradient."""
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} vs batch {b}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    rows = np.arange(b)
    top = logits.argmax(axis=1)
    shifted = logits - logits[rows, top][:, None]
    # log1p over the non-maximal terms keeps confident predictions accurate
    rest = np.exp(shifted)
    rest[rows, top] = 0.0
    logsum = np.log1p(rest.sum(axis=1, keepdims=True))
    logp = shifted - logsum
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / b


def mse(pred, target):
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def sgd_step(net, grads, lr):
    """In-place ``theta <- theta - lr * g``; returns ``net``."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    params = net.named_params()
    _check_grads(params, grads)
    for name, p in params.items():
        p -= lr * grads[name]
    return net


class SGD:
    """Plain SGD with optional momentum and L2 weight decay (both off by default)."""

    def __init__(self, lr, momentum=0.0, weight_decay=0.0):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = {}

    def step(self, net, grads):
        if not self.momentum and not self.weight_decay:
            return sgd_step(net, grads, self.lr)
        params = net.named_params()
        _check_grads(params, grads)
        for name, p in params.items():
            g = grads[name] + self.weight_decay * p if self.weight_decay else grads[name]
            if self.momentum:
                v = self.velocity.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                self.velocity[name] = v
                g = v
            p -= self.lr * g
        return net


def _check_grads(params, grads):
    if set(params) != set(grads):
        raise ShapeError(f"gradient names differ: {sorted(set(params) ^ set(grads))}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"{name}: gradient {grads[name].shape} vs parameter {p.shape}")
        if not np.isfinite(grads[name]).all():
            raise NonFiniteError(int(name.split(".")[0]), "update")


def save_tensors(path, tensors):
    """Write named tensors to an uncompressed ``.npz`` (bit-exact round trip)."""
    np.savez(path, **{k: np.asarray(v) for k, v in tensors.items()})


def load_tensors(path):
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}
