"""Dense multilayer perceptrons trained with backpropagation and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of inputs
``X`` of shape ``(B, fan_in)`` propagates as ``X @ W + b``. All arithmetic is
float64.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

LOG_CLAMP = 1e-12

MAGIC = b"\x89GSMMLP\n"
FORMAT_VERSION = 1


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


class Loss(str, Enum):
    BCE = "binary_crossentropy"
    CCE = "categorical_crossentropy"


class ParamConvention(str, Enum):
    WEIGHTS_ONLY = "weights_only"
    WEIGHTS_AND_BIASES = "weights_and_biases"


class TrainingDivergedError(FloatingPointError):
    pass


_ACT_CODES = {Activation.RELU: 0, Activation.SIGMOID: 1, Activation.SOFTMAX: 2}
_ACT_FROM_CODE = {v: k for k, v in _ACT_CODES.items()}


def _apply(act: Activation, z: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.SIGMOID:
        # split by sign so exp never overflows
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Mlp:
    layer_sizes: list
    activations: list
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        self.activations = [Activation(a) for a in self.activations]
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("need one activation per non-input layer")
        if Activation.SOFTMAX in self.activations[:-1]:
            raise ValueError("softmax is only allowed on the output layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes {W.shape}, {b.shape} do not match sizes")

    @classmethod
    def create(cls, layer_sizes, activations, rng: np.random.Generator) -> "Mlp":
        """Seeded init: He-uniform before ReLU, Glorot-uniform otherwise, zero biases."""
        acts = [Activation(a) for a in activations]
        weights, biases = [], []
        for fan_in, fan_out, act in zip(layer_sizes[:-1], layer_sizes[1:], acts):
            if act is Activation.RELU:
                limit = np.sqrt(6.0 / fan_in)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_sizes), acts, weights, biases)

    @classmethod
    def classifier(cls, layer_sizes, head: Activation, rng: np.random.Generator) -> "Mlp":
        """ReLU hidden layers followed by the given output activation."""
        acts = [Activation.RELU] * (len(layer_sizes) - 2) + [Activation(head)]
        return cls.create(layer_sizes, acts, rng)

    @property
    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_sizes),
            list(self.activations),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
        )

    def predict(self, X) -> np.ndarray:
        return forward(self, X)[-1]


def forward(net: Mlp, x) -> list:
    """Activations of every layer, input first.

    ``x`` may be a single vector or a ``(B, n_in)`` batch; the returned
    arrays keep the same leading shape.
    """
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} inputs, got {a.shape[-1]}")
    acts = [a]
    for i, (W, b, act) in enumerate(zip(net.weights, net.biases, net.activations)):
        a = _apply(act, a @ W + b)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite activation in layer {i + 1}")
        acts.append(a)
    return acts


def _loss_value(p, t, loss: Loss) -> float:
    pc = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    if loss is Loss.BCE:
        per = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)).mean(axis=-1)
    else:
        per = -(t * np.log(pc)).sum(axis=-1)
    return float(per.mean())


def _output_delta(p, t, act: Activation, loss: Loss) -> np.ndarray:
    """dLoss/dz for the output pre-activation, summed (not averaged) over the batch."""
    n_out = p.shape[-1]
    if loss is Loss.BCE and act is Activation.SIGMOID:
        return (p - t) / n_out
    if loss is Loss.CCE and act is Activation.SOFTMAX:
        return p * t.sum(axis=-1, keepdims=True) - t
    # general path: chain dL/dp through the activation Jacobian
    pc = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    if loss is Loss.BCE:
        g = (-t / pc + (1.0 - t) / (1.0 - pc)) / n_out
    else:
        g = -t / pc
    if act is Activation.SOFTMAX:
        return p * (g - np.sum(p * g, axis=-1, keepdims=True))
    if act is Activation.SIGMOID:
        return g * p * (1.0 - p)
    return g * (p > 0)


def check_loss_pairing(net: Mlp, loss: Loss):
    head = net.activations[-1]
    if loss is Loss.CCE and head is not Activation.SOFTMAX:
        raise ValueError("categorical cross-entropy needs a softmax output layer")
    if loss is Loss.BCE and head is Activation.RELU:
        raise ValueError("binary cross-entropy needs outputs in (0, 1)")


def loss_and_gradient(net: Mlp, x, target, loss: Loss):
    """Mean loss over the batch and its gradient for each parameter.

    Gradients are returned in the order of :attr:`Mlp.params`
    (``W0, b0, W1, b1, ...``).
    """
    loss = Loss(loss)
    check_loss_pairing(net, loss)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    T = np.atleast_2d(np.asarray(target, dtype=float))
    acts = forward(net, X)
    p = acts[-1]
    if T.shape != p.shape:
        raise ValueError(f"target shape {T.shape} does not match output shape {p.shape}")
    B = X.shape[0]
    value = _loss_value(p, T, loss)
    delta = _output_delta(p, T, net.activations[-1], loss) / B
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            back = delta @ net.weights[i].T
            a = acts[i]
            if net.activations[i - 1] is Activation.RELU:
                delta = back * (a > 0)
            else:
                delta = back * a * (1.0 - a)
    return value, grads


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, hyper: AdamConfig = AdamConfig()):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes disagree")
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    loss: Loss = Loss.BCE
    epochs: int = 20
    batch_size: int = 32
    adam: AdamConfig = field(default_factory=AdamConfig)
    shuffle_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss(self.loss))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.adam.lr > 0:
            raise ValueError("learning rate must be positive")


def train(net: Mlp, inputs, targets, cfg: TrainConfig):
    """Mini-batch Adam training; returns ``(net, per-epoch mean loss)``.

    ``net`` is updated in place. Examples are reshuffled every epoch with a
    generator seeded by ``cfg.shuffle_seed``.
    """
    X = np.asarray(inputs, dtype=float)
    T = np.asarray(targets, dtype=float)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(T):
        raise ValueError("need a non-empty (m, n_in) input array with matching targets")
    check_loss_pairing(net, cfg.loss)
    rng = np.random.default_rng(cfg.shuffle_seed)
    params = net.params
    state = AdamState.zeros_like(params)
    history = []
    m = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(m)
        total = 0.0
        for k, start in enumerate(range(0, m, cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            try:
                # non-finite values are checked explicitly below
                with np.errstate(invalid="ignore", over="ignore"):
                    value, grads = loss_and_gradient(net, X[batch], T[batch], cfg.loss)
            except FloatingPointError as exc:
                raise TrainingDivergedError(f"epoch {epoch}, batch {k}: {exc}") from exc
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(f"non-finite loss or gradient at epoch {epoch}, batch {k}")
            adam_step(params, grads, state, cfg.adam)
            total += value * len(batch)
        history.append(total / m)
    return net, history


def parameter_count(net, convention=ParamConvention.WEIGHTS_ONLY) -> int:
    """Trainable parameter count. ``net`` may be an :class:`Mlp` or a list of layer sizes."""
    sizes = net.layer_sizes if isinstance(net, Mlp) else list(net)
    n = sum(a * b for a, b in zip(sizes[:-1], sizes[1:]))
    if ParamConvention(convention) is ParamConvention.WEIGHTS_AND_BIASES:
        n += sum(sizes[1:])
    return n


# -- serialization -------------------------------------------------------------
# Layout (little-endian): 8-byte MAGIC, u8 version, u16 L = number of layer
# sizes, L x u32 sizes, (L-1) x u8 activation codes, then per layer the
# float64 weights (row-major, fan_in x fan_out) followed by the biases.


def dumps(net: Mlp) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BH", FORMAT_VERSION, len(net.layer_sizes)))
    buf.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    buf.write(bytes(_ACT_CODES[a] for a in net.activations))
    for W, b in zip(net.weights, net.biases):
        buf.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> Mlp:
    if data[:8] != MAGIC:
        raise ValueError("not a serialized MLP (bad magic)")
    version, n = struct.unpack_from("<BH", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported MLP format version {version}")
    off = 11
    sizes = list(struct.unpack_from(f"<{n}I", data, off))
    off += 4 * n
    acts = [_ACT_FROM_CODE[c] for c in data[off : off + n - 1]]
    off += n - 1
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off).reshape(fan_in, fan_out)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(W.astype(float))
        biases.append(b.astype(float))
    if off != len(data):
        raise ValueError("trailing bytes after MLP payload")
    return Mlp(sizes, acts, weights, biases)


def save(net: Mlp, path):
    with open(path, "wb") as f:
        f.write(dumps(net))


def load(path) -> Mlp:
    with open(path, "rb") as f:
        return loads(f.read())
