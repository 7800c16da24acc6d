"""Minimal dense-network substrate with hand-rolled backprop.

Everything is double precision. A network records one forward tape at a
time; backward consumes the most recent tape. Batch inputs are rows of a
2-D array, single samples are 1-D vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StateError

ACTIVATIONS = ("relu", "tanh", "softplus", "identity")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    return z


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # derivative wrt the pre-activation z; `a` is the activation output
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "softplus":
        return 1.0 / (1.0 + np.exp(-z))
    return np.ones_like(z)


@dataclass
class DenseLayer:
    """One affine transform (out x in weight, out bias) plus an activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("layer weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"bias width {self.bias.shape[0]} does not match "
                f"weight output width {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}'")

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


@dataclass
class NetGradients:
    """Parameter gradients mirroring a network's layers, plus the input gradient."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray

    def flat(self) -> list[np.ndarray]:
        """Gradients interleaved [dW0, db0, dW1, db1, ...] to match DenseNet.params()."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


class DenseNet:
    """Chain of dense layers with recorded-forward / explicit-backward."""

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_width != nxt.in_width:
                raise ShapeError(
                    f"layer output width {prev.out_width} does not chain into "
                    f"next layer input width {nxt.in_width}"
                )
        self.layers = layers
        self._tape: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None
        self._tape_single = False

    @classmethod
    def create(
        cls,
        sizes: list[int],
        activations: str | list[str],
        rng: np.random.Generator,
    ) -> "DenseNet":
        """Glorot-uniform weights, zero biases, deterministic under `rng`."""
        if len(sizes) < 2:
            raise ConfigError("sizes must list at least input and output widths")
        if isinstance(activations, str):
            activations = [activations] * (len(sizes) - 1)
        if len(activations) != len(sizes) - 1:
            raise ConfigError(
                f"{len(sizes) - 1} layers need {len(sizes) - 1} activations, "
                f"got {len(activations)}"
            )
        layers = []
        for fan_in, fan_out, act in zip(sizes, sizes[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(DenseLayer(weight, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays interleaved [W0, b0, W1, b1, ...]; mutated in place by optimizers."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def forward(self, x: np.ndarray, record: bool = True) -> np.ndarray:
        """Run the chain; `record=False` evaluates without touching the tape."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if x.ndim not in (1, 2):
            raise ShapeError(f"input must be 1-D or 2-D, got {x.ndim}-D")
        if x.shape[-1] != self.in_width:
            raise ShapeError(
                f"input width {x.shape[-1]} does not match network input width "
                f"{self.in_width}"
            )
        a = x.reshape(1, -1) if single else x
        tape = []
        for layer in self.layers:
            z = a @ layer.weight.T + layer.bias
            a_next = _activate(layer.activation, z)
            tape.append((a, z, a_next))
            a = a_next
        if record:
            self._tape = tape
            self._tape_single = single
        return a[0] if single else a

    def backward(self, upstream: np.ndarray) -> NetGradients:
        """Backprop `upstream` (dLoss/dOutput) through the recorded forward."""
        if self._tape is None:
            raise StateError("backward called before any recorded forward")
        upstream = np.asarray(upstream, dtype=np.float64)
        if self._tape_single:
            if upstream.ndim != 1:
                raise ShapeError("recorded forward was 1-D; upstream must be 1-D")
            g = upstream.reshape(1, -1)
        else:
            if upstream.ndim != 2:
                raise ShapeError("recorded forward was 2-D; upstream must be 2-D")
            g = upstream
        out = self._tape[-1][2]
        if g.shape != out.shape:
            raise ShapeError(
                f"upstream shape {tuple(upstream.shape)} does not match recorded "
                f"output shape {(out.shape[-1],) if self._tape_single else tuple(out.shape)}"
            )
        d_weights: list[np.ndarray] = []
        d_biases: list[np.ndarray] = []
        for layer, (a_prev, z, a) in zip(reversed(self.layers), reversed(self._tape)):
            dz = g * _activate_grad(layer.activation, z, a)
            d_weights.append(dz.T @ a_prev)
            d_biases.append(dz.sum(axis=0))
            g = dz @ layer.weight
        d_weights.reverse()
        d_biases.reverse()
        d_input = g[0] if self._tape_single else g
        return NetGradients(d_weights, d_biases, d_input)


@dataclass
class HeadGradients:
    weight: np.ndarray
    input: np.ndarray


class ClassifierHead:
    """Per-class weight rows; logit t is the dot-product similarity x . W_t."""

    def __init__(self, weight: np.ndarray):
        self.weight = np.asarray(weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError("head weight must be a (classes x dim) matrix")
        self._tape: np.ndarray | None = None
        self._tape_single = False

    @classmethod
    def create(cls, num_classes: int, dim: int, rng: np.random.Generator) -> "ClassifierHead":
        limit = np.sqrt(6.0 / (num_classes + dim))
        return cls(rng.uniform(-limit, limit, size=(num_classes, dim)))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, x: np.ndarray, record: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if x.shape[-1] != self.dim:
            raise ShapeError(
                f"feature width {x.shape[-1]} does not match head width {self.dim}"
            )
        a = x.reshape(1, -1) if single else x
        if record:
            self._tape = a
            self._tape_single = single
        out = a @ self.weight.T
        return out[0] if single else out

    def backward(self, upstream: np.ndarray) -> HeadGradients:
        if self._tape is None:
            raise StateError("backward called before any recorded logits")
        upstream = np.asarray(upstream, dtype=np.float64)
        g = upstream.reshape(1, -1) if self._tape_single else upstream
        if g.shape != (self._tape.shape[0], self.num_classes):
            raise ShapeError("upstream shape does not match recorded logits shape")
        d_weight = g.T @ self._tape
        d_input = g @ self.weight
        return HeadGradients(d_weight, d_input[0] if self._tape_single else d_input)

    def params(self) -> list[np.ndarray]:
        return [self.weight]


def _check_rates(learning_rate: float, weight_decay: float) -> None:
    if not np.isfinite(learning_rate) or learning_rate < 0.0:
        raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
    if not np.isfinite(weight_decay) or weight_decay < 0.0:
        raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")


class SgdOptimizer:
    """SGD with classical momentum; weight decay is folded into the gradient."""

    def __init__(self, learning_rate: float, momentum: float = 0.0, weight_decay: float = 0.0):
        _check_rates(learning_rate, weight_decay)
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        if len(params) != len(self._velocity) or len(grads) != len(params):
            raise ShapeError("parameter/gradient lists do not match optimizer state")
        for p, g, v in zip(params, grads, self._velocity):
            g_eff = g + self.weight_decay * p if self.weight_decay else g
            v *= self.momentum
            v += g_eff
            p -= self.learning_rate * v


class AdamOptimizer:
    def __init__(
        self,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        _check_rates(learning_rate, weight_decay)
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"adam betas must be in [0, 1), got {beta1}, {beta2}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None
        self._t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if len(params) != len(self._m) or len(grads) != len(params):
            raise ShapeError("parameter/gradient lists do not match optimizer state")
        self._t += 1
        bc1 = 1.0 - self.beta1 ** self._t
        bc2 = 1.0 - self.beta2 ** self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            g_eff = g + self.weight_decay * p if self.weight_decay else g
            m *= self.beta1
            m += (1.0 - self.beta1) * g_eff
            v *= self.beta2
            v += (1.0 - self.beta2) * g_eff * g_eff
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(
    kind: str,
    learning_rate: float,
    *,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
):
    if kind == "sgd":
        return SgdOptimizer(learning_rate, momentum=momentum, weight_decay=weight_decay)
    if kind == "adam":
        return AdamOptimizer(learning_rate, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer kind '{kind}' (expected sgd or adam)")
