"""Minimal dense-network engine: forward with tape, exact reverse-mode backward,
Adam updates, soft target updates, and bit-exact checkpoints.

Single-sample semantics throughout; batches are handled by looping and
accumulating gradients. Everything is float64 so finite-difference gradient
checks hold to 1e-5 relative error.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidStateError

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class DenseNet:
    """Fully connected net; weights[l] has shape (n_out_l, n_in_l).

    version increments on every parameter mutation so stale tapes can be
    rejected by backward().
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    version: int = 0

    def __post_init__(self):
        if self.hidden_activation not in _ACTIVATIONS or self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation; choose from {_ACTIVATIONS}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight rows {w.shape[0]} != bias size {b.shape[0]}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input size {w.shape[1]} does not chain")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass
class Tape:
    """Activation record from one forward pass, consumed by backward()."""

    net_id: int
    net_version: int
    x: np.ndarray
    pre: list[np.ndarray]  # pre-activation z per layer
    post: list[np.ndarray]  # post-activation a per layer


@dataclass
class ParamGrads:
    """Per-parameter gradients, same shapes as the net."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def add_(self, other: "ParamGrads") -> None:
        for dw, ow in zip(self.d_weights, other.d_weights):
            dw += ow
        for db, ob in zip(self.d_biases, other.d_biases):
            db += ob

    def scale_(self, c: float) -> None:
        for dw in self.d_weights:
            dw *= c
        for db in self.d_biases:
            db *= c


def zero_grads(net: DenseNet) -> ParamGrads:
    return ParamGrads(
        d_weights=[np.zeros_like(w) for w in net.weights],
        d_biases=[np.zeros_like(b) for b in net.biases],
    )


def init_dense(
    sizes: tuple[int, ...],
    rng: np.random.Generator,
    *,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
    final_scale: float = 1.0,
) -> DenseNet:
    """Uniform fan-in initialization; final_scale shrinks the output layer
    (used to start policies near zero actions)."""
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        if i == len(sizes) - 2:
            w *= final_scale
            b *= final_scale
        weights.append(w)
        biases.append(b)
    return DenseNet(weights, biases, hidden_activation, output_activation)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Affine + activation composition; returns the output and a tape that
    suffices for one backward pass against the current parameters."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.n_in,):
        raise ValueError(f"input shape {x.shape} != ({net.n_in},)")
    pre, post = [], []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = w @ a + b
        kind = net.output_activation if i == last else net.hidden_activation
        a = _act(z, kind)
        pre.append(z)
        post.append(a)
    return a, Tape(net_id=id(net), net_version=net.version, x=x, pre=pre, post=post)


def forward_only(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Forward pass without recording a tape (target nets, evaluation)."""
    a = np.asarray(x, dtype=np.float64)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        kind = net.output_activation if i == last else net.hidden_activation
        a = _act(w @ a + b, kind)
    return a


def backward(net: DenseNet, tape: Tape, output_gradient: np.ndarray) -> tuple[ParamGrads, np.ndarray]:
    """Exact reverse-mode gradients of forward(); returns (param grads, d_input)."""
    if tape.net_id != id(net) or tape.net_version != net.version:
        raise InvalidStateError("tape is stale: parameters changed since forward()")
    dy = np.asarray(output_gradient, dtype=np.float64)
    if dy.shape != (net.n_out,):
        raise ValueError(f"output_gradient shape {dy.shape} != ({net.n_out},)")
    d_weights = [None] * len(net.weights)
    d_biases = [None] * len(net.weights)
    last = len(net.weights) - 1
    grad = dy
    for i in range(last, -1, -1):
        kind = net.output_activation if i == last else net.hidden_activation
        dz = grad * _act_grad(tape.pre[i], tape.post[i], kind)
        a_prev = tape.x if i == 0 else tape.post[i - 1]
        d_weights[i] = np.outer(dz, a_prev)
        d_biases[i] = dz
        grad = net.weights[i].T @ dz
    return ParamGrads(d_weights, d_biases), grad


@dataclass
class AdamState:
    """Bias-corrected adaptive-moment optimizer state for one DenseNet."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenseNet, lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.m_w = [np.zeros_like(w) for w in net.weights]
        st.v_w = [np.zeros_like(w) for w in net.weights]
        st.m_b = [np.zeros_like(b) for b in net.biases]
        st.v_b = [np.zeros_like(b) for b in net.biases]
        return st


def adam_step(net: DenseNet, grads: ParamGrads, state: AdamState, *, maximize: bool = False) -> None:
    """One in-place Adam update; maximize flips the gradient sign (ascent)."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    sign = -1.0 if maximize else 1.0
    for params, grad_list, m_list, v_list in (
        (net.weights, grads.d_weights, state.m_w, state.v_w),
        (net.biases, grads.d_biases, state.m_b, state.v_b),
    ):
        for p, g, m, v in zip(params, grad_list, m_list, v_list):
            g = sign * g
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    net.version += 1


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> DenseNet:
    """In-place target' = tau*online + (1-tau)*target; returns target."""
    if target.sizes != online.sizes:
        raise ValueError(f"architecture mismatch: {target.sizes} vs {online.sizes}")
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob
    target.version += 1
    return target


def clone(net: DenseNet) -> DenseNet:
    return DenseNet(
        weights=[w.copy() for w in net.weights],
        biases=[b.copy() for b in net.biases],
        hidden_activation=net.hidden_activation,
        output_activation=net.output_activation,
    )


def save_checkpoint(net: DenseNet, path) -> None:
    """Write parameters plus an architecture header; round-trip is bit-exact."""
    header = json.dumps(
        {
            "sizes": list(net.sizes),
            "hidden_activation": net.hidden_activation,
            "output_activation": net.output_activation,
        }
    )
    arrays = {"header": np.frombuffer(header.encode("utf-8"), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> DenseNet:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        n_layers = len(header["sizes"]) - 1
        weights = [data[f"w{i}"].astype(np.float64, copy=True) for i in range(n_layers)]
        biases = [data[f"b{i}"].astype(np.float64, copy=True) for i in range(n_layers)]
    return DenseNet(
        weights,
        biases,
        hidden_activation=header["hidden_activation"],
        output_activation=header["output_activation"],
    )
