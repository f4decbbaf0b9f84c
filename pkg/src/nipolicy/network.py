"""Index-prediction network: a small MLP applied row-wise to per-arm features.

Each arm is encoded as one-hot identity concatenated with one-hot current
state; the same parameters score every arm, so permuting arms permutes the
output rows and nothing else.  Forward passes record the activations needed
for an exact manual backward pass; gradients accumulate in buffers that a
plain gradient-descent step (optionally with momentum) consumes.

All arithmetic is float64 so finite-difference gradient checks are sharp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import textio
from .errors import DataError, NumericalError
from .instances import RmabInstance, check_state_vector

CHECKPOINT_KIND = "network-checkpoint"

DEFAULT_HIDDEN = 64


def encode(inst: RmabInstance, states, arm_features: np.ndarray | None = None) -> np.ndarray:
    """Per-arm feature rows: [arm one-hot | state one-hot], shape (N, N+S).

    Passing ``arm_features`` (N, F) replaces the arm one-hot block with real
    feature vectors, for deployments that must generalize to unseen arms;
    the default one-hot identity matches how the network is trained here.
    """
    states = check_state_vector(inst, states)
    n, s = inst.n_arms, inst.n_states
    if arm_features is None:
        arm_block = np.eye(n)
    else:
        arm_features = np.asarray(arm_features, dtype=np.float64)
        if arm_features.shape[0] != n:
            raise DataError(f"arm_features rows {arm_features.shape[0]} != n_arms {n}")
        arm_block = arm_features
    state_block = np.zeros((n, s))
    state_block[np.arange(n), states] = 1.0
    return np.concatenate([arm_block, state_block], axis=1)


@dataclass
class ForwardTape:
    """Activations retained by forward() for the matching backward()."""

    feats: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    version: int


@dataclass
class IndexNetwork:
    """Two-hidden-layer tanh MLP with explicit gradient accumulators."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    grad_weights: list[np.ndarray] = field(default_factory=list)
    grad_biases: list[np.ndarray] = field(default_factory=list)
    vel_weights: list[np.ndarray] = field(default_factory=list)
    vel_biases: list[np.ndarray] = field(default_factory=list)
    momentum: float = 0.0
    version: int = 0

    def __post_init__(self):
        if not self.grad_weights:
            self.grad_weights = [np.zeros_like(w) for w in self.weights]
            self.grad_biases = [np.zeros_like(b) for b in self.biases]
        if not self.vel_weights:
            self.vel_weights = [np.zeros_like(w) for w in self.weights]
            self.vel_biases = [np.zeros_like(b) for b in self.biases]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_actions(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden(self) -> int:
        return self.weights[0].shape[1]

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def zero_grad(self) -> None:
        for g in self.grad_weights + self.grad_biases:
            g[:] = 0.0

    def forward(self, feats: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.n_inputs:
            raise DataError(
                f"feature shape {feats.shape} incompatible with input width {self.n_inputs}"
            )
        z1 = feats @ self.weights[0] + self.biases[0]
        a1 = np.tanh(z1)
        z2 = a1 @ self.weights[1] + self.biases[1]
        a2 = np.tanh(z2)
        index = a2 @ self.weights[2] + self.biases[2]
        return index, ForwardTape(feats, z1, a1, z2, a2, self.version)

    def backward(self, tape: ForwardTape, d_index: np.ndarray) -> None:
        """Accumulate parameter gradients for d(loss)/d(index)."""
        if tape.version != self.version:
            raise DataError("stale tape: parameters changed since this forward pass")
        d_index = np.asarray(d_index, dtype=np.float64)
        if d_index.shape != (tape.feats.shape[0], self.n_actions):
            raise DataError(f"gradient shape {d_index.shape} does not match the forward output")

        self.grad_weights[2] += tape.a2.T @ d_index
        self.grad_biases[2] += d_index.sum(axis=0)
        da2 = d_index @ self.weights[2].T
        dz2 = da2 * (1.0 - tape.a2**2)
        self.grad_weights[1] += tape.a1.T @ dz2
        self.grad_biases[1] += dz2.sum(axis=0)
        da1 = dz2 @ self.weights[1].T
        dz1 = da1 * (1.0 - tape.a1**2)
        self.grad_weights[0] += tape.feats.T @ dz1
        self.grad_biases[0] += dz1.sum(axis=0)

    def sgd_step(self, learning_rate: float) -> None:
        """theta <- theta - lr * grad (with optional momentum); clears grads."""
        for g in self.grad_weights + self.grad_biases:
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient; step aborted")
        for w, g, v in zip(self.weights, self.grad_weights, self.vel_weights):
            v *= self.momentum
            v += g
            w -= learning_rate * v
        for b, g, v in zip(self.biases, self.grad_biases, self.vel_biases):
            v *= self.momentum
            v += g
            b -= learning_rate * v
        self.zero_grad()
        self.version += 1

    def get_parameters(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.weights + self.biases])

    def set_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.parameter_count():
            raise DataError(f"parameter vector size {flat.size} != {self.parameter_count()}")
        pos = 0
        for p in self.weights + self.biases:
            p[:] = flat[pos : pos + p.size].reshape(p.shape)
            pos += p.size
        self.version += 1


def initialize_network(
    n_inputs: int,
    n_actions: int,
    hidden: int = DEFAULT_HIDDEN,
    seed: int = 0,
    momentum: float = 0.0,
) -> IndexNetwork:
    """Symmetric uniform fan-in initialization, biases at zero."""
    rng = np.random.default_rng(seed)
    sizes = [(n_inputs, hidden), (hidden, hidden), (hidden, n_actions)]
    weights = [rng.uniform(-1.0, 1.0, size=sz) / np.sqrt(sz[0]) for sz in sizes]
    biases = [np.zeros(sz[1]) for sz in sizes]
    return IndexNetwork(weights=weights, biases=biases, momentum=momentum)


def save_checkpoint(net: IndexNetwork, path, extra: dict | None = None) -> None:
    """Write parameters, optimizer state and any run metadata."""
    entries: dict = {
        "n_inputs": net.n_inputs,
        "hidden": net.hidden,
        "n_actions": net.n_actions,
        "momentum": float(net.momentum),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        entries[f"w{i}"] = w
        entries[f"b{i}"] = b
    for i, (vw, vb) in enumerate(zip(net.vel_weights, net.vel_biases)):
        entries[f"vw{i}"] = vw
        entries[f"vb{i}"] = vb
    for key, value in (extra or {}).items():
        entries[f"x_{key}"] = value
    textio.write_document(path, CHECKPOINT_KIND, entries)


def load_checkpoint(path) -> tuple[IndexNetwork, dict]:
    """Read a checkpoint; returns the network and the metadata dict."""
    doc = textio.read_document(path, expect_kind=CHECKPOINT_KIND)
    n_inputs = int(textio.require(doc, "n_inputs", path))
    hidden = int(textio.require(doc, "hidden", path))
    n_actions = int(textio.require(doc, "n_actions", path))
    sizes = [(n_inputs, hidden), (hidden, hidden), (hidden, n_actions)]
    weights, biases, vel_w, vel_b = [], [], [], []
    for i, sz in enumerate(sizes):
        w = textio.require(doc, f"w{i}", path)
        b = textio.require(doc, f"b{i}", path)
        if w.size != sz[0] * sz[1] or b.size != sz[1]:
            raise DataError(f"{path}: layer {i} has wrong parameter count for {sz}")
        weights.append(w.reshape(sz))
        biases.append(b.copy())
        vw = doc.get(f"vw{i}")
        vb = doc.get(f"vb{i}")
        vel_w.append(vw.reshape(sz) if vw is not None else np.zeros(sz))
        vel_b.append(vb.copy() if vb is not None else np.zeros(sz[1]))
    net = IndexNetwork(
        weights=weights,
        biases=biases,
        vel_weights=vel_w,
        vel_biases=vel_b,
        momentum=float(doc.get("momentum", 0.0)),
    )
    extra = {k[2:]: v for k, v in doc.items() if k.startswith("x_")}
    return net, extra
