"""ReLU multilayer perceptrons with hand-rolled reverse-mode gradients and Adam.

Networks map R^{p0} -> R through L hidden ReLU layers and a final affine
layer.  Everything is float64 and fully deterministic for a fixed seed.
An optional smooth output clamp B*tanh(g/B) bounds |g| by B without killing
gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizationError, ShapeError

__all__ = [
    "MlpNetwork",
    "AdamState",
    "GradientCheckReport",
    "relu",
    "forward",
    "forward_batch",
    "backward",
    "adam_step",
    "gradient_check",
]


def relu(u):
    """Componentwise max{u, 0}; accepts scalars or arrays."""
    return np.maximum(u, 0.0)


@dataclass
class MlpNetwork:
    """Layered weight/bias parameterization of a scalar-output ReLU MLP.

    widths is (p0, p1, ..., pL, 1): input dimension, L hidden widths, and the
    output dimension (always 1 here).  weights[l] has shape (p_{l+1}, p_l) and
    biases[l] has length p_{l+1}.  output_bound, when set, must exceed 1 and
    enables the smooth clamp at the output.
    """

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    output_bound: float | None = None

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ShapeError("widths needs at least input and output entries")
        if any(w <= 0 for w in self.widths):
            raise ShapeError(f"widths must be positive, got {self.widths}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.widths) - 1:
            raise ShapeError("one weight matrix and bias vector per layer is required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.widths[l + 1], self.widths[l])
            if W.shape != want:
                raise ShapeError(f"layer {l}: weight shape {W.shape}, expected {want}")
            if b.shape != (self.widths[l + 1],):
                raise ShapeError(f"layer {l}: bias shape {b.shape}, expected ({self.widths[l + 1]},)")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise ShapeError(f"layer {l}: non-finite parameter entries")
        if self.output_bound is not None and not self.output_bound > 1.0:
            raise ShapeError("output_bound must be > 1 when enabled")

    @property
    def depth(self) -> int:
        """Number of hidden layers L."""
        return len(self.widths) - 2

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    @classmethod
    def init(cls, widths, seed: int, output_bound: float | None = None) -> "MlpNetwork":
        """Seeded uniform initialization on [-sqrt(1/fan_in), +sqrt(1/fan_in)] per layer."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        widths = tuple(int(w) for w in widths)
        weights, biases = [], []
        for l in range(len(widths) - 1):
            limit = np.sqrt(1.0 / widths[l])
            weights.append(rng.uniform(-limit, limit, size=(widths[l + 1], widths[l])))
            biases.append(rng.uniform(-limit, limit, size=widths[l + 1]))
        return cls(widths, weights, biases, output_bound)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            self.widths,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.output_bound,
        )

    def clamp_parameters(self, bound: float = 1.0) -> None:
        """Clip every weight/bias entry into [-bound, bound] in place.

        Optional post-step projection for theory-faithful runs; training is
        unconstrained by default.
        """
        for W, b in zip(self.weights, self.biases):
            np.clip(W, -bound, bound, out=W)
            np.clip(b, -bound, bound, out=b)

    def to_dict(self) -> dict:
        """Self-describing JSON document; weights are row-major flat lists."""
        return {
            "format": "survnn-mlp-v1",
            "widths": list(self.widths),
            "weights": [W.ravel(order="C").tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "output_bound": self.output_bound,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpNetwork":
        widths = tuple(int(w) for w in doc["widths"])
        weights = [
            np.asarray(flat, dtype=float).reshape(widths[l + 1], widths[l])
            for l, flat in enumerate(doc["weights"])
        ]
        biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        return cls(widths, weights, biases, doc.get("output_bound"))

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_json(cls, path) -> "MlpNetwork":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _forward_cached(net: MlpNetwork, U: np.ndarray):
    """Forward pass keeping post-activation values for the backward pass."""
    if U.ndim != 2 or U.shape[1] != net.input_dim:
        raise ShapeError(f"input shape {U.shape}, expected (m, {net.input_dim})")
    acts = [U]
    A = U
    n_layers = len(net.weights)
    for l in range(n_layers - 1):
        A = relu(A @ net.weights[l].T + net.biases[l])
        acts.append(A)
    z = (A @ net.weights[-1].T + net.biases[-1]).ravel()
    if net.output_bound is not None:
        B = net.output_bound
        out = B * np.tanh(z / B)
    else:
        out = z
    return out, z, acts


def forward_batch(net: MlpNetwork, U: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of input rows; returns shape (m,)."""
    out, _, _ = _forward_cached(net, np.asarray(U, dtype=float))
    return out


def forward(net: MlpNetwork, u) -> float:
    """Scalar forward pass for a single input vector of length p0."""
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] != net.input_dim:
        raise ShapeError(f"input length {u.shape[0]}, expected {net.input_dim}")
    return float(forward_batch(net, u[None, :])[0])


def backward(net: MlpNetwork, inputs: np.ndarray, cotangents: np.ndarray):
    """Gradients of sum_i c_i * forward(net, inputs[i]) w.r.t. every parameter.

    Returns a list of (dW_l, db_l) pairs matching the network layers.
    """
    U = np.asarray(inputs, dtype=float)
    c = np.asarray(cotangents, dtype=float).ravel()
    if U.ndim != 2:
        raise ShapeError("inputs must be a 2-d batch")
    if c.shape[0] != U.shape[0]:
        raise ShapeError(f"{c.shape[0]} cotangents for a batch of {U.shape[0]}")
    out, z, acts = _forward_cached(net, U)
    if net.output_bound is not None:
        # d/dz [B tanh(z/B)] = 1 - tanh^2(z/B) = 1 - (out/B)^2
        c = c * (1.0 - (out / net.output_bound) ** 2)
    grads = [None] * len(net.weights)
    # output layer is affine; delta has shape (m, p_{l+1})
    delta = c[:, None]
    for l in range(len(net.weights) - 1, -1, -1):
        A = acts[l]
        dW = delta.T @ A
        db = delta.sum(axis=0)
        grads[l] = (dW, db)
        if l > 0:
            delta = (delta @ net.weights[l]) * (acts[l] > 0)
    return grads


def zero_grads_like(net: MlpNetwork):
    return [(np.zeros_like(W), np.zeros_like(b)) for W, b in zip(net.weights, net.biases)]


@dataclass
class AdamState:
    """Per-parameter Adam accumulators plus hyperparameters."""

    step: int
    first_moment: list
    second_moment: list
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ShapeError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ShapeError("epsilon must be positive")
        if self.step < 0:
            raise ShapeError("step must be nonnegative")

    @classmethod
    def init_like(cls, net: MlpNetwork, learning_rate: float, beta1: float = 0.9,
                  beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(
            step=0,
            first_moment=zero_grads_like(net),
            second_moment=zero_grads_like(net),
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(net: MlpNetwork, grads, state: AdamState):
    """One bias-corrected Adam update; returns (new_net, new_state)."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_w, new_b, new_m, new_v = [], [], [], []
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        gW, gb = grads[l]
        if not (np.isfinite(gW).all() and np.isfinite(gb).all()):
            raise OptimizationError(f"non-finite gradient in layer {l}")
        mW, mb = state.first_moment[l]
        vW, vb = state.second_moment[l]
        mW = b1 * mW + (1.0 - b1) * gW
        mb = b1 * mb + (1.0 - b1) * gb
        vW = b2 * vW + (1.0 - b2) * gW * gW
        vb = b2 * vb + (1.0 - b2) * gb * gb
        new_m.append((mW, mb))
        new_v.append((vW, vb))
        lr = state.learning_rate
        new_w.append(W - lr * (mW / corr1) / (np.sqrt(vW / corr2) + state.epsilon))
        new_b.append(b - lr * (mb / corr1) / (np.sqrt(vb / corr2) + state.epsilon))
    net2 = MlpNetwork(net.widths, new_w, new_b, net.output_bound)
    state2 = AdamState(t, new_m, new_v, state.learning_rate, b1, b2, state.epsilon)
    return net2, state2


@dataclass
class GradientCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: tuple = ()

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _flatten_params(net: MlpNetwork):
    """Views over (layer, kind, flat index) triples addressing every parameter."""
    slots = []
    for l in range(len(net.weights)):
        slots += [("W", l, i) for i in range(net.weights[l].size)]
        slots += [("b", l, i) for i in range(net.biases[l].size)]
    return slots


def _get_param(net, slot):
    kind, l, i = slot
    arr = net.weights[l] if kind == "W" else net.biases[l]
    return arr.ravel()[i]


def _set_param(net, slot, value):
    kind, l, i = slot
    arr = net.weights[l] if kind == "W" else net.biases[l]
    arr.ravel()[i] = value


def gradient_check(net: MlpNetwork, loss_fn, batch, step: float = 1e-5,
                   tolerance: float = 1e-4, max_params: int = 2000,
                   seed: int = 0) -> GradientCheckReport:
    """Compare analytic gradients from loss_fn against central finite differences.

    loss_fn(net, batch) must return (loss, grads) with grads shaped like the
    parameters.  All parameters are checked, or a seeded random subset of
    max_params when the network is larger.  A discrepancy above tolerance is
    reported, never raised.
    """
    if not step > 0:
        raise ShapeError("finite-difference step must be positive")
    _, grads = loss_fn(net, batch)
    slots = _flatten_params(net)
    if len(slots) > max_params:
        rng = np.random.Generator(np.random.PCG64(seed))
        idx = rng.choice(len(slots), size=max_params, replace=False)
        slots = [slots[i] for i in sorted(idx)]
    work = net.copy()
    max_err, worst = 0.0, ()
    for slot in slots:
        theta = _get_param(work, slot)
        _set_param(work, slot, theta + step)
        up, _ = loss_fn(work, batch)
        _set_param(work, slot, theta - step)
        dn, _ = loss_fn(work, batch)
        _set_param(work, slot, theta)
        fd = (up - dn) / (2.0 * step)
        kind, l, i = slot
        an = (grads[l][0] if kind == "W" else grads[l][1]).ravel()[i]
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        if rel > max_err:
            max_err, worst = rel, slot
    return GradientCheckReport(max_err, len(slots), tolerance, worst)
