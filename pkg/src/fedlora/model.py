"""Stacks of frozen linear layers with adapters, losses, and manual backprop.

A desk-scale stand-in for a transformer's adapted projection matrices: each
layer is ``activation(W0 x + gamma B A x)`` with ``W0`` frozen. Forward
returns a trace holding every layer's input, pre-activation, and adapter
contribution so that backward can run and activation moments can be measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapter import AdapterGradients, LoraAdapter, adapter_backward, adapter_forward
from .linalg import ContractViolation, DenseMatrix

IDENTITY = "identity"
TANH = "tanh"
RELU = "relu"

ACTIVATIONS = (IDENTITY, TANH, RELU)

SQUARED_ERROR = "squared_error"
CROSS_ENTROPY = "cross_entropy"


def _activate(kind: str, z: DenseMatrix) -> DenseMatrix:
    if kind == IDENTITY:
        return z
    if kind == TANH:
        return np.tanh(z)
    if kind == RELU:
        return np.maximum(z, 0.0)
    raise ContractViolation(f"unknown activation {kind!r}")


def _activate_grad(kind: str, z: DenseMatrix, a: DenseMatrix) -> DenseMatrix:
    if kind == IDENTITY:
        return np.ones_like(z)
    if kind == TANH:
        return 1.0 - a**2
    if kind == RELU:
        return (z > 0.0).astype(np.float64)
    raise ContractViolation(f"unknown activation {kind!r}")


@dataclass
class AdaptedLayer:
    w0: DenseMatrix  # frozen, d x k
    adapter: LoraAdapter
    activation: str = IDENTITY

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"unknown activation {self.activation!r}")
        if self.w0.shape != (self.adapter.out_dim, self.adapter.in_dim):
            raise ContractViolation(
                f"layer base {self.w0.shape} does not match adapter "
                f"({self.adapter.out_dim}, {self.adapter.in_dim})"
            )


@dataclass
class AdaptedNetwork:
    layers: list[AdaptedLayer]
    loss_kind: str = SQUARED_ERROR

    def __post_init__(self):
        if not self.layers:
            raise ContractViolation("network needs at least one layer")
        if self.loss_kind not in (SQUARED_ERROR, CROSS_ENTROPY):
            raise ContractViolation(f"unknown loss kind {self.loss_kind!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.w0.shape[1] != prev.w0.shape[0]:
                raise ContractViolation(
                    f"layer widths do not chain: {prev.w0.shape} -> {nxt.w0.shape}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].w0.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w0.shape[0]


@dataclass
class ForwardTrace:
    inputs: list[DenseMatrix] = field(default_factory=list)
    pre_activations: list[DenseMatrix] = field(default_factory=list)
    contributions: list[DenseMatrix] = field(default_factory=list)  # gamma B A x per layer
    output: DenseMatrix | None = None


def forward(net: AdaptedNetwork, x: DenseMatrix) -> tuple[DenseMatrix, ForwardTrace]:
    if x.shape[0] != net.in_dim:
        raise ContractViolation(f"input width {x.shape[0]} != network in_dim {net.in_dim}")
    trace = ForwardTrace()
    h = x
    for layer in net.layers:
        trace.inputs.append(h)
        z, contribution = adapter_forward(layer.adapter, layer.w0, h)
        trace.pre_activations.append(z)
        trace.contributions.append(contribution)
        h = _activate(layer.activation, z)
    trace.output = h
    return h, trace


def loss(output: DenseMatrix, target, loss_kind: str) -> tuple[float, DenseMatrix]:
    """Batch-mean loss and its gradient ``v`` at the network output."""
    batch = output.shape[1]
    if loss_kind == SQUARED_ERROR:
        if target.shape != output.shape:
            raise ContractViolation(f"target shape {target.shape} != output {output.shape}")
        diff = output - target
        return 0.5 * float(np.sum(diff**2)) / batch, diff / batch
    if loss_kind == CROSS_ENTROPY:
        labels = np.asarray(target, dtype=np.int64).reshape(-1)
        if labels.shape[0] != batch:
            raise ContractViolation(f"{labels.shape[0]} labels for batch of {batch}")
        n_classes = output.shape[0]
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ContractViolation(f"class index out of range for {n_classes} classes")
        shifted = output - output.max(axis=0, keepdims=True)
        exp = np.exp(shifted)
        softmax = exp / exp.sum(axis=0, keepdims=True)
        nll = -np.log(softmax[labels, np.arange(batch)] + 1e-300)
        v = softmax.copy()
        v[labels, np.arange(batch)] -= 1.0
        return float(nll.mean()), v / batch
    raise ContractViolation(f"unknown loss kind {loss_kind!r}")


def backward(net: AdaptedNetwork, trace: ForwardTrace, v_final: DenseMatrix) -> list[AdapterGradients]:
    """Per-layer adapter gradients, chaining v through activation derivatives
    and the full layer Jacobian (W0 + gamma B A)^T."""
    if trace.output is None or len(trace.inputs) != len(net.layers):
        raise ContractViolation("trace does not match the network")
    if v_final.shape != trace.output.shape:
        raise ContractViolation(f"v_final shape {v_final.shape} != output {trace.output.shape}")
    grads: list[AdapterGradients] = [None] * len(net.layers)  # type: ignore[list-item]
    v = v_final
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        z = trace.pre_activations[idx]
        a = _activate(layer.activation, z)
        v_pre = v * _activate_grad(layer.activation, z, a)
        g = adapter_backward(layer.adapter, trace.inputs[idx], v_pre)
        grads[idx] = g
        v = layer.w0.T @ v_pre + g.grad_x  # frozen-base path plus adapter path
    return grads


def perplexity_analog(loss_value: float, loss_kind: str) -> float:
    """exp(loss) for cross-entropy; the raw loss for squared error."""
    if not np.isfinite(loss_value):
        raise ContractViolation(f"loss must be finite, got {loss_value}")
    if loss_kind == CROSS_ENTROPY:
        return float(np.exp(loss_value))
    return float(loss_value)
