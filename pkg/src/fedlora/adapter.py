"""Low-rank adapter state, scaling rules, and closed-form forward/backward.

An adapter contributes ``gamma * B @ A @ x`` on top of a frozen base matrix.
``B`` starts at zero so a fresh adapter is exactly transparent. The scaling
rule family decides how ``gamma`` depends on the client count ``N`` and the
rank ``r``; the federated rule ``alpha * sqrt(N / r)`` is the one that keeps
gradient magnitudes rank- and client-invariant under split aggregation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import ContractViolation, DenseMatrix, RngStream, gaussian_matrix

STANDARD = "standard"
RANK_STABILIZED = "rank_stabilized"
FEDERATED = "federated"
ABLATION_SMALL = "ablation_small"
ABLATION_LARGE = "ablation_large"
FIXED = "fixed"

SCALING_VARIANTS = (
    STANDARD,
    RANK_STABILIZED,
    FEDERATED,
    ABLATION_SMALL,
    ABLATION_LARGE,
    FIXED,
)


@dataclass(frozen=True)
class ScalingRule:
    """One member of the scaling-factor family.

    ``alpha`` is used by the standard / rank-stabilized / federated variants;
    ``value`` only by the fixed variant. The two ablation variants are fully
    determined by N and r.
    """

    variant: str
    alpha: float = 1.0
    value: float = 0.0

    def __post_init__(self):
        if self.variant not in SCALING_VARIANTS:
            raise ContractViolation(f"unknown scaling variant {self.variant!r}")
        if self.variant in (STANDARD, RANK_STABILIZED, FEDERATED) and self.alpha <= 0:
            raise ContractViolation(f"alpha must be > 0, got {self.alpha}")
        if self.variant == FIXED and self.value <= 0:
            raise ContractViolation(f"fixed gamma must be > 0, got {self.value}")

    @classmethod
    def standard(cls, alpha: float) -> "ScalingRule":
        return cls(STANDARD, alpha=alpha)

    @classmethod
    def rank_stabilized(cls, alpha: float) -> "ScalingRule":
        return cls(RANK_STABILIZED, alpha=alpha)

    @classmethod
    def federated(cls, alpha: float) -> "ScalingRule":
        return cls(FEDERATED, alpha=alpha)

    @classmethod
    def ablation_small(cls) -> "ScalingRule":
        return cls(ABLATION_SMALL)

    @classmethod
    def ablation_large(cls) -> "ScalingRule":
        return cls(ABLATION_LARGE)

    @classmethod
    def fixed(cls, value: float) -> "ScalingRule":
        return cls(FIXED, value=value)


def scaling_factor(rule: ScalingRule, n_clients: int, rank: int) -> float:
    """Resolve gamma for a run with ``n_clients`` clients at rank ``rank``."""
    if n_clients < 1:
        raise ContractViolation(f"n_clients must be >= 1, got {n_clients}")
    if rank < 1:
        raise ContractViolation(f"rank must be >= 1, got {rank}")
    if rule.variant == STANDARD:
        return rule.alpha / rank
    if rule.variant == RANK_STABILIZED:
        return rule.alpha / math.sqrt(rank)
    if rule.variant == FEDERATED:
        return rule.alpha * math.sqrt(n_clients / rank)
    if rule.variant == ABLATION_SMALL:
        return 1.0 / (math.sqrt(n_clients) * math.sqrt(rank))
    if rule.variant == ABLATION_LARGE:
        return n_clients**2 / math.sqrt(rank)
    return rule.value  # FIXED


@dataclass
class LoraAdapter:
    """Trainable pair (A, B) with a frozen, per-run scaling factor.

    ``gamma`` is ``None`` until the run binds (rule, N, r); it is resolved
    once and never rescaled mid-training.
    """

    A: DenseMatrix  # r x k
    B: DenseMatrix  # d x r
    rank: int
    sigma_a: float
    gamma: float | None = None

    @property
    def out_dim(self) -> int:
        return self.B.shape[0]

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    def bound_gamma(self) -> float:
        if self.gamma is None:
            raise ContractViolation("adapter gamma is unresolved; bind a scaling rule first")
        return self.gamma


@dataclass
class AdapterGradients:
    """Gradients of the loss w.r.t. A, B, and the adapter input (adapter path only)."""

    grad_A: DenseMatrix  # r x k
    grad_B: DenseMatrix  # d x r
    grad_x: DenseMatrix  # k x batch


def init_adapter(d: int, k: int, rank: int, sigma_a: float, rng: RngStream) -> LoraAdapter:
    """Zero B, Gaussian A; the fresh adapter contributes exactly nothing."""
    if min(d, k, rank) < 1:
        raise ContractViolation(f"dimensions must be >= 1, got d={d} k={k} r={rank}")
    if sigma_a < 0:
        raise ContractViolation(f"sigma_a must be >= 0, got {sigma_a}")
    A = gaussian_matrix(rank, k, sigma_a, rng) if sigma_a > 0 else np.zeros((rank, k))
    B = np.zeros((d, rank))
    return LoraAdapter(A=A, B=B, rank=rank, sigma_a=sigma_a)


def resolve_gamma(adapter: LoraAdapter, rule: ScalingRule, n_clients: int) -> LoraAdapter:
    adapter.gamma = scaling_factor(rule, n_clients, adapter.rank)
    return adapter


def adapter_forward(
    adapter: LoraAdapter, w0: DenseMatrix, x: DenseMatrix
) -> tuple[DenseMatrix, DenseMatrix]:
    """Return ``(h, contribution)`` with ``h = W0 x + gamma B A x``."""
    gamma = adapter.bound_gamma()
    if w0.shape != (adapter.out_dim, adapter.in_dim):
        raise ContractViolation(
            f"base matrix shape {w0.shape} does not match adapter "
            f"({adapter.out_dim}, {adapter.in_dim})"
        )
    if x.shape[0] != adapter.in_dim:
        raise ContractViolation(f"input width {x.shape[0]} != adapter in_dim {adapter.in_dim}")
    contribution = gamma * (adapter.B @ (adapter.A @ x))
    return w0 @ x + contribution, contribution


def adapter_backward(
    adapter: LoraAdapter, x: DenseMatrix, v: DenseMatrix
) -> AdapterGradients:
    """Closed-form gradients given the sensitivity ``v`` at the adapter output.

    grad_B = gamma v x^T A^T, grad_A = gamma B^T v x^T, and grad_x covers the
    adapter path only; the caller adds the frozen-base path W0^T v.
    """
    gamma = adapter.bound_gamma()
    if x.shape[0] != adapter.in_dim:
        raise ContractViolation(f"input width {x.shape[0]} != adapter in_dim {adapter.in_dim}")
    if v.shape[0] != adapter.out_dim:
        raise ContractViolation(f"sensitivity width {v.shape[0]} != adapter out_dim {adapter.out_dim}")
    if x.shape[1] != v.shape[1]:
        raise ContractViolation(f"batch mismatch: x has {x.shape[1]} columns, v has {v.shape[1]}")
    grad_B = gamma * (v @ x.T @ adapter.A.T)
    grad_A = gamma * (adapter.B.T @ v @ x.T)
    grad_x = gamma * (adapter.A.T @ (adapter.B.T @ v))
    return AdapterGradients(grad_A=grad_A, grad_B=grad_B, grad_x=grad_x)


def merge_adapter(adapter: LoraAdapter, w0: DenseMatrix) -> DenseMatrix:
    """Fold the adapter into the base weight: ``W0 + gamma B A``."""
    gamma = adapter.bound_gamma()
    if w0.shape != (adapter.out_dim, adapter.in_dim):
        raise ContractViolation(
            f"base matrix shape {w0.shape} does not match adapter "
            f"({adapter.out_dim}, {adapter.in_dim})"
        )
    return w0 + gamma * (adapter.B @ adapter.A)
