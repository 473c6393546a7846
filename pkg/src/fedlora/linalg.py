"""Dense float64 matrices and splittable, counter-based random streams.

Matrices are plain 2-D ``numpy.ndarray`` objects in row-major order with
double-precision entries; ``DenseMatrix`` is an alias used throughout for
readability. Randomness goes through :class:`RngStream`, which derives an
independent Philox counter-based generator from ``(master_seed, stream_id)``
so that clients can run in any order (or in parallel) and still produce
bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DenseMatrix = np.ndarray


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shape or value)."""


def as_matrix(values) -> DenseMatrix:
    """Coerce nested lists / arrays to a 2-D float64 matrix."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Matrix product with an explicit conformability check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul shape mismatch: {a.shape} x {b.shape}"
        )
    return a @ b


def frobenius_norm(m: DenseMatrix) -> float:
    return float(np.linalg.norm(m))


@dataclass(frozen=True)
class RngStream:
    """A named, splittable random stream.

    ``stream_id`` is a tuple of small integers identifying the consumer,
    conventionally ``(entity_kind, entity_index, round_index)``. Identical
    ``(master_seed, stream_id)`` pairs always yield the same sequence;
    distinct ids yield statistically independent Philox streams.
    """

    master_seed: int
    stream_id: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.Philox(seq))


def gaussian_matrix(rows: int, cols: int, sigma: float, rng: RngStream) -> DenseMatrix:
    """I.i.d. N(0, sigma^2) matrix, deterministic given the stream.

    Sampling is fixed as numpy's ziggurat ``standard_normal`` on a Philox
    generator, scaled by ``sigma``; this transform is part of the
    reproducibility contract for a given build.
    """
    if rows < 1 or cols < 1:
        raise ContractViolation(f"matrix shape must be positive, got {rows}x{cols}")
    if sigma < 0:
        raise ContractViolation(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return np.zeros((rows, cols))
    return sigma * rng.generator().standard_normal((rows, cols))
