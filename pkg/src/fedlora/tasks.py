"""Synthetic datasets and client partitioning (IID and Dirichlet label skew).

All generation is pure and deterministic under the stream contract. The
Dirichlet concentration is called ``beta`` here to avoid colliding with the
adapter scaling hyperparameter ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ContractViolation, DenseMatrix, RngStream

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass
class Dataset:
    inputs: DenseMatrix  # k x n, one sample per column
    targets: DenseMatrix | np.ndarray  # d_out x n for regression, (n,) int labels otherwise
    n_classes: int | None = None

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[1]

    @property
    def labeled(self) -> bool:
        return self.n_classes is not None

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        targets = self.targets[idx] if self.labeled else self.targets[:, idx]
        return Dataset(self.inputs[:, idx], targets, self.n_classes)


@dataclass
class Partition:
    shards: list[np.ndarray]  # disjoint, exhaustive, non-empty index lists

    def validate(self, n_samples: int) -> None:
        all_idx = np.concatenate(self.shards) if self.shards else np.array([], dtype=np.int64)
        if len(all_idx) != n_samples or len(np.unique(all_idx)) != n_samples:
            raise ContractViolation("partition is not disjoint and exhaustive")
        if any(len(s) == 0 for s in self.shards):
            raise ContractViolation("partition has an empty shard")


def make_regression(
    n_samples: int, k: int, d_out: int, noise_std: float, rng: RngStream
) -> Dataset:
    """x ~ N(0, I_k), y = W* x + noise, with W* fixed per stream."""
    if n_samples < 1:
        raise ContractViolation(f"n_samples must be >= 1, got {n_samples}")
    gen = rng.generator()
    w_star = gen.normal(0.0, 1.0 / np.sqrt(k), (d_out, k))
    x = gen.standard_normal((k, n_samples))
    y = w_star @ x
    if noise_std > 0:
        y = y + noise_std * gen.standard_normal(y.shape)
    return Dataset(x, y)


def make_classification(n_samples: int, k: int, classes: int, rng: RngStream) -> Dataset:
    """Gaussian class-conditional clusters with distinct means, balanced in expectation."""
    if classes < 2:
        raise ContractViolation(f"classes must be >= 2, got {classes}")
    gen = rng.generator()
    # unit-norm mean directions, scaled for clear but not trivial separation
    means = gen.standard_normal((classes, k))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= 3.0
    labels = gen.integers(0, classes, n_samples)
    x = means[labels].T + gen.standard_normal((k, n_samples))
    return Dataset(x, labels.astype(np.int64), n_classes=classes)


def partition_iid(dataset: Dataset, n_clients: int, rng: RngStream) -> Partition:
    """Random shuffle, near-equal contiguous split (sizes differ by at most 1)."""
    n = dataset.n_samples
    if n_clients > n:
        raise ContractViolation(f"cannot split {n} samples across {n_clients} clients")
    order = rng.generator().permutation(n)
    shards = [np.sort(s) for s in np.array_split(order, n_clients)]
    part = Partition(shards)
    part.validate(n)
    return part


def partition_dirichlet(
    dataset: Dataset, n_clients: int, beta: float, rng: RngStream
) -> Partition:
    """Per-class Dirichlet(beta) proportions over clients; empty shards are
    repaired by stealing one sample from the largest shard."""
    if not dataset.labeled:
        raise ContractViolation("dirichlet partition requires a labeled dataset")
    if beta <= 0:
        raise ContractViolation(f"beta must be > 0, got {beta}")
    n = dataset.n_samples
    if n_clients > n:
        raise ContractViolation(f"cannot split {n} samples across {n_clients} clients")
    gen = rng.generator()
    labels = np.asarray(dataset.targets, dtype=np.int64)
    shards: list[list[int]] = [[] for _ in range(n_clients)]
    for c in range(int(dataset.n_classes)):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            continue
        idx = gen.permutation(idx)
        props = gen.dirichlet(np.full(n_clients, beta))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
        for shard, chunk in zip(shards, np.split(idx, cuts)):
            shard.extend(chunk.tolist())
    # steal-one repair keeps the partition deterministic and bounded
    for i in range(n_clients):
        if not shards[i]:
            donor = max(range(n_clients), key=lambda j: len(shards[j]))
            shards[i].append(shards[donor].pop())
    part = Partition([np.sort(np.asarray(s, dtype=np.int64)) for s in shards])
    part.validate(n)
    return part


def dump_dataset(dataset: Dataset, partition: Partition, path: str) -> None:
    """Flat tabular dump: one sample per row with its owning client."""
    k = dataset.inputs.shape[0]
    with open(path, "w", newline="") as f:
        feat_cols = ",".join(f"x{j}" for j in range(k))
        if dataset.labeled:
            f.write(f"client_id,sample_index,{feat_cols},label\n")
        else:
            d_out = dataset.targets.shape[0]
            tgt_cols = ",".join(f"y{j}" for j in range(d_out))
            f.write(f"client_id,sample_index,{feat_cols},{tgt_cols}\n")
        for client_id, shard in enumerate(partition.shards):
            for idx in shard:
                feats = ",".join("%.9g" % v for v in dataset.inputs[:, idx])
                if dataset.labeled:
                    f.write(f"{client_id},{idx},{feats},{int(dataset.targets[idx])}\n")
                else:
                    tgts = ",".join("%.9g" % v for v in dataset.targets[:, idx])
                    f.write(f"{client_id},{idx},{feats},{tgts}\n")
