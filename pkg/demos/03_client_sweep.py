"""Robustness to the number of clients at high rank.

At rank 512 the standard alpha / r rule has already collapsed: adding more
clients does not help, and final losses stay pinned near the frozen
network's. The sqrt(N / r) rule keeps training effective and its final loss
barely moves as the federation grows. Expect a few minutes of runtime.

    python demos/03_client_sweep.py
"""

from dataclasses import replace

from fedlora import ExperimentConfig, stability_sweep

counts = [5, 10, 15, 20]
base = ExperimentConfig(
    rank=512,
    rounds=60,
    learning_rate=0.005,
    n_samples=3840,
    val_samples=512,
)

reports = {}
for rule in ("standard", "federated"):
    reports[rule] = stability_sweep(replace(base, scaling_rule=rule), "clients", counts)

print(f"{'N':>3} {'standard':>12} {'federated':>12}")
for i, n in enumerate(counts):
    std = reports["standard"].final_losses[i]
    fzd = reports["federated"].final_losses[i]
    print(f"{n:>3} {std:>12.4f} {fzd:>12.4f}")

fed_losses = reports["federated"].final_losses
variation = (max(fed_losses) - min(fed_losses)) / min(fed_losses)
print(f"\nfederated final-loss variation across N: {variation:.1%}")
