"""A first federated fine-tuning run.

Three clients share a frozen two-layer network and train low-rank adapters
on private shards of a synthetic regression task. Each round they upload
only their A factors; the server averages them and broadcasts the mean back
while every B factor stays local. Run it:

    python demos/01_single_run.py
"""

from fedlora import ExperimentConfig, run_experiment

config = ExperimentConfig(
    run_id="demo-single",
    n_clients=3,
    rank=32,
    rounds=20,
    learning_rate=0.01,
)

# gamma is the scalar in front of B A x; under the client-and-rank aware
# rule it resolves to alpha * sqrt(N / r)
print(f"scaling rule: {config.scaling_rule}, resolved gamma = {config.gamma():.4f}")

result = run_experiment(config)

print(f"\n{'round':>5} {'val loss':>10} {'grad norm':>10}")
for record in result.records:
    norm = f"{record.avg_grad_norm:.4f}" if record.avg_grad_norm is not None else "-"
    print(f"{record.round:>5} {record.mean_loss:>10.4f} {norm:>10}")

# round 0 is the untouched frozen network: B starts at zero, so the adapters
# are invisible until the first update
print(f"\nverdict: {result.verdict}")
print(f"loss {result.records[0].mean_loss:.3f} -> {result.records[-1].mean_loss:.3f}")
