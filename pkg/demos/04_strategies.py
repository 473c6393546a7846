"""What travels between clients and server.

Four aggregation strategies over the same task and seed:

  share_a_only  A factors are averaged, B stays local (the default)
  share_both    both factors are averaged each round
  freeze_a      A is frozen at init, only B is trained and averaged
  alternating   odd rounds average A, even rounds average B

share_a_only keeps a personalized B per client while still pooling the
shared representation in A.

    python demos/04_strategies.py
"""

from dataclasses import replace

from fedlora import ExperimentConfig, run_experiment

base = ExperimentConfig(
    n_clients=4,
    rank=16,
    rounds=25,
    learning_rate=0.01,
)

print(f"{'strategy':<14} {'final loss':>10}  verdict")
for strategy in ("share_a_only", "share_both", "freeze_a", "alternating"):
    result = run_experiment(replace(base, strategy=strategy))
    print(f"{strategy:<14} {result.records[-1].mean_loss:>10.4f}  {result.verdict}")
