"""Self-check oracle suites: finite differences, exact trajectories, moments.

These are the independent second opinions the CLI ``check`` command runs and
the test suite reuses. Each suite returns a :class:`SuiteResult`; a failure
carries the first failing case's inputs for reproduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adapter as adapter_mod
from . import fed, model
from .config import ExperimentConfig
from .linalg import DenseMatrix, RngStream
from .metrics import moment_identity_check, trajectory_oracle


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    failure_inputs: str = ""


def central_difference(f, m: DenseMatrix, eps: float = 1e-6) -> DenseMatrix:
    """Entry-wise central finite difference of scalar ``f()`` w.r.t. ``m``."""
    grad = np.zeros_like(m)
    it = np.nditer(m, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = m[idx]
        m[idx] = orig + eps
        up = f()
        m[idx] = orig - eps
        down = f()
        m[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad


def _relative_error(analytic: DenseMatrix, numeric: DenseMatrix) -> float:
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def finite_difference_suite(
    cases: int = 100, seed: int = 1234, tolerance: float = 1e-6
) -> SuiteResult:
    """Adapter gradients vs central differences on randomized instances.

    Covers both loss kinds and dims d, k, r <= 8; the loss is taken at a
    single adapted layer so the closed forms are checked in isolation.
    """
    gen = np.random.default_rng(seed)
    worst = 0.0
    for case in range(cases):
        d, k, r = (int(gen.integers(1, 9)) for _ in range(3))
        batch = int(gen.integers(1, 5))
        loss_kind = model.SQUARED_ERROR if case % 2 == 0 else model.CROSS_ENTROPY
        if loss_kind == model.CROSS_ENTROPY and d < 2:
            d = 2
        ad = adapter_mod.LoraAdapter(
            A=gen.standard_normal((r, k)),
            B=gen.standard_normal((d, r)),
            rank=r,
            sigma_a=1.0,
            gamma=float(gen.uniform(0.2, 3.0)),
        )
        w0 = gen.standard_normal((d, k))
        x = gen.standard_normal((k, batch))
        if loss_kind == model.SQUARED_ERROR:
            y = gen.standard_normal((d, batch))
        else:
            y = gen.integers(0, d, batch)

        def scalar_loss() -> float:
            h, _ = adapter_mod.adapter_forward(ad, w0, x)
            return model.loss(h, y, loss_kind)[0]

        h, _ = adapter_mod.adapter_forward(ad, w0, x)
        _, v = model.loss(h, y, loss_kind)
        grads = adapter_mod.adapter_backward(ad, x, v)
        full_x_grad = w0.T @ v + grads.grad_x  # frozen path plus adapter path
        checks = [
            (grads.grad_A, central_difference(scalar_loss, ad.A)),
            (grads.grad_B, central_difference(scalar_loss, ad.B)),
            (full_x_grad, central_difference(scalar_loss, x)),
        ]
        for analytic, numeric in checks:
            err = _relative_error(analytic, numeric)
            worst = max(worst, err)
            if err > tolerance:
                return SuiteResult(
                    name="finite_difference",
                    passed=False,
                    detail=f"relative error {err:.3e} > {tolerance:g}",
                    failure_inputs=(
                        f"case={case} d={d} k={k} r={r} batch={batch} "
                        f"loss={loss_kind} gamma={ad.gamma:.6f} seed={seed}"
                    ),
                )
    return SuiteResult(
        name="finite_difference",
        passed=True,
        detail=f"{cases} cases, worst relative error {worst:.3e}",
    )


def trajectory_case(
    d: int, k: int, r: int, n_clients: int, seed: int = 0, eta: float = 0.05
) -> tuple[dict, dict]:
    """Run two protocol rounds and the closed-form oracle on the same data.

    Single adapted linear layer, squared error, one local step per round,
    A-only aggregation; returns (simulated, oracle) matrices keyed
    B1/A1/B2/A2, each a per-client list.
    """
    batch = 3
    cfg = ExperimentConfig(
        n_clients=n_clients,
        rank=r,
        dim_d=d,
        dim_k=k,
        layers=1,
        activation=model.IDENTITY,
        scaling_rule=adapter_mod.FEDERATED,
        alpha=2.0,
        optimizer="sgd",
        learning_rate=eta,
        rounds=2,
        local_steps=1,
        batch_size=batch,
        task="regression",
        partition="iid",
        n_samples=2 * batch * n_clients,
        val_samples=8,
        noise_std=0.0,
        master_seed=seed,
    )
    server, clients, val, root = fed.build_experiment(cfg)
    gamma = clients[0].network.layers[0].adapter.bound_gamma()
    w0 = clients[0].network.layers[0].w0
    init_a = [c.network.layers[0].adapter.A.copy() for c in clients]
    data_seq = []
    for c in clients:
        seq = []
        for n in range(2):
            sub = c.shard.subset(np.arange(n * batch, (n + 1) * batch))
            seq.append((sub.inputs, sub.targets))
        data_seq.append(seq)

    oracle = trajectory_oracle(cfg.learning_rate, gamma, w0, init_a, data_seq)

    simulated: dict[str, list] = {}
    for n in (1, 2):
        fed.run_round(server, clients, cfg, val, root)
        simulated[f"B{n}"] = [c.network.layers[0].adapter.B.copy() for c in clients]
        simulated[f"A{n}"] = [c.network.layers[0].adapter.A.copy() for c in clients]
    return simulated, oracle


def trajectory_suite(tolerance: float = 1e-10) -> SuiteResult:
    """Exhaustive small grid: simulator vs independent recursion, two rounds."""
    worst = 0.0
    for d in (1, 2, 4):
        for k in (1, 2, 4):
            for r in (1, 2, 4):
                for n_clients in (1, 2, 3):
                    simulated, oracle = trajectory_case(d, k, r, n_clients)
                    for key in ("B1", "A1", "B2", "A2"):
                        for sim, orc in zip(simulated[key], oracle[key]):
                            err = float(np.abs(sim - orc).max())
                            worst = max(worst, err)
                            if err > tolerance:
                                return SuiteResult(
                                    name="trajectory",
                                    passed=False,
                                    detail=f"{key} deviates by {err:.3e} > {tolerance:g}",
                                    failure_inputs=f"d={d} k={k} r={r} N={n_clients}",
                                )
    return SuiteResult(
        name="trajectory",
        passed=True,
        detail=f"grid d,k,r in (1,2,4), N in (1,2,3); worst deviation {worst:.3e}",
    )


def moment_suite(
    samples: int = 10_000, seed: int = 7, rel_tolerance: float = 0.05, off_tolerance: float = 0.1
) -> SuiteResult:
    """Monte-Carlo check of E[Abar^T Abar] = E[(A0)^T Abar] = (r/N) sigma^2 I."""
    res = moment_identity_check(
        rank=8, n_clients=2, k=4, sigma_a=1.0, samples=samples, rng=RngStream(seed, (99,))
    )
    detail = (
        f"target {res.target:.4f}; diag(Abar^T Abar)={res.diag_mean_abar:.4f}, "
        f"diag(A0^T Abar)={res.diag_mean_cross:.4f}; "
        f"offdiag {res.offdiag_abar:.4f}/{res.offdiag_cross:.4f}"
    )
    ok = (
        abs(res.diag_mean_abar - res.target) <= rel_tolerance * res.target
        and abs(res.diag_mean_cross - res.target) <= rel_tolerance * res.target
        and res.offdiag_abar < off_tolerance
        and res.offdiag_cross < off_tolerance
    )
    return SuiteResult(
        name="moment_identity",
        passed=ok,
        detail=detail,
        failure_inputs="" if ok else f"r=8 N=2 k=4 sigma=1 samples={samples} seed={seed}",
    )


def run_all() -> list[SuiteResult]:
    return [finite_difference_suite(), trajectory_suite(), moment_suite()]
