"""Measurements and theory oracles.

Everything that checks the simulator against closed-form math lives here:
the per-entry gradient-norm statistic, adapter activation moments, the
Monte-Carlo second-moment identity for averaged initializations, the
rank / client stability sweeps, and the exact two-round trajectory oracle
(a second code path that never touches the protocol or model modules).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractViolation, DenseMatrix, RngStream
from .model import ForwardTrace


@dataclass
class MetricsRecord:
    """One emitted log row (run metadata is added at serialization time)."""

    round: int
    mean_loss: float
    ppl_analog: float
    avg_grad_norm: float | None  # None for the round-0 evaluation row
    act_means: list[float]
    act_vars: list[float]
    diverged_count: int


def avg_grad_norm(grads) -> float:
    """Mean over matrices of frobenius_norm(G) / sqrt(G.size).

    The per-entry RMS makes the statistic comparable across ranks: a matrix
    of all ones scores 1.0 whatever its shape.
    """
    mats = list(grads)
    if not mats:
        return 0.0
    return float(np.mean([np.linalg.norm(g) / np.sqrt(g.size) for g in mats]))


def activation_moments(trace: ForwardTrace) -> list[tuple[float, float]]:
    """Entry-wise (mean, variance) of each layer's adapter contribution."""
    if trace.output is None:
        raise ContractViolation("trace is incomplete")
    return [(float(c.mean()), float(c.var())) for c in trace.contributions]


@dataclass
class MomentIdentityResult:
    target: float  # r * sigma_a^2 / N
    diag_mean_abar: float  # diagonal mean of E[Abar^T Abar]
    offdiag_abar: float  # worst off-diagonal magnitude of E[Abar^T Abar]
    diag_mean_cross: float  # diagonal mean of E[(A_i^(0))^T Abar]
    offdiag_cross: float


def moment_identity_check(
    rank: int, n_clients: int, k: int, sigma_a: float, samples: int, rng: RngStream
) -> MomentIdentityResult:
    """Monte-Carlo estimate of E[Abar^T Abar] and E[(A^(0))^T Abar].

    Both should equal (r/N) * sigma_a^2 * I (k x k) over fresh i.i.d. draws
    of the per-client initializations.
    """
    if samples < 100:
        raise ContractViolation(f"need >= 100 samples, got {samples}")
    gen = rng.generator()
    draws = sigma_a * gen.standard_normal((samples, n_clients, rank, k))
    abar = draws.mean(axis=1)  # samples x r x k
    m_abar = np.einsum("srk,srl->kl", abar, abar) / samples
    m_cross = np.einsum("srk,srl->kl", draws[:, 0], abar) / samples
    diag_abar = float(np.mean(np.diag(m_abar)))
    diag_cross = float(np.mean(np.diag(m_cross)))
    if k > 1:
        off_abar = float(np.max(np.abs(m_abar - np.diag(np.diag(m_abar)))))
        off_cross = float(np.max(np.abs(m_cross - np.diag(np.diag(m_cross)))))
    else:
        off_abar = off_cross = 0.0
    return MomentIdentityResult(
        target=rank * sigma_a**2 / n_clients,
        diag_mean_abar=diag_abar,
        offdiag_abar=off_abar,
        diag_mean_cross=diag_cross,
        offdiag_cross=off_cross,
    )


def trajectory_oracle(
    eta: float,
    gamma: float,
    w0: DenseMatrix,
    init_a: list[DenseMatrix],
    data_seq: list[list[tuple[DenseMatrix, DenseMatrix]]],
    n_updates: int = 2,
) -> dict[str, list[DenseMatrix]]:
    """Independent replay of the split-aggregation recursion.

    For a single adapted linear layer with squared-error loss, one local
    SGD step per round, and A-only aggregation, recompute the exact
    matrices after each round:

        v_n   = (W0 x_n + gamma B_n A_n x_n - y_n) / batch
        B_n+1 = B_n - eta * gamma * v_n x_n^T A_n^T
        A_pre = A_n - eta * gamma * B_n^T v_n x_n^T
        A_n+1 = mean over clients of A_pre

    ``data_seq[i][n]`` is client i's (x, y) batch for update n. Returns the
    per-client B and A after each update, keyed "B1", "A1", "B2", "A2", ...
    This is straight-line numpy with no dependency on the simulator.
    """
    n_clients = len(init_a)
    b = [np.zeros((w0.shape[0], a.shape[0])) for a in init_a]
    a = [x.copy() for x in init_a]
    out: dict[str, list[DenseMatrix]] = {}
    for n in range(n_updates):
        a_pre = []
        for i in range(n_clients):
            x, y = data_seq[i][n]
            batch = x.shape[1]
            v = (w0 @ x + gamma * b[i] @ (a[i] @ x) - y) / batch
            grad_b = gamma * v @ x.T @ a[i].T
            grad_a = gamma * b[i].T @ v @ x.T
            b[i] = b[i] - eta * grad_b
            a_pre.append(a[i] - eta * grad_a)
        a_bar = np.mean(a_pre, axis=0)
        a = [a_bar.copy() for _ in range(n_clients)]
        out[f"B{n + 1}"] = [m.copy() for m in b]
        out[f"A{n + 1}"] = [m.copy() for m in a]
    return out


@dataclass
class StabilityReport:
    axis: str  # "rank" or "clients"
    values: list[int]
    round1_grad_norms: list[float]
    final_losses: list[float]
    verdicts: list[str]
    flatness_ratio: float
    loglog_slope: float
    runs: list = field(default_factory=list)  # per-value list[MetricsRecord]


def fit_loglog_slope(values, series) -> float:
    """Least-squares slope of log(series) against log(values), finite points only."""
    v = np.asarray(values, dtype=np.float64)
    s = np.asarray(series, dtype=np.float64)
    mask = np.isfinite(s) & (s > 0)
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(v[mask]), np.log(s[mask]), 1)[0])


def stability_sweep(base_config, axis: str, values, parallel: bool = False) -> StabilityReport:
    """Re-run the experiment once per swept value with everything else fixed.

    Collects the round-1 gradient-norm statistic (round 0 has no adapter
    gradients at all) and the final loss; the flatness ratio is max/min of
    the round-1 norms across the sweep.
    """
    from . import fed  # runtime import keeps module layering acyclic

    if axis not in ("rank", "clients"):
        raise ContractViolation(f"unknown sweep axis {axis!r}")
    vals = [int(v) for v in values]
    if not vals:
        raise ContractViolation("sweep needs at least one value")
    if any(b >= c for b, c in zip(vals, vals[1:])):
        raise ContractViolation("sweep values must be strictly increasing")

    from dataclasses import replace

    norms: list[float] = []
    finals: list[float] = []
    verdicts: list[str] = []
    runs = []
    for v in vals:
        cfg = replace(base_config, **({"rank": v} if axis == "rank" else {"n_clients": v}))
        result = fed.run_experiment(cfg, parallel=parallel)
        records = result.records
        round1 = next((r for r in records if r.round == 1), None)
        norms.append(round1.avg_grad_norm if round1 and round1.avg_grad_norm is not None else float("nan"))
        finals.append(records[-1].mean_loss)
        verdicts.append(result.verdict)
        runs.append(records)
    finite = [n for n in norms if np.isfinite(n) and n > 0]
    ratio = max(finite) / min(finite) if finite else float("nan")
    return StabilityReport(
        axis=axis,
        values=vals,
        round1_grad_norms=norms,
        final_losses=finals,
        verdicts=verdicts,
        flatness_ratio=ratio,
        loglog_slope=fit_loglog_slope(vals, norms),
        runs=runs,
    )


# --- metrics CSV schema -----------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return "%.9g" % x


def csv_header(n_layers: int, swept: bool = False) -> str:
    cols = [
        "run_id", "method", "rule", "strategy", "rank", "n_clients", "seed", "round",
        "mean_loss", "ppl_analog", "avg_grad_norm",
    ]
    cols += [f"act_mean_l{i}" for i in range(n_layers)]
    cols += [f"act_var_l{i}" for i in range(n_layers)]
    cols.append("diverged_count")
    if swept:
        cols.append("swept_value")
    return ",".join(cols)


def csv_row(cfg, record: MetricsRecord, swept_value=None) -> str:
    cols = [
        cfg.run_id, cfg.method(), cfg.scaling_rule, cfg.strategy,
        str(cfg.rank), str(cfg.n_clients), str(cfg.master_seed), str(record.round),
        _fmt(record.mean_loss), _fmt(record.ppl_analog), _fmt(record.avg_grad_norm),
    ]
    cols += [_fmt(m) for m in record.act_means]
    cols += [_fmt(v) for v in record.act_vars]
    cols.append(str(record.diverged_count))
    if swept_value is not None:
        cols.append(str(swept_value))
    return ",".join(cols)
