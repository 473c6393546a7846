"""The federated round loop: clients, server, aggregation strategies.

Each round: local training on every client, selective upload, server-side
averaging in ascending client-id order, broadcast, and one evaluation on a
shared validation batch. Which matrices travel is the aggregation strategy:
A only (split aggregation), both, B only with A frozen, or alternating by
round parity.

Determinism contract: every client's work depends only on its own state and
per-(client, round) batch schedule, so threaded and sequential execution are
bit-identical; the server reduction order is fixed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model, optim, tasks
from .adapter import init_adapter, resolve_gamma
from .config import ALTERNATING, FREEZE_A, SHARE_A_ONLY, SHARE_BOTH, ExperimentConfig
from .linalg import ContractViolation, DenseMatrix, RngStream
from .metrics import MetricsRecord, activation_moments, avg_grad_norm

# stream-id entity kinds
_KIND_DATA = 0
_KIND_PARTITION = 1
_KIND_CLIENT_INIT = 2


class RunDiverged(RuntimeError):
    """Raised when no client is left to aggregate."""


@dataclass
class ClientState:
    client_id: int
    network: model.AdaptedNetwork
    opt_states: list[optim.OptimizerState]  # one per layer/adapter
    shard: tasks.Dataset
    diverged: bool = False
    cursor: int = 0  # global mini-batch step, drives the cyclic batch schedule

    def batch(self, batch_size: int) -> tuple[DenseMatrix, np.ndarray | DenseMatrix]:
        """Next mini-batch: a contiguous cyclic slice of the shard.

        The schedule is a pure function of the step counter, which keeps the
        training sequence independent of client scheduling and lets exact
        trajectory oracles replay it.
        """
        n = self.shard.n_samples
        if batch_size >= n:
            idx = np.arange(n)
        else:
            start = (self.cursor * batch_size) % n
            idx = np.arange(start, start + batch_size) % n
        self.cursor += 1
        sub = self.shard.subset(idx)
        return sub.inputs, sub.targets


@dataclass
class ServerState:
    strategy: str
    round: int = 0
    broadcast_a: list[DenseMatrix] | None = None  # per layer
    broadcast_b: list[DenseMatrix] | None = None

    def matrices_to_aggregate(self, round_index: int) -> tuple[bool, bool]:
        """(aggregate_A, aggregate_B) for this round."""
        if self.strategy == SHARE_A_ONLY:
            return True, False
        if self.strategy == SHARE_BOTH:
            return True, True
        if self.strategy == FREEZE_A:
            return False, True
        if self.strategy == ALTERNATING:
            return (True, False) if round_index % 2 == 1 else (False, True)
        raise ContractViolation(f"unknown strategy {self.strategy!r}")


@dataclass
class RoundResult:
    round_index: int
    client_losses: list[float]
    record: MetricsRecord


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    rounds: list[RoundResult]
    verdict: str  # converged | diverged | stagnant
    clients: list[ClientState]
    server: ServerState
    config: ExperimentConfig


def _layer_dims(cfg: ExperimentConfig) -> list[tuple[int, int]]:
    out_final = cfg.classes if cfg.task == tasks.CLASSIFICATION else cfg.dim_d
    dims = []
    for i in range(cfg.layers):
        d_in = cfg.dim_k if i == 0 else cfg.dim_d
        d_out = out_final if i == cfg.layers - 1 else cfg.dim_d
        dims.append((d_out, d_in))
    return dims


def build_base_weights(cfg: ExperimentConfig, rng: RngStream) -> list[DenseMatrix]:
    """Frozen base matrices, shared by every client."""
    weights = []
    for i, (d_out, d_in) in enumerate(_layer_dims(cfg)):
        gen = rng.child(i).generator()
        weights.append(gen.normal(0.0, 1.0 / np.sqrt(d_in), (d_out, d_in)))
    return weights


def build_client(
    cfg: ExperimentConfig,
    client_id: int,
    base_weights: list[DenseMatrix],
    shard: tasks.Dataset,
    rng: RngStream,
) -> ClientState:
    rule = cfg.rule()
    sigma_a = cfg.resolved_sigma_a()
    layers = []
    for i, w0 in enumerate(base_weights):
        d_out, d_in = w0.shape
        adapter = init_adapter(d_out, d_in, cfg.rank, sigma_a, rng.child(client_id, i))
        resolve_gamma(adapter, rule, cfg.n_clients)
        activation = cfg.activation if i < len(base_weights) - 1 else model.IDENTITY
        layers.append(model.AdaptedLayer(w0=w0, adapter=adapter, activation=activation))
    loss_kind = model.CROSS_ENTROPY if cfg.task == tasks.CLASSIFICATION else model.SQUARED_ERROR
    net = model.AdaptedNetwork(layers=layers, loss_kind=loss_kind)
    opt_states = [_fresh_opt_state(cfg) for _ in layers]
    return ClientState(client_id=client_id, network=net, opt_states=opt_states, shard=shard)


def _fresh_opt_state(cfg: ExperimentConfig) -> optim.OptimizerState:
    return optim.OptimizerState(
        kind=cfg.optimizer,
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )


def local_train(
    client: ClientState,
    local_steps: int,
    batch_size: int,
    rng: RngStream,
    train_a: bool = True,
    train_b: bool = True,
    divergence_threshold: float = 1e6,
) -> list[float]:
    """Run mini-batch steps on the client's shard; returns per-step grad norms.

    ``rng`` is reserved for stochastic batch schedules; the default schedule
    is the deterministic cyclic slice driven by the client's step counter.
    Sets the diverged flag (and stops) on a non-finite or runaway loss.
    """
    if client.diverged:
        raise ContractViolation(f"client {client.client_id} already diverged")
    norms: list[float] = []
    net = client.network
    for _ in range(local_steps):
        x, y = client.batch(batch_size)
        out, trace = model.forward(net, x)
        loss_value, v = model.loss(out, y, net.loss_kind)
        if not np.isfinite(loss_value) or abs(loss_value) > divergence_threshold:
            client.diverged = True
            break
        grads = model.backward(net, trace, v)
        norms.append(avg_grad_norm(g for gr in grads for g in (gr.grad_A, gr.grad_B)))
        ok = True
        for layer, state, gr in zip(net.layers, client.opt_states, grads):
            params: dict[str, DenseMatrix] = {}
            layer_grads: dict[str, DenseMatrix] = {}
            if train_a:
                params["A"] = layer.adapter.A
                layer_grads["A"] = gr.grad_A
            if train_b:
                params["B"] = layer.adapter.B
                layer_grads["B"] = gr.grad_B
            ok = optim.apply_update(state, params, layer_grads) and ok
        if not ok:
            client.diverged = True
            break
    return norms


def aggregate(
    server: ServerState, uploads: dict[int, list[dict[str, DenseMatrix]]]
) -> ServerState:
    """Average uploads in ascending client-id order into the broadcast buffer."""
    if not uploads:
        raise RunDiverged("no non-diverged clients left to aggregate")
    order = sorted(uploads)
    n_layers = len(uploads[order[0]])
    for cid in order:
        if len(uploads[cid]) != n_layers:
            raise ContractViolation("clients disagree on layer count")
    agg_a, agg_b = server.matrices_to_aggregate(server.round)

    def mean_of(key: str) -> list[DenseMatrix]:
        out = []
        for layer_idx in range(n_layers):
            ref = uploads[order[0]][layer_idx][key]
            total = np.zeros_like(ref)
            for cid in order:
                m = uploads[cid][layer_idx][key]
                if m.shape != ref.shape:
                    raise ContractViolation(
                        f"upload shape mismatch at layer {layer_idx}: {m.shape} vs {ref.shape}"
                    )
                total += m
            out.append(total / len(order))
        return out

    server.broadcast_a = mean_of("A") if agg_a else None
    server.broadcast_b = mean_of("B") if agg_b else None
    return server


def _apply_broadcast(server: ServerState, clients: list[ClientState]) -> None:
    for client in clients:
        if client.diverged:
            continue
        for layer_idx, layer in enumerate(client.network.layers):
            if server.broadcast_a is not None:
                layer.adapter.A = server.broadcast_a[layer_idx].copy()
            if server.broadcast_b is not None:
                layer.adapter.B = server.broadcast_b[layer_idx].copy()


def evaluate(client: ClientState, val: tasks.Dataset) -> tuple[float, float, list[tuple[float, float]]]:
    net = client.network
    out, trace = model.forward(net, val.inputs)
    loss_value, _ = model.loss(out, val.targets, net.loss_kind)
    ppl = model.perplexity_analog(loss_value, net.loss_kind) if np.isfinite(loss_value) else float("nan")
    return loss_value, ppl, activation_moments(trace)


def _round_record(
    round_index: int,
    clients: list[ClientState],
    val: tasks.Dataset,
    grad_norm: float | None,
) -> MetricsRecord:
    live = [c for c in clients if not c.diverged]
    reporter = live[0] if live else clients[0]
    loss_value, ppl, moments = evaluate(reporter, val)
    return MetricsRecord(
        round=round_index,
        mean_loss=loss_value,
        ppl_analog=ppl,
        avg_grad_norm=grad_norm,
        act_means=[m for m, _ in moments],
        act_vars=[v for _, v in moments],
        diverged_count=sum(c.diverged for c in clients),
    )


def run_round(
    server: ServerState,
    clients: list[ClientState],
    cfg: ExperimentConfig,
    val: tasks.Dataset,
    rng: RngStream,
    parallel: bool = False,
) -> RoundResult:
    if not clients:
        raise ContractViolation("cannot run a round with zero clients")
    server.round += 1
    t = server.round
    train_a = cfg.strategy != FREEZE_A
    if cfg.reset_optim:
        for client in clients:
            if not client.diverged:
                client.opt_states = [_fresh_opt_state(cfg) for _ in client.network.layers]

    live = [c for c in clients if not c.diverged]

    def work(client: ClientState) -> list[float]:
        return local_train(
            client,
            cfg.local_steps,
            cfg.batch_size,
            rng.child(client.client_id, t),
            train_a=train_a,
            train_b=True,
            divergence_threshold=cfg.divergence_threshold,
        )

    if parallel and len(live) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(live))) as pool:
            step_norms = list(pool.map(work, live))
    else:
        step_norms = [work(c) for c in live]

    uploads = {
        c.client_id: [
            {"A": layer.adapter.A.copy(), "B": layer.adapter.B.copy()}
            for layer in c.network.layers
        ]
        for c in clients
        if not c.diverged
    }
    aggregate(server, uploads)
    _apply_broadcast(server, clients)

    all_norms = [n for norms in step_norms for n in norms]
    grad_norm = float(np.mean(all_norms)) if all_norms else None
    record = _round_record(t, clients, val, grad_norm)
    client_losses = []
    for client in clients:
        if client.diverged:
            client_losses.append(float("nan"))
        else:
            client_losses.append(evaluate(client, val)[0])
    return RoundResult(round_index=t, client_losses=client_losses, record=record)


def build_experiment(
    cfg: ExperimentConfig,
) -> tuple[ServerState, list[ClientState], tasks.Dataset, RngStream]:
    """Materialize datasets, shards, clients, and the server from a config."""
    cfg.validate()
    root = RngStream(cfg.master_seed)
    total = cfg.n_samples + cfg.val_samples
    if cfg.task == tasks.CLASSIFICATION:
        full = tasks.make_classification(total, cfg.dim_k, cfg.classes, root.child(_KIND_DATA))
    else:
        full = tasks.make_regression(total, cfg.dim_k, cfg.dim_d, cfg.noise_std, root.child(_KIND_DATA))
    train = full.subset(np.arange(cfg.n_samples))
    val = full.subset(np.arange(cfg.n_samples, total))
    if cfg.partition == "dirichlet":
        part = tasks.partition_dirichlet(train, cfg.n_clients, cfg.dirichlet_beta, root.child(_KIND_PARTITION))
    else:
        part = tasks.partition_iid(train, cfg.n_clients, root.child(_KIND_PARTITION))
    base = build_base_weights(cfg, root.child(_KIND_CLIENT_INIT, 0))
    clients = [
        build_client(cfg, i, base, train.subset(part.shards[i]), root.child(_KIND_CLIENT_INIT, 1))
        for i in range(cfg.n_clients)
    ]
    server = ServerState(strategy=cfg.strategy)
    return server, clients, val, root


def verdict_for(records: list[MetricsRecord], threshold: float) -> str:
    losses = [r.mean_loss for r in records]
    if any(not np.isfinite(x) or abs(x) > threshold for x in losses):
        return "diverged"
    if records[-1].diverged_count > 0:
        return "diverged"
    reference_round = 5 if records[-1].round >= 5 else 0
    reference = next((r for r in records if r.round == reference_round), records[0])
    if records[-1].mean_loss > 0.9 * reference.mean_loss:
        return "stagnant"
    return "converged"


def run_experiment(
    cfg: ExperimentConfig, parallel: bool = False, on_record=None
) -> ExperimentResult:
    """Round 0 evaluation plus ``cfg.rounds`` federated rounds.

    ``on_record`` (if given) is called with each MetricsRecord as it is
    produced, so callers can stream an append-only log.
    """
    server, clients, val, root = build_experiment(cfg)
    records = [_round_record(0, clients, val, None)]
    rounds: list[RoundResult] = []
    if on_record:
        on_record(records[0])
    for _ in range(cfg.rounds):
        try:
            result = run_round(server, clients, cfg, val, root, parallel=parallel)
        except RunDiverged:
            break
        records.append(result.record)
        rounds.append(result)
        if on_record:
            on_record(result.record)
    live = [c for c in clients if not c.diverged]
    verdict = "diverged" if not live else verdict_for(records, cfg.divergence_threshold)
    return ExperimentResult(
        records=records, rounds=rounds, verdict=verdict,
        clients=clients, server=server, config=cfg,
    )
