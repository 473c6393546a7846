import numpy as np
import pytest

from fedlora import fed, model, tasks
from fedlora.config import (
    ALTERNATING,
    FREEZE_A,
    SHARE_A_ONLY,
    SHARE_BOTH,
    ExperimentConfig,
)
from fedlora.linalg import ContractViolation
from fedlora.metrics import MetricsRecord


def _cfg(**kw):
    base = dict(
        n_clients=3, rank=4, dim_d=8, dim_k=8, layers=2, rounds=3,
        local_steps=2, batch_size=4, n_samples=48, val_samples=16,
        learning_rate=0.01, master_seed=7,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestBatchSchedule:
    def _client(self, n_samples):
        cfg = _cfg(n_clients=1, n_samples=n_samples, val_samples=4)
        _, clients, _, _ = fed.build_experiment(cfg)
        return clients[0]

    def test_cyclic_wraparound(self):
        client = self._client(10)
        seen = []
        for _ in range(5):
            x, _ = client.batch(4)
            seen.append(x.copy())
        # 10 samples, batch 4: starts 0, 4, 8 (wrap), 2, 6; step 5 revisits 0
        x, _ = client.batch(4)
        assert np.array_equal(x, seen[0])

    def test_full_shard_when_batch_exceeds_it(self):
        client = self._client(6)
        x, _ = client.batch(100)
        assert x.shape[1] == 6
        x2, _ = client.batch(100)
        assert np.array_equal(x, x2)

    def test_pure_function_of_cursor(self):
        a = self._client(12)
        b = self._client(12)
        for _ in range(7):
            xa, _ = a.batch(5)
            xb, _ = b.batch(5)
            assert np.array_equal(xa, xb)


class TestBuildExperiment:
    def test_shared_base_weights(self):
        _, clients, _, _ = fed.build_experiment(_cfg())
        for layer_idx in range(2):
            ref = clients[0].network.layers[layer_idx].w0
            for c in clients[1:]:
                assert c.network.layers[layer_idx].w0 is ref or np.array_equal(
                    c.network.layers[layer_idx].w0, ref
                )

    def test_distinct_client_inits(self):
        _, clients, _, _ = fed.build_experiment(_cfg())
        a0 = clients[0].network.layers[0].adapter.A
        a1 = clients[1].network.layers[0].adapter.A
        assert not np.array_equal(a0, a1)

    def test_b_zero_everywhere(self):
        _, clients, _, _ = fed.build_experiment(_cfg())
        for c in clients:
            for layer in c.network.layers:
                assert not layer.adapter.B.any()

    def test_shards_cover_training_set(self):
        cfg = _cfg()
        _, clients, _, _ = fed.build_experiment(cfg)
        assert sum(c.shard.n_samples for c in clients) == cfg.n_samples

    def test_layer_dims_regression(self):
        cfg = _cfg(dim_d=10, dim_k=6, layers=3)
        dims = fed._layer_dims(cfg)
        assert dims == [(10, 6), (10, 10), (10, 10)]

    def test_layer_dims_classification(self):
        cfg = _cfg(task=tasks.CLASSIFICATION, classes=5, dim_d=10, dim_k=6, layers=2)
        dims = fed._layer_dims(cfg)
        assert dims == [(10, 6), (5, 10)]

    def test_last_layer_identity_activation(self):
        _, clients, _, _ = fed.build_experiment(_cfg(activation=model.TANH))
        layers = clients[0].network.layers
        assert layers[0].activation == model.TANH
        assert layers[-1].activation == model.IDENTITY


class TestAggregate:
    def test_mean_oracle(self):
        server = fed.ServerState(strategy=SHARE_A_ONLY, round=1)
        uploads = {
            0: [{"A": np.full((2, 2), 1.0), "B": np.full((2, 2), 10.0)}],
            1: [{"A": np.full((2, 2), 3.0), "B": np.full((2, 2), 30.0)}],
        }
        fed.aggregate(server, uploads)
        assert np.array_equal(server.broadcast_a[0], np.full((2, 2), 2.0))
        assert server.broadcast_b is None

    def test_order_independence(self):
        gen = np.random.default_rng(0)
        mats = {i: gen.standard_normal((3, 3)) for i in range(4)}
        server1 = fed.ServerState(strategy=SHARE_A_ONLY, round=1)
        server2 = fed.ServerState(strategy=SHARE_A_ONLY, round=1)
        up1 = {i: [{"A": mats[i], "B": np.zeros((3, 3))}] for i in [0, 1, 2, 3]}
        up2 = {i: [{"A": mats[i], "B": np.zeros((3, 3))}] for i in [3, 1, 0, 2]}
        fed.aggregate(server1, up1)
        fed.aggregate(server2, up2)
        assert np.array_equal(server1.broadcast_a[0], server2.broadcast_a[0])

    def test_empty_uploads_raise(self):
        with pytest.raises(fed.RunDiverged):
            fed.aggregate(fed.ServerState(strategy=SHARE_A_ONLY, round=1), {})

    def test_shape_mismatch_rejected(self):
        server = fed.ServerState(strategy=SHARE_A_ONLY, round=1)
        uploads = {
            0: [{"A": np.zeros((2, 2)), "B": np.zeros((2, 2))}],
            1: [{"A": np.zeros((3, 2)), "B": np.zeros((2, 2))}],
        }
        with pytest.raises(ContractViolation):
            fed.aggregate(server, uploads)

    def test_strategy_selection(self):
        assert fed.ServerState(SHARE_A_ONLY).matrices_to_aggregate(1) == (True, False)
        assert fed.ServerState(SHARE_BOTH).matrices_to_aggregate(1) == (True, True)
        assert fed.ServerState(FREEZE_A).matrices_to_aggregate(1) == (False, True)
        assert fed.ServerState(ALTERNATING).matrices_to_aggregate(1) == (True, False)
        assert fed.ServerState(ALTERNATING).matrices_to_aggregate(2) == (False, True)


class TestStrategies:
    def _run_rounds(self, cfg, n):
        server, clients, val, root = fed.build_experiment(cfg)
        init_a = [
            [layer.adapter.A.copy() for layer in c.network.layers] for c in clients
        ]
        for _ in range(n):
            fed.run_round(server, clients, cfg, val, root)
        return server, clients, init_a

    def test_share_a_only_synchronizes_a_not_b(self):
        _, clients, _ = self._run_rounds(_cfg(strategy=SHARE_A_ONLY), 2)
        for layer_idx in range(2):
            a0 = clients[0].network.layers[layer_idx].adapter.A
            for c in clients[1:]:
                assert np.array_equal(c.network.layers[layer_idx].adapter.A, a0)
        b_mats = [c.network.layers[0].adapter.B for c in clients]
        assert not np.array_equal(b_mats[0], b_mats[1])

    def test_share_both_synchronizes_everything(self):
        _, clients, _ = self._run_rounds(_cfg(strategy=SHARE_BOTH), 2)
        for layer_idx in range(2):
            a0 = clients[0].network.layers[layer_idx].adapter.A
            b0 = clients[0].network.layers[layer_idx].adapter.B
            for c in clients[1:]:
                assert np.array_equal(c.network.layers[layer_idx].adapter.A, a0)
                assert np.array_equal(c.network.layers[layer_idx].adapter.B, b0)

    def test_freeze_a_leaves_a_at_init(self):
        _, clients, init_a = self._run_rounds(_cfg(strategy=FREEZE_A), 2)
        for c, inits in zip(clients, init_a):
            for layer, a0 in zip(c.network.layers, inits):
                assert np.array_equal(layer.adapter.A, a0)
        b0 = clients[0].network.layers[0].adapter.B
        assert np.array_equal(clients[1].network.layers[0].adapter.B, b0)
        assert b0.any()

    def test_alternating_round_parity(self):
        cfg = _cfg(strategy=ALTERNATING)
        server, clients, _ = self._run_rounds(cfg, 1)
        # round 1 is odd: A was synchronized, B was not
        assert server.broadcast_a is not None and server.broadcast_b is None
        a0 = clients[0].network.layers[0].adapter.A
        assert np.array_equal(clients[1].network.layers[0].adapter.A, a0)
        server2, clients2, val2, root2 = fed.build_experiment(cfg)
        fed.run_round(server2, clients2, cfg, val2, root2)
        fed.run_round(server2, clients2, cfg, val2, root2)
        assert server2.broadcast_a is None and server2.broadcast_b is not None


class TestDivergence:
    def test_runaway_loss_flags_client(self):
        cfg = _cfg(learning_rate=50.0, divergence_threshold=100.0, rounds=5)
        result = fed.run_experiment(cfg)
        assert result.verdict == "diverged"
        assert any(c.diverged for c in result.clients)

    def test_diverged_client_excluded_from_aggregate(self):
        cfg = _cfg(rounds=2)
        server, clients, val, root = fed.build_experiment(cfg)
        clients[1].diverged = True
        result = fed.run_round(server, clients, cfg, val, root)
        assert result.record.diverged_count == 1
        assert np.isnan(result.client_losses[1])

    def test_all_diverged_stops_run(self):
        cfg = _cfg(rounds=3)
        server, clients, val, root = fed.build_experiment(cfg)
        for c in clients:
            c.diverged = True
        with pytest.raises(fed.RunDiverged):
            fed.run_round(server, clients, cfg, val, root)

    def test_local_train_on_diverged_client_rejected(self):
        _, clients, _, root = fed.build_experiment(_cfg())
        clients[0].diverged = True
        with pytest.raises(ContractViolation):
            fed.local_train(clients[0], 1, 4, root)


class TestVerdict:
    def _records(self, losses, last_round_diverged=0):
        return [
            MetricsRecord(
                round=i, mean_loss=x, ppl_analog=x, avg_grad_norm=None,
                act_means=[], act_vars=[],
                diverged_count=last_round_diverged if i == len(losses) - 1 else 0,
            )
            for i, x in enumerate(losses)
        ]

    def test_converged(self):
        recs = self._records([10.0] * 6 + [1.0] * 5)
        assert fed.verdict_for(recs, 1e6) == "converged"

    def test_stagnant(self):
        recs = self._records([10.0] * 11)
        assert fed.verdict_for(recs, 1e6) == "stagnant"

    def test_diverged_on_nan(self):
        recs = self._records([10.0, float("nan")])
        assert fed.verdict_for(recs, 1e6) == "diverged"

    def test_diverged_on_threshold(self):
        recs = self._records([10.0, 2e6])
        assert fed.verdict_for(recs, 1e6) == "diverged"

    def test_diverged_on_flagged_clients(self):
        recs = self._records([10.0] * 6 + [1.0], last_round_diverged=1)
        assert fed.verdict_for(recs, 1e6) == "diverged"

    def test_short_run_references_round_zero(self):
        # a 3-round run that clearly improves must not read as stagnant
        recs = self._records([10.0, 5.0, 2.0, 1.0])
        assert fed.verdict_for(recs, 1e6) == "converged"


class TestRunExperiment:
    def test_round_zero_record(self):
        result = fed.run_experiment(_cfg(rounds=1))
        first = result.records[0]
        assert first.round == 0
        assert first.avg_grad_norm is None
        # B starts at zero, so the adapter contributes nothing at round 0
        assert all(m == 0.0 for m in first.act_means)
        assert all(v == 0.0 for v in first.act_vars)

    def test_record_count(self):
        result = fed.run_experiment(_cfg(rounds=4))
        assert len(result.records) == 5
        assert [r.round for r in result.records] == [0, 1, 2, 3, 4]

    def test_loss_decreases(self):
        result = fed.run_experiment(_cfg(rounds=10, local_steps=5))
        assert result.records[-1].mean_loss < result.records[0].mean_loss
        assert result.verdict == "converged"

    def test_reproducible(self):
        cfg = _cfg(rounds=3)
        r1 = fed.run_experiment(cfg)
        r2 = fed.run_experiment(cfg)
        for a, b in zip(r1.records, r2.records):
            assert a == b
        for c1, c2 in zip(r1.clients, r2.clients):
            for l1, l2 in zip(c1.network.layers, c2.network.layers):
                assert np.array_equal(l1.adapter.A, l2.adapter.A)
                assert np.array_equal(l1.adapter.B, l2.adapter.B)

    def test_parallel_matches_sequential(self):
        cfg = _cfg(rounds=3)
        seq = fed.run_experiment(cfg, parallel=False)
        par = fed.run_experiment(cfg, parallel=True)
        for a, b in zip(seq.records, par.records):
            assert a == b
        for c1, c2 in zip(seq.clients, par.clients):
            for l1, l2 in zip(c1.network.layers, c2.network.layers):
                assert np.array_equal(l1.adapter.B, l2.adapter.B)

    def test_on_record_streams_everything(self):
        seen = []
        result = fed.run_experiment(_cfg(rounds=2), on_record=seen.append)
        assert seen == result.records

    def test_adam_path_runs(self):
        result = fed.run_experiment(_cfg(optimizer="adam", learning_rate=0.01, rounds=5))
        assert result.verdict in ("converged", "stagnant")
        assert result.records[-1].mean_loss < result.records[0].mean_loss

    def test_reset_optim_clears_adam_state(self):
        cfg = _cfg(optimizer="adam", learning_rate=0.01, rounds=1, reset_optim=True)
        server, clients, val, root = fed.build_experiment(cfg)
        clients[0].opt_states[0].step = 99
        fed.run_round(server, clients, cfg, val, root)
        assert clients[0].opt_states[0].step == cfg.local_steps

    def test_classification_run(self):
        cfg = _cfg(
            task=tasks.CLASSIFICATION, classes=3, partition="dirichlet",
            dirichlet_beta=0.5, rounds=5, n_samples=96,
        )
        result = fed.run_experiment(cfg)
        assert np.isfinite(result.records[-1].mean_loss)
        assert result.records[0].ppl_analog == pytest.approx(
            np.exp(result.records[0].mean_loss)
        )
