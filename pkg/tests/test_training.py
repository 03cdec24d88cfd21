import json

import numpy as np
import pytest

from slate.dtdg import DynamicGraph, Snapshot, generate_erdos_renyi, generate_sbm
from slate.errors import ConfigError, UndefinedMetricError
from slate.metrics import auc, average_precision
from slate.sampling import NegativeSampler, sample_pairs
from slate.training import EvalReport, TrainConfig, evaluate, train


def brute_force_auc(scores, labels):
    """O(n^2) pairwise comparison oracle, ties counted one half."""
    scores = np.asarray(scores, float)
    pos = scores[np.asarray(labels) == 1]
    neg = scores[np.asarray(labels) == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def brute_force_ap(scores, labels):
    """Precision/recall curve integration oracle with the same stable ordering."""
    scores = np.asarray(scores, float)
    labels = np.asarray(labels)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = int((labels == 1).sum())
    ap, hits = 0.0, 0
    prev_recall = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            recall = hits / n_pos
            ap += (recall - prev_recall) * (hits / rank)
            prev_recall = recall
    return ap


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0

    def test_tie_counts_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_reversed_ranking(self):
        assert auc([0.1, 0.9], [1, 0]) == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.3, 0.4], [1, 1])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 1)  # coarse grid forces ties
            assert abs(auc(scores, labels) - brute_force_auc(scores, labels)) < 1e-12


class TestAveragePrecision:
    def test_all_positives_first(self):
        assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_positive_ranked_second(self):
        assert average_precision([0.9, 0.1], [0, 1]) == 0.5

    def test_zero_positives_rejected(self):
        with pytest.raises(UndefinedMetricError):
            average_precision([0.3], [0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            labels = rng.integers(0, 2, size=n)
            if not labels.any():
                labels[0] = 1
            scores = np.round(rng.random(n), 1)
            assert abs(
                average_precision(scores, labels) - brute_force_ap(scores, labels)
            ) < 1e-12


def graph_from_edge_lists(n, per_snapshot):
    return DynamicGraph(n, tuple(Snapshot.from_edges(n, e) for e in per_snapshot))


class TestSamplePairs:
    def test_complete_snapshot_skips(self):
        full = [(u, v) for u in range(4) for v in range(u + 1, 4)]
        g = graph_from_edge_lists(4, [full, full])
        sampler = NegativeSampler.for_graph(g, "random")
        assert sample_pairs(sampler, g, 1, np.random.default_rng(0)) == []

    def test_empty_positive_set_skips(self):
        g = graph_from_edge_lists(4, [[(0, 1)], []])
        sampler = NegativeSampler.for_graph(g, "random")
        assert sample_pairs(sampler, g, 1, np.random.default_rng(0)) == []

    def test_negative_never_positive_now(self):
        g = graph_from_edge_lists(6, [[(0, 1), (2, 3)], [(0, 1), (0, 2), (4, 5)]])
        sampler = NegativeSampler.for_graph(g, "random")
        for _ in range(50):
            for u, v_pos, v_neg in sample_pairs(sampler, g, 1, np.random.default_rng(_)):
                assert (min(u, v_pos), max(u, v_pos)) in g.snapshots[1].edges
                assert (min(u, v_neg), max(u, v_neg)) not in g.snapshots[1].edges
                assert v_neg != u

    def test_historical_pool_set_arithmetic(self):
        # history {01, 02}, current {01}: the only historical negative for u=0 is 2
        g = graph_from_edge_lists(4, [[(0, 1), (0, 2)], [(0, 1)]])
        sampler = NegativeSampler.for_graph(g, "historical")
        for seed in range(20):
            triples = sample_pairs(sampler, g, 1, np.random.default_rng(seed))
            assert triples == [(0, 1, 2)]
        assert sampler.fallback_count == 0

    def test_historical_empty_history_falls_back(self):
        g = graph_from_edge_lists(4, [[], [(0, 1), (2, 3)]])
        sampler = NegativeSampler.for_graph(g, "historical")
        triples = sample_pairs(sampler, g, 1, np.random.default_rng(0))
        assert len(triples) == 2
        assert sampler.fallback_count == 2  # counted fallback to random

    def test_inductive_excludes_train_edges(self):
        g = graph_from_edge_lists(5, [[(0, 1), (0, 2)], [(0, 3)], [(0, 1)]])
        sampler = NegativeSampler.for_graph(g, "inductive", train_range=range(0, 2))
        # train edges {01,02,03}; predicting t=2, positives {(0,1)};
        # inductive pool for u=0 excludes 1,2,3 -> only node 4
        for seed in range(10):
            assert sample_pairs(sampler, g, 2, np.random.default_rng(seed)) == [(0, 1, 4)]

    def test_uniform_within_pool(self):
        g = graph_from_edge_lists(6, [[(0, 1)], [(0, 1)]])
        sampler = NegativeSampler.for_graph(g, "random")
        counts = {v: 0 for v in (2, 3, 4, 5)}
        for seed in range(2000):
            (_, _, v_neg), = sample_pairs(sampler, g, 1, np.random.default_rng(seed))
            counts[v_neg] += 1
        freqs = np.array(list(counts.values())) / 2000
        assert np.abs(freqs - 0.25).max() < 0.05

    def test_validity_against_exhaustive_oracles(self):
        g = generate_erdos_renyi(12, 0.3, 6, seed=4)
        train_range = range(0, 4)
        for strategy in ("random", "historical", "inductive"):
            sampler = NegativeSampler.for_graph(g, strategy, train_range)
            for t_pred in range(1, 6):
                positives = g.snapshots[t_pred].edges
                history = g.edge_union(t_pred)
                train_edges = g.edge_union(train_range.stop)
                for rep in range(30):
                    rng = np.random.default_rng([t_pred, rep])
                    before = sampler.fallback_count
                    triples = sample_pairs(sampler, g, t_pred, rng)
                    fell_back = sampler.fallback_count - before
                    for u, v_pos, v_neg in triples:
                        e_neg = (min(u, v_neg), max(u, v_neg))
                        assert e_neg not in positives
                        if strategy == "historical" and fell_back == 0:
                            assert e_neg in history
                        if strategy == "inductive":
                            assert e_neg not in train_edges


class TestTrainLoop:
    def small_setup(self, lr=0.1, epochs=3, patience=50, **kw):
        g = generate_sbm(12, 2, 0.6, 0.1, 6, seed=2)
        cfg = TrainConfig(lr=lr, epochs=epochs, patience=patience, w=2, k=2, d=16, heads=2,
                          nhead_xa=1, ffn_dim=32, seed=0, **kw)
        model = cfg.build_model(g.num_nodes)
        return g, cfg, model

    def test_lr_zero_keeps_parameters_and_constant_trace(self):
        g, cfg, model = self.small_setup(lr=0.0, epochs=4)
        before = model.store.state()
        history = train(model, g, cfg, range(0, 4), range(4, 5))
        for name, data in model.store.state().items():
            assert np.array_equal(data, before[name])
        assert len(set(np.round(history.losses, 15))) == 1
        assert len(set(np.round(history.val_ap, 15))) == 1

    def test_deterministic_loss_traces(self):
        g, cfg, model = self.small_setup(epochs=3)
        h1 = train(model, g, cfg, range(0, 4), range(4, 5))
        model2 = cfg.build_model(g.num_nodes)
        h2 = train(model2, g, cfg, range(0, 4), range(4, 5))
        assert h1.losses == h2.losses
        assert h1.val_ap == h2.val_ap
        for name, p in model.store.parameters().items():
            assert np.array_equal(p.data, model2.store.parameters()[name].data)

    def test_loss_decreases_on_sbm(self):
        g = generate_sbm(50, 2, 0.5, 0.05, 10, seed=1)
        decreasing = False
        for lr in (0.1, 0.01):
            cfg = TrainConfig(lr=lr, epochs=6, patience=50, w=3, k=4, d=32, heads=2,
                              nhead_xa=1, ffn_dim=64, norm_first=False, seed=0)
            model = cfg.build_model(g.num_nodes)
            history = train(model, g, cfg, range(0, 7), range(7, 8))
            diffs = np.diff(history.losses[:6])
            if (diffs < 0).all():
                decreasing = True
                break
        assert decreasing

    def test_too_few_train_snapshots_rejected(self):
        g, cfg, model = self.small_setup()
        with pytest.raises(ConfigError):
            train(model, g, cfg, range(0, 1), range(1, 2))

    def test_early_stopping_restores_best(self):
        g, cfg, model = self.small_setup(epochs=8, patience=1)
        history = train(model, g, cfg, range(0, 4), range(4, 5))
        assert history.best_epoch >= 0
        assert history.best_val_ap == max(history.val_ap)
        if history.stopped_early:
            assert len(history.losses) < cfg.epochs


class TestEvaluate:
    def test_zeroed_head_gives_tied_scores_auc_half(self):
        g = generate_sbm(12, 2, 0.6, 0.1, 6, seed=2)
        cfg = TrainConfig(w=2, k=2, d=16, heads=2, nhead_xa=1, ffn_dim=32, seed=0)
        model = cfg.build_model(g.num_nodes)
        model.head_w2.data[...] = 0.0
        model.head_b2.data[...] = 0.0
        report = evaluate(model, g, range(4, 6), strategy="random", seed=0)
        assert report.aggregate_auc == 0.5
        for snap_eval in report.per_snapshot:
            assert snap_eval.auc == 0.5

    def test_one_row_per_nonempty_test_snapshot(self):
        # the final snapshot has no positives: skipped before its window is built
        g = graph_from_edge_lists(
            6, [[(0, 1), (2, 3)], [(0, 1)], [(1, 2)], [(0, 2), (3, 4)], []]
        )
        cfg = TrainConfig(w=1, k=1, d=8, heads=1, nhead_xa=1, ffn_dim=16, seed=0)
        model = cfg.build_model(6)
        report = evaluate(model, g, range(2, 5), strategy="random", seed=0)
        assert [s.t for s in report.per_snapshot] == [2, 3]

    def test_report_json_shape(self):
        g = generate_sbm(12, 2, 0.6, 0.1, 6, seed=2)
        cfg = TrainConfig(w=2, k=2, d=16, heads=2, nhead_xa=1, ffn_dim=32, seed=0)
        model = cfg.build_model(g.num_nodes)
        report = evaluate(model, g, range(4, 6), strategy="historical",
                          train_range=range(0, 4), seed=0)
        payload = json.loads(report.to_json())
        assert set(payload) == {"config", "strategy", "per_snapshot", "aggregate", "warnings"}
        assert payload["strategy"] == "historical"
        assert 0.0 <= payload["aggregate"]["auc"] <= 1.0
        assert 0.0 <= payload["aggregate"]["ap"] <= 1.0
        assert all(set(row) == {"t", "auc", "ap", "n_pairs"} for row in payload["per_snapshot"])

    def test_windows_reach_back_across_split(self):
        # predicting the first test snapshot uses train/val snapshots as context
        g = generate_sbm(12, 2, 0.6, 0.1, 6, seed=2)
        cfg = TrainConfig(w=3, k=2, d=16, heads=2, nhead_xa=1, ffn_dim=32, seed=0)
        model = cfg.build_model(g.num_nodes)
        report = evaluate(model, g, range(4, 5), strategy="random", seed=0)
        assert report.per_snapshot[0].t == 4  # window {1,2,3} crosses the split


def test_train_errors_carry_epoch_context():
    # a window with an empty snapshot aborts with (epoch, target) context
    g = graph_from_edge_lists(5, [[(0, 1)], [], [(0, 1), (2, 3)], [(1, 2)]])
    cfg = TrainConfig(w=2, k=1, d=8, heads=1, nhead_xa=1, ffn_dim=16, epochs=2, seed=0)
    model = cfg.build_model(5)
    with pytest.raises(Exception, match=r"epoch 0, target snapshot 2"):
        train(model, g, cfg, range(0, 3), range(3, 4))
