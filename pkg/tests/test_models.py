import json

import numpy as np
import pytest

from agentauth.models import (
    ModelFormatError,
    Pdt,
    PdtAgent,
    UnsupportedVersionError,
    boltzmann,
    fit_mle_pdt,
    generate_random_pdt,
    load_pdt,
    node_count,
    save_pdt,
)


def bfs_paths(n, depth):
    """All node paths in breadth-first order, as the independent index oracle."""
    paths = [()]
    level = [()]
    for _ in range(depth):
        level = [p + (a,) for p in level for a in range(1, n + 1)]
        paths.extend(level)
    return paths


class TestBoltzmann:
    def test_equal_logits_uniform(self):
        p = boltzmann([0.5, 0.5, 0.5], 0.1)
        assert np.allclose(p, [1 / 3] * 3, atol=1e-15)

    def test_high_temperature_limit(self):
        p = boltzmann([0.0, 1.0], 1000.0)
        assert np.all(np.abs(p - 0.5) < 1e-3)

    def test_closed_form(self):
        # direct evaluation of exp(0), exp(10)
        p = boltzmann([0.0, 1.0], 0.1)
        expected = np.array([1.0, np.exp(10.0)])
        expected /= expected.sum()
        assert np.allclose(p, expected, atol=1e-8)
        assert abs(p[0] - 4.5398e-5) < 1e-8

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = boltzmann(rng.random(7), float(rng.uniform(0.05, 5.0)))
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p > 0)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_nonpositive_temperature(self, tau):
        with pytest.raises(ValueError):
            boltzmann([0.1, 0.2], tau)

    def test_nonfinite_logits(self):
        with pytest.raises(ValueError):
            boltzmann([0.1, float("nan")], 1.0)
        with pytest.raises(ValueError):
            boltzmann([0.1, float("inf")], 1.0)


class TestTraverse:
    def test_empty_context_is_root(self):
        pdt = generate_random_pdt(3, 3, 1.0, np.random.default_rng(0))
        assert pdt.node_index([]) == 0

    def test_walkthrough_depth3(self):
        # n=3, k=3: provided actions [2,3,2], consumed oldest first
        pdt = generate_random_pdt(3, 3, 1.0, np.random.default_rng(0))
        assert pdt.node_index([2, 3, 2]) == bfs_paths(3, 3).index((2, 3, 2))

    def test_partial_context_index(self):
        pdt = generate_random_pdt(3, 5, 1.0, np.random.default_rng(0))
        assert pdt.node_index([1, 2]) == 5

    @pytest.mark.parametrize("n,depth", [(2, 3), (3, 4), (4, 2)])
    def test_all_contexts_match_bfs_oracle(self, n, depth):
        pdt = generate_random_pdt(n, depth, 1.0, np.random.default_rng(1))
        for idx, path in enumerate(bfs_paths(n, depth)):
            assert pdt.node_index(list(path)) == idx

    def test_context_too_long(self):
        pdt = generate_random_pdt(3, 2, 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            pdt.node_index([1, 1, 1])

    def test_pure_function(self):
        pdt = generate_random_pdt(3, 4, 1.0, np.random.default_rng(2))
        assert pdt.node_index([3, 1, 2]) == pdt.node_index([3, 1, 2])


class TestActionDistribution:
    def test_empty_history_is_root(self):
        pdt = generate_random_pdt(4, 3, 0.7, np.random.default_rng(3))
        assert np.array_equal(
            pdt.action_distribution([]), boltzmann(pdt.nodes[0], 0.7)
        )

    def test_windowing(self):
        pdt = generate_random_pdt(3, 5, 0.5, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        hist = list(rng.integers(1, 4, size=7))
        assert np.array_equal(
            pdt.action_distribution(hist), pdt.action_distribution(hist[-5:])
        )

    def test_prefix_independence(self):
        pdt = generate_random_pdt(3, 5, 0.5, np.random.default_rng(4))
        rng = np.random.default_rng(6)
        tail = list(rng.integers(1, 4, size=5))
        for _ in range(10):
            prefix = list(rng.integers(1, 4, size=int(rng.integers(0, 9))))
            assert np.array_equal(
                pdt.action_distribution(prefix + tail),
                pdt.action_distribution(tail),
            )

    def test_toy_hand_traverse(self):
        nodes = np.array([[0.3, 0.9], [0.2, 0.1], [0.8, 0.4]])
        pdt = Pdt(n_actions=2, depth=1, temperature=0.5, nodes=nodes)
        # branch 2 from the root is breadth-first node 2
        assert np.array_equal(pdt.action_distribution([2]), boltzmann(nodes[2], 0.5))


class TestSampleAction:
    def test_degenerate_distribution(self):
        nodes = np.array([[1.0, 0.0, 0.0]] * node_count(3, 1))
        pdt = Pdt(3, 1, 1.0, nodes, node_kind="literal")
        rng = np.random.default_rng(7)
        assert all(pdt.sample_action([], rng) == 1 for _ in range(100))

    def test_deterministic_given_seed(self):
        pdt = generate_random_pdt(5, 3, 0.3, np.random.default_rng(8))
        a = [pdt.sample_action([2, 4], np.random.default_rng(9)) for _ in range(20)]
        b = [pdt.sample_action([2, 4], np.random.default_rng(9)) for _ in range(20)]
        assert a == b

    def test_empirical_frequencies(self):
        pdt = generate_random_pdt(4, 2, 0.4, np.random.default_rng(10))
        rng = np.random.default_rng(11)
        counts = np.zeros(4)
        trials = 100_000
        for _ in range(trials):
            counts[pdt.sample_action([3], rng) - 1] += 1
        assert np.all(np.abs(counts / trials - pdt.action_distribution([3])) < 0.01)


class TestGenerateRandomPdt:
    @pytest.mark.parametrize("n,k,expected", [(3, 5, 364), (10, 5, 111_111)])
    def test_node_count(self, n, k, expected):
        pdt = generate_random_pdt(n, k, 1.0, np.random.default_rng(0))
        assert pdt.num_nodes == expected == node_count(n, k)

    def test_same_seed_identical(self):
        a = generate_random_pdt(3, 3, 1.0, np.random.default_rng(12))
        b = generate_random_pdt(3, 3, 1.0, np.random.default_rng(12))
        assert np.array_equal(a.nodes, b.nodes)

    def test_logits_in_unit_interval(self):
        pdt = generate_random_pdt(3, 4, 1.0, np.random.default_rng(13))
        assert np.all(pdt.nodes >= 0) and np.all(pdt.nodes <= 1)

    def test_invalid_dimensions(self):
        with pytest.raises(ValueError):
            generate_random_pdt(1, 3, 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            generate_random_pdt(3, 0, 1.0, np.random.default_rng(0))

    def test_immutable_nodes(self):
        pdt = generate_random_pdt(3, 2, 1.0, np.random.default_rng(14))
        with pytest.raises(ValueError):
            pdt.nodes[0, 0] = 5.0


class TestFitMle:
    def test_pure_count_normalization(self):
        # single node context, client plays 2 five times
        steps = [(1, 2)] * 5
        pdt = fit_mle_pdt(3, 1, [steps])
        assert np.array_equal(pdt.node_probs(0), [0.0, 1.0, 0.0])

    def test_unvisited_uniform(self):
        steps = [(1, 2)]
        pdt = fit_mle_pdt(3, 1, [steps])
        # child nodes never reached
        assert np.allclose(pdt.node_probs(3), [1 / 3] * 3)

    def test_count_ratios(self):
        # root sees each transcript's first client action: counts [1, 2, 1]
        transcripts = [[(1, 1)], [(1, 2)], [(1, 2)], [(1, 3)]]
        pdt = fit_mle_pdt(3, 1, transcripts)
        assert np.array_equal(pdt.node_probs(0), [0.25, 0.5, 0.25])

    def test_empty_transcripts(self):
        with pytest.raises(ValueError):
            fit_mle_pdt(3, 1, [])

    def test_consistency_on_generated_data(self):
        # every node visited >= 1000 times -> per-node TV distance <= 0.05
        rng = np.random.default_rng(15)
        true = generate_random_pdt(2, 1, 0.1, rng)
        server = generate_random_pdt(2, 1, 1.0, rng)
        from agentauth.engine import run_interaction

        transcripts = [
            run_interaction(PdtAgent(server), PdtAgent(true), 999, rng, rng)
            for _ in range(10)
        ]
        fitted = fit_mle_pdt(2, 1, transcripts)
        for node in range(true.num_nodes):
            tv = 0.5 * np.abs(fitted.node_probs(node) - true.node_probs(node)).sum()
            assert tv <= 0.05


class TestSaveLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        pdt = generate_random_pdt(3, 3, 0.37, np.random.default_rng(16))
        path = tmp_path / "model.json"
        save_pdt(pdt, path)
        loaded = load_pdt(path)
        assert loaded.n_actions == pdt.n_actions
        assert loaded.depth == pdt.depth
        assert loaded.temperature == pdt.temperature
        assert np.array_equal(loaded.nodes, pdt.nodes)
        assert np.array_equal(loaded._probs, pdt._probs)

    def test_literal_round_trip(self, tmp_path):
        pdt = fit_mle_pdt(3, 1, [[(1, 2), (2, 1)]])
        path = tmp_path / "mle.json"
        save_pdt(pdt, path)
        loaded = load_pdt(path)
        assert loaded.node_kind == "literal"
        assert np.array_equal(loaded.nodes, pdt.nodes)

    def test_wrong_node_count_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = {
            "version": 1,
            "n_actions": 3,
            "depth": 2,
            "temperature": 1.0,
            "node_kind": "logit",
            "nodes": [[0.1, 0.2, 0.3]] * 5,  # should be 13
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError, match="nodes"):
            load_pdt(path)

    def test_zero_temperature_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = {
            "version": 1,
            "n_actions": 2,
            "depth": 1,
            "temperature": 0.0,
            "node_kind": "logit",
            "nodes": [[0.1, 0.2]] * 3,
        }
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError, match="temperature"):
            load_pdt(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 99}))
        with pytest.raises(UnsupportedVersionError):
            load_pdt(path)

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 1, "n_actions": 2}))
        with pytest.raises(ModelFormatError, match="depth"):
            load_pdt(path)

    def test_garbage_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError):
            load_pdt(path)
