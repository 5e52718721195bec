import numpy as np
import pytest

from agentauth.adv import sample_population
from agentauth.models import Pdt, PdtAgent, generate_random_pdt, node_count
from agentauth.rl import (
    MODE_EPS_GREEDY,
    MODE_GREEDY,
    MODE_SOFTMAX,
    PolicyAgent,
    ProbeEnv,
    ProbeEnvConfig,
    ProbePolicy,
    UniformAgent,
    act,
    evaluate_policy,
    p_curve,
    steps_to_threshold,
    train_probe,
)


def probing_legit():
    """Literal tree over 3 actions: nodes reached via server action 1 are
    deterministic, the rest uniform.  Probing action 1 is unambiguously best."""
    n, k = 3, 5
    count = node_count(n, k)
    nodes = np.full((count, n), 1.0 / n)
    # mark nodes whose path ends in action 1
    start, width = 0, 1
    for depth in range(k):
        next_start = start + width
        for pos in range(width * n):
            if pos % n == 0:  # branch taken was action 1
                nodes[next_start + pos] = [1.0, 0.0, 0.0]
        start, width = next_start, width * n
    return Pdt(n, k, 1.0, nodes, node_kind="literal")


class TestEnv:
    def _cfg(self, l=20):
        rng = np.random.default_rng(0)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        pop = sample_population(3, 5, 0.5, 5, seed=1)
        return ProbeEnvConfig(legit=legit, population=pop, episode_length=l)

    def test_reset_state_is_root(self):
        env = ProbeEnv(self._cfg(), np.random.default_rng(2))
        assert env.reset() == 0

    def test_episode_yields_l_rewards(self):
        cfg = self._cfg(l=13)
        env = ProbeEnv(cfg, np.random.default_rng(3))
        env.reset()
        rewards = []
        done = False
        rng = np.random.default_rng(4)
        while not done:
            _, r, done = env.step(int(rng.integers(1, 4)))
            rewards.append(r)
        assert len(rewards) == 13
        assert all(0.0 <= r <= 1.0 for r in rewards)

    def test_step_after_done_raises(self):
        env = ProbeEnv(self._cfg(l=1), np.random.default_rng(5))
        env.reset()
        env.step(1)
        with pytest.raises(RuntimeError):
            env.step(1)

    def test_state_matches_independent_traversal(self):
        cfg = self._cfg(l=12)
        env = ProbeEnv(cfg, np.random.default_rng(6))
        env.reset()
        rng = np.random.default_rng(7)
        taken = []
        done = False
        while not done:
            a = int(rng.integers(1, 4))
            state, _, done = env.step(a)
            taken.append(a)
            assert state == cfg.legit.node_index(taken[-5:])

    def test_reward_zero_when_p_is_one(self):
        # deterministic legit model: z always equals the null mean, p = 1
        legit = Pdt(
            3, 5, 1.0,
            np.tile([1.0, 0.0, 0.0], (node_count(3, 5), 1)),
            node_kind="literal",
        )
        cfg = ProbeEnvConfig(
            legit=legit, population=[PdtAgent(legit)], episode_length=3
        )
        env = ProbeEnv(cfg, np.random.default_rng(8))
        env.reset()
        _, r, _ = env.step(1)
        assert r == 0.0

    def test_reset_samples_population_uniformly(self):
        cfg = self._cfg()
        env = ProbeEnv(cfg, np.random.default_rng(9))
        counts = np.zeros(len(cfg.population))
        for _ in range(1000):
            env.reset()
            counts[cfg.population.index(env._client)] += 1
        assert np.all(np.abs(counts / 1000 - 0.2) < 0.06)


class TestAct:
    def _policy(self):
        policy = ProbePolicy.zeros(10, 3, epsilon=0.25)
        policy.preferences[4] = [0.1, 0.9, 0.3]
        return policy

    def test_full_exploration_uniform(self):
        policy = self._policy()
        policy.epsilon = 1.0
        rng = np.random.default_rng(10)
        counts = np.zeros(3)
        for _ in range(6000):
            counts[act(policy, 4, MODE_EPS_GREEDY, rng) - 1] += 1
        assert np.all(np.abs(counts / 6000 - 1 / 3) < 0.03)

    def test_zero_epsilon_deterministic(self):
        policy = self._policy()
        policy.epsilon = 0.0
        rng = np.random.default_rng(11)
        assert all(act(policy, 4, MODE_EPS_GREEDY, rng) == 2 for _ in range(50))

    def test_greedy_tie_breaks_low_index(self):
        policy = ProbePolicy.zeros(3, 4)
        assert act(policy, 0, MODE_GREEDY, np.random.default_rng(12)) == 1

    def test_off_greedy_frequency(self):
        policy = self._policy()
        rng = np.random.default_rng(13)
        off = sum(
            act(policy, 4, MODE_EPS_GREEDY, rng) != 2 for _ in range(10_000)
        )
        expected = 0.25 * 2 / 3
        assert abs(off / 10_000 - expected) < 0.02

    def test_softmax_samples_distribution(self):
        policy = self._policy()
        rng = np.random.default_rng(14)
        counts = np.zeros(3)
        for _ in range(10_000):
            counts[act(policy, 4, MODE_SOFTMAX, rng) - 1] += 1
        assert np.all(np.abs(counts / 10_000 - policy.distribution(4)) < 0.02)


class TestTraining:
    def test_zero_learning_rates_no_op(self):
        rng = np.random.default_rng(15)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        cfg = ProbeEnvConfig(
            legit=legit,
            population=sample_population(3, 5, 0.5, 3, seed=16),
            episode_length=10,
        )
        result = train_probe(
            cfg, rng, total_steps=500, lr_policy=0.0, lr_value=0.0, entropy_bonus=0.0
        )
        assert np.all(result.policy.preferences == 0.0)
        assert np.all(result.policy.values == 0.0)

    def test_bandit_sanity_prefers_probing_action(self):
        # two-step episodes: only the root action matters.  Playing 1 steers
        # the next prediction onto a deterministic node the uniform client
        # violates two thirds of the time (expected return 2/3), any other
        # root action keeps the prediction uniform (return 0).
        legit = probing_legit()
        cfg = ProbeEnvConfig(
            legit=legit,
            population=[UniformAgent(3)],
            episode_length=2,
        )
        rng = np.random.default_rng(17)
        result = train_probe(cfg, rng, total_steps=30_000)
        assert result.policy.distribution(0)[0] > 0.9

    def test_trained_beats_uniform_return(self):
        rng = np.random.default_rng(18)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        pop = sample_population(3, 5, 0.5, 20, seed=19)
        cfg = ProbeEnvConfig(legit=legit, population=pop, episode_length=50)
        result = train_probe(cfg, rng, total_steps=50_000)

        def mean_return(policy_fn, episodes=40):
            env = ProbeEnv(cfg, np.random.default_rng(20))
            totals = []
            arng = np.random.default_rng(21)
            for _ in range(episodes):
                s = env.reset()
                total, done = 0.0, False
                while not done:
                    s, r, done = env.step(policy_fn(s, arng))
                    total += r
                totals.append(total)
            return np.mean(totals)

        trained = mean_return(
            lambda s, r: act(result.policy, s, MODE_EPS_GREEDY, r)
        )
        uniform = mean_return(lambda s, r: int(r.integers(1, 4)))
        assert trained >= uniform

    def test_value_table_converges_on_fixed_setup(self):
        # deterministic policy (huge preference gap) + deterministic client:
        # V stops moving
        legit = probing_legit()

        class FixedClient:
            def next_action(self, opponent_history, rng):
                return 1 + len(opponent_history) % 3

        cfg = ProbeEnvConfig(
            legit=legit, population=[FixedClient()], episode_length=10
        )
        policy = ProbePolicy.zeros(legit.num_nodes, 3)
        policy.preferences[:, 0] = 50.0
        rng = np.random.default_rng(22)
        res1 = train_probe(
            cfg, rng, total_steps=5000, lr_policy=0.0, entropy_bonus=0.0,
            initial_policy=policy,
        )
        before = res1.policy.values.copy()
        res2 = train_probe(
            cfg, rng, total_steps=500, lr_policy=0.0, entropy_bonus=0.0,
            initial_policy=res1.policy,
        )
        assert np.max(np.abs(res2.policy.values - before)) < 1e-3

    def test_table_dimensions(self):
        rng = np.random.default_rng(23)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        policy = ProbePolicy.zeros(legit.num_nodes, legit.n_actions)
        assert policy.preferences.shape == (364, 3)
        assert policy.values.shape == (364,)


class TestEvaluation:
    def test_p_curve_shape_and_range(self):
        rng = np.random.default_rng(24)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        adv = sample_population(3, 5, 0.5, 1, seed=25)[0]
        curve = p_curve(UniformAgent(3), adv, legit, 30, 200, rng)
        assert curve.shape == (30,)
        assert np.all((curve > 0) & (curve <= 1))

    def test_legit_client_keeps_p_high(self):
        rng = np.random.default_rng(26)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        res = evaluate_policy(
            lambda: UniformAgent(3), [PdtAgent(legit)] * 40, legit, 50, 400, rng
        )
        # under the null p is uniform: mean around 0.5 at every step
        assert res.mean_p[-1] > 0.25

    def test_steps_to_threshold(self):
        assert steps_to_threshold(np.array([0.9, 0.3, 0.1, 0.05]), 0.2) == 3
        assert steps_to_threshold(np.array([0.9, 0.8]), 0.2) is None

    def test_policy_agent_tracks_own_actions(self):
        rng = np.random.default_rng(27)
        legit = generate_random_pdt(3, 5, 0.5, rng)
        policy = ProbePolicy.zeros(legit.num_nodes, 3)
        agent = PolicyAgent(policy, legit, MODE_EPS_GREEDY)
        for _ in range(8):
            agent.next_action((), rng)
        assert len(agent.own_actions) == 8
        assert all(1 <= a <= 3 for a in agent.own_actions)
