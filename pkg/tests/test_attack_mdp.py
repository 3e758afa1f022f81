# test_attack_mdp.py

import itertools
import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from core.attack_mdp import (
    AttackPolicy,
    AttackProblem,
    action_distance,
    adversary_value,
    attack_support_ok,
    build_attack_mdp,
    composite_policy,
    feasible_actions,
    identity_attack,
    perturbed_kernel,
    solve_constrained_attack,
    solve_penalized_attack,
)
from core.divergence import absolutely_continuous, kl_divergence, pairwise_kernel_kl
from core.errors import InvalidInputError
from core.info_rate import information_rate, log_likelihood_ratio
from core.mdp import Policy, TabularMdp, attacked_value, tv_distance, value_iteration
from core.simulation import simulate_trajectory
from tests.helpers import random_attack, random_deterministic_attack, random_mdp, random_policy


def sparse_mdp():
    """Action 0 is deterministic, action 1 spreads over both states"""
    transition = np.array([
        [[1.0, 0.0], [0.5, 0.5]],
        [[0.0, 1.0], [0.5, 0.5]],
    ])
    return TabularMdp(transition, np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.5, 0.5]))


class TestDivergence(unittest.TestCase):

    def test_kl_known_value(self):
        self.assertAlmostEqual(kl_divergence([0.5, 0.5], [0.25, 0.75]), 0.143841, places=6)

    def test_kl_infinite_without_absolute_continuity(self):
        self.assertEqual(kl_divergence([1.0, 0.0], [0.0, 1.0]), math.inf)

    def test_kl_zero_terms_ignored(self):
        self.assertAlmostEqual(kl_divergence([1.0, 0.0], [0.5, 0.5]), math.log(2.0))

    def test_pairwise_matches_absolute_continuity(self):
        mdp = sparse_mdp()
        kl = pairwise_kernel_kl(mdp.transition)
        ac = absolutely_continuous(mdp.transition)
        assert_array_equal(np.isfinite(kl), ac)
        # spreading action may stand in for nothing but itself
        self.assertFalse(ac[0, 0, 1])
        self.assertTrue(ac[0, 1, 0])


class TestAttackPolicy(unittest.TestCase):

    def test_identity_round_trip(self):
        attack = identity_attack(3, 4)
        self.assertTrue(attack.is_identity())
        self.assertTrue(attack.is_deterministic)
        assert_array_equal(attack.replacements(), np.tile(np.arange(4), (3, 1)))

    def test_rejects_non_stochastic_rows(self):
        with self.assertRaises(InvalidInputError):
            AttackPolicy(np.zeros((2, 2, 2)))

    def test_identity_leaves_kernel_unchanged(self):
        mdp = random_mdp(np.random.default_rng(0))
        assert_allclose(perturbed_kernel(mdp, identity_attack(4, 3)), mdp.transition)

    def test_composite_policy_is_applied_action_law(self):
        rng = np.random.default_rng(1)
        victim = random_policy(rng, 4, 3)
        attack = random_attack(rng, 4, 3)
        composite = composite_policy(victim, attack)
        assert_allclose(composite.probs.sum(axis=1), 1.0)
        assert_allclose(composite.probs[2], victim.probs[2] @ attack.probs[2])

    def test_distance_default(self):
        assert_array_equal(action_distance(3), [[0, 1, 2], [1, 0, 1], [2, 1, 0]])


class TestAttackProblem(unittest.TestCase):

    def test_invalid_parameters(self):
        victim = Policy.uniform(2, 2)
        with self.assertRaises(InvalidInputError):
            AttackProblem(victim, attack_discount=1.0)
        with self.assertRaises(InvalidInputError):
            AttackProblem(victim, epsilon=-1.0)
        with self.assertRaises(InvalidInputError):
            AttackProblem(victim, penalty=-0.5)
        with self.assertRaises(InvalidInputError):
            AttackProblem(victim, distance=np.array([[0.0, 1.0], [2.0, 0.0]]))

    def test_feasible_actions_respect_budget_and_continuity(self):
        mdp = sparse_mdp()
        mask = feasible_actions(mdp, AttackProblem(Policy.uniform(2, 2), epsilon=math.inf))
        assert_array_equal(mask, absolutely_continuous(mdp.transition))
        mask = feasible_actions(mdp, AttackProblem(Policy.uniform(2, 2), epsilon=0.0))
        assert_array_equal(mask, np.broadcast_to(np.eye(2, dtype=bool), (2, 2, 2)))

    def test_identity_always_feasible(self):
        mdp = sparse_mdp()
        distance = np.array([[0.0, 3.0], [3.0, 0.0]])
        problem = AttackProblem(Policy.uniform(2, 2), epsilon=1.0, distance=distance)
        mask = feasible_actions(mdp, problem)
        self.assertTrue(mask.any(axis=2).all())
        assert_array_equal(mask, np.broadcast_to(np.eye(2, dtype=bool), (2, 2, 2)))


class TestSynthesis(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(42)

    def test_factored_iteration_matches_dense_attack_mdp(self):
        for _ in range(5):
            mdp = random_mdp(self.rng, 4, 3)
            problem = AttackProblem(random_policy(self.rng, 4, 3), attack_discount=0.9)
            dense = build_attack_mdp(mdp, problem)
            self.assertEqual(dense.n_states, 12)
            dense_values, _ = value_iteration(dense, tol=1e-10)
            attack = solve_constrained_attack(mdp, problem, tol=1e-10)
            assert_allclose(adversary_value(mdp, problem, attack).values.reshape(-1), dense_values.values, atol=1e-6)

    def test_optimal_attack_dominates_random_attacks(self):
        mdp = random_mdp(self.rng, 5, 3)
        problem = AttackProblem(random_policy(self.rng, 5, 3), attack_discount=0.9)
        best = adversary_value(mdp, problem, solve_constrained_attack(mdp, problem)).values
        for _ in range(20):
            other = adversary_value(mdp, problem, random_deterministic_attack(self.rng, 5, 3)).values
            self.assertTrue(np.all(best >= other - 1e-6))

    def test_zero_budget_gives_identity(self):
        mdp = random_mdp(self.rng)
        problem = AttackProblem(random_policy(self.rng, 4, 3), epsilon=0.0)
        self.assertTrue(solve_constrained_attack(mdp, problem).is_identity())

    def test_budget_bounds_replacement_distance(self):
        mdp = random_mdp(self.rng, 4, 5)
        problem = AttackProblem(random_policy(self.rng, 4, 5), epsilon=1.0)
        replacements = solve_constrained_attack(mdp, problem).replacements()
        self.assertLessEqual(np.max(np.abs(replacements - np.arange(5)[None, :])), 1)

    def test_attack_lowers_victim_value(self):
        mdp = random_mdp(self.rng)
        victim = random_policy(self.rng, 4, 3)
        attack = solve_constrained_attack(mdp, AttackProblem(victim, attack_discount=mdp.discount))
        nominal = attacked_value(mdp, victim, identity_attack(4, 3)).values
        attacked = attacked_value(mdp, victim, attack).values
        self.assertLessEqual(float(mdp.initial_dist @ attacked), float(mdp.initial_dist @ nominal) + 1e-9)

    def test_penalty_zero_matches_unconstrained(self):
        mdp = random_mdp(self.rng)
        victim = random_policy(self.rng, 4, 3)
        penalized = solve_penalized_attack(mdp, AttackProblem(victim, penalty=0.0))
        constrained = solve_constrained_attack(mdp, AttackProblem(victim, epsilon=math.inf))
        assert_array_equal(penalized.replacements(), constrained.replacements())

    def test_large_penalty_gives_identity(self):
        mdp = random_mdp(self.rng)
        attack = solve_penalized_attack(mdp, AttackProblem(random_policy(self.rng, 4, 3), penalty=1e9))
        self.assertTrue(attack.is_identity())

    def test_penalized_attack_never_breaks_continuity(self):
        mdp = sparse_mdp()
        victim = Policy.uniform(2, 2)
        attack = solve_penalized_attack(mdp, AttackProblem(victim, penalty=0.0))
        self.assertTrue(attack_support_ok(mdp, victim, attack))

    def test_support_check_flags_discontinuous_replacement(self):
        mdp = sparse_mdp()
        attack = AttackPolicy.deterministic(np.array([[1, 1], [0, 1]]))
        self.assertFalse(attack_support_ok(mdp, Policy.uniform(2, 2), attack))

    def test_unlimited_budget_beats_every_deterministic_attack(self):
        mdp = random_mdp(self.rng, 3, 3)
        problem = AttackProblem(random_policy(self.rng, 3, 3), attack_discount=0.9, epsilon=math.inf)
        best = adversary_value(mdp, problem, solve_constrained_attack(mdp, problem, tol=1e-10)).values
        for replacements in itertools.product(range(3), repeat=9):
            attack = AttackPolicy.deterministic(np.array(replacements).reshape(3, 3))
            other = adversary_value(mdp, problem, attack).values
            self.assertTrue(np.all(best >= other - 1e-8), replacements)


class TestSampledTransitions(unittest.TestCase):
    """One long attacked trajectory, checked against the closed forms"""

    steps = 10 ** 6

    @classmethod
    def setUpClass(cls):
        rng = np.random.default_rng(31)
        cls.mdp = random_mdp(rng, 4, 3)
        cls.victim = random_policy(rng, 4, 3)
        cls.attack = random_attack(rng, 4, 3)
        cls.trajectory = simulate_trajectory(cls.mdp, cls.victim, cls.attack, 0, cls.steps, seed=32)

    def test_post_change_frequencies_match_perturbed_kernel(self):
        observed = self.trajectory.observations()
        counts = np.zeros(self.mdp.transition.shape)
        np.add.at(counts, (observed[:, 0], observed[:, 1], observed[:, 2]), 1.0)
        kernel = perturbed_kernel(self.mdp, self.attack)
        for state in range(4):
            for action in range(3):
                visits = counts[state, action].sum()
                self.assertGreater(visits, 0)
                self.assertLessEqual(tv_distance(counts[state, action] / visits, kernel[state, action]), 1e-2)

    def test_average_llr_matches_information_rate(self):
        observed = self.trajectory.observations()
        z = log_likelihood_ratio(self.mdp, self.attack).values[observed[:, 0], observed[:, 1], observed[:, 2]]
        self.assertAlmostEqual(float(np.mean(z)), information_rate(self.mdp, self.victim, self.attack), delta=1e-2)


if __name__ == "__main__":
    unittest.main()
