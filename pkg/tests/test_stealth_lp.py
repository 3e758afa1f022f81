# test_stealth_lp.py

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from core.attack_mdp import (
    AttackProblem,
    adversary_value,
    identity_attack,
    perturbed_kernel,
    solve_constrained_attack,
)
from core.divergence import pairwise_kernel_kl
from core.errors import InfeasibleProblemError, InvalidInputError
from core.info_rate import upper_information_rate
from core.inventory import InventoryParams, build_inventory, inventory_victim
from core.mdp import Policy, ergodic_reward
from core.stealth_lp import (
    OccupancyMeasure,
    discounted_occupancy,
    min_info_rate,
    optimal_stealthy_attack,
    policy_from_occupancy,
    solve_lp,
    stationary_occupancy,
    unattacked_reward,
)
from tests.helpers import random_attack, random_mdp, random_policy


def pair_weighted(mdp, victim, values):
    alpha = np.full(mdp.n_states, 1.0 / mdp.n_states)
    return float(np.sum(alpha[:, None] * victim.probs * values))


def attacked_ergodic_reward(mdp, victim, attack):
    return ergodic_reward(mdp.with_transition(perturbed_kernel(mdp, attack)), victim)


class TestSolveLp(unittest.TestCase):

    def test_optimal_with_zero_gap(self):
        # min -x - y s.t. x + y <= 1, x - y = 0
        solution = solve_lp(
            np.array([-1.0, -1.0]),
            eq_constraints=(np.array([[1.0, -1.0]]), np.array([0.0])),
            ineq_constraints=(np.array([[1.0, 1.0]]), np.array([1.0])),
        )
        self.assertTrue(solution.optimal)
        self.assertAlmostEqual(solution.objective, -1.0)
        assert_allclose(solution.variables, [0.5, 0.5], atol=1e-9)
        self.assertLess(solution.dual_gap, 1e-8)

    def test_infeasible_reported_as_status(self):
        solution = solve_lp(np.array([1.0]), ineq_constraints=(np.array([[1.0]]), np.array([-1.0])))
        self.assertEqual(solution.status, "infeasible")
        self.assertTrue(math.isnan(solution.objective))

    def test_unbounded_reported_as_status(self):
        solution = solve_lp(np.array([-1.0]))
        self.assertFalse(solution.optimal)


class TestOccupancy(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(13)

    def test_discounted_occupancy_has_unit_mass(self):
        mdp = random_mdp(self.rng)
        occupancy = discounted_occupancy(mdp, random_policy(self.rng, 4, 3), random_attack(self.rng, 4, 3), 0.9)
        self.assertAlmostEqual(occupancy.mass, 1.0)

    def test_policy_recovered_from_occupancy(self):
        mdp = random_mdp(self.rng)
        attack = random_attack(self.rng, 4, 3)
        occupancy = stationary_occupancy(mdp, random_policy(self.rng, 4, 3), attack)
        assert_allclose(policy_from_occupancy(occupancy).probs, attack.probs, atol=1e-10)

    def test_zero_mass_rows_become_identity(self):
        xi = np.zeros((2, 2, 2))
        xi[0, 0, 1] = 1.0
        attack = policy_from_occupancy(OccupancyMeasure(xi))
        assert_allclose(attack.probs[0, 0], [0.0, 1.0])
        assert_allclose(attack.probs[1], np.eye(2))

    def test_unknown_mode(self):
        with self.assertRaises(InvalidInputError):
            OccupancyMeasure(np.zeros((1, 1, 1)), mode="average")


class TestOptimalStealthyAttack(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(17)
        self.mdp = random_mdp(self.rng)
        self.victim = random_policy(self.rng, 4, 3)

    def test_unlimited_budget_matches_value_iteration(self):
        _, _, value = optimal_stealthy_attack(self.mdp, self.victim, 1e9, discount=0.9)
        problem = AttackProblem(self.victim, attack_discount=0.9, epsilon=math.inf)
        best = adversary_value(self.mdp, problem, solve_constrained_attack(self.mdp, problem, tol=1e-10)).values
        self.assertAlmostEqual(value, pair_weighted(self.mdp, self.victim, best), delta=1e-5 * (1 + abs(value)))

    def test_zero_budget_matches_identity(self):
        _, _, value = optimal_stealthy_attack(self.mdp, self.victim, 0.0, discount=0.9)
        problem = AttackProblem(self.victim, attack_discount=0.9)
        nominal = adversary_value(self.mdp, problem, identity_attack(4, 3)).values
        self.assertAlmostEqual(value, pair_weighted(self.mdp, self.victim, nominal), delta=1e-5 * (1 + abs(value)))

    def test_value_grows_with_budget(self):
        values = [optimal_stealthy_attack(self.mdp, self.victim, eps, discount=0.9)[2] for eps in (0.0, 0.05, 0.2, 1.0)]
        self.assertTrue(all(b >= a - 1e-7 for a, b in zip(values, values[1:])))

    def test_budget_respected_and_occupancy_consistent(self):
        epsilon = 0.1
        attack, occupancy, _ = optimal_stealthy_attack(self.mdp, self.victim, epsilon, discount=0.9)
        self.assertAlmostEqual(occupancy.mass, 1.0, places=6)
        kl = pairwise_kernel_kl(self.mdp.transition)
        self.assertLessEqual(float(np.sum(occupancy.xi * kl)), epsilon + 1e-7)
        forward = discounted_occupancy(self.mdp, self.victim, attack, 0.9)
        assert_allclose(forward.xi, occupancy.xi, atol=1e-5)

    def test_beats_every_grid_attack_on_two_state_instances(self):
        rng = np.random.default_rng(29)
        gamma = 0.9
        grid = np.linspace(0.0, 1.0, 101)
        flips = np.stack([axis.ravel() for axis in np.meshgrid(grid, grid, indexing="ij")], axis=1)
        source = np.broadcast_to(np.full(2, 0.5 * (1.0 - gamma)), flips.shape)[..., None]
        for _ in range(20):
            mdp = random_mdp(rng, 2, 2)
            actions = rng.integers(0, 2, size=2)
            victim = Policy.deterministic(actions, 2)
            states = np.arange(2)
            kept, swapped = mdp.transition[states, actions], mdp.transition[states, 1 - actions]
            flip_kl = pairwise_kernel_kl(mdp.transition)[states, actions, 1 - actions]

            # flips[:, s] is the probability of replacing the victim's action in state s
            chains = (1.0 - flips)[:, :, None] * kept[None] + flips[:, :, None] * swapped[None]
            nu = np.linalg.solve(np.eye(2) - gamma * np.transpose(chains, (0, 2, 1)), source)[..., 0]
            values = nu @ -mdp.reward[states, actions] / (1.0 - gamma)
            spent = np.sum(nu * flips * flip_kl, axis=1)

            epsilon = float(np.median(spent))
            _, _, lp_value = optimal_stealthy_attack(mdp, victim, epsilon, discount=gamma)
            self.assertGreaterEqual(lp_value, float(np.max(values[spent <= epsilon])) - 1e-6)

    def test_negative_budget_rejected(self):
        with self.assertRaises(InvalidInputError):
            optimal_stealthy_attack(self.mdp, self.victim, -0.1)


class TestMinInfoRate(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(19)
        self.mdp = random_mdp(self.rng)
        self.victim = random_policy(self.rng, 4, 3)
        self.baseline = ergodic_reward(self.mdp, self.victim)
        problem = AttackProblem(self.victim, attack_discount=0.99)
        self.floor = attacked_ergodic_reward(self.mdp, self.victim, solve_constrained_attack(self.mdp, problem))
        self.target = 0.5 * (self.baseline + self.floor)

    def test_unattacked_reward_needs_no_information(self):
        _, rate = min_info_rate(self.mdp, self.victim, self.baseline + 1e-9)
        self.assertLess(rate, 1e-7)

    def test_objective_is_upper_rate_of_returned_attack(self):
        self.assertLess(self.floor, self.baseline)
        attack, rate = min_info_rate(self.mdp, self.victim, self.target)
        self.assertGreater(rate, 0.0)
        self.assertAlmostEqual(rate, upper_information_rate(self.mdp, self.victim, attack), delta=1e-6)
        self.assertLessEqual(attacked_ergodic_reward(self.mdp, self.victim, attack), self.target + 1e-6)

    def test_harder_target_costs_more(self):
        _, mild = min_info_rate(self.mdp, self.victim, 0.5 * (self.baseline + self.target))
        _, harsh = min_info_rate(self.mdp, self.victim, self.target)
        self.assertGreaterEqual(harsh, mild - 1e-9)

    def test_unreachable_target_is_infeasible(self):
        with self.assertRaises(InfeasibleProblemError) as ctx:
            min_info_rate(self.mdp, self.victim, -10.0)
        self.assertEqual(ctx.exception.status, "infeasible")

    def test_discounted_mode_needs_discount(self):
        with self.assertRaises(InvalidInputError):
            min_info_rate(self.mdp, self.victim, 0.0, mode="discounted")

    def test_target_above_unattacked_reward_rejected(self):
        with self.assertRaises(InvalidInputError):
            min_info_rate(self.mdp, self.victim, self.baseline + 0.1)
        discounted = unattacked_reward(self.mdp, self.victim, "discounted", 0.9)
        with self.assertRaises(InvalidInputError):
            min_info_rate(self.mdp, self.victim, discounted + 0.1, mode="discounted", discount=0.9)
        _, rate = min_info_rate(self.mdp, self.victim, discounted, mode="discounted", discount=0.9)
        self.assertLess(rate, 1e-7)


class TestInventoryHardness(unittest.TestCase):

    def test_min_rate_nonincreasing_in_target(self):
        mdp = build_inventory(InventoryParams(capacity=8, demand_rate=3.0))
        victim = inventory_victim(mdp)
        baseline = ergodic_reward(mdp, victim)
        strongest = solve_constrained_attack(mdp, AttackProblem(victim, attack_discount=0.95))
        floor = attacked_ergodic_reward(mdp, victim, strongest)
        self.assertLess(floor, baseline)

        targets = np.linspace(floor, baseline, 10)
        rates = [min_info_rate(mdp, victim, float(rho))[1] for rho in targets]
        self.assertTrue(np.all(np.diff(rates) <= 1e-7), rates)
        self.assertLess(rates[-1], 1e-7)
        self.assertGreater(rates[0], 0.0)


if __name__ == "__main__":
    unittest.main()
