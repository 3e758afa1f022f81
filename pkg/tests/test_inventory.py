# test_inventory.py

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from core.attack_mdp import (
    AttackProblem,
    adversary_value,
    attacked_chain,
    solve_constrained_attack,
    solve_penalized_attack,
)
from core.detection import calibrate_threshold, estimate_detection_delay, false_alarm_rate
from core.divergence import absolutely_continuous
from core.errors import InvalidInputError
from core.info_rate import (
    discounted_information_rate,
    fit_mixing_bound,
    info_rate_error_bound,
    information_rate,
    upper_information_rate,
)
from core.inventory import (
    InventoryParams,
    build_inventory,
    inventory_dynamics,
    inventory_victim,
    stock_after_order,
)
from core.mdp import (
    Distribution,
    attacked_value,
    chain_stationary_distribution,
    policy_evaluation,
    tv_distance,
)
from core.stealth_lp import optimal_stealthy_attack


class TestInventory(unittest.TestCase):

    def setUp(self):
        self.params = InventoryParams(capacity=8, demand_rate=3.0)
        self.mdp = build_inventory(self.params)

    def test_default_size(self):
        mdp = build_inventory()
        self.assertEqual((mdp.n_states, mdp.n_actions), (36, 36))

    def test_orders_clipped_at_capacity(self):
        stocked = stock_after_order(self.params)
        self.assertEqual(stocked[5, 7], 8)
        assert_array_equal(stocked[0], np.arange(9))

    def test_rows_are_distributions(self):
        assert_allclose(inventory_dynamics(self.params).sum(axis=2), 1.0)

    def test_empty_shelf_stays_empty(self):
        assert_allclose(self.mdp.transition[0, 0], np.eye(9)[0])
        self.assertEqual(self.mdp.reward[0, 0], 0.0)

    def test_continuity_follows_stock_after_order(self):
        stocked = stock_after_order(self.params)
        expected = stocked[:, None, :] <= stocked[:, :, None]
        assert_array_equal(absolutely_continuous(self.mdp.transition), expected)

    def test_victim_does_not_order_when_full(self):
        victim = inventory_victim(self.mdp)
        self.assertTrue(victim.is_deterministic)
        self.assertEqual(victim.actions()[self.params.capacity], 0)

    def test_attack_hurts_victim(self):
        victim = inventory_victim(self.mdp)
        attack = solve_constrained_attack(self.mdp, AttackProblem(victim, attack_discount=0.95, epsilon=2.0))
        nominal = policy_evaluation(self.mdp, victim).values
        attacked = attacked_value(self.mdp, victim, attack).values
        self.assertTrue(np.all(attacked <= nominal + 1e-8))
        self.assertLess(float(np.mean(attacked)), float(np.mean(nominal)))

    def test_rows_match_sampled_demand(self):
        params = InventoryParams()
        transition = inventory_dynamics(params)
        stocked = stock_after_order(params)
        demand = np.random.default_rng(3).poisson(params.demand_rate, size=10 ** 6)
        for level in range(params.capacity + 1):
            sampled = np.bincount(np.maximum(level - demand, 0), minlength=params.capacity + 1) / demand.size
            state, action = np.argwhere(stocked == level)[0]
            self.assertLessEqual(tv_distance(sampled, transition[state, action]), 1e-2, f"stock {level}")

    def test_invalid_parameters(self):
        with self.assertRaises(InvalidInputError):
            InventoryParams(unit_price=1.0, holding_cost=2.0)
        with self.assertRaises(InvalidInputError):
            InventoryParams(demand_rate=0.0)


class TestInventoryBenchmark(unittest.TestCase):
    """Full-size benchmark with the published parameters"""

    @classmethod
    def setUpClass(cls):
        cls.mdp = build_inventory()
        cls.victim = inventory_victim(cls.mdp)

    def _penalized_rate(self, beta):
        problem = AttackProblem(self.victim, attack_discount=0.95, penalty=beta)
        return information_rate(self.mdp, self.victim, solve_penalized_attack(self.mdp, problem))

    def test_penalized_rate_two_regimes(self):
        rates = {beta: self._penalized_rate(beta) for beta in (1.0, 3.0, 6.0, 10.0, 12.0, 20.0)}
        ordered = [rates[beta] for beta in sorted(rates)]
        self.assertTrue(np.all(np.diff(ordered) <= 1e-9), rates)
        # steep regime for small penalties
        self.assertAlmostEqual(rates[1.0], 0.394, delta=0.01)
        self.assertAlmostEqual(rates[3.0], 0.222, delta=0.01)
        # flat regime from beta = 6 on
        for beta in (10.0, 12.0, 20.0):
            self.assertAlmostEqual(rates[beta], rates[6.0], delta=1e-3)
        self.assertAlmostEqual(rates[6.0], 0.0655, delta=0.005)
        self.assertAlmostEqual(self._penalized_rate(1e9), 0.0, places=12)

    def test_cusum_delay_ratio_tracks_rate_ratio(self):
        constrained = solve_constrained_attack(
            self.mdp, AttackProblem(self.victim, attack_discount=0.95, epsilon=3.0)
        )
        stealthy, _, _ = optimal_stealthy_attack(self.mdp, self.victim, 0.21, discount=0.95)
        rate_constrained = information_rate(self.mdp, self.victim, constrained)
        rate_stealthy = information_rate(self.mdp, self.victim, stealthy)
        self.assertAlmostEqual(rate_constrained, 0.3938, delta=0.01)
        self.assertAlmostEqual(rate_stealthy, 0.2424, delta=0.01)

        delays = {}
        for name, attack, rate in (("constrained", constrained, rate_constrained), ("lp", stealthy, rate_stealthy)):
            report = estimate_detection_delay(
                self.mdp, self.victim, attack, "cusum", calibrate_threshold(0.01, 1000, rate),
                change_time=25, trials=80, seed=21,
            )
            delays[name] = report.mean_delay
        ratio = delays["lp"] / delays["constrained"]
        self.assertGreater(ratio, 1.2)
        self.assertAlmostEqual(ratio / (rate_constrained / rate_stealthy), 1.0, delta=0.3)

    def test_clean_streams_respect_false_alarm_budget(self):
        constrained = solve_constrained_attack(
            self.mdp, AttackProblem(self.victim, attack_discount=0.95, epsilon=3.0)
        )
        calibration = calibrate_threshold(0.01, 1000)
        rate = false_alarm_rate(self.mdp, self.victim, "cusum", calibration, trials=500, seed=5, monitored=constrained)
        self.assertLessEqual(rate, 2 * 0.01)

    def test_value_matches_discounted_rollouts(self):
        rng = np.random.default_rng(41)
        start, rollouts, length = 10, 10_000, 400
        actions = self.victim.actions()
        cdf = np.cumsum(self.mdp.transition, axis=2)
        states = np.full(rollouts, start)
        returns = np.zeros(rollouts)
        weight = 1.0
        for _ in range(length):
            chosen = actions[states]
            returns += weight * self.mdp.reward[states, chosen]
            rows = cdf[states, chosen]
            states = np.minimum((rows <= rng.random(rollouts)[:, None]).sum(axis=1), self.mdp.n_states - 1)
            weight *= self.mdp.discount
        expected = policy_evaluation(self.mdp, self.victim).values[start]
        truncation = weight * self.mdp.reward_bound / (1.0 - self.mdp.discount)
        half_width = 2.576 * returns.std(ddof=1) / math.sqrt(rollouts)
        self.assertLessEqual(abs(float(returns.mean()) - expected), half_width + truncation)

    def test_lp_attack_dominates_constrained_attack_at_its_budget(self):
        alpha = np.full(self.mdp.n_states, 1.0 / self.mdp.n_states)
        for epsilon in (1.0, 3.0):
            problem = AttackProblem(self.victim, attack_discount=0.95, epsilon=epsilon)
            constrained = solve_constrained_attack(self.mdp, problem)
            budget, _ = discounted_information_rate(self.mdp, self.victim, constrained, 0.95)
            stealthy, _, lp_value = optimal_stealthy_attack(self.mdp, self.victim, budget + 1e-9, discount=0.95)

            baseline = float(np.sum(alpha[:, None] * self.victim.probs * adversary_value(self.mdp, problem, constrained).values))
            self.assertGreaterEqual(lp_value, baseline - 1e-6 * (1.0 + abs(baseline)), f"epsilon={epsilon}")
            stealthy_rate, _ = discounted_information_rate(self.mdp, self.victim, stealthy, 0.95)
            self.assertLessEqual(stealthy_rate, budget + 1e-6)
            victim_under_lp = float(alpha @ attacked_value(self.mdp, self.victim, stealthy).values)
            victim_under_constrained = float(alpha @ attacked_value(self.mdp, self.victim, constrained).values)
            self.assertLessEqual(victim_under_lp, victim_under_constrained + 1e-6 * (1.0 + abs(victim_under_constrained)))

    def test_discounted_rate_converges_to_ergodic_rate(self):
        for epsilon in (0.21, 0.5):
            attack, _, _ = optimal_stealthy_attack(self.mdp, self.victim, epsilon, discount=0.95)
            upper = upper_information_rate(self.mdp, self.victim, attack)
            gaps = [
                abs(discounted_information_rate(self.mdp, self.victim, attack, gamma_bar)[0] - upper)
                for gamma_bar in (0.99, 0.999, 0.9999)
            ]
            self.assertTrue(np.all(np.diff(gaps) <= 1e-9), gaps)
            mixing = fit_mixing_bound(self.mdp, self.victim, attack)
            self.assertLessEqual(gaps[1], info_rate_error_bound(mixing, 0.999) + 1e-9)

            # started in the attacked stationary law the discounted rate is the ergodic one
            stationary = Distribution(chain_stationary_distribution(attacked_chain(self.mdp, self.victim, attack)))
            for gamma_bar in (0.5, 0.9, 0.999):
                discounted, _ = discounted_information_rate(self.mdp, self.victim, attack, gamma_bar, stationary)
                self.assertLessEqual(discounted, upper + 1e-9)
                self.assertAlmostEqual(discounted, upper, delta=1e-8)


if __name__ == "__main__":
    unittest.main()
