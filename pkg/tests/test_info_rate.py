# test_info_rate.py

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from core.attack_mdp import AttackPolicy, identity_attack
from core.errors import DomainError, InvalidInputError
from core.info_rate import (
    MixingBound,
    discounted_information_rate,
    drift_check,
    fit_mixing_bound,
    gamma0_candidates,
    info_rate_error_bound,
    info_rate_report,
    information_rate,
    log_likelihood_ratio,
    upper_information_rate,
)
from core.mdp import Policy, TabularMdp
from tests.helpers import random_attack, random_deterministic_attack, random_mdp, random_policy


class TestRates(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(5)

    def test_identity_attack_has_zero_rates(self):
        mdp = random_mdp(self.rng)
        victim = random_policy(self.rng, 4, 3)
        report = info_rate_report(mdp, victim, identity_attack(4, 3), 0.9)
        self.assertAlmostEqual(report.rate, 0.0)
        self.assertAlmostEqual(report.upper_rate, 0.0)
        self.assertAlmostEqual(report.discounted_rate, 0.0)
        assert_allclose(log_likelihood_ratio(mdp, identity_attack(4, 3)).values, 0.0, atol=1e-12)

    def test_rate_below_upper_rate(self):
        for _ in range(50):
            mdp = random_mdp(self.rng)
            victim = random_policy(self.rng, 4, 3)
            attack = random_attack(self.rng, 4, 3)
            self.assertLessEqual(
                information_rate(mdp, victim, attack), upper_information_rate(mdp, victim, attack) + 1e-10
            )

    def test_deterministic_attack_rates_coincide(self):
        for _ in range(20):
            mdp = random_mdp(self.rng)
            victim = random_policy(self.rng, 4, 3)
            attack = random_deterministic_attack(self.rng, 4, 3)
            self.assertAlmostEqual(
                information_rate(mdp, victim, attack), upper_information_rate(mdp, victim, attack), places=10
            )

    def test_visited_discontinuous_replacement_gives_infinite_rate(self):
        transition = np.array([
            [[1.0, 0.0], [0.5, 0.5]],
            [[0.0, 1.0], [0.5, 0.5]],
        ])
        mdp = TabularMdp(transition, np.zeros((2, 2)), np.array([0.5, 0.5]))
        victim = Policy.uniform(2, 2)
        attack = AttackPolicy.deterministic(np.array([[1, 1], [0, 1]]))
        self.assertEqual(information_rate(mdp, victim, attack), math.inf)
        self.assertEqual(upper_information_rate(mdp, victim, attack), math.inf)
        self.assertEqual(discounted_information_rate(mdp, victim, attack, 0.9)[0], math.inf)

    def test_discounted_rate_rejects_bad_gamma(self):
        mdp = random_mdp(self.rng)
        with self.assertRaises(InvalidInputError):
            discounted_information_rate(mdp, random_policy(self.rng, 4, 3), identity_attack(4, 3), 1.0)

    def test_drift_signs(self):
        mdp = random_mdp(self.rng)
        self.assertTrue(drift_check(mdp, random_attack(self.rng, 4, 3)).holds)


class TestErrorBound(unittest.TestCase):

    def test_known_value(self):
        bound = MixingBound(l_const=1.0, theta=0.5, d_star=2.0)
        self.assertAlmostEqual(info_rate_error_bound(bound, 0.99), 0.02 / 0.485, places=10)

    def test_gamma0_is_larger_candidate(self):
        bound = MixingBound(l_const=2.0, theta=0.5, d_star=1.0)
        self.assertEqual(bound.gamma0, max(gamma0_candidates(bound)))
        self.assertAlmostEqual(bound.gamma0, 0.8)

    def test_below_gamma0_is_out_of_domain(self):
        bound = MixingBound(l_const=1.0, theta=0.5, d_star=2.0)
        with self.assertRaises(DomainError):
            info_rate_error_bound(bound, 0.6)
        with self.assertRaises(DomainError):
            info_rate_error_bound(bound, 1.0)

    def test_invalid_constants(self):
        with self.assertRaises(InvalidInputError):
            MixingBound(l_const=0.0, theta=0.5, d_star=1.0)
        with self.assertRaises(InvalidInputError):
            MixingBound(l_const=1.0, theta=1.0, d_star=1.0)

    def test_bound_holds_on_random_instances(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            mdp = random_mdp(rng)
            victim = random_policy(rng, 4, 3)
            attack = random_attack(rng, 4, 3)
            upper = upper_information_rate(mdp, victim, attack)
            mixing = fit_mixing_bound(mdp, victim, attack, horizon=100)
            for gamma in (0.9, 0.99, 0.999):
                if gamma <= mixing.gamma0:
                    continue
                gap = abs(discounted_information_rate(mdp, victim, attack, gamma)[0] - upper)
                self.assertLessEqual(gap, info_rate_error_bound(mixing, gamma) + 1e-9)

    def test_discounted_rate_approaches_upper_rate(self):
        rng = np.random.default_rng(21)
        mdp = random_mdp(rng)
        victim = random_policy(rng, 4, 3)
        attack = random_attack(rng, 4, 3)
        upper = upper_information_rate(mdp, victim, attack)
        self.assertLess(abs(discounted_information_rate(mdp, victim, attack, 0.9999)[0] - upper), 1e-2)


if __name__ == "__main__":
    unittest.main()
