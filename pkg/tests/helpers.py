"""Seeded random instances shared by the test modules"""

import numpy as np

from core.attack_mdp import AttackPolicy
from core.mdp import Policy, TabularMdp


def random_mdp(rng, n_states=4, n_actions=3, discount=0.9, reward_low=-1.0, reward_high=1.0):
    """Full-support kernel, so every chain is ergodic and every replacement absolutely continuous"""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.uniform(reward_low, reward_high, size=(n_states, n_actions))
    return TabularMdp(transition, reward, np.full(n_states, 1.0 / n_states), discount)


def random_policy(rng, n_states, n_actions):
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


def random_attack(rng, n_states, n_actions):
    return AttackPolicy(rng.dirichlet(np.ones(n_actions), size=(n_states, n_actions)))


def random_deterministic_attack(rng, n_states, n_actions):
    return AttackPolicy.deterministic(rng.integers(0, n_actions, size=(n_states, n_actions)))


def two_state_mdp(discount=0.9):
    """Small hand-written instance"""
    transition = np.array([
        [[0.9, 0.1], [0.2, 0.8]],
        [[0.5, 0.5], [0.1, 0.9]],
    ])
    reward = np.array([[1.0, 0.0], [0.5, -0.5]])
    return TabularMdp(transition, reward, np.array([0.5, 0.5]), discount)
