"""
Trajectory simulation with a change point
Before the change time nu the victim's actions are applied unchanged; from nu on
each action is replaced by a draw from the attack policy.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core.attack_mdp import AttackPolicy
from core.errors import InvalidInputError
from core.mdp import Policy, TabularMdp, chain_stationary_distribution, policy_matrices

logger = logging.getLogger("core.simulation")


@dataclass
class Trajectory:
    """states has length T+1; actions/applied have length T"""

    states: np.ndarray
    actions: np.ndarray
    applied: np.ndarray
    change_time: int
    seed: Optional[int] = None

    @property
    def length(self) -> int:
        return self.actions.size

    @property
    def steps(self) -> List[Tuple[int, int, int, int]]:
        return list(zip(self.states[:-1].tolist(), self.actions.tolist(),
                        self.applied.tolist(), self.states[1:].tolist()))

    def observations(self) -> np.ndarray:
        """(s_t, a_t, s_{t+1}) rows as seen by the victim's detector"""
        return np.column_stack([self.states[:-1], self.actions, self.states[1:]])


@dataclass
class _Sampler:
    """Inverse-CDF tables for fast repeated categorical draws"""

    policy_cdf: np.ndarray
    attack_cdf: np.ndarray
    transition_cdf: np.ndarray
    initial_cdf: np.ndarray
    n_states: int = field(init=False)
    n_actions: int = field(init=False)

    def __post_init__(self):
        self.n_states, self.n_actions = self.policy_cdf.shape

    @staticmethod
    def draw(cdf: np.ndarray, u: float) -> int:
        return min(int(np.searchsorted(cdf, u, side="right")), cdf.size - 1)


def victim_stationary(mdp: TabularMdp, victim: Policy) -> np.ndarray:
    return chain_stationary_distribution(policy_matrices(mdp, victim)[0])


def make_sampler(mdp: TabularMdp, victim: Policy, attack: AttackPolicy,
                 initial: Optional[np.ndarray] = None) -> _Sampler:
    initial = victim_stationary(mdp, victim) if initial is None else np.asarray(initial, dtype=float)
    return _Sampler(
        policy_cdf=np.cumsum(victim.probs, axis=1),
        attack_cdf=np.cumsum(attack.probs, axis=2),
        transition_cdf=np.cumsum(mdp.transition, axis=2),
        initial_cdf=np.cumsum(initial),
    )


def simulate_with_sampler(sampler: _Sampler, change_time: int, horizon: int,
                          rng: np.random.Generator, seed: Optional[int] = None) -> Trajectory:
    if horizon < 0 or change_time < 0 or change_time > horizon:
        raise InvalidInputError(f"need 0 <= change_time <= horizon, got nu={change_time}, T={horizon}")
    uniforms = rng.random((horizon, 3))
    states = np.empty(horizon + 1, dtype=int)
    actions = np.empty(horizon, dtype=int)
    applied = np.empty(horizon, dtype=int)

    state = sampler.draw(sampler.initial_cdf, rng.random())
    states[0] = state
    for t in range(horizon):
        action = sampler.draw(sampler.policy_cdf[state], uniforms[t, 0])
        replaced = action if t < change_time else sampler.draw(sampler.attack_cdf[state, action], uniforms[t, 1])
        state = sampler.draw(sampler.transition_cdf[state, replaced], uniforms[t, 2])
        actions[t], applied[t], states[t + 1] = action, replaced, state
    return Trajectory(states, actions, applied, change_time, seed)


def simulate_trajectory(
    mdp: TabularMdp,
    victim: Policy,
    attack: AttackPolicy,
    change_time: int,
    horizon: int,
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    initial: Optional[np.ndarray] = None,
) -> Trajectory:
    """Sample one trajectory; the start state is drawn from the victim's stationary law"""
    rng = np.random.default_rng(seed) if rng is None else rng
    sampler = make_sampler(mdp, victim, attack, initial)
    return simulate_with_sampler(sampler, change_time, horizon, rng, seed)
