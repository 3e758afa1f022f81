"""
Attack MDP
The adversary's MDP over state-action pairs (s, a) with replacement action a_bar,
plus the constrained and KL-penalized synthesizers.

Pairs are flattened as s * A + a. Synthesis never materializes the dense attack
kernel: the Bellman update factors through W(s') = sum_a' pi(a'|s') V(s', a').
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from core.divergence import absolutely_continuous, pairwise_kernel_kl
from core.errors import InfeasibleProblemError, InvalidInputError, NumericalError
from core.mdp import PROB_TOL, Policy, TabularMdp, ValueFunction, _as_distribution

logger = logging.getLogger("core.attack_mdp")


@dataclass
class AttackPolicy:
    """Replacement law phi(a_bar | s, a)"""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = _as_distribution(self.probs, "attack policy")
        if self.probs.ndim != 3 or self.probs.shape[1] != self.probs.shape[2]:
            raise InvalidInputError(f"attack policy must have shape (S, A, A), got {self.probs.shape}")

    @classmethod
    def identity(cls, n_states: int, n_actions: int) -> "AttackPolicy":
        return cls(np.broadcast_to(np.eye(n_actions), (n_states, n_actions, n_actions)).copy())

    @classmethod
    def deterministic(cls, replacements) -> "AttackPolicy":
        """From an (S, A) array of replacement actions"""
        replacements = np.asarray(replacements, dtype=int)
        n_states, n_actions = replacements.shape
        probs = np.zeros((n_states, n_actions, n_actions))
        s_idx, a_idx = np.indices(replacements.shape)
        probs[s_idx, a_idx, replacements] = 1.0
        return cls(probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=2), 1.0)))

    def replacements(self) -> np.ndarray:
        return np.argmax(self.probs, axis=2)

    def is_identity(self) -> bool:
        return bool(np.allclose(self.probs, np.eye(self.n_actions)[None, :, :]))

    def to_dict(self) -> Dict[str, Any]:
        return {"n_states": self.n_states, "n_actions": self.n_actions, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackPolicy":
        return cls(np.asarray(data["probs"], dtype=float))

    def save(self, path: Union[str, Path]):
        with open(path, "w") as file:
            json.dump(self.to_dict(), file)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AttackPolicy":
        with open(path, "r") as file:
            return cls.from_dict(json.load(file))


def action_distance(n_actions: int) -> np.ndarray:
    """d(a, a_bar) = |a - a_bar|"""
    actions = np.arange(n_actions, dtype=float)
    return np.abs(actions[:, None] - actions[None, :])


def load_distance_csv(path: Union[str, Path]) -> np.ndarray:
    """Read a headerless A x A action-distance matrix"""
    distance = pd.read_csv(path, header=None).to_numpy(dtype=float)
    _check_distance(distance)
    return distance


def _check_distance(distance: np.ndarray):
    if distance.ndim != 2 or distance.shape[0] != distance.shape[1]:
        raise InvalidInputError("distance must be a square matrix")
    if np.any(distance < 0) or not np.allclose(distance, distance.T) or np.any(np.diag(distance) != 0):
        raise InvalidInputError("distance must be symmetric, nonnegative, with zero diagonal")


@dataclass
class AttackProblem:
    """Everything the adversary needs besides the MDP itself

    ``adversary_reward`` defaults to r_bar(s, a, a_bar) = -r(s, a) and
    ``distance`` to |a - a_bar|.
    """

    victim: Policy
    adversary_reward: Optional[np.ndarray] = None
    attack_discount: float = 0.95
    epsilon: float = math.inf
    distance: Optional[np.ndarray] = None
    penalty: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.attack_discount < 1.0:
            raise InvalidInputError(f"attack_discount must lie in (0, 1), got {self.attack_discount}")
        if self.epsilon < 0 or math.isnan(self.epsilon):
            raise InvalidInputError("epsilon must be nonnegative")
        if self.penalty < 0 or math.isnan(self.penalty):
            raise InvalidInputError("penalty must be nonnegative")
        if self.distance is None:
            self.distance = action_distance(self.victim.n_actions)
        self.distance = np.asarray(self.distance, dtype=float)
        _check_distance(self.distance)
        if self.distance.shape[0] != self.victim.n_actions:
            raise InvalidInputError("distance matrix does not match the number of actions")
        if self.adversary_reward is not None:
            self.adversary_reward = np.asarray(self.adversary_reward, dtype=float)
            if not np.all(np.isfinite(self.adversary_reward)):
                raise InvalidInputError("adversary_reward has non-finite entries")

    def reward_tensor(self, mdp: TabularMdp) -> np.ndarray:
        shape = (mdp.n_states, mdp.n_actions, mdp.n_actions)
        if self.adversary_reward is None:
            return np.broadcast_to(-mdp.reward[:, :, None], shape).copy()
        if self.adversary_reward.shape != shape:
            raise InvalidInputError(f"adversary_reward must have shape {shape}")
        return self.adversary_reward


def _check_compatible(mdp: TabularMdp, problem: AttackProblem):
    if problem.victim.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError("victim policy does not match the MDP")


def identity_attack(n_states: int, n_actions: int) -> AttackPolicy:
    return AttackPolicy.identity(n_states, n_actions)


def perturbed_kernel(mdp: TabularMdp, attack: AttackPolicy) -> np.ndarray:
    """P^phi(s'|s,a) = sum_a_bar phi(a_bar|s,a) P(s'|s,a_bar)"""
    if attack.probs.shape != (mdp.n_states, mdp.n_actions, mdp.n_actions):
        raise InvalidInputError("attack policy does not match the MDP")
    return np.einsum("sab,sbt->sat", attack.probs, mdp.transition)


def composite_policy(victim: Policy, attack: AttackPolicy) -> Policy:
    """phi o pi: law of the applied action given the state"""
    return Policy(np.einsum("sa,sab->sb", victim.probs, attack.probs))


def attacked_chain(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> np.ndarray:
    """State chain under the attack, P_{phi o pi}[s, s']"""
    return np.einsum("sa,sat->st", victim.probs, perturbed_kernel(mdp, attack))


def feasible_actions(mdp: TabularMdp, problem: AttackProblem) -> np.ndarray:
    """Mask of replacements allowed by the distance budget and absolute continuity"""
    _check_compatible(mdp, problem)
    within_budget = problem.distance <= problem.epsilon
    mask = absolutely_continuous(mdp.transition) & within_budget[None, :, :]
    if not np.all(mask.any(axis=2)):
        raise InfeasibleProblemError("a state-action pair has no feasible replacement")
    return mask


def build_attack_mdp(mdp: TabularMdp, problem: AttackProblem) -> TabularMdp:
    """Dense attack MDP on S*A states; use on small instances only"""
    _check_compatible(mdp, problem)
    n_states, n_actions = mdp.n_states, mdp.n_actions
    pi = problem.victim.probs
    # kernel[s, a, a_bar, s', a'] = P(s'|s,a_bar) pi(a'|s')
    kernel = mdp.transition[:, None, :, :, None] * pi[None, None, None, :, :]
    kernel = np.broadcast_to(kernel, (n_states, n_actions, n_actions, n_states, n_actions))
    reward = problem.reward_tensor(mdp)
    start = (mdp.initial_dist[:, None] * pi).reshape(-1)
    return TabularMdp(
        transition=kernel.reshape(n_states * n_actions, n_actions, n_states * n_actions),
        reward=reward.reshape(n_states * n_actions, n_actions),
        initial_dist=start,
        discount=problem.attack_discount,
    )


def adversary_value(mdp: TabularMdp, problem: AttackProblem, attack: AttackPolicy,
                    reward: Optional[np.ndarray] = None) -> ValueFunction:
    """V_bar(s, a) of an arbitrary attack, returned as an (S, A) array

    Solved through the S x S system for W = sum_a pi(a|.) V_bar(., a).
    """
    _check_compatible(mdp, problem)
    gamma = problem.attack_discount
    pi = problem.victim.probs
    reward = problem.reward_tensor(mdp) if reward is None else reward
    kernel = perturbed_kernel(mdp, attack)
    stage = np.sum(attack.probs * reward, axis=2)
    chain = np.einsum("sa,sat->st", pi, kernel)
    try:
        w = np.linalg.solve(np.eye(mdp.n_states) - gamma * chain, np.sum(pi * stage, axis=1))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"adversary value system is singular: {e}")
    return ValueFunction(stage + gamma * kernel @ w)


def _attack_value_iteration(
    mdp: TabularMdp,
    problem: AttackProblem,
    reward: np.ndarray,
    mask: np.ndarray,
    tol: float,
    max_iter: int = 1_000_000,
) -> Tuple[np.ndarray, np.ndarray]:
    gamma = problem.attack_discount
    pi = problem.victim.probs
    values = np.zeros((mdp.n_states, mdp.n_actions))
    reward = np.where(mask, reward, -np.inf)

    for iteration in range(1, max_iter + 1):
        w = np.sum(pi * values, axis=1)
        q = reward + gamma * (mdp.transition @ w)[:, None, :]
        updated = q.max(axis=2)
        residual = float(np.max(np.abs(updated - values)))
        values = updated
        if residual <= tol * (1.0 - gamma) / gamma:
            break
    else:
        raise NumericalError(f"attack value iteration did not converge in {max_iter} iterations")

    logger.debug(f"attack value iteration: {iteration} sweeps, residual {residual:.2e}")
    w = np.sum(pi * values, axis=1)
    q = reward + gamma * (mdp.transition @ w)[:, None, :]
    best = q.max(axis=2, keepdims=True)
    replacements = np.argmax(q >= best - 1e-10 * (1.0 + np.abs(best)), axis=2)
    return values, replacements


def solve_constrained_attack(mdp: TabularMdp, problem: AttackProblem, tol: float = 1e-8) -> AttackPolicy:
    """Optimal deterministic attack with |a - a_bar| <= epsilon (or the given distance)"""
    mask = feasible_actions(mdp, problem)
    _, replacements = _attack_value_iteration(mdp, problem, problem.reward_tensor(mdp), mask, tol)
    attack = AttackPolicy.deterministic(replacements)
    logger.debug(f"constrained attack (epsilon={problem.epsilon}): "
                 f"{int(np.sum(replacements != np.arange(mdp.n_actions)))} pairs replaced")
    return attack


def penalized_reward(mdp: TabularMdp, problem: AttackProblem) -> np.ndarray:
    """r_bar - beta (1 - gamma_bar) KL(P(s, a_bar), P(s, a)), -inf where the KL is infinite"""
    kl = pairwise_kernel_kl(mdp.transition)
    scale = problem.penalty * (1.0 - problem.attack_discount)
    with np.errstate(invalid="ignore"):
        penalty = np.where(np.isinf(kl), np.inf, scale * np.where(np.isinf(kl), 0.0, kl))
    return problem.reward_tensor(mdp) - penalty


def solve_penalized_attack(mdp: TabularMdp, problem: AttackProblem, tol: float = 1e-8) -> AttackPolicy:
    """Optimal deterministic attack under the KL-penalized adversary reward

    The distance budget does not apply here; only absolutely continuous
    replacements are admissible.
    """
    _check_compatible(mdp, problem)
    reward = penalized_reward(mdp, problem)
    mask = np.isfinite(reward)
    _, replacements = _attack_value_iteration(mdp, problem, np.where(mask, reward, 0.0), mask, tol)
    return AttackPolicy.deterministic(replacements)


def attack_support_ok(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> bool:
    """True when phi only uses absolutely continuous replacements on C(pi)"""
    ac = absolutely_continuous(mdp.transition)
    used = attack.probs > PROB_TOL
    return bool(np.all(ac[used & victim.support[:, :, None]]))
