"""
Tabular MDPs
Finite controlled Markov chains with exact planning and distribution computations.
Everything else in the library is built on these types.
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from core.errors import ChainStructureError, InvalidInputError, NumericalError

logger = logging.getLogger("core.mdp")

PROB_TOL = 1e-9
TIE_TOL = 1e-10


def _as_distribution(values, name: str, axis: int = -1) -> np.ndarray:
    """Validate that ``values`` holds probability vectors along ``axis``"""
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if np.any(arr < -PROB_TOL):
        raise InvalidInputError(f"{name} has negative entries")
    sums = arr.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise InvalidInputError(f"{name} rows must sum to 1 (max deviation {worst:.3e})")
    return np.clip(arr, 0.0, None)


@dataclass
class TabularMdp:
    """Finite MDP (S, A, P, r, p0) with discount and reward bound R*

    ``transition[s, a, s']`` is P(s'|s,a) and ``reward[s, a]`` the expected
    immediate reward. When ``reward_bound`` is omitted it is set to max |r|.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float = 0.95
    reward_bound: Optional[float] = None

    def __post_init__(self):
        self.transition = _as_distribution(self.transition, "transition")
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise InvalidInputError(f"transition must have shape (S, A, S), got {self.transition.shape}")
        self.reward = np.asarray(self.reward, dtype=float)
        if self.reward.shape != self.transition.shape[:2]:
            raise InvalidInputError(
                f"reward shape {self.reward.shape} does not match (S, A) = {self.transition.shape[:2]}"
            )
        if not np.all(np.isfinite(self.reward)):
            raise InvalidInputError("reward has non-finite entries")
        self.initial_dist = _as_distribution(self.initial_dist, "initial_dist")
        if self.initial_dist.shape != (self.n_states,):
            raise InvalidInputError("initial_dist must have one entry per state")
        if not 0.0 < self.discount < 1.0:
            raise InvalidInputError(f"discount must lie in (0, 1), got {self.discount}")
        max_abs = float(np.max(np.abs(self.reward))) if self.reward.size else 0.0
        if self.reward_bound is None:
            self.reward_bound = max_abs
        elif self.reward_bound < 0 or max_abs > self.reward_bound + 1e-12:
            raise InvalidInputError(f"reward_bound {self.reward_bound} is below max |r| = {max_abs}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_transition(self, transition: np.ndarray) -> "TabularMdp":
        """Copy of this MDP with another kernel (e.g. an attacked one)"""
        return replace(self, transition=transition)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "reward_bound": float(self.reward_bound),
            "initial_dist": self.initial_dist.tolist(),
            "discount": float(self.discount),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TabularMdp":
        mdp = cls(
            transition=np.asarray(data["transition"], dtype=float),
            reward=np.asarray(data["reward"], dtype=float),
            initial_dist=np.asarray(data["initial_dist"], dtype=float),
            discount=float(data["discount"]),
            reward_bound=data.get("reward_bound"),
        )
        if (data.get("n_states", mdp.n_states), data.get("n_actions", mdp.n_actions)) != (
            mdp.n_states,
            mdp.n_actions,
        ):
            raise InvalidInputError("n_states / n_actions do not match the array shapes")
        return mdp

    def save(self, path: Union[str, Path]):
        with open(path, "w") as file:
            json.dump(self.to_dict(), file)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TabularMdp":
        with open(path, "r") as file:
            return cls.from_dict(json.load(file))


@dataclass
class Policy:
    """Stationary randomized policy pi(a|s)"""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = _as_distribution(self.probs, "policy")
        if self.probs.ndim != 2:
            raise InvalidInputError("policy must be a (S, A) matrix")

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of C(pi) = {(s, a): pi(a|s) > 0}"""
        return self.probs > 0

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=1), 1.0)))

    def actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


@dataclass
class Distribution:
    """Probability vector over states (or flattened state-action pairs)"""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = _as_distribution(self.weights, "distribution")

    @property
    def dim(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))


@dataclass
class ValueFunction:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("value function has non-finite entries")

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_policy(mdp: TabularMdp, policy: Policy):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )


def _discount(mdp: TabularMdp, gamma: Optional[float], allow_zero: bool = False) -> float:
    gamma = mdp.discount if gamma is None else float(gamma)
    low_ok = gamma >= 0.0 if allow_zero else gamma > 0.0
    if not (low_ok and gamma < 1.0):
        raise InvalidInputError(f"discount must lie in (0, 1), got {gamma}")
    return gamma


def policy_matrices(mdp: TabularMdp, policy: Policy) -> Tuple[np.ndarray, np.ndarray]:
    """Induced chain P_pi[s, s'] and reward vector r_pi[s]"""
    _check_policy(mdp, policy)
    p_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r_pi = np.sum(policy.probs * mdp.reward, axis=1)
    return p_pi, r_pi


def q_values(mdp: TabularMdp, values: np.ndarray, gamma: float) -> np.ndarray:
    return mdp.reward + gamma * (mdp.transition @ values)


def greedy_policy(
    mdp: TabularMdp,
    values: np.ndarray,
    gamma: Optional[float] = None,
    action_mask: Optional[np.ndarray] = None,
) -> Policy:
    """Deterministic greedy policy, ties broken by the lowest action index"""
    gamma = _discount(mdp, gamma)
    q = q_values(mdp, np.asarray(values, dtype=float), gamma)
    return Policy.deterministic(_greedy_actions(q, action_mask), mdp.n_actions)


def _greedy_actions(q: np.ndarray, action_mask: Optional[np.ndarray] = None) -> np.ndarray:
    if action_mask is not None:
        q = np.where(action_mask, q, -np.inf)
    best = q.max(axis=1, keepdims=True)
    near_best = q >= best - TIE_TOL * (1.0 + np.abs(best))
    return np.argmax(near_best, axis=1)


def _check_mask(mdp: TabularMdp, action_mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if action_mask is None:
        return None
    mask = np.asarray(action_mask, dtype=bool)
    if mask.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError("action_mask must have shape (S, A)")
    if not np.all(mask.any(axis=1)):
        raise InvalidInputError("action_mask leaves a state without actions")
    return mask


def value_iteration(
    mdp: TabularMdp,
    gamma: Optional[float] = None,
    tol: float = 1e-8,
    action_mask: Optional[np.ndarray] = None,
    max_iter: int = 1_000_000,
) -> Tuple[ValueFunction, Policy]:
    """Optimal value by value iteration, stopped once ||TV - V||_inf <= tol

    ``action_mask[s, a]`` restricts the actions available in each state.
    """
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    gamma = _discount(mdp, gamma)
    mask = _check_mask(mdp, action_mask)

    values = np.zeros(mdp.n_states)
    for iteration in range(1, max_iter + 1):
        q = q_values(mdp, values, gamma)
        if mask is not None:
            q = np.where(mask, q, -np.inf)
        updated = q.max(axis=1)
        residual = float(np.max(np.abs(updated - values)))
        values = updated
        if residual <= tol * (1.0 - gamma) / gamma:
            break
    else:
        raise NumericalError(f"value iteration did not converge in {max_iter} iterations")

    logger.debug(f"value iteration converged after {iteration} iterations (residual {residual:.2e})")
    q = q_values(mdp, values, gamma)
    return ValueFunction(values), Policy.deterministic(_greedy_actions(q, mask), mdp.n_actions)


def policy_evaluation(mdp: TabularMdp, policy: Policy, gamma: Optional[float] = None) -> ValueFunction:
    """Exact discounted value: solves V = r_pi + gamma P_pi V"""
    gamma = _discount(mdp, gamma)
    p_pi, r_pi = policy_matrices(mdp, policy)
    try:
        values = np.linalg.solve(np.eye(mdp.n_states) - gamma * p_pi, r_pi)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"policy evaluation system is singular: {e}")
    return ValueFunction(values)


def policy_iteration(
    mdp: TabularMdp,
    gamma: Optional[float] = None,
    action_mask: Optional[np.ndarray] = None,
    max_iter: int = 10_000,
) -> Tuple[ValueFunction, Policy]:
    """Howard policy iteration with exact evaluation"""
    gamma = _discount(mdp, gamma)
    mask = _check_mask(mdp, action_mask)
    actions = _greedy_actions(mdp.reward, mask)

    for _ in range(max_iter):
        policy = Policy.deterministic(actions, mdp.n_actions)
        values = policy_evaluation(mdp, policy, gamma)
        q = q_values(mdp, values.values, gamma)
        if mask is not None:
            q = np.where(mask, q, -np.inf)
        current = q[np.arange(mdp.n_states), actions]
        improved = _greedy_actions(q)
        # keep the incumbent unless the improvement is strict
        keep = q[np.arange(mdp.n_states), improved] <= current + TIE_TOL * (1.0 + np.abs(current))
        improved = np.where(keep, actions, improved)
        if np.array_equal(improved, actions):
            return values, policy
        actions = improved
    raise NumericalError(f"policy iteration did not stabilize in {max_iter} iterations")


def closed_classes(chain: np.ndarray) -> List[np.ndarray]:
    """Closed communicating classes of a row-stochastic matrix"""
    adjacency = csr_matrix(np.asarray(chain) > 0)
    n_components, labels = connected_components(adjacency, directed=True, connection="strong")
    rows, cols = adjacency.nonzero()
    leaking = np.zeros(n_components, dtype=bool)
    leaking[labels[rows][labels[rows] != labels[cols]]] = True
    return [np.flatnonzero(labels == c) for c in range(n_components) if not leaking[c]]


def chain_stationary_distribution(chain: np.ndarray) -> np.ndarray:
    """Unique stationary law of a unichain transition matrix

    Transient states get zero mass. Chains with several closed classes have no
    unique stationary law and are rejected.
    """
    chain = np.asarray(chain, dtype=float)
    classes = closed_classes(chain)
    if len(classes) != 1:
        raise ChainStructureError(
            f"chain has {len(classes)} closed classes; a unique stationary distribution needs exactly one"
        )
    members = classes[0]
    sub = chain[np.ix_(members, members)]
    system = sub.T - np.eye(members.size)
    system[-1, :] = 1.0
    rhs = np.zeros(members.size)
    rhs[-1] = 1.0
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"stationary system is singular: {e}")
    solution = np.clip(solution, 0.0, None)
    mu = np.zeros(chain.shape[0])
    mu[members] = solution / solution.sum()
    return mu


def stationary_distribution(mdp: TabularMdp, policy: Policy) -> Distribution:
    """Stationary distribution mu^pi of the chain induced by ``policy``"""
    p_pi, _ = policy_matrices(mdp, policy)
    return Distribution(chain_stationary_distribution(p_pi))


def discounted_chain_distribution(chain: np.ndarray, gamma: float, start: np.ndarray) -> np.ndarray:
    """(1 - gamma) sum_t gamma^t start^T chain^t, by linear solve"""
    n = chain.shape[0]
    try:
        mu = np.linalg.solve(np.eye(n) - gamma * chain.T, (1.0 - gamma) * np.asarray(start, dtype=float))
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"discounted distribution system is singular: {e}")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def discounted_state_distribution(
    mdp: TabularMdp, policy: Policy, gamma: Optional[float], alpha: Distribution
) -> Distribution:
    """Discounted state distribution mu_gamma = (1-gamma) sum_t gamma^t alpha^T P_pi^t"""
    gamma = _discount(mdp, gamma, allow_zero=True)
    if alpha.dim != mdp.n_states:
        raise InvalidInputError("alpha must be a distribution over states")
    p_pi, _ = policy_matrices(mdp, policy)
    return Distribution(discounted_chain_distribution(p_pi, gamma, alpha.weights))


def ergodic_reward(mdp: TabularMdp, policy: Policy) -> float:
    """Average reward h^pi under the stationary distribution"""
    mu = stationary_distribution(mdp, policy).weights
    _, r_pi = policy_matrices(mdp, policy)
    return float(mu @ r_pi)


def tv_distance(p, q) -> float:
    """Total variation distance, 1/2 L1"""
    p = _as_distribution(p, "p")
    q = _as_distribution(q, "q")
    if p.shape != q.shape:
        raise InvalidInputError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.sum(np.abs(p - q)))


def max_kernel_tv(mdp: TabularMdp) -> float:
    """max over (s, a, a_bar) of TV(P(.|s,a), P(.|s,a_bar))"""
    worst = 0.0
    for s in range(mdp.n_states):
        rows = mdp.transition[s]
        pairwise = 0.5 * np.abs(rows[:, None, :] - rows[None, :, :]).sum(axis=2)
        worst = max(worst, float(pairwise.max()))
    return worst


def regret_bound(mdp: TabularMdp, gamma: Optional[float] = None) -> float:
    """Upper bound on ||V^pi - V^{phi o pi}||_inf valid for every attack"""
    gamma = _discount(mdp, gamma)
    alpha = 2.0 * gamma * mdp.reward_bound / (1.0 - gamma) ** 2
    return alpha * max_kernel_tv(mdp)


def attacked_value(mdp: TabularMdp, policy: Policy, attack, gamma: Optional[float] = None) -> ValueFunction:
    """V^{phi o pi}: the victim's value when its actions are replaced by ``attack``

    ``attack`` is an (S, A, A) tensor phi[s, a, a_bar] or any object exposing it
    as ``probs``. The victim still collects r(s, a) for the action it chose while
    the state moves according to the applied action.
    """
    probs = np.asarray(getattr(attack, "probs", attack), dtype=float)
    if probs.shape != (mdp.n_states, mdp.n_actions, mdp.n_actions):
        raise InvalidInputError(f"attack tensor has shape {probs.shape}, expected (S, A, A)")
    perturbed = np.einsum("sab,sbt->sat", probs, mdp.transition)
    return policy_evaluation(mdp.with_transition(perturbed), policy, gamma)


def normalized_attacked_reward(mdp: TabularMdp, policy: Policy, attack, gamma: Optional[float] = None) -> float:
    """mu^pi-weighted attacked value over the mu^pi-weighted unattacked value"""
    weights = stationary_distribution(mdp, policy).weights
    baseline = float(weights @ policy_evaluation(mdp, policy, gamma).values)
    if abs(baseline) < TIE_TOL:
        raise NumericalError("unattacked value is zero; cannot normalize")
    return float(weights @ attacked_value(mdp, policy, attack, gamma).values) / baseline
