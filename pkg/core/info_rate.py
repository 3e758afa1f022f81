"""
Information rates of an attack
Log-likelihood ratios, the stationary rate I, its upper bound I_bar, the
discounted rate I_bar_gamma and the approximation-error bound between them.

Infinite rates (absolute continuity violated on visited pairs) are returned as
math.inf and never as an overflowed float.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from core.attack_mdp import AttackPolicy, attacked_chain, perturbed_kernel
from core.divergence import kl_divergence, pairwise_kernel_kl, row_kl
from core.errors import DomainError, InvalidInputError, NumericalError
from core.mdp import Distribution, Policy, TabularMdp, chain_stationary_distribution

logger = logging.getLogger("core.info_rate")

__all__ = [
    "LlrTable",
    "InfoRateReport",
    "MixingBound",
    "DriftReport",
    "kl_divergence",
    "log_likelihood_ratio",
    "information_rate",
    "upper_information_rate",
    "discounted_information_rate",
    "info_rate_error_bound",
    "gamma0_candidates",
    "fit_mixing_bound",
    "info_rate_report",
    "drift_check",
]


@dataclass
class LlrTable:
    """z[s, a, s'] = ln(P^phi(s'|s,a) / P(s'|s,a)); 0 where both vanish"""

    values: np.ndarray

    def __call__(self, state: int, action: int, next_state: int) -> float:
        return float(self.values[state, action, next_state])


@dataclass
class InfoRateReport:
    rate: float
    upper_rate: float
    discounted_rate: float
    per_state: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"I": self.rate, "I_bar": self.upper_rate, "I_bar_gamma": self.discounted_rate}


@dataclass
class MixingBound:
    """Constants of sup_x ||P^t(x) - mu||_TV <= L theta^t and D* = max stage KL"""

    l_const: float
    theta: float
    d_star: float

    def __post_init__(self):
        if self.l_const <= 0:
            raise InvalidInputError("L must be positive")
        if not 0.0 < self.theta < 1.0:
            raise InvalidInputError("theta must lie in (0, 1)")
        if self.d_star < 0:
            raise InvalidInputError("D* must be nonnegative")

    @property
    def gamma0(self) -> float:
        return max(gamma0_candidates(self))

    def to_dict(self) -> Dict[str, Any]:
        return {"L": self.l_const, "theta": self.theta, "D_star": self.d_star, "gamma0": self.gamma0}


@dataclass
class DriftReport:
    """Expected z under the nominal (pre) and attacked (post) kernels per (s, a)"""

    pre_change: np.ndarray
    post_change: np.ndarray

    @property
    def holds(self) -> bool:
        return bool(np.all(self.pre_change <= 1e-12) and np.all(self.post_change >= -1e-12))


def _weighted_sum(weights: np.ndarray, costs: np.ndarray) -> float:
    """sum weights * costs over positive weights, +inf if any of them hits an infinite cost"""
    active = weights > 0
    if np.any(np.isinf(costs[active])):
        return math.inf
    return float(np.sum(weights[active] * costs[active]))


def log_likelihood_ratio(mdp: TabularMdp, attack: AttackPolicy) -> LlrTable:
    attacked = perturbed_kernel(mdp, attack)
    nominal = mdp.transition
    z = np.zeros_like(nominal)
    both = (attacked > 0) & (nominal > 0)
    z[both] = np.log(attacked[both] / nominal[both])
    z[(attacked > 0) & (nominal == 0)] = np.inf
    z[(attacked == 0) & (nominal > 0)] = -np.inf
    return LlrTable(z)


def drift_check(mdp: TabularMdp, attack: AttackPolicy) -> DriftReport:
    attacked = perturbed_kernel(mdp, attack)
    return DriftReport(pre_change=-row_kl(mdp.transition, attacked), post_change=row_kl(attacked, mdp.transition))


def _attacked_stationary(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> np.ndarray:
    return chain_stationary_distribution(attacked_chain(mdp, victim, attack))


def information_rate(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> float:
    """I = E_{s ~ mu^{phi o pi}, a ~ pi} KL(P^phi(s, a), P(s, a))"""
    mu = _attacked_stationary(mdp, victim, attack)
    kl = row_kl(perturbed_kernel(mdp, attack), mdp.transition)
    return _weighted_sum(mu[:, None] * victim.probs, kl)


def upper_information_rate(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> float:
    """I_bar = E_{s ~ mu^{phi o pi}, a ~ pi, a_bar ~ phi} KL(P(s, a_bar), P(s, a))"""
    mu = _attacked_stationary(mdp, victim, attack)
    weights = mu[:, None, None] * victim.probs[:, :, None] * attack.probs
    return _weighted_sum(weights, pairwise_kernel_kl(mdp.transition))


def _stage_kl(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> np.ndarray:
    """d(s, a) = E_{a_bar ~ phi} KL(P(s, a_bar), P(s, a)), +inf when any used a_bar violates continuity"""
    kl = pairwise_kernel_kl(mdp.transition)
    used = attack.probs > 0
    finite = np.where(used, np.where(np.isinf(kl), 0.0, kl), 0.0)
    stage = np.sum(attack.probs * finite, axis=2)
    stage[np.any(used & np.isinf(kl), axis=2)] = np.inf
    return stage


def _reaches(chain: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """States with a positive-probability path into ``targets``"""
    reverse = csr_matrix(np.asarray(chain).T > 0)
    hit = np.zeros(chain.shape[0], dtype=bool)
    for target in np.flatnonzero(targets):
        if not hit[target]:
            hit[breadth_first_order(reverse, target, directed=True, return_predecessors=False)] = True
    return hit


def discounted_information_rate(
    mdp: TabularMdp,
    victim: Policy,
    attack: AttackPolicy,
    gamma: float,
    alpha: Optional[Distribution] = None,
) -> Tuple[float, np.ndarray]:
    """I_bar_gamma per (s, a) and its alpha(s) pi(a|s)-weighted average

    Per pair: v = (1 - gamma) d + gamma P^phi W with W(s) = sum_a pi(a|s) v(s, a),
    solved exactly on the state chain of phi o pi.
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
    alpha = Distribution.uniform(mdp.n_states) if alpha is None else alpha
    if alpha.dim != mdp.n_states:
        raise InvalidInputError("alpha must be a distribution over states")

    pi = victim.probs
    kernel = perturbed_kernel(mdp, attack)
    chain = np.einsum("sa,sat->st", pi, kernel)
    stage = (1.0 - gamma) * _stage_kl(mdp, victim, attack)
    stage_state = np.array([_weighted_sum(pi[s], stage[s]) for s in range(mdp.n_states)])

    w = np.full(mdp.n_states, np.inf)
    safe = ~_reaches(chain, np.isinf(stage_state))
    if np.any(safe):
        sub = chain[np.ix_(safe, safe)]
        try:
            w[safe] = np.linalg.solve(np.eye(int(safe.sum())) - gamma * sub, stage_state[safe])
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"discounted information rate system is singular: {e}")

    future = kernel[:, :, safe] @ w[safe]
    per_pair = stage + gamma * future
    per_pair[np.any(kernel[:, :, ~safe] > 0, axis=2)] = np.inf
    per_pair[np.isinf(stage)] = np.inf
    scalar = _weighted_sum(alpha.weights[:, None] * pi, per_pair)
    logger.debug(f"discounted information rate at gamma={gamma}: {scalar:.6g}")
    return scalar, per_pair


def gamma0_candidates(bound: MixingBound) -> Tuple[float, float]:
    """Both readings of the discount threshold: 1/(1+(1-theta)L) and 1/(1+(1-theta)/L)"""
    slack = 1.0 - bound.theta
    return 1.0 / (1.0 + slack * bound.l_const), 1.0 / (1.0 + slack / bound.l_const)


def info_rate_error_bound(bound: MixingBound, gamma: float) -> float:
    """sup |I_gamma - I| <= (1-gamma) L D* / (gamma (1-theta) - (1-gamma) L)"""
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    if gamma <= bound.gamma0:
        raise DomainError(f"gamma={gamma} does not exceed gamma0={bound.gamma0:.6g}")
    denominator = gamma * (1.0 - bound.theta) - (1.0 - gamma) * bound.l_const
    if denominator <= 0:
        raise DomainError(f"error bound denominator is not positive at gamma={gamma}")
    return (1.0 - gamma) * bound.l_const * bound.d_star / denominator


def _pair_chain(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """Transition matrix over the pairs in C(pi), and the flat indices of those pairs"""
    kernel = perturbed_kernel(mdp, attack)
    full = (kernel[:, :, :, None] * victim.probs[None, None, :, :]).reshape(
        mdp.n_states * mdp.n_actions, mdp.n_states * mdp.n_actions
    )
    pairs = np.flatnonzero(victim.support.reshape(-1))
    return full[np.ix_(pairs, pairs)], pairs


def fit_mixing_bound(mdp: TabularMdp, victim: Policy, attack: AttackPolicy, horizon: int = 200) -> MixingBound:
    """Fit L, theta from the TV decay of the attacked pair chain over t = 1..horizon

    theta comes from a least-squares fit of ln TV_t; L is then raised until
    L theta^t dominates every measured TV_t, t = 0 included.
    """
    chain, pairs = _pair_chain(mdp, victim, attack)
    mu = chain_stationary_distribution(chain)
    power = np.eye(chain.shape[0])
    distances = np.empty(horizon)
    for t in range(horizon):
        power = power @ chain
        distances[t] = 0.5 * np.max(np.sum(np.abs(power - mu[None, :]), axis=1))

    steps = np.arange(1, horizon + 1)
    usable = distances > 1e-10
    if np.count_nonzero(usable) >= 2:
        slope, _ = np.polyfit(steps[usable], np.log(distances[usable]), 1)
        theta = float(np.clip(np.exp(slope), 1e-6, 1.0 - 1e-9))
    else:
        theta = 1e-3
    if np.any(usable):
        with np.errstate(over="ignore"):
            envelope = np.exp(np.log(distances[usable]) - steps[usable] * np.log(theta))
        l_const = float(np.max(envelope))
    else:
        l_const = 0.0
    # TV at t = 0 from a point mass
    l_const = max(l_const, 1.0 - float(np.min(mu)), 1e-12)

    stage = _stage_kl(mdp, victim, attack).reshape(-1)[pairs]
    d_star = float(np.max(stage)) if stage.size else 0.0
    logger.debug(f"mixing fit: L={l_const:.4g}, theta={theta:.4g}, D*={d_star:.4g}")
    return MixingBound(l_const=l_const, theta=theta, d_star=d_star)


def info_rate_report(
    mdp: TabularMdp,
    victim: Policy,
    attack: AttackPolicy,
    gamma: float,
    alpha: Optional[Distribution] = None,
) -> InfoRateReport:
    discounted, per_pair = discounted_information_rate(mdp, victim, attack, gamma, alpha)
    return InfoRateReport(
        rate=information_rate(mdp, victim, attack),
        upper_rate=upper_information_rate(mdp, victim, attack),
        discounted_rate=discounted,
        per_state=per_pair,
    )
