"""
Occupancy-measure linear programs for stealthy attacks

Variables are xi(s, a, a_bar) = mu(s) pi(a|s) phi(a_bar|s, a), kept only for
admissible triples (pi(a|s) > 0 and P(s, a_bar) << P(s, a)); every other entry is
structurally zero, so infinite KL coefficients never reach the solver.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from core.attack_mdp import AttackPolicy, attacked_chain
from core.divergence import absolutely_continuous, pairwise_kernel_kl
from core.errors import InfeasibleProblemError, InvalidInputError
from core.mdp import (
    Distribution,
    Policy,
    TabularMdp,
    chain_stationary_distribution,
    discounted_chain_distribution,
    ergodic_reward,
    policy_evaluation,
)

logger = logging.getLogger("core.stealth_lp")

STATUS_BY_CODE = {0: "optimal", 2: "infeasible", 3: "unbounded"}
MODES = ("ergodic", "discounted")
REWARD_TOL = 1e-6


@dataclass
class LpSolution:
    variables: np.ndarray
    objective: float
    status: str
    dual_gap: float = math.nan
    primal_residual: float = math.nan
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class OccupancyMeasure:
    """xi[s, a, a_bar], tagged with the flow form it satisfies"""

    xi: np.ndarray
    mode: str = "discounted"
    discount: Optional[float] = None

    def __post_init__(self):
        self.xi = np.clip(np.asarray(self.xi, dtype=float), 0.0, None)
        if self.xi.ndim != 3:
            raise InvalidInputError("occupancy must be an (S, A, A) tensor")
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown occupancy mode {self.mode!r}")

    @property
    def mass(self) -> float:
        return float(self.xi.sum())

    def state_marginal(self) -> np.ndarray:
        return self.xi.sum(axis=(1, 2))

    def to_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, "discount": self.discount, "xi": self.xi.tolist()}

    def save(self, path: Union[str, Path]):
        with open(path, "w") as file:
            json.dump(self.to_dict(), file, indent=2, sort_keys=True)


def solve_lp(
    objective: np.ndarray,
    eq_constraints: Optional[Tuple[Any, np.ndarray]] = None,
    ineq_constraints: Optional[Tuple[Any, np.ndarray]] = None,
    nonneg: bool = True,
) -> LpSolution:
    """minimize c^T x subject to A_eq x = b_eq, A_ub x <= b_ub (and x >= 0)

    Solved with HiGHS; the duality gap is rebuilt from the constraint marginals.
    Infeasible and unbounded problems come back as a status, never an exception.
    """
    objective = np.asarray(objective, dtype=float)
    a_eq, b_eq = eq_constraints if eq_constraints is not None else (None, None)
    a_ub, b_ub = ineq_constraints if ineq_constraints is not None else (None, None)
    bounds = (0, None) if nonneg else (None, None)

    try:
        result = linprog(objective, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    except ValueError as e:
        logger.warning(f"⚠️ LP solver rejected the problem: {e}")
        return LpSolution(np.zeros(objective.size), math.nan, "error", message=str(e))

    status = STATUS_BY_CODE.get(result.status, "error")
    if status != "optimal":
        logger.debug(f"LP finished with status {status}: {result.message}")
        return LpSolution(np.zeros(objective.size), math.nan, status, message=result.message)

    x = np.asarray(result.x, dtype=float)
    dual = 0.0
    residual = 0.0
    if a_eq is not None:
        dual += float(np.dot(b_eq, result.eqlin.marginals))
        residual = max(residual, float(np.max(np.abs(a_eq @ x - b_eq), initial=0.0)))
    if a_ub is not None:
        dual += float(np.dot(b_ub, result.ineqlin.marginals))
        residual = max(residual, float(np.max(a_ub @ x - b_ub, initial=0.0)))
    gap = abs(result.fun - dual) / (1.0 + abs(result.fun))
    logger.debug(f"LP optimal: objective {result.fun:.10g}, dual gap {gap:.2e}, residual {residual:.2e}")
    return LpSolution(x, float(result.fun), status, dual_gap=gap, primal_residual=residual, message=result.message)


class _OccupancyProgram:
    """Index bookkeeping and constraint assembly shared by both LPs"""

    def __init__(self, mdp: TabularMdp, victim: Policy):
        if victim.probs.shape != (mdp.n_states, mdp.n_actions):
            raise InvalidInputError("victim policy does not match the MDP")
        self.mdp = mdp
        self.victim = victim
        shape = (mdp.n_states, mdp.n_actions, mdp.n_actions)
        admissible = victim.support[:, :, None] & absolutely_continuous(mdp.transition)
        self.states, self.actions, self.replacements = np.nonzero(admissible)
        self.shape = shape
        self.pair_states, self.pair_actions = np.nonzero(victim.support)
        self.pair_row = -np.ones(mdp.n_states * mdp.n_actions, dtype=int)
        self.pair_row[self.pair_states * mdp.n_actions + self.pair_actions] = np.arange(self.pair_states.size)

    @property
    def n_vars(self) -> int:
        return self.states.size

    def gather(self, tensor: np.ndarray) -> np.ndarray:
        return tensor[self.states, self.actions, self.replacements]

    def scatter(self, values: np.ndarray) -> np.ndarray:
        full = np.zeros(self.shape)
        full[self.states, self.actions, self.replacements] = np.clip(values, 0.0, None)
        return full

    def flow(self, discount: float) -> sparse.csr_matrix:
        """Rows sum_a_bar xi(s,a,.) - discount pi(a|s) sum P(s|s',a_bar') xi(s',a',a_bar')"""
        n_rows = self.pair_states.size
        columns = np.arange(self.n_vars)
        rows = self.pair_row[self.states * self.mdp.n_actions + self.actions]
        outflow = sparse.csr_matrix((np.ones(self.n_vars), (rows, columns)), shape=(n_rows, self.n_vars))
        landing = sparse.csr_matrix(self.mdp.transition[self.states, self.replacements, :].T)
        weights = discount * self.victim.probs[self.pair_states, self.pair_actions]
        inflow = sparse.diags(weights) @ landing[self.pair_states, :]
        return (outflow - inflow).tocsr()

    def source(self, alpha: np.ndarray, discount: float) -> np.ndarray:
        return (1.0 - discount) * alpha[self.pair_states] * self.victim.probs[self.pair_states, self.pair_actions]

    def constraints(self, mode: str, discount: Optional[float], alpha: Optional[Distribution]):
        if mode == "discounted":
            if discount is None or not 0.0 < discount < 1.0:
                raise InvalidInputError("discounted mode needs a discount in (0, 1)")
            alpha = Distribution.uniform(self.mdp.n_states) if alpha is None else alpha
            if alpha.dim != self.mdp.n_states:
                raise InvalidInputError("alpha must be a distribution over states")
            return self.flow(discount), self.source(alpha.weights, discount)
        if mode == "ergodic":
            flow = sparse.vstack([self.flow(1.0), sparse.csr_matrix(np.ones((1, self.n_vars)))]).tocsr()
            rhs = np.zeros(flow.shape[0])
            rhs[-1] = 1.0
            return flow, rhs
        raise InvalidInputError(f"unknown mode {mode!r}; expected one of {MODES}")


def policy_from_occupancy(occupancy: OccupancyMeasure) -> AttackPolicy:
    """phi(a_bar|s,a) = xi(s,a,a_bar) / sum xi(s,a,.), identity on zero-mass rows"""
    xi = occupancy.xi
    mass = xi.sum(axis=2, keepdims=True)
    identity = np.broadcast_to(np.eye(xi.shape[1]), xi.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(mass > 1e-12, xi / np.where(mass > 1e-12, mass, 1.0), identity)
    probs = probs / probs.sum(axis=2, keepdims=True)
    return AttackPolicy(probs)


def discounted_occupancy(
    mdp: TabularMdp,
    victim: Policy,
    attack: AttackPolicy,
    discount: float,
    alpha: Optional[Distribution] = None,
) -> OccupancyMeasure:
    """Forward computation of the discounted xi induced by (pi, phi) from alpha"""
    alpha = Distribution.uniform(mdp.n_states) if alpha is None else alpha
    nu = discounted_chain_distribution(attacked_chain(mdp, victim, attack), discount, alpha.weights)
    xi = nu[:, None, None] * victim.probs[:, :, None] * attack.probs
    return OccupancyMeasure(xi, mode="discounted", discount=discount)


def stationary_occupancy(mdp: TabularMdp, victim: Policy, attack: AttackPolicy) -> OccupancyMeasure:
    mu = chain_stationary_distribution(attacked_chain(mdp, victim, attack))
    xi = mu[:, None, None] * victim.probs[:, :, None] * attack.probs
    return OccupancyMeasure(xi, mode="ergodic")


def optimal_stealthy_attack(
    mdp: TabularMdp,
    victim: Policy,
    epsilon: float,
    discount: float = 0.95,
    alpha: Optional[Distribution] = None,
    adversary_reward: Optional[np.ndarray] = None,
) -> Tuple[AttackPolicy, OccupancyMeasure, float]:
    """Best randomized attack whose discounted KL budget stays below epsilon

    Returns the attack, its occupancy and the adversary's value alpha~^T V_bar.
    """
    if epsilon < 0 or math.isnan(epsilon):
        raise InvalidInputError("epsilon must be nonnegative")
    program = _OccupancyProgram(mdp, victim)
    reward = -mdp.reward[:, :, None] * np.ones(program.shape) if adversary_reward is None else adversary_reward
    reward = np.asarray(reward, dtype=float)
    if reward.shape != program.shape:
        raise InvalidInputError(f"adversary_reward must have shape {program.shape}")

    flow, rhs = program.constraints("discounted", discount, alpha)
    kl_row = program.gather(pairwise_kernel_kl(mdp.transition))[None, :]
    scale = 1.0 / (1.0 - discount)
    solution = solve_lp(
        -scale * program.gather(reward),
        eq_constraints=(flow, rhs),
        ineq_constraints=(kl_row, np.array([min(epsilon, 1e12)])),
    )
    if not solution.optimal:
        raise InfeasibleProblemError(f"stealthy attack LP ended with status {solution.status}", solution.status)

    occupancy = OccupancyMeasure(program.scatter(solution.variables), mode="discounted", discount=discount)
    value = -solution.objective
    logger.debug(f"stealthy attack at epsilon={epsilon}: adversary value {value:.8g}")
    return policy_from_occupancy(occupancy), occupancy, value


def unattacked_reward(
    mdp: TabularMdp,
    victim: Policy,
    mode: str = "ergodic",
    discount: Optional[float] = None,
    alpha: Optional[Distribution] = None,
) -> float:
    """Victim reward without attack, measured the way min_info_rate measures it"""
    if mode == "discounted":
        alpha = Distribution.uniform(mdp.n_states) if alpha is None else alpha
        values = policy_evaluation(mdp, victim, gamma=discount).values
        return float((1.0 - discount) * alpha.weights @ values)
    return ergodic_reward(mdp, victim)


def min_info_rate(
    mdp: TabularMdp,
    victim: Policy,
    rho: float,
    mode: str = "ergodic",
    discount: Optional[float] = None,
    alpha: Optional[Distribution] = None,
) -> Tuple[AttackPolicy, float]:
    """Least detectable attack that pushes the victim's reward down to at most rho

    Victim reward is the ergodic average in ``ergodic`` mode and the normalized
    discounted value (1 - gamma) alpha^T V_gamma in ``discounted`` mode. Targets
    above the unattacked reward are rejected.
    """
    program = _OccupancyProgram(mdp, victim)
    flow, rhs = program.constraints(mode, discount, alpha)
    baseline = unattacked_reward(mdp, victim, mode, discount, alpha)
    if rho > baseline + REWARD_TOL * max(1.0, abs(baseline)):
        raise InvalidInputError(f"target reward {rho:.6g} exceeds the unattacked reward {baseline:.6g}")
    kl = program.gather(pairwise_kernel_kl(mdp.transition))
    reward_row = program.gather(np.broadcast_to(mdp.reward[:, :, None], program.shape))[None, :]

    solution = solve_lp(kl, eq_constraints=(flow, rhs), ineq_constraints=(reward_row, np.array([rho])))
    if not solution.optimal:
        raise InfeasibleProblemError(
            f"no attack drives the victim reward to {rho:.6g} (status {solution.status})", solution.status
        )
    occupancy = OccupancyMeasure(program.scatter(solution.variables), mode=mode, discount=discount)
    return policy_from_occupancy(occupancy), max(solution.objective, 0.0)
