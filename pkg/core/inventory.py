"""
Inventory control benchmark
Stock level s in 0..N, order quantity a in 0..N, Poisson demand. Orders beyond
the free capacity are clipped: the stock after ordering is m = min(N, s + a).
"""

from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np
from scipy.stats import poisson

from core.errors import InvalidInputError
from core.mdp import Policy, TabularMdp, policy_iteration
from utils.helpers import field


@dataclass
class InventoryParams:
    capacity: int = 35
    fixed_order_cost: float = 3.0
    unit_cost: float = 2.0
    holding_cost: float = 2.0
    unit_price: float = 4.0
    demand_rate: float = 6.0
    discount: float = 0.95

    def __post_init__(self):
        positive = (self.capacity, self.fixed_order_cost, self.unit_cost,
                    self.holding_cost, self.unit_price, self.demand_rate)
        if any(value <= 0 for value in positive):
            raise InvalidInputError("inventory parameters must all be positive")
        if self.unit_price <= self.holding_cost:
            raise InvalidInputError("unit_price must exceed holding_cost")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def stock_after_order(params: InventoryParams) -> np.ndarray:
    levels = np.arange(params.capacity + 1)
    return np.minimum(params.capacity, levels[:, None] + levels[None, :])


def inventory_dynamics(params: InventoryParams) -> np.ndarray:
    """P[s, a, j]: Poisson(lambda, m - j) for 1 <= j <= m, P(demand >= m) at j = 0"""
    size = params.capacity + 1
    stocked = stock_after_order(params)
    next_level = np.arange(size)
    sold = stocked[:, :, None] - next_level[None, None, :]
    transition = np.where(sold >= 0, poisson.pmf(np.maximum(sold, 0), params.demand_rate), 0.0)
    transition[:, :, 0] = poisson.sf(stocked - 1, params.demand_rate)
    return transition


def transition_rewards(params: InventoryParams) -> np.ndarray:
    """r(s, a, s') = -k 1{a>0} - h s - c (m - s) + p (m - s')"""
    levels = np.arange(params.capacity + 1)
    stocked = stock_after_order(params)
    ordered = (levels > 0)[None, :]
    base = (
        -params.fixed_order_cost * ordered
        - params.holding_cost * levels[:, None]
        - params.unit_cost * (stocked - levels[:, None])
    )
    revenue = params.unit_price * np.maximum(stocked[:, :, None] - levels[None, None, :], 0)
    return base[:, :, None] + revenue


def build_inventory(params: InventoryParams = None) -> TabularMdp:
    params = InventoryParams() if params is None else params
    transition = inventory_dynamics(params)
    reward = np.sum(transition * transition_rewards(params), axis=2)
    size = params.capacity + 1
    return TabularMdp(
        transition=transition,
        reward=reward,
        initial_dist=np.full(size, 1.0 / size),
        discount=params.discount,
    )


def inventory_victim(mdp: TabularMdp) -> Policy:
    """The victim runs the optimal unattacked ordering policy"""
    _, policy = policy_iteration(mdp)
    return policy


PARAMS_SCHEMA = {
    "capacity": field(int, minimum=1),
    "fixed_order_cost": field(int, float),
    "unit_cost": field(int, float),
    "holding_cost": field(int, float),
    "unit_price": field(int, float),
    "demand_rate": field(int, float),
    "discount": field(float),
}
