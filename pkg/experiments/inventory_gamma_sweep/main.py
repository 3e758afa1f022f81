import math
from typing import Any, Dict, List

from core.errors import DomainError
from core.experiment_base import ExperimentBase
from core.info_rate import (
    discounted_information_rate,
    fit_mixing_bound,
    info_rate_error_bound,
    information_rate,
    upper_information_rate,
)
from core.inventory import PARAMS_SCHEMA, InventoryParams, build_inventory, inventory_victim
from core.stealth_lp import optimal_stealthy_attack
from utils.helpers import field

SWEEP_COLUMNS = ["epsilon", "gamma_bar", "I", "I_bar", "I_bar_gamma", "abs_gap", "bound", "status"]


class InventoryGammaSweepExperiment(ExperimentBase):
    """Convergence of the discounted information rate as gamma_bar approaches one

    Each LP attack is synthesized once at the configured attack discount and then
    held fixed while the discount of the rate varies.
    """

    SCHEMA = {
        "environment": PARAMS_SCHEMA,
        "attack": {
            "discount": field(float),
            "lp_epsilons": field(list, items=(int, float)),
        },
        "sweep": {
            "gamma_bars": field(list, items=(float,)),
            "mixing_horizon": field(int, minimum=2),
        },
    }

    async def initialize(self):
        self.logger.info("🔧 Building inventory benchmark...")
        self.mdp = build_inventory(InventoryParams(**self.config.get("environment", {})))
        self.victim = await self.offload(inventory_victim, self.mdp)

    def _sweep_epsilon(self, epsilon: float) -> List[Dict[str, Any]]:
        gamma_bars = sorted(self.config.get("sweep.gamma_bars", []))
        blank = {"epsilon": epsilon, "I": math.nan, "I_bar": math.nan, "I_bar_gamma": math.nan,
                 "abs_gap": math.nan, "bound": math.nan}
        result, status = self.guarded(
            f"lp@{epsilon}", optimal_stealthy_attack, self.mdp, self.victim, epsilon,
            discount=self.config.get("attack.discount", 0.95),
        )
        if result is None:
            return [dict(blank, gamma_bar=g, status=status) for g in gamma_bars]
        attack = result[0]

        rates, status = self.guarded(f"rates@{epsilon}", lambda: (
            information_rate(self.mdp, self.victim, attack),
            upper_information_rate(self.mdp, self.victim, attack),
        ))
        if rates is None:
            return [dict(blank, gamma_bar=g, status=status) for g in gamma_bars]
        rate, upper = rates
        mixing, _ = self.guarded(f"mixing@{epsilon}", fit_mixing_bound, self.mdp, self.victim, attack,
                                 self.config.get("sweep.mixing_horizon", 200))

        rows = []
        for gamma_bar in gamma_bars:
            row = dict(blank, gamma_bar=gamma_bar, I=rate, I_bar=upper)
            discounted, status = self.guarded(f"I_bar_gamma@{epsilon},{gamma_bar}", discounted_information_rate,
                                              self.mdp, self.victim, attack, gamma_bar)
            if discounted is not None:
                row["I_bar_gamma"] = discounted[0]
                row["abs_gap"] = abs(upper - discounted[0])
            if mixing is not None:
                try:
                    row["bound"] = info_rate_error_bound(mixing, gamma_bar)
                except DomainError:
                    # below gamma0 the bound is not available
                    pass
            rows.append(dict(row, status=status))
        return rows

    async def execute(self):
        epsilons = [float(e) for e in self.config.get("attack.lp_epsilons", [])]
        rows = []
        for epsilon in epsilons:
            self.logger.info(f"🔄 epsilon={epsilon}: sweeping {len(self.config.get('sweep.gamma_bars', []))} discounts")
            rows.extend(await self.offload(self._sweep_epsilon, epsilon))
        self.report.write_records("gamma_sweep.csv", rows, SWEEP_COLUMNS)
        self.report.summary["max_excess"] = max(
            (r["I_bar_gamma"] - r["I_bar"] for r in rows if r["status"] == "ok"), default=None
        )
