import math
from functools import partial
from typing import Any, Callable, Dict

from core.attack_mdp import AttackProblem, solve_constrained_attack, solve_penalized_attack
from core.experiment_base import ExperimentBase
from core.info_rate import info_rate_report
from core.inventory import PARAMS_SCHEMA, InventoryParams, build_inventory, inventory_victim
from core.mdp import ergodic_reward, normalized_attacked_reward
from core.stealth_lp import min_info_rate, optimal_stealthy_attack
from utils.helpers import field

TRADEOFF_COLUMNS = ["attack_kind", "parameter", "victim_normalized_reward", "I", "I_bar", "I_bar_gamma", "status"]
HARDNESS_COLUMNS = ["reward_fraction", "rho", "I_min", "status"]


class InventoryTradeoffExperiment(ExperimentBase):
    """Victim reward against information rate for the three attack families"""

    SCHEMA = {
        "environment": PARAMS_SCHEMA,
        "attack": {
            "discount": field(float),
            "constrained_epsilons": field(list, items=(int, float)),
            "lp_epsilons": field(list, items=(int, float)),
            "penalties": field(list, items=(int, float)),
        },
        "hardness": {
            "enabled": field(bool),
            "reward_fractions": field(list, items=(int, float)),
        },
    }

    async def initialize(self):
        self.logger.info("🔧 Building inventory benchmark...")
        self.mdp = build_inventory(InventoryParams(**self.config.get("environment", {})))
        self.victim = await self.offload(inventory_victim, self.mdp)
        self.attack_discount = self.config.get("attack.discount", 0.95)

    def _metrics(self, attack) -> Dict[str, float]:
        report = info_rate_report(self.mdp, self.victim, attack, self.attack_discount)
        return {
            "victim_normalized_reward": normalized_attacked_reward(self.mdp, self.victim, attack),
            "I": report.rate,
            "I_bar": report.upper_rate,
            "I_bar_gamma": report.discounted_rate,
        }

    def _evaluate(self, attack_kind: str, parameter: float, build: Callable) -> Dict[str, Any]:
        row = {"attack_kind": attack_kind, "parameter": parameter, "victim_normalized_reward": math.nan,
               "I": math.nan, "I_bar": math.nan, "I_bar_gamma": math.nan}
        label = f"{attack_kind}@{parameter}"
        attack, status = self.guarded(label, build)
        if attack is not None:
            metrics, status = self.guarded(label, self._metrics, attack)
            row.update(metrics or {})
        row["status"] = status
        return row

    def _constrained(self, epsilon: float):
        problem = AttackProblem(self.victim, attack_discount=self.attack_discount, epsilon=epsilon)
        return solve_constrained_attack(self.mdp, problem)

    def _lp(self, epsilon: float):
        attack, _, _ = optimal_stealthy_attack(self.mdp, self.victim, epsilon, discount=self.attack_discount)
        return attack

    def _penalized(self, beta: float):
        problem = AttackProblem(self.victim, attack_discount=self.attack_discount, penalty=beta)
        return solve_penalized_attack(self.mdp, problem)

    async def execute(self):
        families = (
            ("constrained", self.config.get("attack.constrained_epsilons", []), self._constrained),
            ("lp", self.config.get("attack.lp_epsilons", []), self._lp),
            ("penalized", self.config.get("attack.penalties", []), self._penalized),
        )
        rows = []
        for kind, grid, build in families:
            self.logger.info(f"🔄 {kind}: {len(grid)} grid points")
            for parameter in grid:
                parameter = float(parameter)
                rows.append(await self.offload(self._evaluate, kind, parameter, partial(build, parameter)))
        self.report.write_records("tradeoff.csv", rows, TRADEOFF_COLUMNS)
        self.report.summary["tradeoff_failures"] = sum(row["status"] != "ok" for row in rows)

        if self.config.get("hardness.enabled", True):
            await self._hardness_curve()

    def _hardness_point(self, baseline: float, fraction: float) -> Dict[str, Any]:
        rho = baseline - (1.0 - fraction) * abs(baseline)
        result, status = self.guarded(f"I_min@{fraction}", min_info_rate, self.mdp, self.victim, rho)
        return {"reward_fraction": fraction, "rho": rho,
                "I_min": result[1] if result is not None else math.nan, "status": status}

    async def _hardness_curve(self):
        baseline = ergodic_reward(self.mdp, self.victim)
        fractions = self.config.get("hardness.reward_fractions", [])
        self.logger.info(f"🔄 minimum information rate over {len(fractions)} reward targets")
        rows = [await self.offload(self._hardness_point, baseline, float(f)) for f in fractions]
        self.report.write_records("hardness.csv", rows, HARDNESS_COLUMNS)
        self.report.summary["unattacked_ergodic_reward"] = baseline
