import math
from typing import Any, Dict

from core.experiment_base import ExperimentBase
from core.linear_attack import (
    ATTACK_KINDS,
    SYSTEM_SCHEMA,
    compare_values,
    simulate_linear,
    stationary_riccati,
    synthesize_attack,
    system_from_config,
)
from utils.helpers import field

VALUE_COLUMNS = ["beta", "j_det", "j_gauss", "gap", "log_det_sum", "status"]


class LinearAttackExperiment(ExperimentBase):
    """Attacked trajectories of the linear-Gaussian loop and the value of randomizing"""

    SCHEMA = {
        "system": SYSTEM_SCHEMA,
        "attack": {
            "betas": field(list, items=(int, float)),
            "kind": field(str, choices=ATTACK_KINDS),
        },
        "simulation": {
            "horizon": field(int, minimum=1),
            "change_time": field(int, minimum=0),
        },
        "values": {
            "horizon": field(int, minimum=1),
        },
    }

    async def initialize(self):
        self.system = system_from_config(self.config.get("system"))
        self.logger.info(f"🔧 Linear system with {self.system.n_states} states, {self.system.n_inputs} inputs")

    def _simulate(self, beta: float, seed: int):
        riccati = stationary_riccati(self.system, beta)
        attack = synthesize_attack(riccati, self.system, self.config.get("attack.kind", "gaussian"))
        return simulate_linear(
            self.system, attack,
            horizon=self.config.get("simulation.horizon", 100),
            change_time=self.config.get("simulation.change_time", 25),
            trials=self.config.trials,
            seed=seed,
            threads=self.config.threads,
        )

    def _values(self, beta: float) -> Dict[str, Any]:
        row = {"beta": beta, "j_det": math.nan, "j_gauss": math.nan, "gap": math.nan, "log_det_sum": math.nan}
        comparison, status = self.guarded(f"values@{beta}", compare_values, self.system, beta,
                                          self.config.get("values.horizon", 200))
        if comparison is not None:
            row.update(j_det=comparison.j_det, j_gauss=comparison.j_gauss, gap=comparison.gap,
                       log_det_sum=float(comparison.log_det_terms.sum()))
        return dict(row, status=status)

    async def execute(self):
        betas = [float(b) for b in self.config.get("attack.betas", [])]
        diverged = {}
        for beta, seed in zip(betas, self.derived_seeds(len(betas))):
            self.logger.info(f"🔄 beta={beta}: simulating {self.config.trials} trials")
            trace, status = await self.offload(self.guarded, f"simulate@{beta}", self._simulate, beta, seed)
            if trace is None:
                diverged[str(beta)] = status
                continue
            self.report.write_csv(f"trace_beta_{beta:g}.csv", trace.frame)
            diverged[str(beta)] = trace.diverged

        rows = [await self.offload(self._values, beta) for beta in betas]
        self.report.write_records("values.csv", rows, VALUE_COLUMNS)
        self.report.summary["diverged_trials"] = diverged
