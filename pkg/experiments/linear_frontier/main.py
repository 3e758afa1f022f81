import math
from typing import Any, Dict

import numpy as np

from core.experiment_base import ExperimentBase
from core.linear_attack import (
    SYSTEM_SCHEMA,
    attacked_spectral_radius,
    beta_star,
    stationary_info_rate_linear,
    stationary_riccati,
    stationary_state_covariance,
    synthesize_attack,
    system_from_config,
)
from utils.helpers import field

CURVE_COLUMNS = ["beta", "I", "mean_x_sq", "spectral_radius", "status"]


class LinearFrontierExperiment(ExperimentBase):
    """beta* of the stationary attack and how detectability grows with beta"""

    SCHEMA = {
        "system": SYSTEM_SCHEMA,
        "frontier": {
            "tol": field(float),
            "betas": field(list, items=(int, float)),
        },
    }

    async def initialize(self):
        self.system = system_from_config(self.config.get("system"))

    def _curve_point(self, beta: float) -> Dict[str, Any]:
        row = {"beta": beta, "I": math.nan, "mean_x_sq": math.nan, "spectral_radius": math.nan}

        def stationary_metrics():
            attack = synthesize_attack(stationary_riccati(self.system, beta), self.system, "gaussian")
            return {
                "I": stationary_info_rate_linear(self.system, attack),
                "mean_x_sq": float(np.trace(stationary_state_covariance(self.system, attack))),
                "spectral_radius": attacked_spectral_radius(self.system, attack),
            }

        metrics, status = self.guarded(f"stationary@{beta}", stationary_metrics)
        row.update(metrics or {})
        return dict(row, status=status)

    async def execute(self):
        self.logger.info("🔄 Searching beta*...")
        frontier, status = await self.offload(
            self.guarded, "beta*", beta_star, self.system, self.config.get("frontier.tol", 1e-6)
        )
        record = frontier.to_dict() if frontier is not None else {"beta0": None, "beta1": None, "beta_star": None}
        self.report.write_json("beta_star.json", dict(record, status=status))
        self.report.summary["beta_star"] = record["beta_star"]
        if frontier is not None:
            self.logger.info(f"📊 beta* = {frontier.beta_star:.6g}")

        rows = [await self.offload(self._curve_point, float(b)) for b in self.config.get("frontier.betas", [])]
        self.report.write_records("frontier.csv", rows, CURVE_COLUMNS)
