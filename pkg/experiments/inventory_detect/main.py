import math
from typing import Any, Dict, Optional

from core.attack_mdp import AttackProblem, solve_constrained_attack, solve_penalized_attack
from core.detection import (
    DETECTORS,
    ESTIMATORS,
    calibrate_glr_threshold,
    calibrate_threshold,
    detection_trace,
    estimate_detection_delay,
    false_alarm_rate,
)
from core.errors import ConfigError
from core.experiment_base import ExperimentBase
from core.info_rate import information_rate
from core.inventory import PARAMS_SCHEMA, InventoryParams, build_inventory, inventory_victim
from core.stealth_lp import optimal_stealthy_attack
from utils.helpers import field

DELAY_COLUMNS = [
    "attack_kind", "parameter", "detector", "threshold", "I",
    "mean_delay", "ci_low", "ci_high", "detected", "undetected", "false_alarms", "status",
]


class InventoryDetectExperiment(ExperimentBase):
    """Detection delays of CUSUM and GLR against the constrained, LP and penalized attacks"""

    SCHEMA = {
        "environment": PARAMS_SCHEMA,
        "attack": {
            "discount": field(float),
            "constrained_epsilon": field(int, float, minimum=0),
            "lp_epsilon": field(int, float, minimum=0),
            "penalty": field(int, float, minimum=0),
        },
        "detection": {
            "detectors": field(list, items=(str,)),
            "delta": field(float),
            "horizon": field(int, minimum=1),
            "change_time": field(int, minimum=0),
            "trace_horizon": field(int, minimum=1),
            "glr_windows": field(int, minimum=1),
            "glr_spacing": field(int, minimum=1),
            "glr_estimator": field(str),
            "glr_calibration_trials": field(int, minimum=1),
        },
        "false_alarm": {
            "enabled": field(bool),
            "trials": field(int, minimum=1),
            "glr_trials": field(int, minimum=1),
        },
    }

    async def initialize(self):
        detectors = self.config.get("detection.detectors", list(DETECTORS))
        unknown = [d for d in detectors if d not in DETECTORS]
        if unknown:
            raise ConfigError(f"unknown detectors {unknown}", "detection.detectors")
        self.detectors = detectors
        self.estimator = self.config.get("detection.glr_estimator", "family")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown GLR estimator {self.estimator!r}", "detection.glr_estimator")

        self.logger.info("🔧 Building inventory benchmark and attacks...")
        self.mdp = build_inventory(InventoryParams(**self.config.get("environment", {})))
        self.victim = await self.offload(inventory_victim, self.mdp)
        discount = self.config.get("attack.discount", 0.95)

        constrained = AttackProblem(self.victim, attack_discount=discount,
                                    epsilon=float(self.config.get("attack.constrained_epsilon", 3)))
        penalized = AttackProblem(self.victim, attack_discount=discount,
                                  penalty=float(self.config.get("attack.penalty", 6.2)))
        lp_epsilon = float(self.config.get("attack.lp_epsilon", 0.21))

        builders = {
            "constrained": (constrained.epsilon, lambda: solve_constrained_attack(self.mdp, constrained)),
            "lp": (lp_epsilon, lambda: optimal_stealthy_attack(self.mdp, self.victim, lp_epsilon, discount=discount)[0]),
            "penalized": (penalized.penalty, lambda: solve_penalized_attack(self.mdp, penalized)),
        }
        self.attacks: Dict[str, Any] = {}
        for kind, (parameter, build) in builders.items():
            attack, status = await self.offload(self.guarded, kind, build)
            self.attacks[kind] = (parameter, attack, status)

    def _glr_kwargs(self) -> Dict[str, Any]:
        detection = self.config.get("detection", {})
        return {
            "n_windows": detection.get("glr_windows", 38),
            "spacing": detection.get("glr_spacing", 5),
            "estimator": self.estimator,
        }

    def _glr_calibration(self, seed: int):
        """One Monte Carlo threshold for every attack; it only depends on clean streams"""
        detection = self.config.get("detection", {})
        return self.guarded(
            "glr calibration", calibrate_glr_threshold,
            self.mdp, self.victim, detection.get("delta", 0.01), detection.get("horizon", 1000),
            trials=detection.get("glr_calibration_trials", 100),
            seed=seed,
            threads=self.config.threads,
            progress=self.config.progress,
            **self._glr_kwargs(),
        )

    def _delay_rows(self, kind: str, parameter: float, attack, seed: int, glr_calibration) -> list:
        detection = self.config.get("detection", {})
        base = {"attack_kind": kind, "parameter": parameter, "threshold": math.nan, "I": math.nan}
        rate, status = self.guarded(f"{kind} information rate", information_rate, self.mdp, self.victim, attack)
        if rate is not None:
            base["I"] = rate
        cusum_calibration = self.guarded(
            f"{kind} calibration", calibrate_threshold, detection.get("delta", 0.01), detection.get("horizon", 1000), rate
        )
        calibrations = {"cusum": cusum_calibration, "glr": glr_calibration}
        rows = []
        for detector in self.detectors:
            row = dict(base, detector=detector)
            calibration, cal_status = calibrations[detector]
            if calibration is None:
                rows.append(dict(row, status=cal_status))
                continue
            row["threshold"] = calibration.threshold
            report, status = self.guarded(
                f"{kind}/{detector} delay", estimate_detection_delay,
                self.mdp, self.victim, attack, detector, calibration,
                change_time=detection.get("change_time", 25),
                trials=self.config.trials,
                seed=seed,
                threads=self.config.threads,
                progress=self.config.progress,
                **self._glr_kwargs(),
            )
            if report is not None:
                row.update(report.to_dict())
            rows.append(dict(row, status=status))
        return rows

    def _trace(self, kind: str, attack, seed: int):
        detection = self.config.get("detection", {})
        change_time = detection.get("change_time", 25)
        return detection_trace(
            self.mdp, self.victim, attack,
            change_time=change_time,
            horizon=change_time + detection.get("trace_horizon", 150),
            trials=self.config.trials,
            seed=seed,
            threads=self.config.threads,
            progress=self.config.progress,
            **self._glr_kwargs(),
        )

    async def execute(self):
        seeds = self.derived_seeds(len(self.attacks) + 2)
        glr_calibration = (None, "skipped")
        if "glr" in self.detectors:
            self.logger.info("📏 Calibrating the GLR threshold on unattacked streams")
            glr_calibration = await self.offload(self._glr_calibration, seeds[-2])
            if glr_calibration[0] is not None:
                self.report.summary["glr_threshold"] = glr_calibration[0].threshold

        rows = []
        for (kind, (parameter, attack, status)), seed in zip(self.attacks.items(), seeds):
            if attack is None:
                rows.extend({"attack_kind": kind, "parameter": parameter, "detector": d, "status": status}
                            for d in self.detectors)
                continue
            self.logger.info(f"🔄 {kind} attack: detection delays over {self.config.trials} trials")
            rows.extend(await self.offload(self._delay_rows, kind, parameter, attack, seed, glr_calibration))
            trace = await self.offload(self._trace, kind, attack, seed)
            self.report.write_csv(f"trace_{kind}.csv", trace)
        self.report.write_records("delays.csv", rows, DELAY_COLUMNS)
        self.report.summary["cusum_delay_ratio"] = self._delay_ratio(rows)

        if self.config.get("false_alarm.enabled", True):
            await self.offload(self._false_alarms, seeds[-1], glr_calibration[0])

    @staticmethod
    def _delay_ratio(rows) -> Optional[float]:
        """LP-attack mean CUSUM delay over the constrained attack's"""
        delays = {r["attack_kind"]: r.get("mean_delay") for r in rows if r.get("detector") == "cusum" and r["status"] == "ok"}
        lp, constrained = delays.get("lp"), delays.get("constrained")
        if lp is None or not constrained:
            return None
        return lp / constrained

    def _false_alarms(self, seed: int, glr_calibration):
        """Crossings on unattacked streams over the whole horizon

        CUSUM runs with each attack's own log-likelihood ratio, the statistic the
        victim monitors against that attack. GLR reuses the calibrated threshold
        on streams drawn independently of the calibration sample.
        """
        detection = self.config.get("detection", {})
        calibration = calibrate_threshold(detection.get("delta", 0.01), detection.get("horizon", 1000))
        trials = self.config.get("false_alarm.trials", 2000)
        results: Dict[str, Any] = {"delta": calibration.delta, "horizon": calibration.horizon,
                                   "threshold": calibration.threshold, "trials": trials}
        common = {"seed": seed, "threads": self.config.threads, "progress": self.config.progress}

        if "cusum" in self.detectors:
            for kind, (_, attack, _) in self.attacks.items():
                if attack is None:
                    continue
                results[f"cusum_{kind}_false_alarm_rate"] = false_alarm_rate(
                    self.mdp, self.victim, "cusum", calibration, trials, monitored=attack, **common
                )
        if "glr" in self.detectors and glr_calibration is not None:
            glr_trials = self.config.get("false_alarm.glr_trials", 100)
            results.update({
                "glr_threshold": glr_calibration.threshold,
                "glr_trials": glr_trials,
                "glr_false_alarm_rate": false_alarm_rate(
                    self.mdp, self.victim, "glr", glr_calibration, glr_trials, **common, **self._glr_kwargs()
                ),
            })
        self.logger.info(f"📊 false alarm rates: {results}")
        self.report.write_json("false_alarm.json", results)
        return results
