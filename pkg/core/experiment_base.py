"""
Base Experiment Class
All pipelines under experiments/ inherit from this class
"""

import asyncio
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from core.errors import ConfigError, StealthbenchError
from core.report import ReportBundle, status_of
from utils.helpers import ConfigValidator, config_hash, deep_merge, field, load_yaml_config, safe_dict_get
from utils.logger import get_logger

COMMON_SCHEMA = {
    "experiment": field(str),
    "seed": field(int, minimum=0),
    "trials": field(int, minimum=1),
    "threads": field(int, minimum=1),
    "progress": field(bool),
    "out": field(str),
}


@dataclass
class ExperimentConfig:
    """Validated, merged configuration of one experiment run"""

    experiment: str
    values: Dict[str, Any]

    @classmethod
    def resolve(cls, experiment: str, schema: Dict[str, Any], *layers: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        """Deep-merge ``layers`` left to right and validate the result"""
        merged: Dict[str, Any] = {}
        for layer in layers:
            merged = deep_merge(merged, layer or {})
        merged.setdefault("experiment", experiment)
        if merged["experiment"] != experiment:
            raise ConfigError(f"config belongs to {merged['experiment']!r}, not {experiment!r}", "experiment")
        ConfigValidator.validate(merged, {**COMMON_SCHEMA, **schema})
        return cls(experiment=experiment, values=merged)

    def get(self, key: str, default=None):
        return safe_dict_get(self.values, key, default)

    @property
    def seed(self) -> int:
        return self.values.get("seed", 0)

    @property
    def trials(self) -> int:
        return self.values.get("trials", 100)

    @property
    def threads(self) -> int:
        return self.values.get("threads", 1)

    @property
    def progress(self) -> bool:
        return self.values.get("progress", False)

    @property
    def out(self) -> str:
        return self.values.get("out", f"results/{self.experiment}")

    @property
    def digest(self) -> str:
        return config_hash(self.values)


class ExperimentBase(ABC):
    """Base class for all experiments in the benchmark"""

    #: per-experiment schema, merged with COMMON_SCHEMA
    SCHEMA: Dict[str, Any] = {}

    def __init__(self, experiment_name: str, config_path: str = None, overrides: Optional[Dict[str, Any]] = None,
                 base: Optional[Dict[str, Any]] = None):
        self.experiment_name = experiment_name
        self.logger = get_logger(f"experiment.{experiment_name}")
        self.is_running = False
        self.report: Optional[ReportBundle] = None

        # Defaults shipped next to main.py, then caller overrides
        defaults = load_yaml_config(config_path) if config_path else {}
        self.config = ExperimentConfig.resolve(experiment_name, self.SCHEMA, base, defaults, overrides)

    async def run(self) -> ReportBundle:
        """Run the experiment lifecycle and write the manifest"""
        self.logger.info(f"🟢 Starting experiment: {self.experiment_name}")
        self.is_running = True
        self.report = ReportBundle(self.config.out, self.experiment_name, self.config.digest, self.config.seed)
        try:
            await self.initialize()
            await self.execute()
        finally:
            await self.cleanup()
            self.is_running = False
        manifest = self.report.write_manifest()
        self.logger.info(f"✅ {self.experiment_name} finished: {len(self.report.artifacts)} artifacts, manifest {manifest}")
        return self.report

    async def offload(self, func: Callable, *args, **kwargs):
        """Run heavy numerical work on a worker thread"""
        return await asyncio.to_thread(func, *args, **kwargs)

    def guarded(self, label: str, func: Callable, *args, **kwargs):
        """Call ``func``; library errors become a (None, status) pair instead of aborting the run"""
        try:
            return func(*args, **kwargs), "ok"
        except StealthbenchError as e:
            status = status_of(e)
            self.logger.warning(f"⚠️  {label}: {status} ({e})")
            return None, status

    @abstractmethod
    async def initialize(self):
        """Build the environment and anything shared by the grid"""
        pass

    @abstractmethod
    async def execute(self):
        """Main experiment logic; writes artifacts into self.report"""
        pass

    async def cleanup(self):
        """Release resources; most experiments hold none"""
        self.logger.debug(f"cleanup {self.experiment_name}")

    def derived_seeds(self, count: int) -> List[int]:
        """Independent integer seeds for ``count`` sub-runs of this experiment"""
        children = np.random.SeedSequence(self.config.seed).spawn(count)
        return [int(child.generate_state(1)[0]) for child in children]
