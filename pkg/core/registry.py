import asyncio
import importlib.util
import inspect
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

from core.errors import ConfigError
from core.experiment_base import ExperimentBase, ExperimentConfig
from core.report import ReportBundle
from utils.logger import get_logger


def canonical_name(name: str) -> str:
    """CLI names use dashes, experiment directories use underscores"""
    return name.strip().replace("-", "_")


class ExperimentRegistry:
    """Registry for discovering and running experiments"""

    def __init__(self, experiments_dir: str = "experiments", framework_config: Optional[Dict[str, Any]] = None):
        self.logger = get_logger("registry")
        self.experiments_dir = Path(experiments_dir)
        self.framework_config = framework_config or {}
        self.experiments: Dict[str, Tuple[Type[ExperimentBase], Optional[str]]] = {}

    def discover_experiments(self) -> List[str]:
        """Discover all available experiments in the experiments directory"""
        if not self.experiments_dir.exists():
            self.logger.warning(f"⚠️  Experiments directory not found: {self.experiments_dir}")
            return []

        for experiment_dir in sorted(self.experiments_dir.iterdir()):
            if experiment_dir.is_dir() and not experiment_dir.name.startswith('_'):
                self._load_experiment(experiment_dir)
        return self.available()

    def _load_experiment(self, experiment_dir: Path):
        """Load a single experiment from directory"""
        name = experiment_dir.name
        main_py = experiment_dir / "main.py"
        config_yaml = experiment_dir / "config.yaml"

        if not main_py.exists():
            self.logger.debug(f"no main.py in {experiment_dir}, skipping")
            return

        try:
            spec = importlib.util.spec_from_file_location(f"experiments.{name}.main", main_py)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
        except Exception as e:
            self.logger.error(f"❌ Failed to load experiment {name}: {e}")
            return

        experiment_class = None
        for _, obj in inspect.getmembers(module, inspect.isclass):
            if issubclass(obj, ExperimentBase) and obj is not ExperimentBase and obj.__module__ == module.__name__:
                experiment_class = obj
                break

        if experiment_class is None:
            self.logger.warning(f"⚠️  No experiment class found in: {name}")
            return
        self.experiments[name] = (experiment_class, str(config_yaml) if config_yaml.exists() else None)
        self.logger.debug(f"loaded experiment {name} ({experiment_class.__name__})")

    def available(self) -> List[str]:
        return sorted(self.experiments)

    def base_layer(self, name: str) -> Dict[str, Any]:
        """Framework-wide defaults applied under each experiment's own config.yaml"""
        defaults = self.framework_config.get("defaults", {})
        layer: Dict[str, Any] = {"out": str(Path(defaults.get("output_dir", "results")) / name)}
        for key in ("threads", "progress"):
            if key in defaults:
                layer[key] = defaults[key]
        return layer

    def create(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentBase:
        name = canonical_name(name)
        if name not in self.experiments:
            raise ConfigError(f"unknown experiment {name!r}; available: {', '.join(self.available())}", "experiment")
        experiment_class, config_path = self.experiments[name]
        return experiment_class(name, config_path, overrides=overrides, base=self.base_layer(name))

    def resolve_config(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """Merged and validated config without running anything"""
        return self.create(name, overrides).config

    async def run_experiment(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> ReportBundle:
        experiment = self.create(name, overrides)
        return await experiment.run()

    def run_experiment_sync(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> ReportBundle:
        return asyncio.run(self.run_experiment(name, overrides))

    async def run_enabled(self) -> Dict[str, ReportBundle]:
        """Run every experiment listed under experiments.enabled, in order"""
        enabled = self.framework_config.get("experiments", {}).get("enabled", [])
        reports = {}
        for name in enabled:
            try:
                reports[canonical_name(name)] = await self.run_experiment(name)
            except Exception as e:
                self.logger.error(f"❌ Experiment {name} failed: {e}")
        return reports
