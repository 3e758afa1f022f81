import asyncio

from core.errors import ConfigError
from core.registry import ExperimentRegistry
from utils.helpers import ConfigValidator, load_config
from utils.logger import setup_logger


async def main():
    """Main entry point for Stealthbench: run every enabled experiment"""

    config = load_config()
    logger = setup_logger(config.get("framework", {}).get("log_level"))
    logger.info("🚀 Starting Stealthbench...")

    if not ConfigValidator.validate_framework_config(config):
        raise ConfigError("config/config.yaml needs 'framework' and 'experiments' sections")

    registry = ExperimentRegistry(framework_config=config)
    available = registry.discover_experiments()
    logger.info(f"📊 Discovered experiments: {', '.join(available) or 'none'}")

    reports = await registry.run_enabled()
    enabled = config.get("experiments", {}).get("enabled", [])
    logger.info(f"✅ {len(reports)}/{len(enabled)} experiments finished")
    for name, report in reports.items():
        logger.info(f"  • {name}: {report.out_dir}")


if __name__ == "__main__":
    asyncio.run(main())
