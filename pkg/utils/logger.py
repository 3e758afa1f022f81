import logging
import os
import sys
from datetime import datetime
from pathlib import Path

from colorama import Fore, Style, just_fix_windows_console
from dotenv import load_dotenv

LOG_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)-20s | %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.MAGENTA + Style.BRIGHT,
}


class ColorFormatter(logging.Formatter):
    """Console formatter that colors the level name"""

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        color = LEVEL_COLORS.get(record.levelno)
        if not color:
            return message
        return message.replace(record.levelname, f"{color}{record.levelname}{Style.RESET_ALL}", 1)


def resolve_level(level=None):
    """Level from the argument, else STEALTHBENCH_LOG_LEVEL (also read from .env), else INFO"""
    load_dotenv()
    level = os.getenv("STEALTHBENCH_LOG_LEVEL", level if level is not None else logging.INFO)
    if isinstance(level, str):
        return logging.getLevelName(level.upper()) if not level.isdigit() else int(level)
    return level


def setup_logger(level=None, log_file=None):
    """Setup consistent logging for the benchmark"""
    level = resolve_level(level)
    just_fix_windows_console()

    # Create logs directory if it doesn't exist
    logs_dir = Path("logs")
    logs_dir.mkdir(exist_ok=True)

    if not log_file:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = logs_dir / f"stealthbench_{timestamp}.log"

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(level)
    console_handler.setFormatter(ColorFormatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root_logger.addHandler(console_handler)

    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(level)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root_logger.addHandler(file_handler)

    bench_logger = logging.getLogger("stealthbench")
    bench_logger.debug(f"🚀 Logger initialized - Log file: {log_file}")
    return bench_logger


def get_logger(name: str):
    """Logger for one benchmark component, under the stealthbench namespace"""
    return logging.getLogger(f"stealthbench.{name}")
