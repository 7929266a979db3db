"""
Settings, logging and the worker pool.

Settings come from the bundled ``defaults.yaml`` (or a user file passed with
``--config``); a missing or broken file falls back to the in-code defaults.
"""

import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, TypeVar

import yaml

# === CONFIGURATION DEFAULTS ===
# YAML configuration file bundled with the package
CONFIG_FILE = str(Path(__file__).parent / "defaults.yaml")
# Log file in the system temp directory
LOG_FILE = Path(tempfile.gettempdir()) / "pcabp_detailed.log"
# Environment variable capping the worker pool
THREADS_ENV = "PCABP_THREADS"

logger = logging.getLogger(__name__)

# Console-only logger for important events
console_logger = logging.getLogger("pcabp.console")
console_logger.setLevel(logging.INFO)
console_logger.propagate = False

_logging_configured = False

T = TypeVar("T")
R = TypeVar("R")


def configure_logging(verbose: bool = False) -> None:
    """Attach the console and detailed-file handlers once."""
    global _logging_configured
    if _logging_configured:
        return

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_handler.setFormatter(logging.Formatter(
        "%(asctime)s [%(levelname)s] %(message)s"))

    package_logger = logging.getLogger("pcabp")
    package_logger.setLevel(logging.DEBUG)
    try:
        file_handler = logging.FileHandler(LOG_FILE)
    except OSError as e:
        logger.warning(f"Cannot open {LOG_FILE}: {e}, file logging disabled")
    else:
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            "%(asctime)s [%(levelname)s] [%(name)s] [%(funcName)s:%(lineno)d] %(message)s"))
        package_logger.addHandler(file_handler)
    if verbose:
        package_logger.addHandler(console_handler)
    console_logger.addHandler(console_handler)
    _logging_configured = True


class Settings:
    """Tunable constants of the workbench, loaded from YAML."""

    def __init__(self, config_file: str = CONFIG_FILE):
        self.config_file = config_file
        self.config = self._load_config(config_file)
        self.settings = self.config.get('settings', {})
        logger.debug(
            f"Loaded settings from {config_file}: {len(self.settings)} keys")

    def _load_config(self, config_file: str) -> Dict[str, Any]:
        try:
            with open(config_file, 'r') as f:
                loaded = yaml.safe_load(f)
            if not isinstance(loaded, dict):
                raise ValueError("top level is not a mapping")
            return loaded
        except FileNotFoundError:
            logger.warning(
                f"Config file {config_file} not found, using defaults")
            return self._get_default_config()
        except Exception as e:
            logger.error(f"Failed to load config: {e}, using defaults")
            return self._get_default_config()

    def _get_default_config(self) -> Dict[str, Any]:
        """Fallback configuration"""
        return {
            'settings': {
                'enumeration_cap_bits': 25,
                'exhaustive_cap_log2': 26,
                'proxy_threshold': 0.05,
                'critical_proxy': 'bend',
                'default_horizon': 256,
                'default_width': 512,
                'default_replicas': 10000,
                'chunk_size': 4096,
                'cell_budget': 1 << 24,
                'finite_difference_step': 1e-4,
                'russo_mc_step': 0.02,
                'unimodular_entry_bound': 3,
                'unimodular_search_limit': 1000000,
                'csv_schema_version': 1,
                'max_equivalence_iterations': 100000,
                'duality_slack': 0.02,
            }
        }

    def get_setting(self, key: str, default=None):
        if key in self.settings:
            return self.settings[key]
        return self._get_default_config()['settings'].get(key, default)


# Global instance
settings = Settings(CONFIG_FILE)


def reload_settings(config_file: str = CONFIG_FILE) -> Settings:
    """Replace the shared settings instance."""
    global settings
    settings = Settings(config_file)
    return settings


def get_setting(key: str, default=None):
    return settings.get_setting(key, default)


def worker_count() -> int:
    """Worker pool size: ``PCABP_THREADS`` if set, hardware default otherwise."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
            if value >= 1:
                return value
        except ValueError:
            pass
        logger.warning(f"Ignoring invalid {THREADS_ENV}={raw!r}")
    return os.cpu_count() or 1


def batch_size(cells: int) -> int:
    """Replicas per vectorised batch when each replica holds ``cells`` lattice cells."""
    chunk = int(get_setting('chunk_size', 4096))
    budget = int(get_setting('cell_budget', 1 << 24))
    return max(1, min(chunk, budget // max(1, int(cells))))


def run_parallel(fn: Callable[[T], R], items: Iterable[T],
                 workers: Optional[int] = None) -> List[R]:
    """Map ``fn`` over ``items`` on the worker pool, preserving input order."""
    items = list(items)
    workers = min(workers or worker_count(), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
