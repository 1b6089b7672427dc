"""
Configuration management for different environments and experiment files
"""
import os
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from models import ConfigError, RunConfig

# Determine environment
ENVIRONMENT = os.getenv("ENVIRONMENT", "development")

# Load appropriate .env file
env_file = f".env.{ENVIRONMENT}"
if Path(env_file).exists():
    load_dotenv(env_file, override=True)
else:
    load_dotenv(override=True)

# Kernel parallelism (scipy.fft workers)
SECI_THREADS = max(1, int(os.getenv("SECI_THREADS", "1")))

# Points per chunk for exact trigonometric evaluation at displaced nodes
SECI_COMPOSITION_CHUNK = max(64, int(os.getenv("SECI_COMPOSITION_CHUNK", "2048")))

# Where runs land when the CLI gets no --out
SECI_OUTPUT_DIR = os.getenv("SECI_OUTPUT_DIR", "./runs")

# Logging configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO" if ENVIRONMENT == "production" else "DEBUG").upper()

_LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40}
_active_level = _LEVELS.get(LOG_LEVEL, 20)


def set_log_level(level: str) -> None:
    """Override the log threshold for the current process (CLI --verbose/--quiet)"""
    global _active_level
    _active_level = _LEVELS.get(level.upper(), _active_level)


def log(message: str, level: str = "INFO") -> None:
    """Print a tagged console line when level passes the threshold"""
    if _LEVELS.get(level, 20) >= _active_level:
        print(message, flush=True)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Parse a TOML experiment file into a validated RunConfig"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid TOML: {exc}")
    return parse_run_config(raw, source=str(path))


def parse_run_config(raw: Dict[str, Any], source: str = "<dict>") -> RunConfig:
    """Validate an already-parsed mapping"""
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"Invalid config {source}: {where}: {first['msg']}")


def get_runtime_config() -> Dict[str, Any]:
    """Get runtime configuration based on environment"""
    return {
        "environment": ENVIRONMENT,
        "log_level": LOG_LEVEL,
        "threads": SECI_THREADS,
        "composition_chunk": SECI_COMPOSITION_CHUNK,
        "output_dir": SECI_OUTPUT_DIR,
    }


def is_production():
    """Check if running in production environment"""
    return ENVIRONMENT == "production"


def is_development():
    """Check if running in development environment"""
    return ENVIRONMENT == "development"
