import os
from dotenv import load_dotenv

# Load the .env file into environment variables
load_dotenv()


def get_env(name: str, default: str | None = None) -> str:
    """Safely get an environment variable or raise an error if missing."""
    value = os.getenv(name, default)
    if value is None:
        raise RuntimeError(f"Missing required environment variable: {name}")
    return value


def _get_float(name: str, default: float) -> float:
    raw = get_env(name, str(default)).strip()
    try:
        return float(raw)
    except ValueError as e:
        raise RuntimeError(f"Environment variable {name} must be a number, got {raw!r}") from e


def _get_int(name: str, default: int) -> int:
    raw = get_env(name, str(default)).strip()
    try:
        return int(raw)
    except ValueError as e:
        raise RuntimeError(f"Environment variable {name} must be an integer, got {raw!r}") from e


# Acoustic defaults (96 kHz capture, 20 °C air)
SAMPLE_RATE_HZ = _get_float("POSEKERNEL_SAMPLE_RATE_HZ", 96000.0)
SPEED_OF_SOUND_MPS = _get_float("POSEKERNEL_SPEED_OF_SOUND", 343.0)

# Voxel budget enforced when an experiment config is loaded
MAX_VOXELS = _get_int("POSEKERNEL_MAX_VOXELS", 2**28)

# Worker threads for per-pair fan-out in the CLI
WORKERS = max(1, _get_int("POSEKERNEL_WORKERS", 4))

DEFAULT_SEED = _get_int("POSEKERNEL_DEFAULT_SEED", 0)
LOG_LEVEL = os.getenv("POSEKERNEL_LOG_LEVEL", "INFO").strip().upper() or "INFO"
