# %%
import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field


class AppConfig(BaseModel):
    """Application configuration using Pydantic"""

    results_dir: Path
    recordings_dir: Path
    log_level: str
    sweep_workers: int = Field(..., gt=0)

    model_config = ConfigDict(
        frozen=True,
        arbitrary_types_allowed=True,
    )


_config_instance: AppConfig | None = None


def get_config() -> AppConfig:
    """
    Get the singleton config instance
    Either use the default config or load from environment variables.
    """

    global _config_instance
    if _config_instance is None:
        _config_instance = AppConfig(
            results_dir=Path(os.getenv("OCL_RESULTS_DIR", "results")),
            recordings_dir=Path(os.getenv("OCL_RECORDINGS_DIR", "recordings")),
            log_level=os.getenv("OCL_LOG_LEVEL", "INFO").upper(),
            sweep_workers=int(os.getenv("OCL_SWEEP_WORKERS", "1")),
        )
    return _config_instance


def set_config(config: AppConfig | None) -> None:
    """
    Set the singleton config instance.
    This is useful for testing or overriding the default configuration.
    Passing None drops the instance so the next get_config() re-reads the environment.
    """
    global _config_instance
    _config_instance = config
