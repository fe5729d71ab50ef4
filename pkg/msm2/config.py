from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Literal

from .constants import (
    DEFAULT_BOOTSTRAP_RESAMPLES,
    DEFAULT_GRID_STEP,
    DEFAULT_GRID_T0,
    DEFAULT_GRID_T_MAX,
    DEFAULT_MIN_AT_RISK,
)


class Settings(BaseSettings):
    """
    Runtime settings with environment variable support (prefix MSM2_)
    """
    # Logging
    log_level: str = "INFO"
    log_format: Literal["json", "console"] = "json"

    # Parallelism for bootstrap resamples and cohort simulation.
    # Results never depend on this value.
    n_jobs: int = 1

    # Markov test
    bootstrap_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES
    grid_t0: float = DEFAULT_GRID_T0
    grid_t_max: float = DEFAULT_GRID_T_MAX
    grid_step: float = DEFAULT_GRID_STEP
    wm_weighting: Literal["at_risk", "uniform"] = "at_risk"

    # Estimation
    min_at_risk: int = DEFAULT_MIN_AT_RISK

    # Ingestion
    strict_validation: bool = True

    # Emission
    float_format: str = "%.17g"

    model_config = SettingsConfigDict(
        env_prefix="MSM2_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("n_jobs")
    @classmethod
    def validate_n_jobs(cls, v):
        if v == 0 or v < -1:
            raise ValueError("n_jobs must be a positive worker count or -1 (all cores)")
        return v

    @field_validator("bootstrap_resamples", "min_at_risk")
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        allowed_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in allowed_levels:
            raise ValueError(f'log_level must be one of: {", ".join(allowed_levels)}')
        return v.upper()


# Global settings instance
_settings = None


def get_settings() -> Settings:
    """
    Get runtime settings (singleton pattern)
    """
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the next call re-reads the environment."""
    global _settings
    _settings = None
