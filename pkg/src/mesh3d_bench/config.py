"""Configuration management for mesh3d-bench."""

import os
from pathlib import Path

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict


class ConfigurationError(Exception):
    """Configuration validation error."""


def _default_jobs() -> int:
    return os.cpu_count() or 1


class BenchSettings(BaseSettings):
    """Process-wide settings for mesh3d-bench."""

    model_config = SettingsConfigDict(env_prefix="MESH3D_", env_file=".env")

    cache_dir: Path = Field(
        default=Path.home() / ".cache" / "mesh3d-bench",
        description="Directory holding cached distance matrices",
    )
    jobs: int = Field(
        default_factory=_default_jobs,
        ge=1,
        description="Worker count for parallel stages (default: logical cores)",
    )
    enable_caching: bool = Field(
        default=True, description="Reuse cached distance matrices (default: True)"
    )
    debug_mode: bool = Field(
        default=False, description="Enable debug logging (default: False)"
    )


def get_config() -> BenchSettings:
    """Get configuration from environment variables."""
    try:
        return BenchSettings()
    except ValidationError as e:
        raise ConfigurationError(f"Configuration validation failed: {e}")


def get_config_summary() -> dict:
    """Get a summary of current configuration."""
    config = get_config()
    return {
        "cache_dir": str(config.cache_dir),
        "cache_dir_exists": config.cache_dir.exists(),
        "jobs": config.jobs,
        "enable_caching": config.enable_caching,
        "debug_mode": config.debug_mode,
    }
