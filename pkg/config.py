"""
Configuration management for the I-divergence NMF toolkit.
Handles environment variables, solver defaults and logging setup.
"""

import logging
import sys
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Application Configuration
    app_name: str = Field(default="idivergence-nmf", alias="NMF_APP_NAME")
    app_version: str = Field(default="0.1.0", alias="NMF_APP_VERSION")
    log_level: str = Field(default="INFO", alias="NMF_LOG_LEVEL")

    # Solver defaults (CLI flags override these)
    default_max_iters: int = Field(default=1000, ge=1, alias="NMF_MAX_ITERS")
    default_rel_tol: float = Field(default=1e-9, ge=0.0, alias="NMF_REL_TOL")
    default_min_init: float = Field(default=1e-2, gt=0.0, le=1.0, alias="NMF_MIN_INIT")

    # Restart dispatch; 1 worker is the reproducibility reference mode
    restart_workers: int = Field(default=1, ge=1, alias="NMF_RESTART_WORKERS")

    # Lifted oracle guard on m*k*n
    tensor_size_cap: int = Field(default=1_000_000, ge=1, alias="NMF_TENSOR_SIZE_CAP")

    model_config = {
        "env_file": ".env",
        "case_sensitive": False,
        "extra": "ignore",
        "populate_by_name": True
    }


# Global settings instance - load dotenv first
load_dotenv()
settings = Settings()


def get_settings() -> Settings:
    """Get application settings."""
    return settings


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging on stderr; stdout is reserved for command output."""
    level_name = (level or settings.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True
    )


if __name__ == "__main__":
    # Show the effective configuration
    configure_logging()
    print(f"App: {settings.app_name} v{settings.app_version}")
    print(f"Solver defaults: max_iters={settings.default_max_iters} "
          f"rel_tol={settings.default_rel_tol} min_init={settings.default_min_init}")
    print(f"Restart workers: {settings.restart_workers}")
    print(f"Tensor size cap: {settings.tensor_size_cap}")
