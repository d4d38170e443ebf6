"""Configuration management for HTBB runs."""

import logging
from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

TransformKind = Literal["identity", "exp-min", "exp-max"]

DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class SweepConfig(BaseSettings):
    """Parameters of one index sweep (shared by HT-cross and HTOpt)."""

    rank: int = Field(2, description="Initial rank r0 of every active link")
    budget: int = Field(10_000, description="Maximum number of distinct evaluations")
    rank_increment: int = Field(1, description="Maximum rank growth per update (dr)")
    eps: float = Field(1e-8, description="Relative threshold for rank truncation")
    alpha: float = Field(
        0.5, description="Mean visit counts closer than this are a tie"
    )
    seed: int = Field(0, description="Seed for initialization and traversal ties")
    transform: TransformKind = Field(
        "identity", description="Pointwise transform applied to value blocks"
    )
    maxvol_tol: float = Field(1.01, description="Dominance tolerance of square MaxVol")
    maxvol_max_iters: int = Field(100, description="Row swaps allowed in square MaxVol")
    rect_tol: float = Field(1.0, description="Row-norm threshold of rectangular MaxVol")
    trace_every: int = Field(100, description="Trace spacing in evaluations")
    stall_limit: Optional[int] = Field(
        None, description="Stop after this many steps without new evaluations"
    )
    impute_missing: bool = Field(
        True, description="Impute values the build cannot pay for instead of failing"
    )

    model_config = SettingsConfigDict(env_prefix="HTBB_", case_sensitive=False)

    @field_validator("rank")
    @classmethod
    def validate_rank(cls, v: int) -> int:
        """Rank must be positive."""
        if v < 1:
            raise ValueError("Rank must be at least 1")
        return v

    @field_validator("budget")
    @classmethod
    def validate_budget(cls, v: int) -> int:
        """Budget must be positive."""
        if v < 1:
            raise ValueError("Budget must be at least 1")
        return v

    @field_validator("rank_increment")
    @classmethod
    def validate_rank_increment(cls, v: int) -> int:
        if v < 0:
            raise ValueError("Rank increment cannot be negative")
        return v

    @field_validator("eps")
    @classmethod
    def validate_eps(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        return v

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        if v < 0:
            raise ValueError("alpha cannot be negative")
        return v

    @field_validator("maxvol_tol")
    @classmethod
    def validate_maxvol_tol(cls, v: float) -> float:
        if v < 1.0:
            raise ValueError("MaxVol tolerance must be at least 1")
        return v

    @field_validator("trace_every")
    @classmethod
    def validate_trace_every(cls, v: int) -> int:
        if v < 1:
            raise ValueError("Trace spacing must be at least 1")
        return v


class LoggingConfig(BaseSettings):
    """Logging configuration."""

    level: str = Field("INFO", description="Logging level")
    format: str = Field(DEFAULT_LOG_FORMAT, description="Log line format")

    model_config = SettingsConfigDict(env_prefix="HTBB_LOG_", case_sensitive=False)

    @field_validator("level")
    @classmethod
    def validate_level(cls, v: str) -> str:
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown logging level: {v}")
        return level


class Config:
    """Main configuration class."""

    def __init__(self) -> None:
        self.sweep = SweepConfig()
        self.logging = LoggingConfig()

        logger.debug(
            f"Sweep defaults: rank={self.sweep.rank}, budget={self.sweep.budget}, "
            f"seed={self.sweep.seed}"
        )

    def reload(self) -> None:
        """Re-read settings from the environment (after a .env file is loaded)."""
        self.sweep = SweepConfig()
        self.logging = LoggingConfig()


# Global configuration instance
config = Config()
