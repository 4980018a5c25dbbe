from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class HmtmlConfig(BaseModel):
    """Hyperparameters of the joint metric learner."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(default=1.0, ge=0.0)
    gamma_m: float = Field(default=0.01, ge=0.0)
    rank: int = Field(default=5, ge=1)
    rho: float = Field(default=3.0, gt=0.0)
    sigma: float = Field(default=0.5, gt=0.0)
    kappa: float = Field(default=0.01, gt=0.0, lt=1.0)
    beta: float = Field(default=0.1, gt=0.0, lt=1.0)
    mu0: float = Field(default=1.0, gt=0.0)

    eps_inner: float = Field(default=1e-4, gt=0.0)
    eps_outer: float = Field(default=1e-3, gt=0.0)
    max_outer: int = Field(default=20, ge=1)
    max_inner: int = Field(default=100, ge=1)
    max_step_checks: int = Field(default=50, ge=1)

    # self-comparison variants
    drop_loss: bool = False
    drop_reg: bool = False
    frobenius_reg: bool = False
    no_nonneg: bool = False

    pair_cap: Optional[int] = Field(default=None, ge=1)
    init_scale: Optional[float] = Field(default=None, gt=0.0)
    seed: int = 0

    @property
    def effective_gamma(self) -> float:
        """Coupling weight after the reg=0 variant is applied."""
        return 0.0 if self.drop_reg else self.gamma


class EncodingConfig(BaseModel):
    """How the P binary tasks and their base classifiers are built."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    log_base: float = Field(default=2.0, gt=1.0)
    code_length: Optional[int] = Field(default=None, ge=1)
    svm_penalty: float = Field(default=1.0, gt=0.0)
    svm_tol: float = Field(default=1e-6, gt=0.0)
    svm_max_iter: int = Field(default=20000, ge=1)
    max_codebook_attempts: int = Field(default=200, ge=1)


class Settings(BaseSettings):
    """Process-level settings, read from HMTML_* environment variables or .env."""

    model_config = SettingsConfigDict(
        env_prefix="HMTML_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    log_level: str = "INFO"
    log_json: bool = False
    output_dir: Path = Path("results")
    metrics_path: Optional[Path] = None


@lru_cache
def get_settings() -> Settings:
    return Settings()
