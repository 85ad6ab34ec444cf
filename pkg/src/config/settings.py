"""Application settings and configuration."""
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..exceptions import ConfigError


class Settings(BaseSettings):
    """Every tunable of the detector, thresholding and stream runtime.

    Defaults follow the published configuration where one is stated. Bounds are hard:
    out-of-range values fail validation instead of being clamped.
    """

    model_config = SettingsConfigDict(
        env_prefix="DRIFTWATCH_",
        env_file=".env",
        case_sensitive=False,
        extra="forbid",
        validate_assignment=True,
    )

    # Runtime
    seed: int = Field(default=0, ge=0)
    log_level: str = "INFO"
    json_logs: bool = False
    registry_url: str = ""  # e.g. sqlite:///driftwatch.db; empty disables the run registry

    # Data preparation
    h_r: float = Field(default=0.2, gt=0.0, le=1.0)
    shingle_width: int = Field(default=0, ge=0)  # 0 disables shingling
    noise_std: float = Field(default=0.0, ge=0.0)
    coverage: float = Field(default=1.0, gt=0.0, le=1.0)
    prior_label_fraction: float = Field(default=0.0, ge=0.0, le=1.0)

    # Optimisation
    learning_rate: float = Field(default=1e-2, ge=1e-4, le=0.1)
    lr_decay: float = Field(default=0.96, gt=0.0, le=1.0)
    batch_size: int = Field(default=64, ge=1)
    scd_epochs: int = Field(default=100, ge=0)
    iec_epochs: int = Field(default=60, ge=0)
    dsd_epochs: int = Field(default=60, ge=0)

    # Static detector
    scd_layers: int = Field(default=3, ge=1, le=5)
    latent_variance: float = Field(default=0.7, gt=0.0, le=1.0)

    # Evolution controller
    iec_hidden: int = Field(default=32, ge=1)
    iec_passes: int = Field(default=2, ge=1)
    gamma: float = Field(default=2.0, ge=0.0)
    iec_loss: Literal["focal", "cross_entropy"] = "focal"
    iec_ood_weight: float = Field(default=0.0, ge=0.0)  # 0 trains on the focal evidential loss alone
    mu_p_proportion: float = Field(default=0.15, ge=0.05, le=0.5)
    mu_e: float = Field(default=0.03, ge=0.005, le=0.4)

    # Dynamic detector
    hyper_hidden: int = Field(default=32, ge=1)
    embedding_dim: int = Field(default=16, ge=1)
    shift_layers: Literal["all", "encoder", "decoder"] = "all"
    embedding_mode: Literal["instance", "random"] = "instance"
    freeze_static: bool = True
    joint_static_lr_scale: float = Field(default=0.1, gt=0.0, le=1.0)

    # Threshold optimisation
    calibration_lambda: float = Field(default=0.6, ge=0.0)
    tau: float = Field(default=0.95, gt=0.0, lt=1.0)
    kappa: float = Field(default=0.8, ge=0.0)
    ema_beta: float = Field(default=0.99, ge=0.0, le=1.0)
    window_size: int = Field(default=64, ge=2)
    warmup_min: int = Field(default=16, ge=1)
    score_mode: Literal["calibrated", "reconstruction"] = "calibrated"
    threshold_mode: Literal["regularized", "quantile"] = "regularized"
    regularizer_stat: Literal["median", "mean"] = "median"
    use_dto: bool = True

    # Routing and offline updating
    detector_mode: Literal["full", "static_only", "dynamic_only"] = "full"
    use_iec: bool = True
    enable_updates: bool = True
    mu_o_frac: float = Field(default=0.3, ge=0.1, le=1.0)
    t_max: int = Field(default=10_000, ge=1)
    update_mass: Literal["vacuous", "raw"] = "vacuous"
    update_mode: Literal["finetune", "retrain"] = "finetune"
    update_epochs: int = Field(default=10, ge=0)
    update_buffer_factor: int = Field(default=4, ge=1)
    update_lag: int = Field(default=0, ge=0)
    checkpoint_every: int = Field(default=0, ge=0)
    chunk_size: int = Field(default=256, ge=1)

    @model_validator(mode="after")
    def _check_cross_field(self) -> "Settings":
        if self.warmup_min > self.window_size:
            raise ValueError(f"warmup_min ({self.warmup_min}) must not exceed window_size ({self.window_size})")
        if self.shingle_width == 1:
            raise ValueError("shingle_width must be 0 (disabled) or at least 2")
        return self

    @property
    def update_buffer_size(self) -> int:
        """Number of recent normal instances retained for offline fine-tuning."""
        return self.window_size * self.update_buffer_factor

    def resolved(self) -> Dict[str, Any]:
        """Fully resolved configuration as a flat mapping."""
        return self.model_dump()

    def to_config_text(self) -> str:
        """Render the resolved configuration in the ``key = value`` file format."""
        lines = []
        for key, value in self.resolved().items():
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse flat ``key = value`` text.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Raw string values keyed by setting name

    Raises:
        ConfigError: On malformed lines or duplicate keys
    """
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_no}: missing key")
        if key in values:
            raise ConfigError(f"{source}:{line_no}: duplicate key '{key}'")
        values[key] = value
    return values


def load_settings(config_path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """Build validated settings from a config file plus overrides.

    Precedence, highest first: overrides, config file, DRIFTWATCH_* environment, .env, defaults.

    Args:
        config_path: Optional flat key=value file
        overrides: Values supplied on the command line

    Returns:
        Validated settings

    Raises:
        ConfigError: On unreadable files, unknown keys or out-of-range values
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        path = Path(config_path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        values.update(parse_config_text(text, source=str(path)))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return Settings(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'settings'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {problems}") from e


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
