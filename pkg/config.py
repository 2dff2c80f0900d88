import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from dotenv import load_dotenv
from pydantic import Field, ValidationError
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from errors import ConfigError
from schemas import AnthropometricTable, LossWeights, RansacConfig, RefineConfig
from utils import sha256_text

load_dotenv()

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
DEFAULT_ANTHROPOMETRY_FILE = DATA_DIR / "anthropometry.toml"

APP_NAME = "mirrorcalib"
APP_VERSION = "1.0.0"

BASELINE_STAGES = ("baseline1", "baseline2")


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"  # DEBUG, INFO, WARNING, ERROR

    # Runtime
    ENVIRONMENT: str = "development"  # development, production
    OUTPUT_DIR: str = "outputs"
    MAX_WORKERS: int = 4  # Suite fan-out across scenes

    # HTTP surface
    API_PREFIX: str = "/api"
    HOST: str = "0.0.0.0"
    PORT: int = 8000

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


settings = Settings()


# ============================================
# PIPELINE CONFIG (TOML + ENV)
# ============================================
def _load_default_table() -> AnthropometricTable:
    if DEFAULT_ANTHROPOMETRY_FILE.is_file():
        source = TomlConfigSettingsSource(PipelineConfig, toml_file=DEFAULT_ANTHROPOMETRY_FILE)
        return AnthropometricTable(**source().get("anthropometry", {}))
    return AnthropometricTable()


class PipelineConfig(BaseSettings):
    """
    Numeric knobs of the whole pipeline. Priority: keyword overrides, then
    MIRRORCALIB_* environment, then .env, then the TOML file, then defaults.
    """

    min_confidence: float = Field(0.3, ge=0, le=1)
    geman_mcclure_scale: float = Field(10.0, gt=0)
    variation: Literal["std", "range"] = "std"
    baselines: List[Literal["baseline1", "baseline2"]] = Field(default_factory=lambda: list(BASELINE_STAGES))
    assignment_subsample: int = Field(100, ge=1)

    weights: LossWeights = Field(default_factory=LossWeights)
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    refine: RefineConfig = Field(default_factory=RefineConfig)
    anthropometry: AnthropometricTable = Field(default_factory=lambda: _load_default_table())

    model_config = SettingsConfigDict(
        env_prefix="MIRRORCALIB_",
        env_nested_delimiter="__",
        env_file=".env",
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, env_settings, dotenv_settings, TomlConfigSettingsSource(settings_cls))

    def refine_settings(self) -> RefineConfig:
        """Refine section with the top-level [weights] applied."""
        return self.refine.model_copy(update={"weights": self.weights})

    def fingerprint(self) -> str:
        return sha256_text(self.model_dump_json())


def _drop_none(overrides: Dict[str, Any]) -> Dict[str, Any]:
    cleaned = {}
    for key, value in overrides.items():
        if isinstance(value, dict):
            value = _drop_none(value)
            if value:
                cleaned[key] = value
        elif value is not None:
            cleaned[key] = value
    return cleaned


def load_pipeline_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Build the pipeline config from an optional TOML file and CLI overrides
    (nested dicts, None values ignored).
    """
    overrides = _drop_none(overrides or {})
    config_cls = PipelineConfig

    if path is not None:
        toml_path = Path(path)
        if not toml_path.is_file():
            raise ConfigError(f"config file not found: {toml_path}")

        class FileBackedConfig(PipelineConfig):
            model_config = SettingsConfigDict(toml_file=toml_path)

        config_cls = FileBackedConfig

    try:
        config = config_cls(**overrides)
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid pipeline config: {e}") from e

    if path is not None:
        logger.info(f"Loaded pipeline config from {path}")
        config = PipelineConfig.model_construct(**dict(config))
    return config
