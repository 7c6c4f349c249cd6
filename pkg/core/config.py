"""
Configuration.

Two layers:
  - Settings: process-level knobs from environment variables / .env
  - PipelineConfig: every algorithm constant, loaded from a JSON file with
    full defaulting. Defaults are the published constants where one exists.
"""

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.errors import ConfigError


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    LOG_LEVEL: str = "INFO"

    # Environment
    ENVIRONMENT: str = "development"

    # Execution
    DEFAULT_JOBS: int = 1
    OUTPUT_DIR: str = "out"

    @property
    def is_production(self) -> bool:
        return self.ENVIRONMENT.lower() == "production"


settings = Settings()


# ---------------------------------------------------------------------------
# Pipeline configuration
# ---------------------------------------------------------------------------

class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class VoxelSettings(_Section):
    resolution: float = Field(0.02, gt=0, description="Voxel edge length in meters.")


class SupervoxelSettings(_Section):
    k: float = Field(0.06, gt=0, description="Graph segmentation scale parameter.")
    min_size: int = Field(20, ge=1, description="Minimum supervoxel size in voxels.")
    alpha: float = Field(1.0, ge=0, description="Weight of the color difference.")
    beta: float = Field(4.0, ge=0, description="Weight of the normal difference.")
    gamma_concave: float = Field(0.25, gt=0, description="Concave edges are divided by this.")
    connectivity: Literal[6, 18, 26] = 26


class ClusterSettings(_Section):
    t0: float = Field(0.5, description="Merge threshold on edge weight.")
    ratio_bounds: Tuple[float, float] = (0.3, 2.0)
    min_voxels: int = Field(25, ge=1)
    semantic_gating: bool = False
    use_feature: bool = True
    use_spatial: bool = True
    use_occupancy: bool = True

    @field_validator("t0")
    @classmethod
    def validate_t0(cls, v: float) -> float:
        if not 0.0 < v < 2.0:
            raise ValueError("must lie in (0, 2)")
        return v

    @field_validator("ratio_bounds")
    @classmethod
    def validate_ratio_bounds(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = v
        if not 0.0 <= lo < hi:
            raise ValueError("expected 0 <= low < high")
        return v


class LossSettings(_Section):
    delta_v: float = Field(0.1, gt=0)
    delta_d: float = Field(1.5, gt=0)
    prob_clamp: float = Field(1e-7, gt=0, lt=0.5)


class OracleNoiseSpec(_Section):
    sigma_feat: float = Field(0.0, ge=0, description="Isotropic noise on feature codes.")
    sigma_off: float = Field(0.0, ge=0, description="Noise on spatial offsets (m).")
    sigma_occ: float = Field(0.0, ge=0, description="Per-voxel noise on log-occupancy.")
    sigma_occ_instance: float = Field(0.0, ge=0, description="Per-instance bias on log-occupancy.")
    sigma_logit: float = Field(0.0, ge=0)
    rng_seed: int = 0


class OracleSettings(_Section):
    sigma_s: float = Field(0.3, gt=0, description="Emitted feature covariance.")
    sigma_d: float = Field(0.3, gt=0, description="Emitted spatial covariance (m).")
    code_scale: float = Field(2.25, gt=0, description="Norm of each instance code.")
    logit_margin: float = Field(20.0, gt=0)
    pair_code_distance: float = Field(0.1, ge=0, description="Code distance of confusable pairs.")
    noise: OracleNoiseSpec = Field(default_factory=OracleNoiseSpec)


class SceneSettings(_Section):
    room_size: Tuple[float, float] = (2.4, 2.4)
    wall_height: float = Field(0.6, gt=0)
    n_objects: int = Field(8, ge=0)
    shapes: List[Literal["box", "cylinder", "panel"]] = ["box", "cylinder", "panel"]
    object_size: Tuple[float, float] = (0.16, 0.48)
    object_height: Tuple[float, float] = (0.16, 0.4)
    min_gap: float = Field(0.1, ge=0, description="Clearance between objects and walls (m).")
    points_per_voxel: int = Field(2, ge=1)
    color_jitter: float = Field(0.0, ge=0)
    layout: Literal["random", "adjacent_pair"] = "random"
    include_room: bool = True
    max_attempts: int = Field(200, ge=1)


class PipelineConfig(_Section):
    voxel: VoxelSettings = Field(default_factory=VoxelSettings)
    supervoxel: SupervoxelSettings = Field(default_factory=SupervoxelSettings)
    cluster: ClusterSettings = Field(default_factory=ClusterSettings)
    loss: LossSettings = Field(default_factory=LossSettings)
    oracle: OracleSettings = Field(default_factory=OracleSettings)
    scene: SceneSettings = Field(default_factory=SceneSettings)
    n_classes: int = Field(20, ge=1)
    embedding_dim: int = Field(32, ge=1)
    iou_thresholds: List[float] = Field(
        default_factory=lambda: [round(0.5 + 0.05 * i, 2) for i in range(10)]
    )
    seed: int = 0

    @model_validator(mode="after")
    def validate_thresholds(self) -> "PipelineConfig":
        if not self.iou_thresholds or any(not 0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ValueError("iou_thresholds must be non-empty and lie in (0, 1]")
        return self

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with every seeded component reseeded from `seed`."""
        noise = self.oracle.noise.model_copy(update={"rng_seed": seed})
        oracle = self.oracle.model_copy(update={"noise": noise})
        return self.model_copy(update={"seed": seed, "oracle": oracle})


def _field_path(exc: ValidationError) -> Tuple[str, str]:
    err = exc.errors()[0]
    path = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
    return path, err.get("msg", "invalid value")


def parse_config(data: Union[str, bytes, dict]) -> PipelineConfig:
    try:
        if isinstance(data, dict):
            return PipelineConfig.model_validate(data)
        return PipelineConfig.model_validate_json(data)
    except ValidationError as exc:
        field, msg = _field_path(exc)
        raise ConfigError(field, msg) from exc


def load_config(path: Optional[Union[str, Path]]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {p}: {exc}") from exc
    try:
        json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{p}: invalid JSON at line {exc.lineno}") from exc
    return parse_config(raw)


def dump_config(config: PipelineConfig) -> str:
    return config.model_dump_json(indent=2)


def save_config(config: PipelineConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(config) + "\n", encoding="utf-8")
