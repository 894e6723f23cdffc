"""
Run configuration. Serialized next to every output for provenance.
"""

from pathlib import Path
from typing import Literal

import pydantic

from framemos.distortion import PITCH_RATIOS, DistortionKind
from framemos.eval_detect import DEFAULT_E_MAX, DEFAULT_MEDFILT_LENGTHS
from framemos.scoring import ResolutionFusion, check_frame_aligned


class _Section(pydantic.BaseModel):
    model_config = pydantic.ConfigDict(frozen=True, extra="forbid")


def _ordered_range(value: tuple[float, float], name: str) -> tuple[float, float]:
    lo, hi = value
    if not 0 < lo <= hi:
        raise ValueError(f"{name} must satisfy 0 < low <= high, got {value}")
    return value


class DistortionConfig(_Section):
    n_areas: int = pydantic.Field(3, ge=1)
    duration_range: tuple[float, float] = (0.4, 0.7)
    classes: tuple[DistortionKind, ...] = tuple(DistortionKind)
    sigma: float = pydantic.Field(0.1, gt=0)
    pitch_ratios: tuple[float, ...] = PITCH_RATIOS
    stretch_range: tuple[float, float] = (2.0, 3.0)
    fade_ms: float = pydantic.Field(10.0, ge=0)
    fft_size: int = 1024
    target_dbfs: float = -18.0
    bit_depth: Literal[16, "32f"] = 16

    @pydantic.field_validator("duration_range")
    @classmethod
    def _check_durations(cls, value: tuple[float, float]) -> tuple[float, float]:
        return _ordered_range(value, "duration_range")

    @pydantic.field_validator("stretch_range")
    @classmethod
    def _check_stretch(cls, value: tuple[float, float]) -> tuple[float, float]:
        lo, hi = _ordered_range(value, "stretch_range")
        if lo < 0.25 or hi > 4:
            raise ValueError(f"Stretch factors must lie in [0.25, 4], got {value}")
        return value

    @pydantic.field_validator("pitch_ratios")
    @classmethod
    def _check_ratios(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or not all(1 <= r <= 2 for r in value):
            raise ValueError(f"Pitch ratios must be in [1, 2] (direction is sampled), got {value}")
        return value

    @pydantic.field_validator("classes")
    @classmethod
    def _check_classes(cls, value: tuple[DistortionKind, ...]) -> tuple[DistortionKind, ...]:
        if not value:
            raise ValueError("Need at least one distortion class")
        return tuple(dict.fromkeys(value))

    @pydantic.field_validator("fft_size")
    @classmethod
    def _check_fft_size(cls, value: int) -> int:
        if value <= 0 or value & (value - 1):
            raise ValueError(f"fft_size must be a power of two, not {value}")
        return value


class ScoringConfig(_Section):
    frame_rate: float = pydantic.Field(50.0, gt=0)
    chunked: bool = True
    block_lengths: tuple[float, ...] = (1.0, 0.6, 0.4)
    shifts: tuple[float, ...] | None = None
    logits: tuple[float, ...] | None = None
    gamma: float = 2.0
    beta: float = 3.0
    clip: bool = True
    target_dbfs: float = -18.0
    frame_format: Literal["text", "f32"] = "text"

    @pydantic.model_validator(mode="after")
    def _check_fusion(self) -> "ScoringConfig":
        self.fusion()
        return self

    def fusion(self) -> ResolutionFusion | None:
        "The multi-resolution setup, or None for unchunked (global-context) scoring."
        if not self.chunked:
            return None
        kwargs = {}
        if self.shifts is not None:
            kwargs["shifts"] = self.shifts
        if self.logits is not None:
            kwargs["logits"] = self.logits
        return ResolutionFusion(self.block_lengths, **kwargs)

    def check_sample_rate(self, sample_rate: int) -> None:
        "Block shifts must be whole frames; only checkable once the audio is known."
        if (fusion := self.fusion()) is not None:
            check_frame_aligned(fusion, sample_rate, self.frame_rate)


class DetectionConfig(_Section):
    medfilt_lengths: tuple[float, ...] = tuple(float(ms) for ms in DEFAULT_MEDFILT_LENGTHS)
    rho_dtc: tuple[float, ...] = (0.5, 0.7)
    rho_gtc: float | None = None
    e_max: float = pydantic.Field(DEFAULT_E_MAX, gt=0)
    kfold: int | None = None

    @pydantic.field_validator("medfilt_lengths")
    @classmethod
    def _check_lengths(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or any(ms < 0 for ms in value):
            raise ValueError(f"Median filter lengths must be >= 0, got {value}")
        return tuple(sorted(set(value)))

    @pydantic.field_validator("rho_dtc")
    @classmethod
    def _check_rhos(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value or not all(0 <= r <= 1 for r in value):
            raise ValueError(f"rho_dtc values must be in [0, 1], got {value}")
        return value

    @pydantic.field_validator("rho_gtc")
    @classmethod
    def _check_gtc(cls, value: float | None) -> float | None:
        if value is not None and not 0 <= value <= 1:
            raise ValueError(f"rho_gtc must be in [0, 1], got {value}")
        return value

    @pydantic.field_validator("kfold")
    @classmethod
    def _check_kfold(cls, value: int | None) -> int | None:
        if value is not None and value < 2:
            raise ValueError(f"k-fold cross-validation needs k >= 2, got {value}")
        return value


class CouplingConfig(_Section):
    collar: float = pydantic.Field(0.2, ge=0)


class RunConfig(_Section):
    global_seed: int = 0
    jobs: int = pydantic.Field(1, ge=1)
    output_dir: Path | None = None
    distortion: DistortionConfig = DistortionConfig()
    scoring: ScoringConfig = ScoringConfig()
    detection: DetectionConfig = DetectionConfig()
    coupling: CouplingConfig = CouplingConfig()

    @classmethod
    def load(cls, path: Path | None) -> "RunConfig":
        if path is None:
            return cls()
        return cls.model_validate_json(path.read_text())

    def with_overrides(self, **sections) -> "RunConfig":
        """
        Copy with some fields replaced. Keyword values that are dicts update the
        section of that name; ``None`` values are ignored.
        """
        data = self.model_dump()
        for key, value in sections.items():
            if value is None:
                continue
            if isinstance(value, dict):
                data[key].update({k: v for k, v in value.items() if v is not None})
            else:
                data[key] = value
        return type(self).model_validate(data)
