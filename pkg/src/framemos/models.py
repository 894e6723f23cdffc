"""
Report models written by the CLI as JSON.

A JSON schema per report is kept in ``schemas/``; after changing a model,
regenerate them with ``rye run build_schemas`` (this module as a script).
"""

import json
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import pydantic

from framemos.eval_corr import CorrelationMetrics, CouplingReport, CouplingSummary

TOOL_NAME = "framemos"


def tool_version() -> str:
    try:
        return version(TOOL_NAME)
    except PackageNotFoundError:
        return "0+unknown"


class VersionStamp(pydantic.BaseModel):
    tool: str = TOOL_NAME
    version: str = pydantic.Field(default_factory=tool_version)
    command: str


class DistortSummary(pydantic.BaseModel):
    n_utterances: int
    n_distorted: int
    n_skipped: int
    class_counts: dict[str, int]
    n_events: int
    clipped_samples: int


class RocPoint(pydantic.BaseModel):
    efpr: float
    tpr: float
    threshold: float | None


class AucCell(pydantic.BaseModel):
    rho_dtc: float
    medfilt_ms: float
    auc: float


class BestFilter(pydantic.BaseModel):
    "Best median-filter length at one ρ_DTC, with its ROC and F1-optimal operating point."

    rho_dtc: float
    medfilt_ms: float
    auc: float
    roc: list[RocPoint]
    f1: float
    f1_threshold: float | None
    per_class_auc: dict[str, float]


class FoldReport(pydantic.BaseModel):
    fold: int
    test_ids: list[str]
    medfilt_ms: float
    threshold: float | None
    test_auc: float | None
    test_f1: float


class KFoldReport(pydantic.BaseModel):
    k: int
    rho_dtc: float
    folds: list[FoldReport]
    mean_auc: float | None
    mean_f1: float


class DetectReport(pydantic.BaseModel):
    n_utterances: int
    n_events: int
    total_audio_seconds: float
    e_max: float
    auc_table: list[AucCell]
    best: list[BestFilter]
    kfold: list[KFoldReport] | None = None


class CouplingRunReport(pydantic.BaseModel):
    collar: float
    summary: CouplingSummary
    utterances: list[CouplingReport]


class CorrReport(pydantic.BaseModel):
    n_utterances: int
    n_systems: int
    utterance: CorrelationMetrics
    system: CorrelationMetrics | None
    system_unavailable_reason: str | None = None


REPORTS: dict[str, type[pydantic.BaseModel]] = {
    "distort_summary": DistortSummary,
    "eval_detect": DetectReport,
    "eval_coupling": CouplingRunReport,
    "eval_corr": CorrReport,
    "version": VersionStamp,
}


if __name__ == "__main__":
    # Emit JSON schemas for every report, so consumers can validate our outputs.
    out = Path(sys.argv[1]) if len(sys.argv) == 2 else Path("schemas")
    out.mkdir(parents=True, exist_ok=True)
    for name, model in REPORTS.items():
        schema = model.model_json_schema(mode="serialization")
        (out / f"{name}.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
        print(f"wrote {out / name}.schema.json")
