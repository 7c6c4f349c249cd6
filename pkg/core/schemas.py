"""
File-level data models. Everything written as JSON goes through these so the
output layout is validated in one place and reads back with full checking.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from core.clustering import InstancePrediction, PredictedInstance
from core.evaluation import ClassScores, EvalReport, OccupancyCdf
from core.gradcheck import GradCheckResult
from core.scene import CLASS_NAMES


def class_name(class_id: int) -> str:
    return CLASS_NAMES[class_id] if 0 <= class_id < len(CLASS_NAMES) else f"class_{class_id}"


class InstanceRecord(BaseModel):
    instance_id: int = Field(..., ge=0)
    semantic_label: int
    class_name: str
    confidence: float = Field(..., gt=0, le=1)
    voxel_count: int = Field(..., ge=1)
    ratio: float = Field(..., gt=0, description="Member count over predicted occupancy.")


class InstanceManifest(BaseModel):
    n_voxels: int
    instances: List[InstanceRecord]

    @classmethod
    def from_prediction(cls, pred: InstancePrediction) -> "InstanceManifest":
        return cls(
            n_voxels=int(pred.voxel_instance.shape[0]),
            instances=[
                InstanceRecord(
                    instance_id=inst.instance_id,
                    semantic_label=inst.semantic_label,
                    class_name=class_name(inst.semantic_label),
                    confidence=inst.confidence,
                    voxel_count=inst.voxel_count,
                    ratio=inst.ratio,
                )
                for inst in pred.instances
            ],
        )

    def to_prediction(self, voxel_instance: np.ndarray) -> InstancePrediction:
        return InstancePrediction(
            voxel_instance=np.asarray(voxel_instance, dtype=np.int64),
            instances=[
                PredictedInstance(
                    instance_id=r.instance_id,
                    semantic_label=r.semantic_label,
                    confidence=r.confidence,
                    voxel_count=r.voxel_count,
                    ratio=r.ratio,
                )
                for r in self.instances
            ],
        )


class ClassScoresModel(BaseModel):
    class_id: int
    class_name: str
    ap: float = Field(..., ge=0, le=1)
    ap50: float = Field(..., ge=0, le=1)
    ap25: float = Field(..., ge=0, le=1)
    precision: float
    recall: float
    n_gt: int
    n_pred: int


class CdfModel(BaseModel):
    thresholds: List[float]
    fractions: List[float]
    fraction_at_0_3: float
    n_instances: int

    @classmethod
    def from_cdf(cls, cdf: OccupancyCdf) -> "CdfModel":
        return cls(
            thresholds=[float(x) for x in cdf.thresholds],
            fractions=[float(x) for x in cdf.fractions],
            fraction_at_0_3=cdf.fraction_at_anchor,
            n_instances=cdf.n_instances,
        )


class EvalReportModel(BaseModel):
    """Serialized metrics. Timings are written separately so this stays byte-stable."""

    mean_ap: float = Field(..., description="Mean over IoU 0.50:0.05:0.95.")
    map50: float
    map25: float
    mean_precision: float
    mean_recall: float
    thresholds: List[float]
    per_class: List[ClassScoresModel]
    occupancy_cdf: Optional[CdfModel] = None

    @classmethod
    def from_report(cls, report: EvalReport) -> "EvalReportModel":
        return cls(
            mean_ap=report.mean_ap,
            map50=report.map50,
            map25=report.map25,
            mean_precision=report.mean_precision,
            mean_recall=report.mean_recall,
            thresholds=list(report.thresholds),
            per_class=[_class_model(c, s) for c, s in report.per_class.items()],
            occupancy_cdf=CdfModel.from_cdf(report.occupancy_cdf) if report.occupancy_cdf else None,
        )


def _class_model(class_id: int, s: ClassScores) -> ClassScoresModel:
    return ClassScoresModel(
        class_id=class_id,
        class_name=class_name(class_id),
        ap=s.ap,
        ap50=s.ap50,
        ap25=s.ap25,
        precision=s.precision,
        recall=s.recall,
        n_gt=s.n_gt,
        n_pred=s.n_pred,
    )


class TimingReport(BaseModel):
    stages: Dict[str, float]
    total: float
    n_voxels: int
    n_supervoxels: int
    n_merges: int


class GradCheckRow(BaseModel):
    term: str
    argument: str
    max_error: float
    cases: int
    passed: bool

    @classmethod
    def from_result(cls, r: GradCheckResult) -> "GradCheckRow":
        return cls(term=r.term, argument=r.argument, max_error=r.max_error, cases=r.cases, passed=r.passed)


class GradCheckReport(BaseModel):
    eps: float
    tol: float
    rows: List[GradCheckRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


class AblationRow(BaseModel):
    variant: str
    scenes: int
    mean_ap: float
    map50: float
    map25: float


class AblationReport(BaseModel):
    variants: List[AblationRow]


class AggregateReport(BaseModel):
    scenes: List[int]
    means: Dict[str, float]


def rows_from_results(results: Sequence[GradCheckResult]) -> List[GradCheckRow]:
    return [GradCheckRow.from_result(r) for r in results]
