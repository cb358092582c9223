"""Training-stage manifests: data mixes, component freezing, optimizer knobs.

Four declarative stage plans cover the full schedule: a projector-only
alignment warm-up, large single-image pretraining, a mixed image/video stage,
and the final driving-QA mix drawn from the dataset registry. Plans are pure
functions of (stage, registry) and serialize to stable JSON; no trainer runs
here.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .errors import MissingDatasetCount

SEQUENCE_LENGTH = 8192


class Trainability(enum.Enum):
    FROZEN = "frozen"
    TRAINABLE = "trainable"


class Modality(enum.Enum):
    SINGLE_IMAGE = "single_image"
    MULTI_IMAGE = "multi_image"
    SINGLE_VIDEO = "single_video"
    MULTI_VIDEO = "multi_video"
    LANGUAGE = "language"


@dataclass(frozen=True)
class ComponentFlag:
    vision_encoder: Trainability
    projector: Trainability
    llm: Trainability

    def __post_init__(self) -> None:
        if all(f is Trainability.FROZEN for f in
               (self.vision_encoder, self.projector, self.llm)):
            raise ValueError("at least one component must be trainable")

    @property
    def any_frozen(self) -> bool:
        return Trainability.FROZEN in (self.vision_encoder, self.projector, self.llm)


@dataclass(frozen=True)
class DataMixEntry:
    name: str
    modality: Modality
    count: int

    def __post_init__(self) -> None:
        if self.count <= 0:
            raise ValueError(f"mix entry {self.name!r} must have a positive count")


@dataclass(frozen=True)
class StagePlan:
    stage: int
    mix: tuple[DataMixEntry, ...]
    flags: ComponentFlag
    lr_vision: float
    lr_projector: float
    lr_llm: float
    batch_size: int
    epochs: int = 1
    sequence_length: int = SEQUENCE_LENGTH

    def __post_init__(self) -> None:
        if not 1 <= self.stage <= 4:
            raise ValueError("stage must be 1..4")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch_size and epochs must be positive")

    @property
    def total_samples(self) -> int:
        return sum(e.count for e in self.mix)


# Registry counts. The alignment corpus count is exact; the driving-dataset
# counts are the released per-dataset training-set sizes.
ALIGNMENT_DATASET = "LCS-558K"

AD_DATASETS: tuple[tuple[str, Modality], ...] = (
    ("DriveLM", Modality.MULTI_IMAGE),
    ("OmniDrive", Modality.MULTI_IMAGE),
    ("NuInstruct", Modality.MULTI_VIDEO),
    ("CODA-LM", Modality.SINGLE_IMAGE),
    ("MAPLM", Modality.MULTI_IMAGE),
    ("LingoQA", Modality.SINGLE_VIDEO),
)

DEFAULT_REGISTRY: dict[str, int] = {
    ALIGNMENT_DATASET: 558_000,
    "DriveLM": 376_181,
    "OmniDrive": 374_329,
    "NuInstruct": 71_842,
    "CODA-LM": 184_480,
    "MAPLM": 94_970,
    "LingoQA": 413_829,
}

_ALL_TRAINABLE = ComponentFlag(Trainability.TRAINABLE, Trainability.TRAINABLE,
                               Trainability.TRAINABLE)
_PROJECTOR_ONLY = ComponentFlag(Trainability.FROZEN, Trainability.TRAINABLE,
                                Trainability.FROZEN)

# Stages 2-4 share the same optimizer settings; only the data mix moves.
_LR_VISION = 2e-6
_LR_OTHERS = 1e-5
_MAIN_BATCH = 256


def _lookup(registry: Mapping[str, int], name: str) -> int:
    try:
        return registry[name]
    except KeyError:
        raise MissingDatasetCount(name) from None


def build_stage_plan(stage: int,
                     registry: Mapping[str, int] | None = None) -> StagePlan:
    """Assemble one stage's plan; registry feeds stages 1 and 4.

    Raises:
        MissingDatasetCount: if the registry lacks a referenced dataset.
        ValueError: for a stage outside 1..4.
    """
    reg = DEFAULT_REGISTRY if registry is None else registry
    if stage == 1:
        mix = (DataMixEntry(ALIGNMENT_DATASET, Modality.SINGLE_IMAGE,
                            _lookup(reg, ALIGNMENT_DATASET)),)
        return StagePlan(stage=1, mix=mix, flags=_PROJECTOR_ONLY,
                         lr_vision=0.0, lr_projector=1e-3, lr_llm=0.0,
                         batch_size=512, epochs=1)
    if stage == 2:
        mix = (DataMixEntry("single-image", Modality.SINGLE_IMAGE, 3_000_000),
               DataMixEntry("language", Modality.LANGUAGE, 143_000))
    elif stage == 3:
        mix = (DataMixEntry("single-image", Modality.SINGLE_IMAGE, 1_500_000),
               DataMixEntry("multi-image", Modality.MULTI_IMAGE, 760_000),
               DataMixEntry("single-video", Modality.SINGLE_VIDEO, 501_000),
               DataMixEntry("multi-video", Modality.MULTI_VIDEO, 145_000))
    elif stage == 4:
        mix = tuple(DataMixEntry(name, modality, _lookup(reg, name))
                    for name, modality in AD_DATASETS)
    else:
        raise ValueError("stage must be 1..4")
    return StagePlan(stage=stage, mix=mix, flags=_ALL_TRAINABLE,
                     lr_vision=_LR_VISION, lr_projector=_LR_OTHERS,
                     lr_llm=_LR_OTHERS, batch_size=_MAIN_BATCH, epochs=1)


def build_all_plans(registry: Mapping[str, int] | None = None) -> tuple[StagePlan, ...]:
    return tuple(build_stage_plan(stage, registry) for stage in (1, 2, 3, 4))


# ------------------------------------------------------------- validation

@dataclass(frozen=True)
class TotalExpectation:
    total: int
    rel_tol: float = 0.0  # 0 means exact


DEFAULT_EXPECTATIONS: dict[int, TotalExpectation] = {
    1: TotalExpectation(558_000),
    2: TotalExpectation(3_143_000),
    3: TotalExpectation(2_906_000),
    4: TotalExpectation(1_500_000, rel_tol=0.02),
}


@dataclass(frozen=True)
class PlanReport:
    stage: int
    total: int
    violations: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_plan_totals(plan: StagePlan,
                         expectation: TotalExpectation) -> PlanReport:
    violations: list[str] = []
    if not plan.mix:
        violations.append("mix is empty: every stage needs at least one entry")
    total = plan.total_samples
    if expectation.rel_tol == 0.0:
        if total != expectation.total:
            violations.append(
                f"total {total} != expected {expectation.total}")
    else:
        bound = expectation.rel_tol * expectation.total
        if abs(total - expectation.total) > bound:
            violations.append(
                f"total {total} outside {expectation.rel_tol:.0%} of "
                f"{expectation.total}")
    if plan.sequence_length != SEQUENCE_LENGTH:
        violations.append(
            f"sequence_length {plan.sequence_length} != {SEQUENCE_LENGTH}")
    if plan.stage != 1 and plan.flags.any_frozen:
        violations.append("frozen components are only allowed in stage 1")
    return PlanReport(stage=plan.stage, total=total,
                      violations=tuple(violations))


# ---------------------------------------------------------- serialization

def plan_to_dict(plan: StagePlan) -> dict:
    return {
        "stage": plan.stage,
        "mix": [{"name": e.name, "modality": e.modality.value, "count": e.count}
                for e in plan.mix],
        "flags": {
            "vision_encoder": plan.flags.vision_encoder.value,
            "projector": plan.flags.projector.value,
            "llm": plan.flags.llm.value,
        },
        "lr_vision": plan.lr_vision,
        "lr_projector": plan.lr_projector,
        "lr_llm": plan.lr_llm,
        "batch_size": plan.batch_size,
        "epochs": plan.epochs,
        "sequence_length": plan.sequence_length,
    }


def plan_to_json(plan: StagePlan) -> str:
    return json.dumps(plan_to_dict(plan), ensure_ascii=False, indent=2) + "\n"


def write_stage_plans(out_dir: str | Path,
                      registry: Mapping[str, int] | None = None) -> list[Path]:
    """Write plans/stage{1..4}.json under out_dir; returns the paths."""
    plans_dir = Path(out_dir) / "plans"
    plans_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for plan in build_all_plans(registry):
        path = plans_dir / f"stage{plan.stage}.json"
        path.write_text(plan_to_json(plan), encoding="utf-8")
        paths.append(path)
    return paths
