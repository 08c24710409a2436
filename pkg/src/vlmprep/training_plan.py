"""Validated training-plan manifests for an external trainer.

This toolkit never trains; it emits the two-stage configuration as data.
The vision encoder is trained separately beforehand and stays frozen in
both emitted stages: pre-training warms up the projector only, and
instruction tuning trains projector plus LLM.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

STAGES = ("pretrain", "instruction_tune")
STAGE_ALIASES = {"sft": "instruction_tune", "pretrain": "pretrain", "instruction_tune": "instruction_tune"}


class PlanError(Exception):
    pass


@dataclass(frozen=True)
class TrainingPlan:
    stage: str
    trainable: tuple[str, ...]
    batch_size: int
    context_length: int
    learning_rate: float
    weight_decay: float
    gradient_clip: float
    scheduler: str
    token_budget: float

    def validate(self, packer_capacity: int | None = None) -> None:
        if self.stage not in STAGES:
            raise PlanError(f"unknown stage {self.stage!r}")
        if "vision_encoder" in self.trainable:
            raise PlanError("the vision encoder is never trainable in an emitted stage")
        expected = ("projector",) if self.stage == "pretrain" else ("projector", "llm")
        if self.trainable != expected:
            raise PlanError(f"stage {self.stage} must train exactly {expected}, got {self.trainable}")
        if packer_capacity is not None and self.context_length != packer_capacity:
            raise PlanError(
                f"context_length {self.context_length} inconsistent with packer capacity {packer_capacity}"
            )

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "trainable": list(self.trainable),
            "batch_size": self.batch_size,
            "context_length": self.context_length,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "gradient_clip": self.gradient_clip,
            "scheduler": self.scheduler,
            "token_budget": self.token_budget,
        }


_PLANS = {
    "pretrain": TrainingPlan(
        stage="pretrain",
        trainable=("projector",),
        batch_size=32,
        context_length=4096,
        learning_rate=2e-4,
        weight_decay=0.0,
        gradient_clip=1.0,
        scheduler="cosine",
        token_budget=2.1e9,
    ),
    "instruction_tune": TrainingPlan(
        stage="instruction_tune",
        trainable=("projector", "llm"),
        batch_size=32,
        context_length=4096,
        learning_rate=2e-5,
        weight_decay=0.1,
        gradient_clip=1.0,
        scheduler="cosine",
        token_budget=2.3e9,
    ),
}


def emit_training_plan(stage: str, packer_capacity: int | None = None) -> TrainingPlan:
    canonical = STAGE_ALIASES.get(stage)
    if canonical is None:
        raise PlanError(f"unknown stage {stage!r}; choose from pretrain, instruction_tune (alias sft)")
    plan = _PLANS[canonical]
    plan.validate(packer_capacity)
    return plan


def write_plan(plan: TrainingPlan, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
