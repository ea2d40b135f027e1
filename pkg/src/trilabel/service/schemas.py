"""Pydantic request/response models for the HTTP service.

Config specs mirror the engine dataclasses field for field, but every field
is optional: unset fields fall back to the engine defaults, so the dataclass
definitions stay the single source of truth.
"""

from typing import Optional

from pydantic import BaseModel, ConfigDict

from ..harness import TrainConfig


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_classes: Optional[int] = None
    input_dim: Optional[int] = None
    num_labeled: Optional[int] = None
    num_unlabeled: Optional[int] = None
    num_test: Optional[int] = None
    class_spread: Optional[float] = None
    confusable_pairs: Optional[list[tuple[int, int, float]]] = None
    anchor_correlation: Optional[float] = None
    seed: Optional[int] = None


class AugmentationSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weak_noise: Optional[float] = None
    strong_noise: Optional[float] = None
    strong_mask_fraction: Optional[float] = None


class DatasetFilesSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    labeled: str
    unlabeled: str
    test: str
    anchors: str


class TrainSpec(BaseModel):
    """Partial TrainConfig; None means "use the engine default"."""

    model_config = ConfigDict(extra="forbid")

    synthetic: Optional[SyntheticSpec] = None
    files: Optional[DatasetFilesSpec] = None
    temperature: Optional[float] = None
    text_loss_temperature: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    lambda_text: Optional[float] = None
    lambda_unsup: Optional[float] = None
    buffer_momentum: Optional[float] = None
    buffer_capacity_factor: Optional[float] = None
    buffer_feature_source: Optional[str] = None
    align_decay: Optional[float] = None
    align_warmup_batches: Optional[int] = None
    align_mode: Optional[str] = None
    mu: Optional[int] = None
    batch_size: Optional[int] = None
    epochs: Optional[int] = None
    lr: Optional[float] = None
    adam_beta1: Optional[float] = None
    adam_beta2: Optional[float] = None
    adam_eps: Optional[float] = None
    feature_dim: Optional[int] = None
    init_scheme: Optional[str] = None
    use_text_prob: Optional[bool] = None
    use_instance_prob: Optional[bool] = None
    use_text_loss: Optional[bool] = None
    literal_instance_prob: Optional[bool] = None
    text_softmax_axis: Optional[str] = None
    text_loss_reduction: Optional[str] = None
    augmentation: Optional[AugmentationSpec] = None
    seed: Optional[int] = None
    seeds: Optional[list[int]] = None
    checkpoint_interval: Optional[int] = None
    dump_buffer: Optional[bool] = None
    dump_pseudo_labels: Optional[bool] = None
    record_step_stats: Optional[bool] = None
    check_probabilities: Optional[bool] = None

    def to_config(self) -> TrainConfig:
        raw = self.model_dump(exclude_none=True)
        if "synthetic" in raw:
            raw["synthetic"] = {k: v for k, v in raw["synthetic"].items() if v is not None}
            full = TrainConfig().synthetic.__dict__ | raw["synthetic"]
            raw["synthetic"] = full
        if "augmentation" in raw:
            raw["augmentation"] = {k: v for k, v in raw["augmentation"].items()
                                   if v is not None}
            full = TrainConfig().augmentation.__dict__ | raw["augmentation"]
            raw["augmentation"] = full
        return TrainConfig.from_dict(raw)


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: SyntheticSpec = SyntheticSpec()
    out_dir: str
    include_hidden_labels: bool = True


class SynthResponse(BaseModel):
    labeled: str
    unlabeled: str
    test: str
    anchors: str
    num_labeled: int
    num_unlabeled: int
    num_test: int
    num_classes: int
    dim: int


class TrainRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: TrainSpec = TrainSpec()
    out_dir: Optional[str] = None


class AblateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: TrainSpec = TrainSpec()
    out_dir: Optional[str] = None


class SweepRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: TrainSpec = TrainSpec()
    parameter: str
    grid: list[float]
    out_dir: Optional[str] = None


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    test_file: str


class EvalResponse(BaseModel):
    accuracy: float


class JobSubmitted(BaseModel):
    job_id: str
    kind: str


class JobError(BaseModel):
    category: str
    message: str


class JobStatus(BaseModel):
    job_id: str
    kind: str
    state: str  # queued | running | done | failed
    progress: Optional[dict] = None
    result: Optional[dict] = None
    error: Optional[JobError] = None


class JobList(BaseModel):
    jobs: list[JobStatus]
