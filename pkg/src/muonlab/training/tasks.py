"""Synthetic teacher-student datasets."""

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from muonlab.training.model import Batch, LossKind, Nonlinearity, ToyModel

VALIDATION_FRACTION = 0.1
TASK_STREAM = 1  # keeps task draws apart from model init drawn from the same seed


class TaskKind(StrEnum):
    REGRESSION = "teacher_student_regression"
    CLASSIFICATION = "synthetic_classification"


class TaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    kind: TaskKind = TaskKind.REGRESSION
    input_dim: int | None = Field(default=None, ge=1)  # defaults to the model's input dim
    dataset_size: int = Field(default=512, ge=2)
    noise: float = Field(default=0.0, ge=0.0)
    seed: int = 0

    @property
    def loss(self) -> LossKind:
        if self.kind is TaskKind.CLASSIFICATION:
            return LossKind.CROSS_ENTROPY
        return LossKind.MSE


@dataclass(frozen=True)
class Dataset:
    train: Batch
    val: Batch
    loss: LossKind
    teacher: ToyModel


def make_dataset(spec: TaskSpec, dims: tuple[int, ...], nonlinearity: Nonlinearity) -> Dataset:
    """Label Gaussian inputs with a fixed random network of the student's architecture.

    The last ``VALIDATION_FRACTION`` of a seeded permutation is held out.
    """
    if spec.input_dim is not None and spec.input_dim != dims[0]:
        raise ValueError(f"task input_dim {spec.input_dim} != model input dim {dims[0]}")
    rng = np.random.default_rng((spec.seed, TASK_STREAM))
    teacher = ToyModel.init(dims, nonlinearity, rng)
    inputs = rng.standard_normal((spec.dataset_size, dims[0]))
    outputs = teacher.predict(inputs)
    if spec.noise > 0.0:
        outputs = outputs + spec.noise * rng.standard_normal(outputs.shape)

    if spec.kind is TaskKind.CLASSIFICATION:
        targets = np.argmax(outputs, axis=1)
    else:
        targets = outputs

    data = Batch(inputs, targets)
    order = rng.permutation(spec.dataset_size)
    n_val = max(1, math.floor(spec.dataset_size * VALIDATION_FRACTION))
    return Dataset(
        train=data.subset(order[n_val:]),
        val=data.subset(order[:n_val]),
        loss=spec.loss,
        teacher=teacher,
    )
