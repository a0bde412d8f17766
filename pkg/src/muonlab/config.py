"""Run configuration: pydantic schemas loaded from TOML.

Every table and key is optional; unknown keys are rejected. Example::

    [run]
    seed = 7
    output_dir = "runs/wd"

    [optimizer]
    lr = 0.02
    weight_decay = 0.1
    scaling_mode = "adjusted_lr"

    [model]
    dims = [64, 256, 64]

    [train]
    optimizer = "hybrid"
    steps = 500
    schedule = "cosine"
"""

import tomllib
from os import PathLike
from pathlib import Path
from typing import Any, Literal, Self

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from muonlab.errors import ConfigError
from muonlab.optimizers import (
    AdamWConfig,
    MuonConfig,
    ParamKind,
    ScalingMode,
    ScalingVariant,
)
from muonlab.orthogonalizer import NsConfig
from muonlab.training.model import Nonlinearity
from muonlab.training.schedules import Schedule
from muonlab.training.tasks import TaskKind, TaskSpec

OptimizerChoice = Literal["muon", "adamw", "hybrid"]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


# Run


class RunSection(_Section):
    seed: int = 0
    output_dir: Path = Path("runs")
    precision: int = Field(default=17, ge=1, le=17)  # significant digits in CSV/JSON decimals


# Optimizer


class OptimizerSection(_Section):
    """Hyper-parameters shared by Muon and AdamW (lr and weight decay) plus each one's own."""

    lr: float = Field(default=0.02, ge=0.0)
    momentum: float = Field(default=0.95, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.1, ge=0.0)
    ns_steps: int = Field(default=5, ge=1)
    scaling_mode: ScalingVariant = ScalingVariant.ADJUSTED_LR
    rms_target: float = Field(default=0.2, gt=0.0)
    hidden: int | None = Field(default=None, ge=1)
    nesterov: bool = True
    betas: tuple[float, float] = (0.9, 0.95)
    epsilon: float = Field(default=1e-8, gt=0.0)
    no_decay: tuple[str, ...] = ()

    def muon(self) -> MuonConfig:
        return MuonConfig(
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            ns=NsConfig(steps=self.ns_steps),
            nesterov=self.nesterov,
            scaling=ScalingMode(
                variant=self.scaling_mode, hidden=self.hidden, rms_target=self.rms_target
            ),
        )

    def adamw(self) -> AdamWConfig:
        beta1, beta2 = self.betas
        return AdamWConfig(
            lr=self.lr,
            beta1=beta1,
            beta2=beta2,
            epsilon=self.epsilon,
            weight_decay=self.weight_decay,
        )


# Model and task


class ModelSection(_Section):
    dims: tuple[int, ...] = (64, 256, 64)  # H → 4H → H
    nonlinearity: Nonlinearity = Nonlinearity.TANH

    @model_validator(mode="after")
    def _check_dims(self) -> Self:
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError("dims needs at least two positive sizes")
        return self


class TaskSection(_Section):
    kind: TaskKind = TaskKind.REGRESSION
    dataset_size: int = Field(default=512, ge=10)
    noise: float = Field(default=0.0, ge=0.0)
    seed: int | None = None  # defaults to run.seed


# Training


class TrainSection(_Section):
    optimizer: OptimizerChoice = "hybrid"
    steps: int = Field(default=200, ge=1)
    schedule: Schedule = Schedule.CONSTANT
    warmup_steps: int = Field(default=0, ge=0)
    batch_size: int | None = Field(default=None, ge=1)  # None: full batch
    frozen_kinds: tuple[ParamKind, ...] = ()


class RunConfig(_Section):
    run: RunSection = RunSection()
    optimizer: OptimizerSection = OptimizerSection()
    model: ModelSection = ModelSection()
    task: TaskSection = TaskSection()
    train: TrainSection = TrainSection()

    def task_spec(self) -> TaskSpec:
        seed = self.run.seed if self.task.seed is None else self.task.seed
        return TaskSpec(
            kind=self.task.kind,
            input_dim=self.model.dims[0],
            dataset_size=self.task.dataset_size,
            noise=self.task.noise,
            seed=seed,
        )

    def with_overrides(self, overrides: dict[str, dict[str, Any]]) -> Self:
        """Return a re-validated copy with ``{table: {key: value}}`` merged in.

        ``None`` values are skipped so unset CLI flags leave the config alone.
        """
        data = self.model_dump()
        for table, values in overrides.items():
            data.setdefault(table, {}).update({k: v for k, v in values.items() if v is not None})
        return validate_config(data)


def validate_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = [
            {"loc": ".".join(str(p) for p in err["loc"]), "msg": err["msg"]}
            for err in exc.errors()
        ]
        message = f"invalid configuration ({len(problems)} problems)"
        raise ConfigError(message, problems=problems) from exc


def load_config(path: str | PathLike[str] | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", path=str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", path=str(path)) from exc
    return validate_config(data)
