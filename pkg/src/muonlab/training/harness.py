"""Training loop and the experiments built on it.

``train`` routes parameters by optimizer choice:

    muon    matrix params by Muon, vector params left frozen
    adamw   every param by AdamW
    hybrid  matrix params by Muon, vector params by AdamW

Kinds listed in ``train.frozen_kinds`` are never stepped.
"""

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import Self

import numpy as np

from muonlab.config import RunConfig
from muonlab.errors import DivergenceError, MatrixError
from muonlab.matrix import Matrix, read_matrix_csv, write_matrix_csv
from muonlab.optimizers import (
    ParamKind,
    ParamState,
    UpdateStats,
    adamw_step,
    hybrid_step,
    muon_step,
)
from muonlab.orthogonalizer import Orthogonalizer, newton_schulz
from muonlab.training.metrics import MetricsLog
from muonlab.training.model import Nonlinearity, ToyModel, model_from_params
from muonlab.training.schedules import schedule_lr
from muonlab.training.tasks import Dataset, make_dataset

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6
RMS_SWEEP_TARGETS = (0.05, 0.1, 0.2, 0.4, 0.8)
ABLATION_SEEDS = 5


@dataclass(frozen=True)
class TrainResult:
    log: MetricsLog
    model: ToyModel
    states: dict[str, ParamState]


def _check_loss(step: int, loss: float) -> None:
    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
        logger.error("loss %r at step %d, stopping", loss, step)
        raise DivergenceError(step, loss)


def _optimizer_step(
    cfg: RunConfig,
    states: dict[str, ParamState],
    grads: Mapping[str, Matrix],
    step_lr: float,
    orthogonalize: Orthogonalizer,
) -> tuple[dict[str, ParamState], list[UpdateStats]]:
    muon_cfg = cfg.optimizer.muon()
    adamw_cfg = cfg.optimizer.adamw()
    no_decay = frozenset(cfg.optimizer.no_decay)
    trainable = {
        name: state
        for name, state in states.items()
        if state.kind not in cfg.train.frozen_kinds
    }

    match cfg.train.optimizer:
        case "hybrid":
            stepped, stats = hybrid_step(
                trainable,
                {name: grads[name] for name in trainable},
                muon_cfg,
                adamw_cfg,
                step_lr,
                no_decay=no_decay,
                orthogonalize=orthogonalize,
            )
        case "muon":
            stepped, stats = {}, {}
            for name, state in trainable.items():
                if state.kind is not ParamKind.MATRIX:
                    continue
                step_cfg = muon_cfg
                if name in no_decay:
                    step_cfg = step_cfg.model_copy(update={"weight_decay": 0.0})
                stepped[name], stats[name] = muon_step(
                    state, grads[name], step_cfg, step_lr, orthogonalize=orthogonalize
                )
        case "adamw":
            stepped, stats = {}, {}
            for name, state in trainable.items():
                step_cfg = adamw_cfg
                if name in no_decay:
                    step_cfg = step_cfg.model_copy(update={"weight_decay": 0.0})
                stepped[name], stats[name] = adamw_step(state, grads[name], step_cfg, step_lr)

    return {**states, **stepped}, [stats[name] for name in states if name in stats]


def train(
    cfg: RunConfig,
    *,
    model: ToyModel | None = None,
    dataset: Dataset | None = None,
    orthogonalize: Orthogonalizer = newton_schulz,
) -> TrainResult:
    """Run ``cfg.train.steps`` optimizer steps and log every one.

    Losses in the record for step t are measured before that step's update.
    """
    rng = np.random.default_rng(cfg.run.seed)
    if model is None:
        model = ToyModel.init(cfg.model.dims, cfg.model.nonlinearity, rng)
    if dataset is None:
        dataset = make_dataset(cfg.task_spec(), model.dims, model.nonlinearity)

    kinds = model.param_kinds()
    states = {name: ParamState.create(name, w, kinds[name]) for name, w in model.params.items()}
    log = MetricsLog()
    steps = cfg.train.steps
    batch_size = cfg.train.batch_size

    for step in range(steps):
        batch = dataset.train
        if batch_size is not None and batch_size < len(batch):
            batch = batch.subset(rng.choice(len(batch), size=batch_size, replace=False))
        loss, grads = model.forward_backward(batch, dataset.loss)
        _check_loss(step, loss)
        val_loss = model.loss(dataset.val, dataset.loss)

        step_lr = schedule_lr(
            cfg.train.schedule, cfg.optimizer.lr, step, steps, cfg.train.warmup_steps
        )
        states, stats = _optimizer_step(cfg, states, grads, step_lr, orthogonalize)
        model = model.with_params({name: s.weight for name, s in states.items()})
        log.append(step, loss, val_loss, step_lr, stats)

        if step % 100 == 0:
            logger.info("step %d/%d train=%.6g val=%.6g lr=%.3g", step, steps, loss, val_loss,
                        step_lr)

    return TrainResult(log=log, model=model, states=states)


# --- Experiments ---------------------------------------------------------------


@dataclass(frozen=True)
class ArmSummary:
    arm: str
    final_train_loss: float
    final_val_loss: float
    max_weight_rms: float
    weight_rms: dict[str, float]  # terminal RMS of each matrix param

    @classmethod
    def from_log(cls, arm: str, log: MetricsLog) -> Self:
        final = log.final
        return cls(
            arm=arm,
            final_train_loss=final.train_loss,
            final_val_loss=final.val_loss,
            max_weight_rms=log.max_weight_rms(),
            weight_rms={s.name: s.weight_rms for s in final.params if s.name.endswith(".weight")},
        )

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "final_train_loss": self.final_train_loss,
            "final_val_loss": self.final_val_loss,
            "max_weight_rms": self.max_weight_rms,
            "weight_rms": self.weight_rms,
        }


@dataclass(frozen=True)
class SeedOutcome:
    """Final validation loss of every arm for one seed."""

    seed: int
    final_val_loss: dict[str, float]

    @property
    def lowest_val_loss_arm(self) -> str:
        return min(self.final_val_loss, key=self.final_val_loss.__getitem__)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "final_val_loss": self.final_val_loss,
            "lowest_val_loss_arm": self.lowest_val_loss_arm,
        }


def val_loss_ordering(outcomes: Sequence[SeedOutcome]) -> dict:
    """Aggregate over seeds: mean final val loss per arm, arms ranked by it, and
    how many seeds each arm had the lowest val loss on."""
    arms = list(outcomes[0].final_val_loss)
    mean = {arm: float(np.mean([o.final_val_loss[arm] for o in outcomes])) for arm in arms}
    wins = {arm: sum(o.lowest_val_loss_arm == arm for o in outcomes) for arm in arms}
    return {
        "mean_final_val_loss": mean,
        "ranked": sorted(arms, key=mean.__getitem__),
        "lowest_counts": wins,
    }


@dataclass(frozen=True)
class ExperimentReport:
    logs: dict[str, MetricsLog]
    summaries: list[ArmSummary]
    seed_outcomes: list[SeedOutcome] = field(default_factory=list)

    def to_dict(self) -> dict:
        payload: dict = {"arms": [s.to_dict() for s in self.summaries]}
        if self.seed_outcomes:
            payload["seeds"] = [o.to_dict() for o in self.seed_outcomes]
            payload["val_loss_ordering"] = val_loss_ordering(self.seed_outcomes)
        return payload

    def write_logs(self, directory: str | PathLike[str], precision: int = 17) -> list[Path]:
        root = Path(directory)
        return [
            log.write_csv(root / f"metrics_{arm}.csv", precision) for arm, log in self.logs.items()
        ]


def _run_arms(arms: Mapping[str, RunConfig]) -> ExperimentReport:
    logs: dict[str, MetricsLog] = {}
    for arm, cfg in arms.items():
        logger.info("running arm %s", arm)
        logs[arm] = train(cfg).log
    return ExperimentReport(
        logs=logs, summaries=[ArmSummary.from_log(arm, log) for arm, log in logs.items()]
    )


def ablation_weight_decay(
    cfg: RunConfig, decays: Sequence[float] = (0.0, 0.1), seeds: int = ABLATION_SEEDS
) -> ExperimentReport:
    """Identical runs that differ only in weight decay, arms named ``wd=<λ>``.

    Every arm is repeated for ``seeds`` consecutive run seeds starting at
    ``cfg.run.seed``; logs and summaries are those of the first seed, and the
    report carries each seed's final validation losses.
    """
    if seeds < 1:
        raise ValueError(f"seeds must be at least 1, got {seeds}")

    def arms(base: RunConfig) -> dict[str, RunConfig]:
        return {
            f"wd={wd:g}": base.with_overrides({"optimizer": {"weight_decay": wd}})
            for wd in decays
        }

    first = _run_arms(arms(cfg))
    outcomes = [
        SeedOutcome(cfg.run.seed, {s.arm: s.final_val_loss for s in first.summaries})
    ]
    for seed in range(cfg.run.seed + 1, cfg.run.seed + seeds):
        report = _run_arms(arms(cfg.with_overrides({"run": {"seed": seed}})))
        outcomes.append(SeedOutcome(seed, {s.arm: s.final_val_loss for s in report.summaries}))
    return ExperimentReport(first.logs, first.summaries, outcomes)


def compare_optimizers(cfg: RunConfig) -> ExperimentReport:
    """Muon (hybrid with AdamW for vector params) against AdamW on the same task and seed."""
    return _run_arms(
        {
            "muon": cfg.with_overrides({"train": {"optimizer": "hybrid"}}),
            "adamw": cfg.with_overrides({"train": {"optimizer": "adamw"}}),
        }
    )


def rms_sweep(cfg: RunConfig, targets: Sequence[float] = RMS_SWEEP_TARGETS) -> ExperimentReport:
    """Adjusted-LR Muon at each update-RMS target, plus an AdamW reference arm."""
    arms = {
        f"rms={target:g}": cfg.with_overrides(
            {
                "optimizer": {"scaling_mode": "adjusted_lr", "rms_target": target},
                "train": {"optimizer": "hybrid"},
            }
        )
        for target in targets
    }
    arms["adamw"] = cfg.with_overrides({"train": {"optimizer": "adamw"}})
    return _run_arms(arms)


# --- Checkpoints ---------------------------------------------------------------
#
# A checkpoint is a directory holding one matrix CSV per parameter and a
# ``checkpoint.json`` manifest with the architecture.

MANIFEST = "checkpoint.json"


def save_checkpoint(model: ToyModel, directory: str | PathLike[str], precision: int = 17) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for name, weight in model.params.items():
        write_matrix_csv(root / f"{name}.csv", weight, precision)
    manifest = {
        "dims": list(model.dims),
        "nonlinearity": str(model.nonlinearity),
        "params": list(model.params),
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return root


def load_checkpoint(directory: str | PathLike[str]) -> dict[str, Matrix]:
    """Named matrices of a checkpoint; without a manifest, every ``*.csv`` in the directory."""
    root = Path(directory)
    if not root.is_dir():
        raise MatrixError(f"checkpoint directory {root} does not exist", path=str(root))
    manifest_path = root / MANIFEST
    if manifest_path.is_file():
        names = json.loads(manifest_path.read_text())["params"]
    else:
        names = sorted(p.stem for p in root.glob("*.csv"))
    return {name: read_matrix_csv(root / f"{name}.csv") for name in names}


def load_model(directory: str | PathLike[str]) -> ToyModel:
    root = Path(directory)
    manifest = json.loads((root / MANIFEST).read_text())
    return model_from_params(load_checkpoint(root), Nonlinearity(manifest["nonlinearity"]))
