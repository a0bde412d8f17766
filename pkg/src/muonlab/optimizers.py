"""Single-device Muon and AdamW over named matrix parameters.

Muon (Nesterov form, decoupled weight decay):

    M ← μM + G
    O = orthogonalize(μM + G)          (or orthogonalize(M) without Nesterov)
    W ← W − η(scale(O) + λW)

``scale`` implements the update-RMS matching rules. With ``adjusted_lr`` the
orthogonalized update is multiplied by rms_target·√max(A, B), which cancels
the √(1/max(A, B)) RMS of a full-rank orthogonal factor and lands every
matrix shape on the same update RMS as AdamW.

Steps are pure: they return a new ParamState and never mutate their input.
"""

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Self

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from muonlab.errors import (
    MissingGradientError,
    NonFiniteError,
    ParamKindError,
    ShapeMismatchError,
)
from muonlab.matrix import Matrix, as_matrix, freeze, rms
from muonlab.orthogonalizer import DEFAULT_NS, NsConfig, Orthogonalizer, newton_schulz

logger = logging.getLogger(__name__)


class ParamKind(StrEnum):
    MATRIX = "matrix"  # routed to Muon
    VECTOR = "vector"  # routed to AdamW (gains, norms)


class ScalingVariant(StrEnum):
    BASELINE = "baseline"  # rms_target·√H
    UPDATE_NORM = "update_norm"  # rms_target / RMS(O)
    ADJUSTED_LR = "adjusted_lr"  # rms_target·√max(A, B)
    SHAPE_RATIO = "shape_ratio"  # √max(1, A/B), the original Muon width scaling
    NONE = "none"  # vanilla Muon


# --- Configs -------------------------------------------------------------------


class ScalingMode(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    variant: ScalingVariant = ScalingVariant.ADJUSTED_LR
    hidden: int | None = Field(default=None, ge=1)  # H for the baseline rule
    rms_target: float = Field(default=0.2, gt=0.0)

    @model_validator(mode="after")
    def _baseline_needs_hidden(self) -> Self:
        if self.variant is ScalingVariant.BASELINE and self.hidden is None:
            raise ValueError("baseline scaling requires the model hidden size")
        return self


class MuonConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    lr: float = Field(ge=0.0)
    momentum: float = Field(default=0.95, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.1, ge=0.0)
    ns: NsConfig = DEFAULT_NS
    nesterov: bool = True
    scaling: ScalingMode = ScalingMode()


class AdamWConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    lr: float = Field(ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.95, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.1, ge=0.0)


# --- State ---------------------------------------------------------------------


@dataclass(frozen=True)
class ParamState:
    """One trainable matrix and its optimizer buffers.

    Muon uses ``momentum``; AdamW uses ``exp_avg``/``exp_avg_sq`` and ``step``.
    Buffers an optimizer needs but finds missing start at zero.
    """

    name: str
    weight: Matrix
    kind: ParamKind = ParamKind.MATRIX
    momentum: Matrix | None = None
    exp_avg: Matrix | None = None
    exp_avg_sq: Matrix | None = None
    step: int = 0

    @classmethod
    def create(cls, name: str, weight, kind: ParamKind = ParamKind.MATRIX) -> Self:
        w = as_matrix(weight, where=name)
        zero = freeze(np.zeros_like(w))
        if kind is ParamKind.MATRIX:
            return cls(name=name, weight=w, kind=kind, momentum=zero)
        return cls(name=name, weight=w, kind=kind, exp_avg=zero, exp_avg_sq=zero)

    @property
    def optimizer_state_elements(self) -> int:
        buffers = (self.momentum, self.exp_avg, self.exp_avg_sq)
        return sum(b.size for b in buffers if b is not None)


@dataclass(frozen=True)
class UpdateStats:
    name: str
    update_rms: float  # RMS of the applied update, weight decay excluded
    weight_rms: float  # RMS of the weight after the step


def _checked_grad(state: ParamState, grad: Matrix) -> np.ndarray:
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != state.weight.shape:
        raise ShapeMismatchError(f"gradient of {state.name}", state.weight.shape, g.shape)
    if not np.isfinite(g).all():
        raise NonFiniteError(f"gradient of {state.name}")
    return g


# --- Element-wise pieces (shared with the sharded optimizers) -------------------


def momentum_direction(
    momentum: np.ndarray, grad: np.ndarray, cfg: MuonConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Return (new momentum, orthogonalization input)."""
    new_momentum = cfg.momentum * momentum + grad
    if cfg.nesterov:
        return new_momentum, cfg.momentum * new_momentum + grad
    return new_momentum, new_momentum


def decoupled_update(
    weight: np.ndarray, update: np.ndarray, step_lr: float, weight_decay: float
) -> np.ndarray:
    return weight - step_lr * (update + weight_decay * weight)


def adamw_moments(
    exp_avg: np.ndarray, exp_avg_sq: np.ndarray, grad: np.ndarray, step: int, cfg: AdamWConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (first moment, second moment, bias-corrected update) at 1-based ``step``."""
    m = cfg.beta1 * exp_avg + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * exp_avg_sq + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    return m, v, m_hat / (np.sqrt(v_hat) + cfg.epsilon)


# --- Muon ----------------------------------------------------------------------


def scale(o: Matrix, shape: tuple[int, int], mode: ScalingMode) -> Matrix:
    rows, cols = shape
    match mode.variant:
        case ScalingVariant.BASELINE:
            factor = mode.rms_target * math.sqrt(mode.hidden)
        case ScalingVariant.UPDATE_NORM:
            current = rms(o)
            if current == 0.0:
                return freeze(np.zeros_like(o))
            factor = mode.rms_target / current
        case ScalingVariant.ADJUSTED_LR:
            factor = mode.rms_target * math.sqrt(max(rows, cols))
        case ScalingVariant.SHAPE_RATIO:
            factor = math.sqrt(max(1.0, rows / cols))
        case ScalingVariant.NONE:
            factor = 1.0
    return freeze(factor * np.asarray(o))


def theoretical_update_rms(shape: tuple[int, int], rank: int | None = None) -> float:
    """RMS of a rank-r product of orthonormal factors: √(r/(A·B)).

    Full rank (the default) gives √(1/max(A, B)).
    """
    rows, cols = shape
    r = min(rows, cols) if rank is None else rank
    return math.sqrt(r / (rows * cols))


def muon_step(
    state: ParamState,
    grad: Matrix,
    cfg: MuonConfig,
    step_lr: float,
    *,
    orthogonalize: Orthogonalizer = newton_schulz,
) -> tuple[ParamState, UpdateStats]:
    if state.kind is not ParamKind.MATRIX:
        raise ParamKindError(state.name, state.kind, "Muon")
    g = _checked_grad(state, grad)
    momentum = state.momentum if state.momentum is not None else np.zeros_like(g)

    new_momentum, direction = momentum_direction(momentum, g, cfg)
    o = orthogonalize(direction, cfg.ns)
    update = scale(o, state.weight.shape, cfg.scaling)
    weight = decoupled_update(state.weight, update, step_lr, cfg.weight_decay)

    new_state = replace(
        state, weight=freeze(weight), momentum=freeze(new_momentum), step=state.step + 1
    )
    return new_state, UpdateStats(state.name, rms(update), rms(weight))


# --- AdamW ---------------------------------------------------------------------


def adamw_step(
    state: ParamState, grad: Matrix, cfg: AdamWConfig, step_lr: float
) -> tuple[ParamState, UpdateStats]:
    g = _checked_grad(state, grad)
    exp_avg = state.exp_avg if state.exp_avg is not None else np.zeros_like(g)
    exp_avg_sq = state.exp_avg_sq if state.exp_avg_sq is not None else np.zeros_like(g)
    step = state.step + 1

    m, v, update = adamw_moments(exp_avg, exp_avg_sq, g, step, cfg)
    weight = decoupled_update(state.weight, update, step_lr, cfg.weight_decay)

    new_state = replace(
        state, weight=freeze(weight), exp_avg=freeze(m), exp_avg_sq=freeze(v), step=step
    )
    return new_state, UpdateStats(state.name, rms(update), rms(weight))


# --- Hybrid --------------------------------------------------------------------


def hybrid_step(
    params: Mapping[str, ParamState],
    grads: Mapping[str, Matrix],
    muon_cfg: MuonConfig,
    adamw_cfg: AdamWConfig,
    step_lr: float,
    *,
    no_decay: frozenset[str] = frozenset(),
    orthogonalize: Orthogonalizer = newton_schulz,
) -> tuple[dict[str, ParamState], dict[str, UpdateStats]]:
    """Muon for matrix parameters, AdamW for the rest, one shared step learning rate.

    Parameters named in ``no_decay`` are stepped with weight decay switched off.
    """
    missing = [name for name in params if name not in grads]
    if missing:
        raise MissingGradientError(missing[0])

    updated: dict[str, ParamState] = {}
    stats: dict[str, UpdateStats] = {}
    for name, state in params.items():
        if state.kind is ParamKind.MATRIX:
            cfg = muon_cfg
            if name in no_decay:
                cfg = cfg.model_copy(update={"weight_decay": 0.0})
            updated[name], stats[name] = muon_step(
                state, grads[name], cfg, step_lr, orthogonalize=orthogonalize
            )
        else:
            cfg = adamw_cfg
            if name in no_decay:
                cfg = cfg.model_copy(update={"weight_decay": 0.0})
            updated[name], stats[name] = adamw_step(state, grads[name], cfg, step_lr)
    logger.debug("hybrid step over %d params at lr=%g", len(params), step_lr)
    return updated, stats
