"""Router-side helpers for mixture-of-experts layers.

``gate_scaling_factor`` estimates by Monte Carlo the constant that rescales
top-k sigmoid gates so the mixed expert output keeps the RMS of a dense layer.
The bias updates adjust per-expert routing biases from the sign of each
expert's load violation.
"""

import logging
import math
from collections.abc import Callable
from typing import Self

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from muonlab.errors import ShapeMismatchError

logger = logging.getLogger(__name__)

TRIAL_CHUNK = 65_536

# (generator, (trials, experts)) -> router logits
LogitSampler = Callable[[np.random.Generator, tuple[int, int]], np.ndarray]


def gaussian_logits(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    return rng.standard_normal(shape)


class GateConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_experts: int = Field(ge=1)
    topk: int = Field(ge=1)
    iter_times: int = Field(ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _topk_fits(self) -> Self:
        if self.topk > self.num_experts:
            raise ValueError(f"topk={self.topk} exceeds num_experts={self.num_experts}")
        return self


def _chunk_factor_sum(
    rng: np.random.Generator, trials: int, cfg: GateConfig, sampler: LogitSampler
) -> float:
    scores = expit(sampler(rng, (trials, cfg.num_experts)))
    top = np.partition(scores, cfg.num_experts - cfg.topk, axis=1)[:, -cfg.topk :]
    p = top / top.sum(axis=1, keepdims=True)
    return float(np.sum(1.0 / np.sqrt(np.sum(p * p, axis=1))))


def gate_scaling_factor(cfg: GateConfig, sampler: LogitSampler | None = None) -> float:
    """Mean of 1/‖p‖₂ over ``iter_times`` trials, p the renormalized top-k gates.

    Trials run in fixed chunks, each with its own child of ``SeedSequence(seed)``,
    so the estimate depends only on the config and not on how chunks are scheduled.
    """
    sampler = sampler or gaussian_logits
    n_chunks = -(-cfg.iter_times // TRIAL_CHUNK)
    children = np.random.SeedSequence(cfg.seed).spawn(n_chunks)

    total = 0.0
    remaining = cfg.iter_times
    for child in children:
        trials = min(TRIAL_CHUNK, remaining)
        total += _chunk_factor_sum(np.random.default_rng(child), trials, cfg, sampler)
        remaining -= trials
    factor = total / cfg.iter_times
    logger.debug(
        "gate factor %.6f for %d experts, top-%d, %d trials",
        factor, cfg.num_experts, cfg.topk, cfg.iter_times,
    )
    return factor


# --- Aux-free load balancing ------------------------------------------------------


def _check_lengths(bias: np.ndarray, violation: np.ndarray, u: float) -> None:
    if bias.shape != violation.shape or bias.ndim != 1:
        raise ShapeMismatchError("auxfree bias update", bias.shape, violation.shape)
    if u < 0:
        raise ValueError(f"update rate must be non-negative, got {u}")


def centered_sign_counts(violation: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """n·sign(eᵢ) − Σⱼ sign(eⱼ): the centered signs scaled by n, exact in integers."""
    signs = np.sign(np.asarray(violation, dtype=np.float64)).astype(np.int64)
    return signs * signs.size - signs.sum()


def _exact_step(u: float, n: int) -> float:
    """u/n rounded to a mantissa short enough that step·count and every partial
    sum of the centered counts are exact in float64."""
    step = u / n
    if step == 0.0:
        return 0.0
    span = (2 * n).bit_length()
    bits = max(1, 53 - 2 * span)
    mantissa, exponent = math.frexp(step)
    return math.ldexp(round(mantissa * 2**bits), exponent - bits)


def auxfree_bias_delta(violation: npt.ArrayLike, u: float) -> np.ndarray:
    """Per-expert shift u·(sign(eᵢ) − mean(sign(e))) whose entries sum to exactly 0.0.

    Each entry is an integer centered count times one shared step, so the float
    sum equals the integer sum of the counts, which is zero.
    """
    e = np.asarray(violation, dtype=np.float64)
    if e.ndim != 1:
        raise ShapeMismatchError("auxfree bias update", e.shape, e.shape)
    if u < 0:
        raise ValueError(f"update rate must be non-negative, got {u}")
    counts = centered_sign_counts(e)
    return _exact_step(u, e.size) * counts.astype(np.float64)


def auxfree_bias_update(bias: npt.ArrayLike, violation: npt.ArrayLike, u: float) -> np.ndarray:
    """bᵢ ← bᵢ + u·(sign(eᵢ) − mean(sign(e))).

    Centering keeps the biases from drifting as a block; a uniform shift leaves
    the top-k selection unchanged.
    """
    b = np.asarray(bias, dtype=np.float64)
    e = np.asarray(violation, dtype=np.float64)
    _check_lengths(b, e, u)
    return b + auxfree_bias_delta(e, u)


def auxfree_bias_update_deepseek(
    bias: npt.ArrayLike, violation: npt.ArrayLike, u: float
) -> np.ndarray:
    """bᵢ ← bᵢ + u·sign(eᵢ), the uncentered rule."""
    b = np.asarray(bias, dtype=np.float64)
    e = np.asarray(violation, dtype=np.float64)
    _check_lengths(b, e, u)
    return b + u * np.sign(e)
