"""Newton-Schulz orthogonalization.

X₀ = M/‖M‖_F, then ``steps`` applications of the quintic iteration
X ← aX + b(XXᵀ)X + c(XXᵀ)²X. Each singular value s of X₀ evolves
independently under f(s) = as + bs³ + cs⁵, which is what
``scalar_ns_trajectory`` tracks and what the tests use as an oracle.
"""

import math
from collections.abc import Callable
from typing import TypeAlias

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from muonlab.errors import NonFiniteError, NumericalOverflowError
from muonlab.matrix import Matrix, freeze, frobenius_norm, svd


class NsConfig(BaseModel):
    """Coefficients and step count of the quintic iteration."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    a: float = 3.4445
    b: float = -4.7750
    c: float = 2.0315
    steps: int = Field(default=5, ge=1)


DEFAULT_NS = NsConfig()

# (matrix, config) -> orthogonalized matrix of the same shape.
Orthogonalizer: TypeAlias = Callable[[Matrix, NsConfig], Matrix]


def newton_schulz(m: Matrix, cfg: NsConfig = DEFAULT_NS) -> Matrix:
    x = np.asarray(m, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NonFiniteError("newton_schulz input")
    norm = frobenius_norm(x)
    if norm == 0.0:
        return freeze(np.zeros_like(x))

    # Keep the Gram matrix on the smaller side.
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    x = x / norm
    for step in range(1, cfg.steps + 1):
        gram = x @ x.T
        x = cfg.a * x + (cfg.b * gram + cfg.c * (gram @ gram)) @ x
        if not np.isfinite(x).all():
            raise NumericalOverflowError(step)
    if transposed:
        x = x.T
    return freeze(np.ascontiguousarray(x))


def ns_polynomial(x: float, cfg: NsConfig = DEFAULT_NS) -> float:
    """f(x) = ax + bx³ + cx⁵ in Horner form."""
    x2 = x * x
    return x * (cfg.a + x2 * (cfg.b + cfg.c * x2))


def scalar_ns_trajectory(x0: float, cfg: NsConfig = DEFAULT_NS) -> list[float]:
    """(x₀, f(x₀), f(f(x₀)), …) with ``cfg.steps + 1`` entries."""
    if x0 < 0.0 or math.isnan(x0):
        raise ValueError(f"x0 must be non-negative, got {x0}")
    trajectory = [float(x0)]
    for _ in range(cfg.steps):
        trajectory.append(ns_polynomial(trajectory[-1], cfg))
    return trajectory


def ns_singular_value_map(x: float, cfg: NsConfig = DEFAULT_NS) -> float:
    """Where a normalized singular value ends up after the full iteration."""
    return scalar_ns_trajectory(x, cfg)[-1]


def polar_factor(m: Matrix, cfg: NsConfig = DEFAULT_NS) -> Matrix:
    """Exact orthogonalization U·Vᵀ over the nonzero singular directions.

    Reference oracle with the same signature as ``newton_schulz`` so it can be
    swapped into the optimizers; ``cfg`` is ignored.
    """
    result = svd(m)
    live = result.sigma > 0.0
    return freeze(result.u[:, live] @ result.vt[live])
