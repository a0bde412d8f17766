"""Single-term power laws y = A·C^α fitted by least squares in log-log space."""

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from os import PathLike

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from muonlab.errors import FitError

logger = logging.getLogger(__name__)


class PowerLaw(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    coefficient: float = Field(gt=0.0)
    exponent: float

    def __str__(self) -> str:
        return f"{self.coefficient:g} * C^{self.exponent:g}"


# Loss versus training FLOPs.
MUON_LOSS_LAW = PowerLaw(coefficient=2.506, exponent=-0.052)
ADAMW_LOSS_LAW = PowerLaw(coefficient=2.608, exponent=-0.054)

# Compute-optimal AdamW settings versus training FLOPs.
PARAMS_LAW = PowerLaw(coefficient=0.0483359, exponent=0.5112684)
TOKENS_LAW = PowerLaw(coefficient=3.4480927, exponent=0.4887316)
LR_LAW = PowerLaw(coefficient=0.0127339, exponent=-0.0574752)
BATCH_TOKENS_LAW = PowerLaw(coefficient=0.0065202, exponent=0.4137915)

PUBLISHED_LAWS: dict[str, PowerLaw] = {
    "muon_loss": MUON_LOSS_LAW,
    "adamw_loss": ADAMW_LOSS_LAW,
    "params": PARAMS_LAW,
    "tokens": TOKENS_LAW,
    "lr": LR_LAW,
    "batch_tokens": BATCH_TOKENS_LAW,
}


@dataclass(frozen=True)
class FitResult:
    law: PowerLaw
    residual_rms: float  # RMS of log-space residuals
    r_squared: float
    n_points: int

    def to_dict(self) -> dict[str, float | int]:
        return {
            "coefficient": self.law.coefficient,
            "exponent": self.law.exponent,
            "residual_rms": self.residual_rms,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }


def fit_power_law(points: Sequence[tuple[float, float]]) -> FitResult:
    if len(points) < 2:
        raise FitError(f"need at least 2 points, got {len(points)}", n_points=len(points))
    data = np.asarray(points, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2:
        raise FitError("points must be (c, y) pairs")
    c, y = data[:, 0], data[:, 1]
    if not (np.isfinite(data).all() and (c > 0).all() and (y > 0).all()):
        raise FitError("power-law fits need finite, strictly positive c and y")
    if np.unique(c).size != c.size:
        raise FitError("c values must be distinct")

    log_c, log_y = np.log(c), np.log(y)
    fit = stats.linregress(log_c, log_y)
    residuals = log_y - (fit.intercept + fit.slope * log_c)
    law = PowerLaw(coefficient=math.exp(fit.intercept), exponent=fit.slope)
    logger.debug("fitted %s over %d points", law, len(points))
    return FitResult(
        law=law,
        residual_rms=float(np.sqrt(np.mean(np.square(residuals)))),
        r_squared=float(fit.rvalue**2),
        n_points=len(points),
    )


def evaluate(law: PowerLaw, c: float) -> float:
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    return law.coefficient * c**law.exponent


def compute_flops(params_n: float, tokens_d: float) -> float:
    """Training FLOPs C = 6ND."""
    if params_n <= 0 or tokens_d <= 0:
        raise ValueError("parameter and token counts must be positive")
    return 6.0 * params_n * tokens_d


def compute_optimal_allocation(c: float) -> dict[str, float]:
    """Model size, tokens, learning rate and batch size (tokens) for a FLOPs budget."""
    return {
        "params": evaluate(PARAMS_LAW, c),
        "tokens": evaluate(TOKENS_LAW, c),
        "lr": evaluate(LR_LAW, c),
        "batch_tokens": evaluate(BATCH_TOKENS_LAW, c),
    }


def compute_to_match(law: PowerLaw, reference: PowerLaw, c: float) -> tuple[float, float]:
    """FLOPs ``law`` needs to reach ``reference``'s value at budget ``c``, and that over ``c``."""
    if law.exponent == 0.0:
        raise FitError("a flat law cannot be inverted", law=str(law))
    target = evaluate(reference, c)
    needed = (target / law.coefficient) ** (1.0 / law.exponent)
    return needed, needed / c


def read_points_csv(path: str | PathLike[str]) -> list[tuple[float, float]]:
    """Read ``c,y`` rows; a non-numeric first row is taken as a header."""
    points: list[tuple[float, float]] = []
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                try:
                    c, y = (float(v) for v in row)
                except ValueError:
                    if lineno == 1:
                        continue
                    raise FitError(f"{path}:{lineno}: expected two numbers", line=lineno) from None
                points.append((c, y))
    except OSError as exc:
        raise FitError(f"cannot read {path}: {exc}", path=str(path)) from exc
    return points
