"""SVD entropy and normalized singular spectra of weight matrices.

The entropy of a spectrum σ₁..σₙ is the Shannon entropy of pᵢ = σᵢ²/Σσⱼ²
divided by log n, so a flat spectrum scores 1 and a rank-1 matrix scores 0.
"""

import csv
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy import stats

from muonlab.errors import ConfigError, EntropyUndefinedError, MuonLabError
from muonlab.matrix import Matrix, format_decimal, singular_values

logger = logging.getLogger(__name__)

ZERO_SIGMA = 1e-300


def svd_entropy(sigma: npt.ArrayLike, n: int | None = None) -> float:
    s = np.asarray(sigma, dtype=np.float64).ravel()
    n = s.size if n is None else n
    if n < s.size:
        raise ValueError(f"n={n} is smaller than the {s.size} singular values supplied")
    if np.any(s < 0.0) or not np.isfinite(s).all():
        raise ValueError("singular values must be finite and non-negative")

    live = s[s >= ZERO_SIGMA]
    if live.size == 0:
        raise EntropyUndefinedError()
    if n == 1:
        return 0.0

    if np.all(live == live[0]):
        # k equal masses: the entropy is exactly log k.
        entropy = math.log(live.size)
    else:
        p = np.square(live / live.max())
        entropy = float(stats.entropy(p))  # normalizes p itself
    return entropy / math.log(n)


@dataclass(frozen=True)
class SpectrumReport:
    name: str
    group: str
    normalized: npt.NDArray[np.float64]  # descending, first entry 1
    entropy: float


@dataclass(frozen=True)
class SpectrumSummary:
    reports: dict[str, SpectrumReport]
    group_entropy: dict[str, float]  # macro-average over each group's params


def spectrum_report(weights: Mapping[str, Matrix], groups: Mapping[str, str]) -> SpectrumSummary:
    reports: dict[str, SpectrumReport] = {}
    for name, weight in weights.items():
        if name not in groups:
            raise ConfigError(f"parameter {name!r} is not assigned to a group", param=name)
        try:
            sigma = singular_values(weight)
            entropy = svd_entropy(sigma, n=sigma.size)
        except MuonLabError as exc:
            exc.details.setdefault("param", name)
            raise
        reports[name] = SpectrumReport(
            name=name, group=groups[name], normalized=sigma / sigma[0], entropy=entropy
        )

    by_group: dict[str, list[float]] = {}
    for report in reports.values():
        by_group.setdefault(report.group, []).append(report.entropy)
    group_entropy = {group: float(np.mean(values)) for group, values in by_group.items()}
    logger.info("spectra for %d params in %d groups", len(reports), len(group_entropy))
    return SpectrumSummary(reports=reports, group_entropy=group_entropy)


def write_spectra(
    summary: SpectrumSummary, directory: str | PathLike[str], precision: int = 17
) -> list[Path]:
    """Write ``entropy.csv`` and ``spectra/<param>.csv`` under ``directory``."""
    root = Path(directory)
    spectra_dir = root / "spectra"
    spectra_dir.mkdir(parents=True, exist_ok=True)

    written = [root / "entropy.csv"]
    with written[0].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "group", "entropy"])
        for report in summary.reports.values():
            writer.writerow([report.name, report.group, format_decimal(report.entropy, precision)])

    for report in summary.reports.values():
        path = spectra_dir / f"{report.name}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "normalized_sigma"])
            for i, value in enumerate(report.normalized):
                writer.writerow([i, format_decimal(value, precision)])
        written.append(path)
    return written
