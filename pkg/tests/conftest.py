"""Shared test fixtures.

Provides a seeded numpy generator, builders for matrices with a prescribed
spectrum, a small training config that runs in well under a second, and a CLI
runner that captures stdout/stderr and the exit status.
"""

import json
from collections.abc import Callable
from types import SimpleNamespace

import numpy as np
import pytest

from muonlab import cli
from muonlab.config import RunConfig
from muonlab.matrix import freeze, random_orthogonal

# --- Random matrices -------------------------------------------------------------


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def with_spectrum(rng) -> Callable[[tuple[int, int], np.ndarray], np.ndarray]:
    """Build U·diag(sigma)·Vᵀ of the given shape from Haar-random orthogonal factors."""

    def build(shape: tuple[int, int], sigma: np.ndarray) -> np.ndarray:
        rows, cols = shape
        u = random_orthogonal(rows, rng)[:, : len(sigma)]
        v = random_orthogonal(cols, rng)[:, : len(sigma)]
        return freeze((u * np.asarray(sigma)) @ v.T)

    return build


# --- Training --------------------------------------------------------------------


@pytest.fixture
def tiny_config() -> RunConfig:
    """A 6→12→4 tanh net on 80 samples, 20 full-batch steps."""
    return RunConfig.model_validate(
        {
            "run": {"seed": 3},
            "optimizer": {"lr": 0.02},
            "model": {"dims": [6, 12, 4]},
            "task": {"dataset_size": 80},
            "train": {"steps": 20},
        }
    )


# --- CLI -------------------------------------------------------------------------


@pytest.fixture
def run_cli(capsys, tmp_path):
    """Run ``muonlab`` with ``--output-dir`` pointed at a temp dir.

    Returns a namespace with ``code``, ``out``, ``err``, ``json`` (parsed stdout
    when it is JSON) and ``dir``.
    """

    def run(*argv: str) -> SimpleNamespace:
        code = cli.main(["--output-dir", str(tmp_path), *argv])
        captured = capsys.readouterr()
        try:
            payload = json.loads(captured.out) if captured.out else None
        except json.JSONDecodeError:
            payload = None
        return SimpleNamespace(
            code=code, out=captured.out, err=captured.err, json=payload, dir=tmp_path
        )

    return run
