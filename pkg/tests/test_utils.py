"""Tests for run provenance (config digests, ``run_config.json``) and packaging metadata."""

import hashlib
import json
import tomllib
from pathlib import Path

from muonlab import __version__
from muonlab.utils import provenance

# --- config_digest ---------------------------------------------------------------


def test_digest_is_short_md5_of_canonical_json():
    config = {"b": 1, "a": [1, 2]}
    expected = hashlib.md5(b'{"a":[1,2],"b":1}').hexdigest()[:12]
    assert provenance.config_digest(config) == expected


def test_digest_ignores_key_order():
    first = {"run": {"seed": 1, "precision": 17}, "train": {"steps": 5}}
    second = {"train": {"steps": 5}, "run": {"precision": 17, "seed": 1}}
    assert provenance.config_digest(first) == provenance.config_digest(second)


def test_digest_changes_with_values():
    assert provenance.config_digest({"seed": 1}) != provenance.config_digest({"seed": 2})


# --- run_config.json -------------------------------------------------------------


def test_write_run_config(tmp_path):
    config = {"run": {"seed": 4}}
    path = provenance.write_run_config(tmp_path / "out", "ablate-wd", config)
    assert path.name == provenance.RUN_CONFIG_FILE
    record = json.loads(path.read_text())
    assert record["command"] == "ablate-wd"
    assert record["version"] == __version__
    assert record["ns_defaults"]["steps"] == 5
    assert record["config"] == config
    assert record["digest"] == provenance.config_digest(config)


def test_version_string_names_the_iteration():
    text = provenance.version_string()
    assert text.startswith(f"muonlab {__version__}")
    assert "a=3.4445" in text


# --- Packaging -------------------------------------------------------------------


def test_runtime_dependencies_are_the_numeric_stack():
    with open(Path(__file__).resolve().parents[1] / "pyproject.toml", "rb") as f:
        project = tomllib.load(f)
    runtime = {dep.split(">")[0] for dep in project["project"]["dependencies"]}
    assert runtime == {"numpy", "scipy", "pydantic"}
    dev = {dep.split(">")[0] for dep in project["dependency-groups"]["dev"]}
    assert {"pytest", "ruff"} <= dev
