"""Run provenance: what produced a results directory.

``run_config.json`` records the validated config, the Newton-Schulz defaults
and the package version. Its ``digest`` is a short content hash of the config
so runs from a sweep can be matched back to their settings.
"""

import hashlib
import json
from os import PathLike
from pathlib import Path
from typing import Any

from muonlab import __version__
from muonlab.orthogonalizer import DEFAULT_NS

RUN_CONFIG_FILE = "run_config.json"


def config_digest(config: dict[str, Any]) -> str:
    """Return a short content hash of ``config`` (key order does not matter)."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.md5(canonical.encode()).hexdigest()[:12]


def version_string() -> str:
    ns = DEFAULT_NS
    return f"muonlab {__version__} (ns a={ns.a} b={ns.b} c={ns.c} steps={ns.steps})"


def write_run_config(
    directory: str | PathLike[str], command: str, config: dict[str, Any]
) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "ns_defaults": DEFAULT_NS.model_dump(),
        "config": config,
        "digest": config_digest(config),
    }
    path = root / RUN_CONFIG_FILE
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path
