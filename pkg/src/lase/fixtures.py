"""Bundled reference traces."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .codec import Trace, read_trace


def macro_malware_path() -> Path:
    """Path to the bundled multi-stage macro-malware trace (38 records)."""
    return Path(str(resources.files("lase").joinpath("data/macro_malware.lase")))


def macro_malware() -> Trace:
    return read_trace(macro_malware_path())
