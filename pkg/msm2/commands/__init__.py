"""
CLI workflows. Each module exposes `NAME`, `add_arguments(parser)` and
`run(args, settings) -> int`.
"""

import uuid
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import structlog

from .. import __version__
from ..config import Settings
from ..errors import ConfigurationError
from ..schemas import RunManifest
from ..storage import fingerprint, write_manifest

logger = structlog.get_logger()


def new_run_id() -> str:
    """Short id tying together the log lines of one run"""
    return str(uuid.uuid4())[:8]


def resolve_state(token: str, labels: Sequence[str]) -> int:
    """1-indexed state from an integer or a label"""
    token = token.strip()
    if token.isdigit():
        state = int(token)
        if not 1 <= state <= len(labels):
            raise ConfigurationError(f"state {state} outside 1..{len(labels)}")
        return state
    try:
        return list(labels).index(token) + 1
    except ValueError:
        raise ConfigurationError(f"unknown state {token!r}; known: {', '.join(labels)}")


def resolve_pair(value: str, labels: Sequence[str]) -> Tuple[int, int]:
    parts = value.split(",")
    if len(parts) != 2:
        raise ConfigurationError(f"expected two comma-separated states, got {value!r}")
    return resolve_state(parts[0], labels), resolve_state(parts[1], labels)


def parse_floats(value: str, count: int, name: str) -> List[float]:
    parts = value.split(",")
    try:
        numbers = [float(p) for p in parts]
    except ValueError:
        numbers = []
    if len(numbers) != count:
        raise ConfigurationError(f"{name} expects {count} comma-separated numbers, got {value!r}")
    return numbers


def n_jobs(args: Any, settings: Settings) -> int:
    value = getattr(args, "n_jobs", None)
    value = settings.n_jobs if value is None else value
    if value == 0 or value < -1:
        raise ConfigurationError("--n-jobs must be a positive worker count or -1")
    return value


def finish(
    command: str,
    output: Path,
    inputs: Dict[str, str],
    configuration: Dict[str, Any],
    dataset: Optional[str] = None,
    generator: Optional[Dict[str, str]] = None,
    extra_outputs: Sequence[Path] = (),
) -> Path:
    """Write the run manifest next to every output; returns the main one."""
    manifest = RunManifest(
        command=command,
        tool_version=__version__,
        inputs=inputs,
        outputs=[str(output)] + [str(p) for p in extra_outputs],
        configuration=configuration,
        dataset_fingerprint=fingerprint(dataset) if dataset else None,
        generator=generator,
    )
    for path in extra_outputs:
        write_manifest(manifest, path)
    return write_manifest(manifest, output)
