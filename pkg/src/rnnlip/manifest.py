"""Run manifests: resolved config, seeds, input digests and tool version.

Every CLI output embeds a manifest so a result can be traced back to the
exact command, inputs and seeds that produced it.  Wall-clock timings are
reported on stderr instead of being embedded, keeping output files
byte-deterministic under fixed seeds; the certification and estimation
payloads carry their own solve/search seconds as part of their schemas.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

TOOL_VERSION = "0.1.0"


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def digest_of_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    input_digests: dict
    tool_version: str = TOOL_VERSION
    timings: dict | None = None

    def to_dict(self, include_timings: bool = False) -> dict:
        obj = {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "input_digests": self.input_digests,
            "tool_version": self.tool_version,
        }
        if include_timings and self.timings is not None:
            obj["timings"] = self.timings
        return obj


def make_manifest(command: str, config: dict, seeds: dict, inputs: dict[str, str | Path]) -> RunManifest:
    digests = {name: file_digest(path) for name, path in inputs.items()}
    return RunManifest(command=command, config=config, seeds=seeds, input_digests=digests)


def dump_json(obj: dict, path: str | Path) -> None:
    """Canonical JSON serialization: sorted keys, fixed indentation."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
