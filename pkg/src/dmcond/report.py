"""Run reports: every command emits one JSON artifact describing the run."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    metrics: dict = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    started_at: float = field(default_factory=time.time)
    wall_time_s: float = 0.0

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def finish(self) -> "RunReport":
        self.wall_time_s = time.time() - self.started_at
        return self

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "metrics": self.metrics,
            "artifacts": self.artifacts,
            "started_at": self.started_at,
            "wall_time_s": self.wall_time_s,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True, default=float))
