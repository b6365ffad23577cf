"""Flat ``key=value`` configuration for the frontend and worker pool."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class ServingConfig:
    k: int = 2
    r: int = 1
    slo_ms: float = 25.0
    # None means slo_ms / 2
    group_timeout_ms: float | None = None
    eager_decode: bool = True
    workers: int = 4
    slowdown_p: float = 0.0
    slowdown_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not 0.0 <= self.slowdown_p <= 1.0:
            raise ValueError(f"slowdown_p must be in [0, 1], got {self.slowdown_p}")
        if self.slo_ms <= 0:
            raise ValueError(f"slo_ms must be positive, got {self.slo_ms}")

    @property
    def group_timeout(self):
        """Group sealing timeout in milliseconds."""
        return self.slo_ms / 2 if self.group_timeout_ms is None else self.group_timeout_ms

    @property
    def parity_workers(self):
        return math.ceil(self.workers / self.k) * self.r

    def dumps(self):
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def parse(cls, text, **overrides):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides):
        return cls.parse(Path(path).read_text(), **overrides)


def _coerce(key, value, type_name):
    type_name = str(type_name)
    try:
        if "bool" in type_name:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "int" in type_name:
            return int(value)
        if value.lower() in ("", "none"):
            return None
        return float(value)
    except ValueError:
        raise ValueError(f"invalid value {value!r} for {key}") from None
