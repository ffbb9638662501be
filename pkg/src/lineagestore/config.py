"""Runtime configuration: defaults, then an optional JSON/TOML file, then flags."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import LineageError
from .query import DEFAULT_MAX_ROWS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(LineageError):
    exit_code = 1


@dataclass
class Config:
    catalog: str | None = None
    codec: str = "plain"
    merge: bool = True
    max_rows: int = DEFAULT_MAX_ROWS
    reuse_m: int = 1
    log_level: str = "warning"
    timeout_s: float = 600.0

    def __post_init__(self):
        if self.codec not in ("plain", "deflate"):
            raise ConfigError(f"codec must be plain or deflate, got {self.codec!r}")
        try:
            self.max_rows, self.reuse_m = int(self.max_rows), int(self.reuse_m)
            self.timeout_s = float(self.timeout_s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad numeric config value: {exc}") from exc
        if self.max_rows < 1 or self.reuse_m < 1 or self.timeout_s <= 0:
            raise ConfigError("max_rows, reuse_m and timeout_s must be positive")
        if not isinstance(self.merge, bool):
            raise ConfigError("merge must be true or false")
        if self.catalog is None:
            self.catalog = os.environ.get("LINEAGESTORE_CATALOG")

    def to_json(self):
        return asdict(self)

    @classmethod
    def load(cls, path=None, **overrides) -> "Config":
        data = {}
        if path is not None:
            p = Path(path)
            try:
                text = p.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {p}: {exc}") from exc
            try:
                data = tomllib.loads(text) if p.suffix == ".toml" else json.loads(text)
            except (ValueError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"cannot parse config {p}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"config {p} must hold a table/object")
            data = data.get("lineagestore", data)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)
