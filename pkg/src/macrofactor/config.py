"""Run configuration shared by the pipeline and the command line."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._rng import DEFAULT_SEED
from .errors import ConfigError

SEED_ENV = "MACROFACTOR_SEED"


@dataclass
class RunConfig:
    catalog: list[str]
    data_dir: str
    output_dir: str | None = None
    instrument: str | None = None
    frequency: str = "Monthly"
    start: str | None = None
    end: str | None = None
    r: int | None = None
    pretreat: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)
    identification: dict = field(default_factory=lambda: {"method": "IV"})
    bootstrap: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    jobs: int | None = None
    verbosity: int = 0
    base_dir: str = "."

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def validate(self) -> "RunConfig":
        if self.frequency not in ("Monthly", "Quarterly"):
            raise ConfigError(f"frequency must be Monthly or Quarterly, got {self.frequency!r}", stage="config")
        for c in self.catalog:
            if not self.path(c).is_file():
                raise ConfigError(f"catalog file not found: {c}", stage="config")
        if not self.path(self.data_dir).is_dir():
            raise ConfigError(f"data directory not found: {self.data_dir}", stage="config")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer", stage="config")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d.pop("output_dir")
        return d


def resolve_seed(cli_seed: int | None, config_seed: int | None) -> int:
    """Flag beats environment beats config beats the documented default."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}", stage="config") from None
    return DEFAULT_SEED if config_seed is None else int(config_seed)


def load_config(path, *, seed: int | None = None, output_dir: str | None = None,
                jobs: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", stage="config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})", stage="config") from None
    paths = raw.pop("paths", {})
    catalog = paths.get("catalog", raw.pop("catalog", None))
    if catalog is None or "data_dir" not in paths:
        raise ConfigError("config needs paths.catalog and paths.data_dir", stage="config")
    known = set(RunConfig.__dataclass_fields__) - {"catalog", "data_dir", "instrument", "output_dir", "base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}", stage="config")
    cfg = RunConfig(
        catalog=[catalog] if isinstance(catalog, str) else list(catalog),
        data_dir=paths["data_dir"],
        instrument=paths.get("instrument"),
        output_dir=output_dir or paths.get("output_dir"),
        base_dir=str(path.parent),
        **raw,
    )
    cfg.seed = resolve_seed(seed, raw.get("seed"))
    if jobs is not None:
        cfg.jobs = jobs
    return cfg.validate()
