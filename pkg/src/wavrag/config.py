"""Engine configuration: flat key/value file, environment overrides, CLI flags.

Precedence is flags > environment > config file > built-in defaults. The file
format is TOML-like ``key = value`` lines with ``#`` comments; environment
variables use the ``WAVRAG_`` prefix with the key upper-cased
(``WAVRAG_KB_DIR``, ``WAVRAG_ENCODER_DIM``, ...). Range values are written as
``lo,hi``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

__all__ = ["EngineConfig", "load_config", "DEFAULT_INSTRUCTION", "ENV_PREFIX"]

ENV_PREFIX = "WAVRAG_"

DEFAULT_INSTRUCTION = (
    "Given a question, retrieve the knowledge entries that best answer the question."
)


@dataclass
class EngineConfig:
    kb_dir: str | None = None
    store: str | None = None
    head: str | None = None
    encoder: str = "toy"  # "toy" or a remote base URL
    encoder_dim: int = 64
    encoder_seed: int = 0
    encoder_timeout_ms: int = 10_000
    generator: str | None = None  # remote base URL or "scripted:<json file>"
    generator_timeout_ms: int = 30_000
    k: int = 3
    tau: float = 0.05
    n_samples: int = 5
    temperature: float = 0.7
    instruction: str = DEFAULT_INSTRUCTION
    bind: str = "127.0.0.1:8756"
    echo_delay_ms: tuple[float, float] = (100.0, 500.0)
    echo_scale: tuple[float, float] = (0.0, 0.2)
    snr_db: tuple[float, float] = (-4.0, 14.0)
    noise_prob: float = 0.5
    gain_db: tuple[float, float] = (-4.0, 15.0)
    gain_prob: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")

    def bind_host_port(self) -> tuple[str, int]:
        host, _, port = self.bind.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"bind must be host:port, got {self.bind!r}")
        return host, int(port)


def _parse_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        values[key.strip()] = value
    return values


def _coerce(name: str, raw, target):
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        if target is tuple:
            lo, _, hi = raw.partition(",")
            return (float(lo), float(hi))
    except ValueError:
        raise ConfigError(f"config key {name}: cannot parse {raw!r}") from None
    return raw


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> EngineConfig:
    """Merge file, environment, and explicit overrides into an EngineConfig."""
    env = os.environ if env is None else env
    merged: dict[str, object] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        merged.update(_parse_file(config_path))

    field_types = {f.name: f.type for f in fields(EngineConfig)}
    for name in field_types:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            merged[name] = env[env_key]
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})

    unknown = set(merged) - set(field_types)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    kwargs: dict[str, object] = {}
    for name, value in merged.items():
        declared = field_types[name]
        if isinstance(declared, str):
            target = tuple if "tuple" in declared else int if "int" in declared else (
                float if "float" in declared else str
            )
        else:  # pragma: no cover - dataclass field types are strings here
            target = declared
        kwargs[name] = _coerce(name, value, target)
    return EngineConfig(**kwargs)


def require_paths(cfg: EngineConfig, *names: str) -> None:
    """Check that the named config paths are set and exist."""
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigError(f"config value {name!r} is required")
        if not Path(value).exists():
            raise ConfigError(f"{name} path does not exist: {value}")
