"""Plain key=value run configuration shared by all CLI commands.

Command-line flags mirror config keys and override the file. Every
command is a pure function of (config, input files), and all randomness
flows from the single ``seed`` key.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """A missing, malformed or out-of-range configuration value."""


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


class RunConfig:
    """Merged view of config-file values and CLI flag overrides."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)

    @classmethod
    def merged(cls, file_path, overrides: dict[str, str]) -> "RunConfig":
        values = parse_config_file(file_path) if file_path else {}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(values)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.values:
            raise ConfigError(f"missing required config key {key!r}")
        return self.values[key]

    def get_int(self, key: str, default: int | None = None) -> int:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required config key {key!r}")
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r} must be an integer, got {raw!r}") from exc

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required config key {key!r}")
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r} must be a number, got {raw!r}") from exc

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r} must be a boolean, got {raw!r}")

    def get_floats(self, key: str, default: tuple[float, ...] | None = None) -> tuple[float, ...]:
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing required config key {key!r}")
            return default
        try:
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"config key {key!r} must be a comma list of numbers") from exc

    def get_path(self, key: str, must_exist: bool = True) -> Path:
        path = Path(self.require(key))
        if must_exist and not path.exists():
            raise ConfigError(f"config key {key!r}: path does not exist: {path}")
        return path

    def get_out_path(self, key: str) -> Path:
        path = Path(self.require(key))
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        return path
