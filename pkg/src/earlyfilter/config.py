"""Plain-text ``key=value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .calibrate import CalibrationConfig
from .recognize import DEFAULT_WINDOW

DEFAULT_CALIB_FRACTION = 0.4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    filter_layer: str | None = None
    extract_layer: str | None = None
    batch_size: int = 4
    halt_fraction: float = 0.5
    consensus_threshold: float = 0.66
    tolerance: int = 3
    hard_offset: int | None = None
    seed: int = 0
    calib_count: int = 10
    calib_prefix: int | None = None  # defaults to 40% of the traverse
    window: int = DEFAULT_WINDOW
    mean: tuple[float, ...] | None = None

    def calibration(self) -> CalibrationConfig:
        if self.filter_layer is None or self.extract_layer is None:
            raise ConfigError("filter_layer and extract_layer are required")
        return CalibrationConfig(self.filter_layer, self.extract_layer, batch_size=self.batch_size,
                                 halt_fraction=self.halt_fraction,
                                 consensus_threshold=self.consensus_threshold, tolerance=self.tolerance,
                                 hard_offset=self.hard_offset, rng_seed=self.seed)

    def prefix(self, n_frames: int) -> int:
        """Frames held out for calibration at the start of each traverse."""
        if self.calib_prefix is not None:
            p = self.calib_prefix
        else:
            p = int(round(DEFAULT_CALIB_FRACTION * n_frames))
        if not 0 <= p < n_frames:
            raise ConfigError(f"calibration prefix {p} must leave evaluation frames out of {n_frames}")
        return p

    def update(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _convert(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    if name == "mean":
        return tuple(float(v) for v in raw.split(","))
    if raw.lower() in ("", "none") and "None" in str(types[name]):
        return None
    t = str(types[name])
    if t.startswith("int"):
        return int(raw)
    if t.startswith("float"):
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key = key.strip().replace("-", "_")
        try:
            out[key] = _convert(key, value.strip())
        except ValueError as e:
            raise ConfigError(f"line {n}: {e}") from None
    return out


def load_config(path) -> RunConfig:
    return RunConfig(**parse_config(Path(path).read_text()))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        lines.append(f"{f.name}={','.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"
