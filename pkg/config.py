"""
config.py

Run configuration for the track command: plain `key = value` lines, `#` starts
a comment. Every TrackerConfig field is a key, plus the run settings below.

Precedence is defaults < config file < command-line flags. The effective
configuration is echoed as config_used.txt next to the outputs; feeding that
file back with --config reproduces the run.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Optional

from errors import ConfigInvalid, IoError
from evaluation import ALIGN_MODES
from tracker import DepthSource, TrackerConfig, TrackMode

ECHO_FILENAME = "config_used.txt"

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    dataset: Optional[str] = None
    output: Optional[str] = None
    mode: str = TrackMode.MBA.value
    force_zero_exposure: bool = False
    depth_source: str = DepthSource.GROUND_TRUTH.value
    depth_dir: Optional[str] = None
    depth_noise: float = 0.0
    align: str = "rigid"
    seed: int = 0

    def validate(self) -> "RunConfig":
        self.tracker.validate()
        if self.mode not in {m.value for m in TrackMode}:
            raise ConfigInvalid(f"mode must be one of {[m.value for m in TrackMode]}, got {self.mode!r}")
        if self.depth_source not in {d.value for d in DepthSource}:
            raise ConfigInvalid(f"depth_source must be one of {[d.value for d in DepthSource]}, "
                                f"got {self.depth_source!r}")
        if self.depth_source == DepthSource.PROVIDED.value and not self.depth_dir:
            raise ConfigInvalid("depth_source = provided needs depth_dir")
        if not self.depth_noise >= 0:
            raise ConfigInvalid(f"depth_noise must be >= 0, got {self.depth_noise}")
        if self.align not in ALIGN_MODES:
            raise ConfigInvalid(f"align must be one of {list(ALIGN_MODES)}, got {self.align!r}")
        if self.seed < 0:
            raise ConfigInvalid(f"seed must be >= 0, got {self.seed}")
        return self

    def to_text(self) -> str:
        lines = ["# effective configuration (defaults < file < flags)"]
        for key, value in self.items():
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def items(self) -> list[tuple[str, object]]:
        pairs = [(f.name, getattr(self.tracker, f.name)) for f in fields(TrackerConfig)]
        pairs += [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "tracker"]
        return pairs


def known_keys() -> dict[str, type]:
    keys = {f.name: f.type for f in fields(TrackerConfig)}
    keys.update({f.name: f.type for f in fields(RunConfig) if f.name != "tracker"})
    return keys


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _convert(key: str, kind, text: str):
    try:
        if kind is bool:
            word = text.lower()
            if word in TRUE_WORDS:
                return True
            if word in FALSE_WORDS:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigInvalid(f"{key}: cannot parse {text!r} as {kind.__name__}") from None
    if kind == Optional[str] and text.lower() in ("", "none"):
        return None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """key = value lines to a raw mapping; unknown or repeated keys are errors."""
    keys = known_keys()
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in keys:
            raise ConfigInvalid(f"{source}:{number}: unknown key {key!r}")
        if key in values:
            raise ConfigInvalid(f"{source}:{number}: {key!r} given twice")
        values[key] = value
    return values


def load_config_file(path: str) -> dict[str, str]:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read(), source=path)
    except OSError as e:
        raise IoError(f"cannot read config {path}: {e}") from e


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """--set key=value arguments."""
    values = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigInvalid(f"--set expects key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        if key not in known_keys():
            raise ConfigInvalid(f"--set: unknown key {key!r}")
        values[key] = value
    return values


def build_run_config(*layers: dict) -> RunConfig:
    """Apply raw layers over the defaults, later layers winning, and validate.

    Layer values may be strings (parsed) or already-typed values from flags.
    """
    keys = known_keys()
    tracker_names = {f.name for f in fields(TrackerConfig)}
    tracker_values, run_values = {}, {}
    for layer in layers:
        for key, value in layer.items():
            if key not in keys:
                raise ConfigInvalid(f"unknown key {key!r}")
            if value is None:
                continue
            if isinstance(value, str):
                value = _convert(key, keys[key], value)
            (tracker_values if key in tracker_names else run_values)[key] = value
    cfg = RunConfig(tracker=replace(TrackerConfig(), **tracker_values))
    return replace(cfg, **run_values).validate()


def save_config(path: str, cfg: RunConfig) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(cfg.to_text())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
