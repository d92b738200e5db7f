"""
Experiment configuration files.

Grammar (one construct per line)::

    # comment            blank lines and lines starting with '#' are ignored
    [section]            opens a section; one of model, observations, filter, run
    key = value          value is an int, a float, a bare word, or `none` where allowed

Keys may appear only in their own section and at most once. Unknown sections or
keys, missing required keys and values of the wrong type are rejected with the
offending line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

REQUIRED = object()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # [model]
    model: str = REQUIRED
    n_state: int = 40
    forcing: float = 8.0
    dt: float = 0.005
    # [observations]
    obs_stride: int = 2
    obs_interval: int = 20
    obs_error_std: float = 1.0
    cycles: int = REQUIRED
    # [filter]
    algorithm: str = REQUIRED
    n_ens: int = REQUIRED
    inflation: float = 1.0
    localization_radius: float | None = None
    hmc_step_size: float = 0.05
    hmc_steps: int = 10
    hmc_burn_in: int = 50
    # [run]
    seed: int = REQUIRED
    window_start: int = 100
    rank_stride: int = 13
    init_spread: float = 1.0
    spinup_steps: int = 5000
    divergence_threshold: float = 0.65
    record_every: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) is REQUIRED:
                raise ConfigError(f"missing required key {f.name!r} in [{SECTION_OF[f.name]}]")
        if self.model not in ("lorenz96", "lorenz63"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.algorithm not in ("enkf", "denkf", "etkf", "pf", "hmc"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        for name in ("n_state", "obs_stride", "obs_interval", "n_ens", "rank_stride", "record_every", "hmc_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("cycles", "window_start", "spinup_steps", "hmc_burn_in"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("dt", "obs_error_std", "inflation", "divergence_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.init_spread < 0 or self.hmc_step_size < 0:
            raise ConfigError("init_spread and hmc_step_size must be nonnegative")
        if self.localization_radius is not None and not self.localization_radius > 0:
            raise ConfigError("localization_radius must be positive or none")
        if self.cycles > 0 and self.window_start >= self.cycles:
            raise ConfigError("window_start must be smaller than cycles")
        if self.model == "lorenz63" and self.n_state != 3:
            object.__setattr__(self, "n_state", 3)
        if self.model == "lorenz96" and self.n_state < 4:
            raise ConfigError("lorenz96 needs n_state >= 4")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


SECTIONS = {
    "model": ("model", "n_state", "forcing", "dt"),
    "observations": ("obs_stride", "obs_interval", "obs_error_std", "cycles"),
    "filter": ("algorithm", "n_ens", "inflation", "localization_radius",
               "hmc_step_size", "hmc_steps", "hmc_burn_in"),
    "run": ("seed", "window_start", "rank_stride", "init_spread", "spinup_steps",
            "divergence_threshold", "record_every", "output_dir"),
}
SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _convert(key: str, raw: str, lineno: int):
    typ = _TYPES[key]
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "float | None":
            return None if raw.lower() == "none" else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} expects {typ}, got {raw!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside any section")
        if key not in SECTIONS[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    return ExperimentConfig(**values)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_fmt(getattr(cfg, k))}" for k in keys)
        lines.append("")
    return "\n".join(lines)


def shipped_config_names() -> list:
    root = resources.files("assimkit") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config_text(name_or_path: str) -> str:
    """Read a config from a file path, or by name from the configs shipped with the package."""
    p = Path(name_or_path)
    if p.is_file():
        return p.read_text()
    stem = p.name[:-4] if p.name.endswith(".cfg") else p.name
    res = resources.files("assimkit") / "configs" / f"{stem}.cfg"
    if res.is_file():
        return res.read_text()
    raise FileNotFoundError(f"no config file or shipped config named {name_or_path!r}")


def load_config(name_or_path: str) -> ExperimentConfig:
    return parse_config(load_config_text(name_or_path))
