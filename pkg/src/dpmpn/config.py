"""Run configuration: ``key = value`` files, flag overrides, and the echo
written next to every run's outputs."""

from __future__ import annotations

import dataclasses
import difflib
from dataclasses import dataclass, fields
from pathlib import Path

from .expansion import Horizons
from .graph import MASK_MODES


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # defaults are the usual FB15K-237 settings
    batch_size: int = 80
    n_dims: int = 100
    n_dims_att: int = 50
    max_sampling_per_step: int = 10000
    max_attending_from_per_step: int = 20
    max_sampling_per_node: int = 200
    max_attending_to_per_step: int = 200
    n_steps_in_IGNN: int = 2
    n_steps_in_AGNN: int = 6
    learning_rate: float = 0.001
    grad_clipnorm: float = 1.0
    n_epochs: int = 1
    mask_mode: str = "cutoff_pairs"
    loss_eps: float = 1e-20
    seed: int = 0
    leaky_slope: float = 0.2
    init_scale: float = 0.05
    add_inverse: bool = True
    add_self_loops: bool = True
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    negatives_path: str = ""
    output_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("batch_size", "n_dims", "n_dims_att", "max_sampling_per_step",
                    "max_attending_from_per_step", "max_sampling_per_node",
                    "max_attending_to_per_step", "n_steps_in_AGNN", "n_epochs",
                    "grad_clipnorm", "loss_eps", "init_scale")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.n_steps_in_IGNN < 0:
            raise ConfigError("n_steps_in_IGNN must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")

    @property
    def horizons(self) -> Horizons:
        return Horizons(self.max_attending_from_per_step, self.max_sampling_per_node,
                        self.max_attending_to_per_step, self.n_steps_in_AGNN)

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(key: str, raw: str):
    if key not in FIELD_TYPES:
        close = difflib.get_close_matches(key, FIELD_TYPES, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"unknown config key {key!r}{hint}")
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r} (expected {kind})") from None


def parse_pairs(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        out[key] = _convert(key, val)
    return out


def parse_overrides(flags) -> dict:
    """``--key=value`` / ``key=value`` strings to typed values."""
    out = {}
    for flag in flags or ():
        body = flag[2:] if flag.startswith("--") else flag
        if "=" not in body:
            raise ConfigError(f"override {flag!r} must look like --key=value")
        key, val = body.split("=", 1)
        out[key.strip()] = _convert(key.strip(), val)
    return out


def parse_config(path=None, overrides=None, base: Config | None = None) -> Config:
    """Defaults, then the file, then the overrides."""
    values = dataclasses.asdict(base) if base is not None else {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"{p}: no such config file")
        values.update(parse_pairs(p.read_text(encoding="utf-8"), str(p)))
    if isinstance(overrides, dict):
        for k, v in overrides.items():
            values[k] = _convert(k, str(v)) if isinstance(v, str) else v
    else:
        values.update(parse_overrides(overrides))
    try:
        return Config(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def write_effective(cfg: Config, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective_config.txt"
    path.write_text(cfg.to_text(), encoding="utf-8")
    return path


def desk_config(**kw) -> Config:
    """Small settings that train on toy graphs in seconds."""
    base = dict(batch_size=10, n_dims=32, n_dims_att=16, max_attending_from_per_step=5,
                max_sampling_per_node=20, max_attending_to_per_step=20, n_steps_in_IGNN=2,
                n_steps_in_AGNN=4, learning_rate=0.001, n_epochs=5, mask_mode="remove_batch")
    base.update(kw)
    return Config(**base)
