"""Experiment configuration: TOML sections with validated defaults."""
from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .denoiser import WaveNetConfig
from .objective import AuxLossConfig
from .schedule import ScheduleKind, ScheduleParams


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    kind: str = "gmax"
    beta0: Optional[float] = None
    beta1: Optional[float] = None

    def params(self) -> ScheduleParams:
        default = ScheduleParams.default(self.kind)
        b0 = default.beta0 if self.beta0 is None else self.beta0
        b1 = default.beta1 if self.beta1 is None else self.beta1
        return ScheduleParams(ScheduleKind(self.kind), b0, b1)


@dataclass
class TrainSection:
    scale_factor: float = 12.0
    estimate_scale: bool = False
    t_min: float = 1e-5
    batch_size: int = 4
    lr: float = 5e-5
    window_len: int = 32768
    steps: int = 20000
    finetune_steps: int = 2000
    finetune_lr: Optional[float] = None
    dtype: str = "float32"
    log_every: int = 50
    checkpoint_every: int = 1000


@dataclass
class AuxSection:
    lambda_mag: float = 4e-6
    lambda_phase: float = 5e-6
    resolutions: Tuple[int, ...] = (512, 1024, 2048)
    a_weighting: bool = True

    def loss_config(self, sample_rate: int = 48000) -> AuxLossConfig:
        return AuxLossConfig(tuple(self.resolutions), self.lambda_mag, self.lambda_phase, self.a_weighting,
                             sample_rate)


@dataclass
class SamplerSection:
    kind: str = "ode1"
    steps: Optional[int] = 8
    preset: Optional[int] = None
    t_min: float = 1e-5


@dataclass
class ModelSection:
    channels: int = 16
    dilations: Tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    kernel: int = 3
    embed_dim: int = 64

    def wavenet(self) -> WaveNetConfig:
        return WaveNetConfig(self.channels, tuple(self.dilations), self.kernel, self.embed_dim)


@dataclass
class DataSection:
    target_rate: int = 48000
    min_input_rate: int = 6000
    max_input_rate: int = 48000
    families: Tuple[str, ...] = ("butterworth", "chebyshev1", "brickwall-fft")


@dataclass
class PathsSection:
    corpus: str = "corpus"
    degraded: str = "degraded"
    runs: str = "runs"


@dataclass
class Config:
    seed: int = 0
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    aux: AuxSection = field(default_factory=AuxSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> "Config":
        try:
            self.schedule.params()
            self.aux.loss_config()
            self.model.wavenet()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        t = self.train
        if not (t.scale_factor > 0):
            raise ConfigError("train.scale_factor must be positive")
        if not 0 < t.t_min < 1:
            raise ConfigError("train.t_min must lie in (0, 1)")
        if t.batch_size < 1 or t.window_len < 1 or t.steps < 0 or t.finetune_steps < 0:
            raise ConfigError("train sizes and step counts must be non-negative (batch and window positive)")
        if not t.lr > 0 or (t.finetune_lr is not None and not t.finetune_lr > 0):
            raise ConfigError("learning rates must be positive")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        if t.log_every < 1 or t.checkpoint_every < 1:
            raise ConfigError("train.log_every and train.checkpoint_every must be positive")
        s = self.sampler
        if s.kind not in ("ode1", "sde1", "sde2"):
            raise ConfigError(f"sampler.kind must be ode1, sde1 or sde2, got {s.kind!r}")
        if (s.steps is None) == (s.preset is None):
            raise ConfigError("set exactly one of sampler.steps and sampler.preset")
        d = self.data
        if not 0 < d.min_input_rate <= d.max_input_rate <= d.target_rate:
            raise ConfigError("need 0 < data.min_input_rate <= data.max_input_rate <= data.target_rate")
        bad = set(d.families) - {"butterworth", "chebyshev1", "brickwall-fft"}
        if bad or not d.families:
            raise ConfigError(f"unknown filter families: {sorted(bad)}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items() if v is not None}
            if isinstance(obj, tuple):
                return list(obj)
            return obj

        return clean(dataclasses.asdict(self))

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _coerce(value, tp, where: str):
    optional = typing.get_origin(tp) is typing.Union and type(None) in typing.get_args(tp)
    if optional:
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    if typing.get_origin(tp) is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        item = typing.get_args(tp)[0]
        return tuple(_coerce(v, item, f"{where}[]") for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if tp in (int, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{where} must be an integer")
            return int(value)
        return float(value)
    if not isinstance(value, tp):
        raise ConfigError(f"{where} must be a {tp.__name__}")
    return value


def _build(cls, values: Dict[str, Any], where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"[{where}] must be a table")
    hints = typing.get_type_hints(cls)
    unknown = set(values) - set(hints)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    return cls(**{k: _coerce(v, hints[k], f"{where}.{k}") for k, v in values.items()})


SECTIONS = {"schedule": ScheduleSection, "train": TrainSection, "aux": AuxSection, "sampler": SamplerSection,
            "model": ModelSection, "data": DataSection, "paths": PathsSection}


def from_dict(data: Dict[str, Any]) -> Config:
    unknown = set(data) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    parts = {name: _build(cls, data.get(name, {}), name) for name, cls in SECTIONS.items()}
    sampler = data.get("sampler", {})
    if "preset" in sampler and "steps" not in sampler:
        parts["sampler"].steps = None
    return Config(seed=seed, **parts).validate()


def loads(text: str) -> Config:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(data)


def load(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)
