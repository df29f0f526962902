"""Run configuration: a YAML document with one section per pipeline stage.

Values are resolved as defaults, then the config file, then dotted-path
overrides such as ``train.steps=200``. A single top-level ``seed`` feeds
every stage that consumes randomness.
"""

from __future__ import annotations

import copy
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ace.datagen.gait import CommandProfile
from ace.errors import ValidationError
from ace.metrics import UFRThresholds
from ace.prior import PriorConfig
from ace.retarget.training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    character: str = "spot"
    n_frames: int = 5000
    segment_frames: int = 300
    fps: float = 30.0
    lin_vel: tuple[float, float] = (-1.5, 5.0)
    ang_vel: tuple[float, float] = (-1.0, 1.0)
    hold: tuple[float, float] = (1.0, 3.0)
    human_clips: int = 40
    human_frames: int = 150
    templates: tuple[str, ...] = ("walk", "wave", "reach", "push")

    def __post_init__(self):
        for name in ("lin_vel", "ang_vel", "hold", "templates"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.fps <= 0:
            raise ValidationError("must be positive", field="data.fps")
        if self.n_frames < 2 or self.human_frames < 2 or self.human_clips < 1:
            raise ValidationError("frame and clip counts are too small", field="data.n_frames")

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    def profile(self, seed: int) -> CommandProfile:
        return CommandProfile(self.lin_vel, self.ang_vel, self.hold, seed=seed)


@dataclass(frozen=True)
class MappingConfig:
    override: str | None = None  # "char_ee=human_ee,..." with indices or joint names


@dataclass(frozen=True)
class EvalConfig:
    sample_size: int = 64
    test_clips: int = 8
    penetration: float = 0.01
    contact_height: float = 0.02
    slide_speed: float = 0.3
    capsule_radius: float = 0.05

    def thresholds(self) -> UFRThresholds:
        return UFRThresholds(self.penetration, self.contact_height, self.slide_speed, self.capsule_radius)


def _coerce(cls, doc: dict, name: str) -> dict:
    """Check scalar field types; numeric strings (YAML reads ``1e-3`` as text) become floats."""
    hints = typing.get_type_hints(cls)
    out = dict(doc)
    for key, value in doc.items():
        kind = hints.get(key)
        if kind is float and isinstance(value, str):
            try:
                out[key] = float(value)
            except ValueError:
                raise ValidationError(f"expected a number, got {value!r}", field=f"{name}.{key}") from None
        elif kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ValidationError(f"expected a number, got {value!r}", field=f"{name}.{key}")
        elif kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ValidationError(f"expected an integer, got {value!r}", field=f"{name}.{key}")
    return out


def _section(cls, doc, name):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ValidationError("expected a mapping", field=name)
    unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
    if unknown:
        raise ValidationError(f"unknown keys {unknown}", field=name)
    doc = _coerce(cls, doc, name)
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ValidationError(str(exc), field=name) from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workdir: str = "runs/ace"
    data: DataConfig = field(default_factory=DataConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a mapping", field="<root>")
        unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValidationError(f"unknown sections {unknown}", field="<root>")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ValidationError("expected an integer", field="seed")
        # the run seed wins over per-stage seeds so one number controls everything
        prior = dict(doc.get("prior") or {}, seed=seed)
        train = dict(doc.get("train") or {}, seed=seed)
        return cls(
            seed=seed,
            workdir=str(doc.get("workdir", cls.workdir)),
            data=_section(DataConfig, doc.get("data"), "data"),
            prior=_wrap(PriorConfig, prior, "prior"),
            mapping=_section(MappingConfig, doc.get("mapping"), "mapping"),
            train=_wrap(TrainConfig, train, "train"),
            eval=_section(EvalConfig, doc.get("eval"), "eval"),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "workdir": self.workdir,
            "data": _plain(asdict(self.data)),
            "prior": self.prior.to_dict(),
            "mapping": asdict(self.mapping),
            "train": self.train.to_dict(),
            "eval": asdict(self.eval),
        }


def _wrap(cls, doc, name):
    try:
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls.from_dict({**doc, **_coerce(cls, known, name)})
    except ValidationError as exc:
        if exc.field and not exc.field.startswith(name):
            raise ValidationError(str(exc).split(": ", 1)[-1], field=f"{name}.{exc.field}") from None
        raise
    except TypeError as exc:
        raise ValidationError(str(exc), field=name) from None


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def apply_overrides(doc: dict, overrides) -> dict:
    """Return a copy of ``doc`` with each ``"a.b.c=value"`` applied; values are parsed as YAML."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"expected path=value, got {item!r}", field="overrides")
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ValidationError(f"empty path in {item!r}", field="overrides")
        node = doc
        for k in keys[:-1]:
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ValidationError(f"{k!r} is not a section", field=path)
            node = nxt
        try:
            node[keys[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse value {raw!r}: {exc}", field=path) from None
    return doc


def load_config(path: str | Path | None = None, overrides=()) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise ValidationError(f"no such file: {path}", field="config") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"invalid YAML: {exc}", field="config") from None
    return RunConfig.from_dict(apply_overrides(doc, overrides))
