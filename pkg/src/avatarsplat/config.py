"""One JSON document holding every tunable; unknown keys are errors at any depth."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .losses import LossWeights
from .pipelines import FitConfig, TrainConfig
from .renderer.raster import RenderSettings
from .synthdata import DatasetConfig


class ConfigError(ValueError):
    pass


_NESTED = {"weights": LossWeights}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k in _NESTED and cls is not LossWeights:
            v = _build(_NESTED[k], v, f"{where}.{k}")
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def _dump(obj):
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, LossWeights):
            v = v.to_dict()
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    render: RenderSettings = field(default_factory=RenderSettings)
    seed: int = 0
    threads: int | None = None

    _SECTIONS = {"dataset": DatasetConfig, "train": TrainConfig, "fit": FitConfig, "render": RenderSettings}

    def to_dict(self):
        d = {name: _dump(getattr(self, name)) for name in self._SECTIONS}
        d["seed"] = self.seed
        d["threads"] = self.threads
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - set(cls._SECTIONS) - {"seed", "threads"})
        if unknown:
            raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
        kw = {name: _build(sec, data[name], name) for name, sec in cls._SECTIONS.items() if name in data}
        for k in ("seed", "threads"):
            if k in data:
                kw[k] = data[k]
        if "seed" in kw and not isinstance(kw["seed"], int):
            raise ConfigError("seed must be an integer")
        if kw.get("threads") is not None and (not isinstance(kw["threads"], int) or kw["threads"] < 1):
            raise ConfigError("threads must be a positive integer or null")
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except ValueError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
