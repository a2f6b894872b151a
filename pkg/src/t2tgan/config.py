"""Run configuration: INI-style ``key = value`` file with a fixed set of keys.

Example::

    [run]
    mode = federated
    out_dir = runs/demo
    train_data = data/train.ckpt

    [federation]
    rounds = 10

Missing keys take their defaults; unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .federation import FederationConfig
from .signals import DEFAULT_ABP_SCALE
from .training import AdamConfig, LossWeights

MODES = ("central", "federated")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    federation: FederationConfig = field(default_factory=FederationConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    abp_scale: tuple[float, float] = DEFAULT_ABP_SCALE
    mode: str = "federated"
    train_data: str | None = None
    test_data: str | None = None
    out_dir: str = "runs/default"
    epochs: int = 50
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        lo, hi = self.abp_scale
        if not lo < hi:
            raise ConfigError(f"abp_scale must satisfy min < max, got {self.abp_scale}")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, federation=replace(self.federation, seed=seed))


def _keys(cls) -> dict[str, type]:
    return {f.name: f.type for f in fields(cls)}


_RUN_KEYS = {
    "mode": str,
    "train_data": str,
    "test_data": str,
    "out_dir": str,
    "epochs": int,
    "workers": int,
    "abp_min": float,
    "abp_max": float,
}
_SECTIONS = {
    "federation": FederationConfig,
    "loss": LossWeights,
    "optimizer": AdamConfig,
}


def _convert(section: str, key: str, raw: str, kind) -> object:
    kind = {"int": int, "float": float, "str": str}.get(kind, kind)
    if kind is str and key.endswith("_data") and not raw:
        return None  # blank path means "not given"
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, default_section="__none__", inline_comment_prefixes=(";", "#")
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    parts: dict[str, dict] = {name: {} for name in _SECTIONS}
    run: dict[str, object] = {}
    for section in parser.sections():
        if section == "run":
            allowed = _RUN_KEYS
        elif section in _SECTIONS:
            allowed = {n: t for n, t in _keys(_SECTIONS[section]).items()}
        else:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            value = _convert(section, key, raw, allowed[key])
            (run if section == "run" else parts[section])[key] = value
    try:
        built = {name: cls(**parts[name]) for name, cls in _SECTIONS.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    lo = run.pop("abp_min", DEFAULT_ABP_SCALE[0])
    hi = run.pop("abp_max", DEFAULT_ABP_SCALE[1])
    return RunConfig(abp_scale=(lo, hi), **built, **run)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
