"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import COLUMN_MAPS, DEFAULT_RUL_CAP, SUBSETS
from .federation import FederationConfig
from .ledger import DEFAULT_CAPACITY, DEFAULT_DIFFICULTY
from .model import TrainConfig

MINER_SCHEDULES = ("round_robin", "random")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    subset: str = "FD001"
    data_dir: Path = Path("data")
    k: int = 4
    seed: int = 0
    difficulty: int = DEFAULT_DIFFICULTY
    rsa_bits: int = 1024
    output_dir: Path = Path("runs/latest")
    train: TrainConfig = field(default_factory=TrainConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    rul_cap: int = DEFAULT_RUL_CAP
    column_map: str = "one_based"
    n_miners: int = 3
    miner_schedule: str = "round_robin"
    block_capacity: int = DEFAULT_CAPACITY
    mine_per_upload: bool = False
    key_dir: Path | None = None

    def __post_init__(self):
        if self.subset not in SUBSETS:
            raise ConfigError(f"subset must be one of {SUBSETS}")
        if self.column_map not in COLUMN_MAPS:
            raise ConfigError(f"column_map must be one of {tuple(COLUMN_MAPS)}")
        if self.miner_schedule not in MINER_SCHEDULES:
            raise ConfigError(f"miner_schedule must be one of {MINER_SCHEDULES}")
        if self.k < 1 or self.n_miners < 1 or self.difficulty < 0:
            raise ConfigError("k and n_miners must be >= 1, difficulty >= 0")
        if self.federation.k != self.k:
            object.__setattr__(self, "federation", dataclasses.replace(self.federation, k=self.k))

    def with_overrides(self, **kw) -> RunConfig:
        return from_mapping({**to_mapping(self), **kw})


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
_FED_KEYS = {f.name for f in dataclasses.fields(FederationConfig)} - {"k"}
_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"train", "federation"}


def _coerce(value, like):
    if isinstance(value, str):
        text = value.strip()
        if isinstance(like, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"not a boolean: {value!r}")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return math.inf if text.lower() in ("inf", "infinity") else float(text)
        if isinstance(like, Path) or like is None:
            return Path(text) if text else None
        return text
    return value


def from_mapping(values: dict) -> RunConfig:
    unknown = set(values) - _TRAIN_KEYS - _FED_KEYS - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    defaults = RunConfig()
    run_kw = {
        k: _coerce(v, getattr(defaults, k)) for k, v in values.items() if k in _RUN_KEYS
    }
    seed = run_kw.get("seed", defaults.seed)
    train_kw = {k: _coerce(v, getattr(defaults.train, k)) for k, v in values.items() if k in _TRAIN_KEYS}
    fed_kw = {k: _coerce(v, getattr(defaults.federation, k)) for k, v in values.items() if k in _FED_KEYS}
    try:
        return RunConfig(
            **run_kw,
            train=TrainConfig(seed=seed, **train_kw),
            federation=FederationConfig(k=run_kw.get("k", defaults.k), **fed_kw),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def to_mapping(cfg: RunConfig) -> dict:
    out = {k: getattr(cfg, k) for k in sorted(_RUN_KEYS)}
    out.update({k: getattr(cfg.train, k) for k in sorted(_TRAIN_KEYS)})
    out.update({k: getattr(cfg.federation, k) for k in sorted(_FED_KEYS)})
    return out


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    text = Path(path).read_text()
    parser.read_string("[run]\n" + text)
    return from_mapping(dict(parser["run"]))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in to_mapping(cfg).items():
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
