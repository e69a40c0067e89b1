"""Flat key-value run configuration with sections, defaults, and echoing.

Unknown sections or keys are rejected so a typo cannot silently fall back
to a default. Every command writes its fully resolved configuration into
the output directory, making runs reproducible from the echo plus seed.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from .datagen import CategorySpec, WorldConfig
from .errors import ConfigError
from .experiments import EvalConfig
from .training import VARIANTS, TrainConfig


@dataclass
class ModelSettings:
    embedding_dim: int = 8
    n_experts: int = 2
    expert_hidden: tuple[int, ...] = (64, 32)
    tower_hidden: tuple[int, ...] = (64, 32)
    ssn_compress: int = 32
    ssn_hidden: tuple[int, ...] = (64,)


@dataclass
class Paths:
    out_dir: str = "runs/default"
    train_log: str = ""
    test_log: str = ""
    gci_map: str = ""
    ground_truth: str = ""
    checkpoint: str = ""

    def resolved(self, out_dir: str | None = None) -> "Paths":
        base = Path(out_dir or self.out_dir)
        return Paths(
            out_dir=str(base),
            train_log=self.train_log or str(base / "train_log.csv"),
            test_log=self.test_log or str(base / "test_log.csv"),
            gci_map=self.gci_map or str(base / "gci_map.txt"),
            ground_truth=self.ground_truth or str(base / "ground_truth.txt"),
            checkpoint=self.checkpoint or str(base / "checkpoint.json"),
        )


@dataclass
class AblateSettings:
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] = (101, 102, 103)


@dataclass
class SweepSettings:
    lambda1_values: tuple[float, ...] = (0.1, 0.5, 2.0)
    lambda2_values: tuple[float, ...] = (0.1, 0.5, 2.0)
    lambda3_values: tuple[float, ...] = (0.1, 0.5, 2.0)

    def grid(self) -> list[tuple[float, float, float]]:
        """All-ones plus one-at-a-time deviations; (1,1,1) always present."""
        points = [(1.0, 1.0, 1.0)]
        for pos, values in enumerate((self.lambda1_values, self.lambda2_values, self.lambda3_values)):
            for v in values:
                point = [1.0, 1.0, 1.0]
                point[pos] = float(v)
                t = (point[0], point[1], point[2])
                if t not in points:
                    points.append(t)
        return points


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: Paths = field(default_factory=Paths)
    ablate: AblateSettings = field(default_factory=AblateSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    train_fraction: float = 0.8


def _parse_categories(text: str) -> tuple[CategorySpec, ...]:
    specs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            name, tau = part.split(":")
            specs.append(CategorySpec(name.strip(), float(tau)))
        except ValueError as exc:
            raise ConfigError(f"bad category spec {part!r}; expected name:tau") from exc
    return tuple(specs)


def _format_categories(categories: tuple[CategorySpec, ...]) -> str:
    return ",".join(f"{c.name}:{c.tau}" for c in categories)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def _parse_value(raw: str, template):
    if isinstance(template, bool):
        return _parse_bool(raw)
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, tuple):
        if template and isinstance(template[0], CategorySpec):
            return _parse_categories(raw)
        if template and isinstance(template[0], str):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if template and isinstance(template[0], float):
            return tuple(float(p) for p in raw.split(",") if p.strip())
        return tuple(int(p) for p in raw.split(",") if p.strip())
    return raw


def _apply_section(obj, section: str, items: dict[str, str]):
    known = {f.name: getattr(obj, f.name) for f in dc_fields(obj)}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        try:
            setattr(obj, key, _parse_value(raw, known[key]))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for [{section}] {key} = {raw!r}") from exc
    return obj


_SECTIONS = ("world", "train", "model", "eval", "paths", "ablate", "sweep", "data")


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    rc = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        items = dict(parser.items(section))
        if section == "world":
            # frozen dataclass: rebuild from parsed values
            current = {f.name: getattr(rc.world, f.name) for f in dc_fields(WorldConfig)}
            for key, raw in items.items():
                if key not in current:
                    raise ConfigError(f"unknown key {key!r} in section [world]")
                try:
                    current[key] = _parse_value(raw, current[key])
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad value for [world] {key} = {raw!r}") from exc
            rc.world = WorldConfig(**current)
        elif section == "train":
            _apply_section(rc.train, section, items)
        elif section == "model":
            _apply_section(rc.model, section, items)
        elif section == "eval":
            _apply_section(rc.eval, section, items)
        elif section == "paths":
            _apply_section(rc.paths, section, items)
        elif section == "ablate":
            _apply_section(rc.ablate, section, items)
            bad = [v for v in rc.ablate.variants if v not in VARIANTS]
            if bad:
                raise ConfigError(f"unknown variants {bad}; expected subset of {VARIANTS}")
        elif section == "sweep":
            _apply_section(rc.sweep, section, items)
        elif section == "data":
            for key, raw in items.items():
                if key != "train_fraction":
                    raise ConfigError(f"unknown key {key!r} in section [data]")
                rc.train_fraction = float(raw)
    rc.train.validate()
    rc.world.validate()
    if not 0.0 < rc.train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0,1), got {rc.train_fraction}")
    return rc


def _emit(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], CategorySpec):
            return _format_categories(value)
        return ",".join(str(v) for v in value)
    return str(value)


def echo_config(rc: RunConfig, path) -> None:
    """Write the fully resolved configuration (defaults included)."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, obj in (("world", rc.world), ("train", rc.train), ("model", rc.model),
                         ("eval", rc.eval), ("paths", rc.paths), ("ablate", rc.ablate),
                         ("sweep", rc.sweep)):
        parser[section] = {f.name: _emit(getattr(obj, f.name)) for f in dc_fields(obj)}
    parser["data"] = {"train_fraction": str(rc.train_fraction)}
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
