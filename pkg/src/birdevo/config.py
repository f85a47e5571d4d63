"""Run configuration: ``key = value`` files with ``[section]`` headers.

Every key has a default, so an empty file (or the name ``default``) is a
valid configuration.  Unknown sections and keys are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evolution import EvolutionConfig
from .genome import LayerGene
from .spectrogram import SpectrogramConfig
from .synthesis import SplitSpec, SynthParams
from .training import TrainConfig


@dataclass
class CombineSettings:
    head: tuple[LayerGene, ...] = ()
    freeze_columns: bool = False


@dataclass
class Paths:
    data_dir: str = "data"
    run_dir: str = "runs"


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    synthesis: SynthParams = field(default_factory=SynthParams)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    combine: CombineSettings = field(default_factory=CombineSettings)
    paths: Paths = field(default_factory=Paths)

    def seeded(self) -> "RunConfig":
        """Push the master seed into every seeded section."""
        s = self.seed
        return dataclasses.replace(
            self,
            synthesis=dataclasses.replace(self.synthesis, seed=s),
            split=dataclasses.replace(self.split, seed=s),
            train=dataclasses.replace(self.train, seed=s),
            evolution=dataclasses.replace(self.evolution, seed=s),
        )


_SECTIONS = ("synthesis", "spectrogram", "split", "train", "evolution", "combine", "paths")
_RUN_KEYS = {"seed": int, "workers": int}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_head(text: str) -> tuple[LayerGene, ...]:
    return tuple(LayerGene.from_text(g) for g in text.split(";") if g.strip())


def _convert(section: str, obj, key: str, raw: str):
    if section == "combine" and key == "head":
        return _parse_head(raw)
    current = getattr(obj, key)
    if isinstance(current, bool):
        return _parse_bool(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw.strip()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".splitlines()[0]) from None
    cfg = RunConfig()
    updates = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "run":
            for key, raw in items.items():
                if key not in _RUN_KEYS:
                    raise ConfigError(f"{source}: unknown key [run] {key}")
                try:
                    updates[key] = _RUN_KEYS[key](raw)
                except ValueError:
                    raise ConfigError(f"{source}: [run] {key} = {raw!r} is not an integer") from None
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        obj = getattr(cfg, section)
        known = {f.name for f in dataclasses.fields(obj)} - {"seed"}
        values = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"{source}: unknown key [{section}] {key}")
            try:
                values[key] = _convert(section, obj, key, raw)
            except ValueError as exc:
                raise ConfigError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
        try:
            updates[section] = dataclasses.replace(obj, **values)
        except ValueError as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from None
    return dataclasses.replace(cfg, **updates)


def load_config(path: str | None) -> RunConfig:
    if path is None or path == "default":
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def dump_config(cfg: RunConfig) -> str:
    """Render a config that parses back to ``cfg`` (seeds live in [run])."""
    lines = ["[run]", f"seed = {cfg.seed}", f"workers = {cfg.workers}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        lines += ["", f"[{section}]"]
        for f in dataclasses.fields(obj):
            if f.name == "seed":
                continue
            v = getattr(obj, f.name)
            if section == "combine" and f.name == "head":
                text = "; ".join(g.to_text() for g in v)
            elif isinstance(v, tuple):
                text = ", ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                text = "true" if v else "false"
            else:
                text = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
