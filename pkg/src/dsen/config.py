"""Flat human-readable run configuration.

One ``section.key = value`` line per setting, ``#`` comments allowed. Values
are typed from the dataclass fields: ints, floats, bools (true/false),
strings, comma lists for tuples (``edgeconv_dims = 32,64,128``) and
``name:value`` comma lists for mappings (``band_power = theta:1,beta:1.5``).
``dump_config`` writes every field, so a dumped file is a complete record of
a run's settings.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .data import GeneratorConfig
from .errors import ConfigError
from .model import ExtractorConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ExtractorConfig = field(default_factory=ExtractorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = ("generator", "model", "train")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, dict):
        return ",".join(f"{k}:{_format_value(v)}" for k, v in value.items())
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def _parse_typed(text: str, sample):
    """Parse ``text`` with the type of the default value ``sample``."""
    text = text.strip()
    if isinstance(sample, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(sample, int):
        return int(text)
    if isinstance(sample, float):
        return float(text)
    if isinstance(sample, tuple):
        elem = sample[0] if sample else 0
        return tuple(_parse_typed(part, elem) for part in text.split(","))
    if isinstance(sample, dict):
        out = {}
        for part in text.split(","):
            if ":" not in part:
                raise ConfigError(f"expected name:value entries, got {part!r}")
            key, val = part.split(":", 1)
            out[key.strip()] = float(val)
        return out
    return text


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``section.key = value`` overrides on top of ``base`` (defaults
    when omitted). Unknown sections or keys raise ``ConfigError``."""
    overrides: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    defaults = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} must be section.name")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        section_defaults = getattr(defaults, section)
        if name not in {f.name for f in fields(section_defaults)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            overrides[section][name] = _parse_typed(
                value, getattr(section_defaults, name)
            )
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc

    base = base or RunConfig()
    return RunConfig(
        generator=dataclasses.replace(base.generator, **overrides["generator"]),
        model=dataclasses.replace(base.model, **overrides["model"]),
        train=dataclasses.replace(base.train, **overrides["train"]),
    )


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base=base)
