"""Pipeline configuration, stored as a flat ``key=value`` text file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["PipelineConfig", "parse_config", "load_config", "format_config"]

_BLOCK_TAGS = ("attention", "ssm")


@dataclass(frozen=True)
class PipelineConfig:
    """Hyperparameters of the two clustering groups, the filter and the classifier.

    Defaults: 256 first-level and 128
    second-level tokens, a 9-center spatial mask, K = 9 neighbors for the
    density estimate and 3 + 4 repeated aggregation blocks.
    """

    m1: int = 256
    m2: int = 128
    mask_size: int = 9
    dicf_k: int = 9
    repeats_1: int = 3
    repeats_2: int = 4
    channels: int = 8
    smoothing_radius: int = 1
    blocks: tuple = ("attention", "ssm", "attention", "ssm")
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.blocks, str):
            object.__setattr__(self, "blocks", _parse_blocks(self.blocks))
        else:
            object.__setattr__(self, "blocks", tuple(self.blocks))
        self.validate()

    def validate(self):
        for key in ("m1", "m2", "mask_size", "dicf_k", "repeats_1", "repeats_2", "channels"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.smoothing_radius < 0:
            raise ConfigError("smoothing_radius", "must be >= 0")
        if self.m2 > self.m1:
            raise ConfigError("m2", f"must be <= m1 ({self.m1})")
        if self.mask_size > self.m1:
            raise ConfigError("mask_size", f"must be <= m1 ({self.m1})")
        if self.dicf_k > self.m1 - 1:
            raise ConfigError("dicf_k", f"must be <= m1 - 1 ({self.m1 - 1})")
        if not self.blocks:
            raise ConfigError("blocks", "must list at least one block")
        bad = [b for b in self.blocks if b not in _BLOCK_TAGS]
        if bad:
            raise ConfigError("blocks", f"unknown block tags {bad}")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _parse_blocks(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def parse_config(text: str) -> PipelineConfig:
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            raise ConfigError(key, f"line {lineno} is not key=value")
        if key not in fields:
            raise ConfigError(key, "unknown key")
        if key == "blocks":
            values[key] = _parse_blocks(val)
            continue
        try:
            values[key] = int(val)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {val!r}") from None
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name}={','.join(v) if f.name == 'blocks' else v}")
    return "\n".join(lines) + "\n"
