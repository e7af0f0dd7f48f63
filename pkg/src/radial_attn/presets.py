"""Latent sequence geometry of the video models, loaded from ``presets.json``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .grid import GridShape

DEFAULT_BLOCK_SIZE = 128


@dataclass(frozen=True)
class Preset:
    name: str
    model: str
    video_frames: int
    height: int
    width: int
    temporal_compression: int
    spatial_compression: int
    patch: int
    block_size: int = DEFAULT_BLOCK_SIZE

    @property
    def latent_frames(self) -> int:
        return (self.video_frames - 1) // self.temporal_compression + 1

    @property
    def tokens_per_frame(self) -> int:
        step = self.spatial_compression * self.patch
        return (self.height // step) * (self.width // step)

    @property
    def shape(self) -> GridShape:
        return GridShape(self.latent_frames, self.tokens_per_frame)


@lru_cache(maxsize=None)
def load_presets() -> dict[str, Preset]:
    text = resources.files(__package__).joinpath("presets.json").read_text()
    raw = json.loads(text)["presets"]
    return {name: Preset(name=name, **fields) for name, fields in raw.items()}


def get_preset(name: str) -> Preset:
    presets = load_presets()
    try:
        return presets[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(presets))}") from None
