"""Pipeline configuration: one YAML/JSON file, every threshold a named key.

Any subset of keys may appear in the file; missing keys take the documented
defaults below. The config path can also come from the NISSLKIT_CONFIG
environment variable (the --config flag wins).
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError

ENV_CONFIG_VAR = "NISSLKIT_CONFIG"


@dataclass
class PipelineConfig:
    # region extraction (16 um/px sections)
    min_area: float = 400.0                 # px^2; drop smaller polygons
    min_area_perimeter_ratio: float = 2.0   # px; drop narrower polygons
    dfs_distance_threshold: float = 50.0    # px; proximity grouping radius
    crop_kinds: list[str] = field(default_factory=lambda: [
        "ExactBBox", "ExactBBoxMasked", "SquareBBox"])
    square_min_dims: list[int] = field(default_factory=lambda: [336, 224])
    multi_label_threshold: float = 0.80     # strict: fraction must exceed this
    region_resolution_um: float = 16.0

    # tiling (2 um/px sections)
    tile_size: int = 224
    tile_overlap_threshold: float = 0.40    # strict: fraction must exceed this
    tile_resolution_um: float = 2.0

    # splits
    val_fraction: float = 0.2
    same_section_ratio: float = 0.5

    # training
    epochs: int = 50
    batch_size: int = 64
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    weight_decay: float = 0.01
    embed_dim: int = 32
    text_dim: int = 256
    init_scale: float = 1.0e-3
    caption_mode: str = "single"            # "single" or "multi"
    input_dim: int = 224                    # pad/resize target before features

    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    """Load a config file (or the env-var path, or pure defaults)."""
    if path is None:
        env_path = os.environ.get(ENV_CONFIG_VAR)
        if env_path:
            path = env_path
    if path is None:
        return PipelineConfig()
    try:
        payload = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if payload is None:
        return PipelineConfig()
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**payload)
