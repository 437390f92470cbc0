"""Model configuration and its flat key=value text form."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

SCAN_MODES = ("raster", "fiedler", "content_aware")
GAMMA_MODES = ("learnable", "frozen_one", "zero")
BLOCK_MODES = ("wfsab", "wfsab-wfsab", "wfsab-glssm", "glssm-glssm")
DIRECTIONS = ("backward", "forward")

# ablation-table row names, accepted verbatim in config files;
# `scan_mode` also accepts the scanning row names
SCAN_ROWS = {
    "Raster-based scanning": "raster",
    "Fielder-based scanning": "fiedler",
    "Content-Aware scanning": "content_aware",
}
ABLATION_ROWS = {
    "WFSAB": ("wfsab", "frozen_one"),
    "WFSAB-WFSAB": ("wfsab-wfsab", "frozen_one"),
    "WFSAB-GLSSM w/o gamma": ("wfsab-glssm", "frozen_one"),
    "WFSAB-GLSSM w/ gamma": ("wfsab-glssm", "learnable"),
    "WFSAB-GLSSM w/o γ": ("wfsab-glssm", "frozen_one"),
    "WFSAB-GLSSM w/ γ": ("wfsab-glssm", "learnable"),
    "GLSSM-GLSSM": ("glssm-glssm", "frozen_one"),
}


@dataclass
class ModelConfig:
    """Desk-scale model configuration.

    ``scale`` is fixed at 4 (two x2 pixel-shuffle stages). ``scan_mode``
    selects the ablation scanning strategy; ``block_mode``/``gamma_mode``
    select the refinement block composition. Propagation stages alternate
    direction starting from ``first_direction`` (default: stage 0 backward,
    stage 1 forward).
    """

    scale: int = 4
    channels: int = 64
    window: int = 8
    state_dim: int = 16
    scan_mode: str = "content_aware"
    stages: int = 2
    blocks_per_stage: int = 2
    gamma_mode: str = "learnable"
    seed: int = 0
    heads: int = 4
    block_mode: str = "wfsab-glssm"
    compass_factor: int = 4
    compass_top_k: int = 8
    compass_blend: float = 0.5
    patch: int = 8
    radius: int = 2
    first_direction: str = "backward"

    def __post_init__(self):
        if self.scale != 4:
            raise ValueError("only scale = 4 is supported (two x2 upsampling stages)")
        if self.scan_mode not in SCAN_MODES:
            raise ValueError(f"scan_mode must be one of {SCAN_MODES}, got {self.scan_mode!r}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {GAMMA_MODES}, got {self.gamma_mode!r}")
        if self.block_mode not in BLOCK_MODES:
            raise ValueError(f"block_mode must be one of {BLOCK_MODES}, got {self.block_mode!r}")
        if self.first_direction not in DIRECTIONS:
            raise ValueError(f"first_direction must be one of {DIRECTIONS}")
        if self.stages < 1 or self.blocks_per_stage < 1:
            raise ValueError("stages and blocks_per_stage must be >= 1")
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if min(self.window, self.state_dim, self.compass_factor, self.compass_top_k, self.patch) < 1:
            raise ValueError("window, state_dim, compass_factor, compass_top_k, patch must be >= 1")
        if not 0.0 <= self.compass_blend <= 1.0:
            raise ValueError("compass_blend must lie in [0, 1]")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")


_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def config_to_text(cfg: ModelConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(ModelConfig)]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ModelConfig:
    kwargs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "block_row":
            if value not in ABLATION_ROWS:
                raise ValueError(f"config line {lineno}: unknown ablation row {value!r}")
            kwargs["block_mode"], kwargs["gamma_mode"] = ABLATION_ROWS[value]
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key == "scan_mode":
            value = SCAN_ROWS.get(value, value)
        kind = _FIELD_TYPES[key]
        if kind in ("int", int):
            kwargs[key] = int(value)
        elif kind in ("float", float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return ModelConfig(**kwargs)


def load_config(path) -> ModelConfig:
    with open(path) as f:
        return config_from_text(f.read())


def save_config(cfg: ModelConfig, path) -> None:
    with open(path, "w") as f:
        f.write(config_to_text(cfg))


def config_hash(cfg: ModelConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]
