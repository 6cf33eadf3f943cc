"""Pipeline configuration: defaults, validation, and key=value file parsing.

Every key in the config file has a CLI flag of the same name (see cli.py).
Files are plain text, one ``key = value`` per line, ``#`` starts a comment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# Voxels per block edge at the finest level; coarser levels halve this.
FINE_SIDE = 8
NUM_LEVELS = 2


@dataclass
class PipelineConfig:
    sensor_mode: str = "depth"            # depth | pointcloud
    nu_fine: float = 0.01                 # finest voxel edge [m]
    block_edge: float = 0.08              # block metric edge [m], = 8 * nu_fine
    tau: float = 0.04                     # truncation distance [m]
    n_hash: int = 131_101                 # top-level hash slots
    bucket_capacity: int = 10
    overflow_capacity: int = 7
    heap_capacity_fine: int = 16384       # level-0 block slots
    heap_capacity_coarse: int = 8192      # level-1 block slots
    sigma_threshold: float = 2.5e-5       # block mean-variance merge threshold [m^2]
    merge_cadence: int = 10               # run merges every K frames
    merge_min_eligible_fraction: float = 0.05
    merge_min_mean_weight: float = 3.0
    weight_cap: float = 0.0               # 0 disables the cap
    fill_threshold: float = 0.85          # streaming high-water mark
    low_water: float = 0.70               # streaming stop mark
    eviction_mode: str = "auto"           # auto | frustum | radius
    eviction_radius: float = 50.0         # [m], radius mode
    quadtree_threshold: float = 0.1
    quadtree_min_pixel: int = 1
    depth_scale: float = 5000.0           # raw depth units per meter
    collapse_epsilon_factor: float = 0.25 # vertex collapse eps = factor * nu_fine
    eval_f_threshold: float = 0.10        # F-score distance threshold [m]
    eval_samples_per_m2: float = 1e5
    eval_max_samples: int = 1_000_000
    deterministic: bool = True

    @classmethod
    def for_mode(cls, sensor_mode: str) -> "PipelineConfig":
        """Defaults matched to the sensor: 1 cm voxels for depth cameras,
        20 cm for sparse point clouds, with the F-score threshold to match."""
        if sensor_mode == "depth":
            return cls(sensor_mode="depth", nu_fine=0.01, block_edge=0.08,
                       tau=0.04, eval_f_threshold=0.10)
        if sensor_mode == "pointcloud":
            return cls(sensor_mode="pointcloud", nu_fine=0.20, block_edge=1.6,
                       tau=0.80, sigma_threshold=1e-2, eval_f_threshold=0.20)
        raise ConfigError(f"unknown sensor_mode {sensor_mode!r}")

    def validate(self) -> "PipelineConfig":
        if self.sensor_mode not in ("depth", "pointcloud"):
            raise ConfigError(f"sensor_mode must be depth or pointcloud, got {self.sensor_mode!r}")
        if not self.tau > self.nu_fine:
            raise ConfigError(f"tau ({self.tau}) must exceed nu_fine ({self.nu_fine})")
        if abs(self.block_edge - FINE_SIDE * self.nu_fine) > 1e-12 * max(1.0, self.block_edge):
            raise ConfigError(
                f"block_edge ({self.block_edge}) must equal {FINE_SIDE} * nu_fine ({FINE_SIDE * self.nu_fine})")
        for name in ("n_hash", "bucket_capacity", "overflow_capacity",
                     "heap_capacity_fine", "heap_capacity_coarse", "merge_cadence"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0.0 < self.low_water <= self.fill_threshold <= 1.0):
            raise ConfigError("need 0 < low_water <= fill_threshold <= 1")
        if self.eviction_mode not in ("auto", "frustum", "radius"):
            raise ConfigError(f"unknown eviction_mode {self.eviction_mode!r}")
        if self.quadtree_min_pixel < 1:
            raise ConfigError("quadtree_min_pixel must be >= 1")
        return self

    def resolved_eviction_mode(self) -> str:
        if self.eviction_mode != "auto":
            return self.eviction_mode
        return "frustum" if self.sensor_mode == "depth" else "radius"

    def heap_capacities(self) -> tuple[int, int]:
        return (self.heap_capacity_fine, self.heap_capacity_coarse)


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, text: str, target_type: type):
    if target_type is bool:
        low = text.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"{name}: cannot parse {text!r} as bool")
    try:
        return target_type(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} as {target_type.__name__}") from exc


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Read a key=value config file, apply overrides, validate."""
    fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
    types = {f.name: type(getattr(PipelineConfig(), f.name)) for f in dataclasses.fields(PipelineConfig)}
    values: dict = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, text = line.partition("=")
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, text.strip(), types[key])
    mode = values.get("sensor_mode", (overrides or {}).get("sensor_mode", "depth"))
    cfg = dataclasses.replace(PipelineConfig.for_mode(mode), **values)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg.validate()


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")
