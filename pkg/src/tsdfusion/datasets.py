"""Dataset readers.

Depth sequences: a directory of 16-bit single-channel depth PNGs (raw
value / depth_scale = meters, 0 = invalid), an optional directory of
8-bit RGB PNGs, a trajectory text file with one ``timestamp tx ty tz qx
qy qz qw`` line per frame, and an intrinsics text file ``fx fy cx cy``.
Frames pair with trajectory entries by index; a count mismatch is fatal.

Point-cloud sequences: per-frame ``.pcb`` binaries (little-endian: uint32
count, uint8 has_rgb, count x 3 float32, then count x 3 uint8 if has_rgb)
or ASCII ``.xyz`` files (``x y z [r g b]`` per line), paired the same way.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import DatasetError
from .geometry import (DepthFrame, Intrinsics, PointCloudFrame, SensorPose,
                       quaternion_to_rotation)


@dataclass
class TrajectoryEntry:
    timestamp: float
    pose: SensorPose


def read_trajectory(path: str | Path) -> list[TrajectoryEntry]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"trajectory file not found: {path}")
    entries: list[TrajectoryEntry] = []
    last_t = -np.inf
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DatasetError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        t, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
        if t <= last_t:
            raise DatasetError(f"{path}:{lineno}: timestamps must be strictly increasing")
        last_t = t
        rot = quaternion_to_rotation(qx, qy, qz, qw)
        entries.append(TrajectoryEntry(t, SensorPose(rot, np.array([tx, ty, tz]))))
    if not entries:
        raise DatasetError(f"{path}: trajectory is empty")
    return entries


def read_intrinsics(path: str | Path) -> Intrinsics:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"intrinsics file not found: {path}")
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            parts = line.split()
            if len(parts) != 4:
                raise DatasetError(f"{path}: expected 'fx fy cx cy'")
            fx, fy, cx, cy = (float(p) for p in parts)
            return Intrinsics(fx, fy, cx, cy)
    raise DatasetError(f"{path}: intrinsics file is empty")


def _sorted_files(directory: Path, suffixes: tuple[str, ...]) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in suffixes and p.is_file())


def read_depth_sequence(dataset_dir: str | Path, trajectory_path: str | Path,
                        intrinsics_path: str | Path,
                        depth_scale: float = 5000.0) -> Iterator[DepthFrame]:
    """Stream DepthFrames paired with trajectory entries by index.

    Structural problems (missing directories, count mismatches) raise here;
    per-frame decode failures raise during iteration with the frame id.
    """
    dataset_dir = Path(dataset_dir)
    depth_dir = dataset_dir / "depth"
    rgb_dir = dataset_dir / "rgb"
    if not depth_dir.is_dir():
        raise DatasetError(f"depth directory not found: {depth_dir}")
    trajectory = read_trajectory(trajectory_path)
    intr = read_intrinsics(intrinsics_path)
    depth_files = _sorted_files(depth_dir, (".png",))
    if len(depth_files) != len(trajectory):
        raise DatasetError(
            f"{len(depth_files)} depth images but {len(trajectory)} trajectory entries")
    rgb_files = _sorted_files(rgb_dir, (".png",)) if rgb_dir.is_dir() else []
    if rgb_files and len(rgb_files) != len(depth_files):
        raise DatasetError(
            f"{len(rgb_files)} rgb images but {len(depth_files)} depth images")
    return _iter_depth_frames(depth_files, rgb_files, trajectory, intr, depth_scale)


def _iter_depth_frames(depth_files, rgb_files, trajectory, intr, depth_scale):
    for i, (dpath, entry) in enumerate(zip(depth_files, trajectory)):
        try:
            raw = np.asarray(Image.open(dpath), dtype=np.float64)
        except Exception as exc:
            raise DatasetError(f"frame {i}: cannot read depth {dpath}: {exc}") from exc
        if raw.ndim != 2:
            raise DatasetError(f"frame {i}: depth image {dpath} is not single-channel")
        depth = raw / depth_scale
        color = None
        if rgb_files:
            try:
                color = np.asarray(Image.open(rgb_files[i]).convert("RGB"),
                                   dtype=np.float64) / 255.0
            except Exception as exc:
                raise DatasetError(f"frame {i}: cannot read rgb {rgb_files[i]}: {exc}") from exc
        yield DepthFrame(depth=depth, intrinsics=intr, pose=entry.pose,
                         color=color, timestamp=entry.timestamp)


def write_pointcloud_file(path: str | Path, points: np.ndarray,
                          colors: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    with open(path, "wb") as f:
        f.write(struct.pack("<IB", len(points), 1 if colors is not None else 0))
        f.write(points.astype("<f4").tobytes())
        if colors is not None:
            rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
            f.write(rgb.reshape(-1, 3).tobytes())


def read_pointcloud_file(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if path.suffix.lower() == ".xyz":
        rows = []
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [float(p) for p in line.split()]
            if len(parts) not in (3, 6):
                raise DatasetError(f"{path}:{lineno}: expected 'x y z [r g b]'")
            rows.append(parts + [np.nan] * (6 - len(parts)))
        if not rows:
            return np.zeros((0, 3)), None
        data = np.asarray(rows, dtype=np.float64)
        colors = data[:, 3:6] if np.isfinite(data[:, 3:6]).all() else None
        return data[:, :3], colors
    blob = path.read_bytes()
    if len(blob) < 5:
        raise DatasetError(f"{path}: truncated point-cloud file")
    count, has_rgb = struct.unpack_from("<IB", blob, 0)
    need = 5 + count * 12 + (count * 3 if has_rgb else 0)
    if len(blob) < need:
        raise DatasetError(f"{path}: expected {need} bytes, found {len(blob)}")
    pts = np.frombuffer(blob, dtype="<f4", count=count * 3, offset=5)
    pts = pts.reshape(-1, 3).astype(np.float64)
    colors = None
    if has_rgb:
        rgb = np.frombuffer(blob, dtype=np.uint8, count=count * 3, offset=5 + count * 12)
        colors = rgb.reshape(-1, 3).astype(np.float64) / 255.0
    return pts, colors


def read_pointcloud_sequence(dataset_dir: str | Path, trajectory_path: str | Path
                             ) -> Iterator[PointCloudFrame]:
    """Stream PointCloudFrames paired with trajectory entries by index."""
    dataset_dir = Path(dataset_dir)
    cloud_dir = dataset_dir / "clouds"
    if not cloud_dir.is_dir():
        raise DatasetError(f"cloud directory not found: {cloud_dir}")
    trajectory = read_trajectory(trajectory_path)
    files = _sorted_files(cloud_dir, (".pcb", ".xyz"))
    if len(files) != len(trajectory):
        raise DatasetError(
            f"{len(files)} cloud files but {len(trajectory)} trajectory entries")
    return _iter_cloud_frames(files, trajectory)


def _iter_cloud_frames(files, trajectory):
    for i, (cpath, entry) in enumerate(zip(files, trajectory)):
        try:
            pts, colors = read_pointcloud_file(cpath)
        except DatasetError:
            raise
        except Exception as exc:
            raise DatasetError(f"frame {i}: cannot read cloud {cpath}: {exc}") from exc
        yield PointCloudFrame(points=pts, pose=entry.pose, colors=colors,
                              timestamp=entry.timestamp)
