"""Sensor poses, measurement frames, and pinhole camera helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError


@dataclass
class SensorPose:
    """World-from-sensor rigid transform: x_world = rotation @ x_sensor + translation."""

    rotation: np.ndarray   # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-6) or np.linalg.det(self.rotation) < 0:
            raise DatasetError("pose rotation is not a proper orthonormal matrix")

    @classmethod
    def identity(cls) -> "SensorPose":
        return cls(np.eye(3), np.zeros(3))

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def to_sensor(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.translation) @ self.rotation


def quaternion_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Unit quaternion (scalar-last) to rotation matrix; norm checked to 1e-3."""
    n = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if abs(n - 1.0) > 1e-3:
        raise DatasetError(f"quaternion norm {n:.6f} deviates from 1 by more than 1e-3")
    qx, qy, qz, qw = qx / n, qy / n, qz / n, qw / n
    return np.array([
        [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
        [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
        [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
    ])


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DatasetError("focal lengths must be positive")


@dataclass
class DepthFrame:
    """Depth image in meters; 0 or NaN marks invalid pixels."""

    depth: np.ndarray                 # (H, W) float
    intrinsics: Intrinsics
    pose: SensorPose
    color: np.ndarray | None = None   # (H, W, 3) in [0, 1]
    timestamp: float = 0.0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.ndim != 2:
            raise DatasetError("depth must be a 2-D array")
        if self.color is not None:
            self.color = np.asarray(self.color, dtype=np.float64)
            if self.color.shape[:2] != self.depth.shape:
                raise DatasetError("color and depth shapes disagree")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass
class PointCloudFrame:
    """Unordered 3-D points in the sensor frame."""

    points: np.ndarray                # (N, 3) meters
    pose: SensorPose
    colors: np.ndarray | None = None  # (N, 3) in [0, 1]
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise DatasetError("colors and points counts disagree")


def backproject(us: np.ndarray, vs: np.ndarray, depths: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Pixel coordinates + z-depth to camera-frame points."""
    x = (us - intr.cx) / intr.fx * depths
    y = (vs - intr.cy) / intr.fy * depths
    return np.stack([x, y, depths], axis=-1)


def project(pts_cam: np.ndarray, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-frame points to pixel coordinates; returns (u, v, z)."""
    pts_cam = np.asarray(pts_cam, dtype=np.float64)
    z = pts_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pts_cam[..., 0] / z + intr.cx
        v = intr.fy * pts_cam[..., 1] / z + intr.cy
    return u, v, z


def ray_norms(us: np.ndarray, vs: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Length of the unnormalized pixel ray ((u-cx)/fx, (v-cy)/fy, 1).

    Multiplying a z-depth by this converts it to distance along the ray,
    which is what the projective signed distance compares against.
    """
    x = (us - intr.cx) / intr.fx
    y = (vs - intr.cy) / intr.fy
    return np.sqrt(x * x + y * y + 1.0)
