"""Synthetic scenes and fixture datasets.

Three analytic scenes ship in-repo so end-to-end runs need no external
data: an infinite plane, a unit sphere, and a box room with a cluster of
small spheres as the one detailed object. Depth frames are ray-cast in
closed form, so ground truth is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import write_pointcloud_file
from .errors import ConfigError
from .formats import write_point_cloud
from .geometry import DepthFrame, Intrinsics, SensorPose


@dataclass
class Scene:
    name: str
    spheres: list = field(default_factory=list)   # (center, radius, rgb)
    plane_z: float | None = None                  # horizontal plane z = const
    room: tuple | None = None                     # (lo, hi) interior box
    wall_rgb: tuple = (0.75, 0.73, 0.70)


def make_scene(name: str) -> Scene:
    if name == "plane":
        return Scene(name="plane", plane_z=0.0)
    if name == "sphere":
        return Scene(name="sphere", spheres=[(np.zeros(3), 1.0, (0.80, 0.35, 0.25))])
    if name == "room":
        lo = np.array([-0.8, -0.8, -0.8])
        hi = np.array([0.8, 0.8, 0.8])
        cluster = [
            (np.array([0.32, 0.18, -0.52]), 0.14, (0.85, 0.30, 0.25)),
            (np.array([0.14, 0.30, -0.60]), 0.10, (0.25, 0.60, 0.85)),
            (np.array([0.40, 0.38, -0.62]), 0.09, (0.30, 0.75, 0.35)),
            (np.array([0.24, 0.10, -0.68]), 0.07, (0.85, 0.70, 0.25)),
            (np.array([0.35, 0.27, -0.44]), 0.06, (0.70, 0.35, 0.75)),
        ]
        return Scene(name="room", spheres=cluster, room=(lo, hi))
    raise ConfigError(f"unknown synthetic scene {name!r}")


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> SensorPose:
    """Camera pose with +z forward, +x right, +y down (image convention)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-8:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    return SensorPose(rot, eye)


def fibonacci_directions(n: int) -> np.ndarray:
    """Roughly uniform directions on the sphere (golden-angle spiral)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def scene_trajectory(scene: Scene, frames: int) -> list[SensorPose]:
    if scene.name == "sphere":
        dirs = fibonacci_directions(frames)
        return [look_at(d * 1.6, np.zeros(3)) for d in dirs]
    if scene.name == "room":
        poses = []
        for i in range(frames):
            yaw = 2.0 * np.pi * i / frames
            pitch = 0.25 * np.sin(3.0 * yaw)
            target = np.array([np.cos(yaw) * np.cos(pitch),
                               np.sin(yaw) * np.cos(pitch),
                               np.sin(pitch)])
            poses.append(look_at(np.zeros(3), target))
        return poses
    if scene.name == "plane":
        poses = []
        for i in range(frames):
            eye = np.array([0.05 * np.cos(i), 0.05 * np.sin(i), 0.6])
            poses.append(look_at(eye, np.array([0.0, 0.0, 0.0])))
        return poses
    raise ConfigError(f"no trajectory for scene {scene.name!r}")


def _checker(points: np.ndarray, period: float = 0.2) -> np.ndarray:
    cells = np.floor(points / period).astype(np.int64).sum(axis=1)
    return 0.9 + 0.1 * (cells % 2)


def render_depth(scene: Scene, pose: SensorPose, intr: Intrinsics,
                 width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ray cast; returns (z-depth, rgb) images."""
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    d_cam = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy,
                      np.ones_like(us)], axis=-1).reshape(-1, 3)
    d_world = d_cam @ pose.rotation.T
    o = pose.translation
    n = len(d_world)
    t_best = np.full(n, np.inf)
    rgb = np.zeros((n, 3))

    if scene.plane_z is not None:
        dz = d_world[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (scene.plane_z - o[2]) / dz
        ok = np.isfinite(t) & (t > 1e-9) & (t < t_best)
        t_best[ok] = t[ok]
        hits = o + t[ok, None] * d_world[ok]
        rgb[ok] = np.array(scene.wall_rgb) * _checker(hits)[:, None]

    if scene.room is not None:
        lo, hi = scene.room
        with np.errstate(divide="ignore", invalid="ignore"):
            t_exit = np.full(n, np.inf)
            for a in range(3):
                bound = np.where(d_world[:, a] > 0, hi[a], lo[a])
                t = (bound - o[a]) / d_world[:, a]
                t = np.where(np.isfinite(t) & (t > 1e-9), t, np.inf)
                t_exit = np.minimum(t_exit, t)
        ok = np.isfinite(t_exit) & (t_exit < t_best)
        t_best[ok] = t_exit[ok]
        hits = o + t_exit[ok, None] * d_world[ok]
        rgb[ok] = np.array(scene.wall_rgb) * _checker(hits)[:, None]

    for center, radius, color in scene.spheres:
        oc = o - center
        a = np.einsum("ij,ij->i", d_world, d_world)
        b = 2.0 * d_world @ oc
        c = oc @ oc - radius * radius
        disc = b * b - 4 * a * c
        ok = disc > 0
        t = np.full(n, np.inf)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_near = (-b - sq) / (2 * a)
        t[ok & (t_near > 1e-9)] = t_near[ok & (t_near > 1e-9)]
        closer = t < t_best
        t_best[closer] = t[closer]
        hits = o + t[closer, None] * d_world[closer]
        shade = 0.7 + 0.3 * np.clip((hits - center) @ np.array([0.3, 0.3, 0.9]), 0, 1) / radius
        rgb[closer] = np.asarray(color) * shade[:, None]

    depth = np.where(np.isfinite(t_best), t_best, 0.0).reshape(height, width)
    return depth, np.clip(rgb, 0, 1).reshape(height, width, 3)


def default_intrinsics(scene_name: str, width: int, height: int) -> Intrinsics:
    f = {"sphere": 0.5, "room": 0.9, "plane": 1.0}.get(scene_name, 0.9) * width
    return Intrinsics(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)


def render_frames(scene_name: str, frames: int, width: int, height: int
                  ) -> list[DepthFrame]:
    """In-memory depth frames for a scene, ready for integration."""
    scene = make_scene(scene_name)
    intr = default_intrinsics(scene_name, width, height)
    out = []
    for i, pose in enumerate(scene_trajectory(scene, frames)):
        depth, rgb = render_depth(scene, pose, intr, width, height)
        out.append(DepthFrame(depth=depth, intrinsics=intr, pose=pose,
                              color=rgb, timestamp=0.1 * i))
    return out


def sphere_reference(n: int = 200_000, radius: float = 1.0) -> np.ndarray:
    return fibonacci_directions(n) * radius


def frames_reference(frames: list[DepthFrame], stride: int = 4,
                     max_points: int = 300_000, seed: int = 0) -> np.ndarray:
    """Observed-surface reference: back-projected valid pixels of all frames."""
    chunks = []
    for f in frames:
        vs, us = np.nonzero(f.valid_mask())
        vs, us = vs[::stride], us[::stride]
        z = f.depth[vs, us]
        x = (us - f.intrinsics.cx) / f.intrinsics.fx * z
        y = (vs - f.intrinsics.cy) / f.intrinsics.fy * z
        chunks.append(f.pose.to_world(np.stack([x, y, z], axis=1)))
    pts = np.concatenate(chunks)
    if len(pts) > max_points:
        rng = np.random.default_rng(seed)
        pts = pts[rng.choice(len(pts), size=max_points, replace=False)]
    return pts


def _rotation_to_quaternion(rot: np.ndarray) -> tuple[float, float, float, float]:
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        qw = 0.25 * s
        qx = (m[2, 1] - m[1, 2]) / s
        qy = (m[0, 2] - m[2, 0]) / s
        qz = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        qw = (m[2, 1] - m[1, 2]) / s
        qx = 0.25 * s
        qy = (m[0, 1] + m[1, 0]) / s
        qz = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        qw = (m[0, 2] - m[2, 0]) / s
        qx = (m[0, 1] + m[1, 0]) / s
        qy = 0.25 * s
        qz = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        qw = (m[1, 0] - m[0, 1]) / s
        qx = (m[0, 2] + m[2, 0]) / s
        qy = (m[1, 2] + m[2, 1]) / s
        qz = 0.25 * s
    return qx, qy, qz, qw


def generate_dataset(scene_name: str, out_dir: str | Path, frames: int = 30,
                     width: int = 96, height: int = 72, sensor_mode: str = "depth",
                     depth_scale: float = 5000.0, cloud_stride: int = 2) -> Path:
    """Write a fixture dataset (images or clouds, trajectory, intrinsics,
    reference point cloud) and return its directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_scene(scene_name)
    intr = default_intrinsics(scene_name, width, height)
    poses = scene_trajectory(scene, frames)

    (out / "intrinsics.txt").write_text(f"{intr.fx} {intr.fy} {intr.cx} {intr.cy}\n")
    traj_lines = []
    all_frames = []
    for i, pose in enumerate(poses):
        qx, qy, qz, qw = _rotation_to_quaternion(pose.rotation)
        tx, ty, tz = pose.translation
        traj_lines.append(f"{0.1 * i:.6f} {tx:.9f} {ty:.9f} {tz:.9f} "
                          f"{qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}")
        depth, rgb = render_depth(scene, pose, intr, width, height)
        all_frames.append(DepthFrame(depth=depth, intrinsics=intr, pose=pose, color=rgb))
        if sensor_mode == "depth":
            (out / "depth").mkdir(exist_ok=True)
            (out / "rgb").mkdir(exist_ok=True)
            raw = np.clip(np.round(depth * depth_scale), 0, 65535).astype(np.uint16)
            Image.fromarray(raw).save(out / "depth" / f"{i:06d}.png")
            Image.fromarray((rgb * 255).astype(np.uint8)).save(out / "rgb" / f"{i:06d}.png")
        else:
            (out / "clouds").mkdir(exist_ok=True)
            valid = all_frames[-1].valid_mask()
            vs, us = np.nonzero(valid)
            vs, us = vs[::cloud_stride], us[::cloud_stride]
            z = depth[vs, us]
            pts = np.stack([(us - intr.cx) / intr.fx * z,
                            (vs - intr.cy) / intr.fy * z, z], axis=1)
            write_pointcloud_file(out / "clouds" / f"{i:06d}.pcb", pts, rgb[vs, us])
    (out / "trajectory.txt").write_text("\n".join(traj_lines) + "\n")

    if scene_name == "sphere":
        reference = sphere_reference(150_000)
    else:
        reference = frames_reference(all_frames)
    write_point_cloud(reference, out / "reference.ply")
    return out
