"""Binary file formats: PLY meshes and point clouds, and the map container.

PLY layout (binary little-endian 1.0): per vertex x, y, z, nx, ny, nz as
float32 and red, green, blue as uchar; faces are uchar-count lists of
int32 vertex_indices. Point-cloud PLY drops normals/faces; splat-seed PLY
adds a float32 scale property.

The map container stores a checksummed header (geometry parameters and
table sizes) followed by one record per block, live tier first and then
the archive, both in canonical (level, coord) order. The same block
record is the archive's serialization, so one codec is round-trip tested
for both uses.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .hashgrid import BlockPayload, HashTable, voxel_count
from .meshing import Mesh

MAP_MAGIC = b"TSDFMAP\x00"
MAP_VERSION = 1


# -- PLY ----------------------------------------------------------------------


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    path = Path(path)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.num_vertices}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property float nx\nproperty float ny\nproperty float nz\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        f"element face {mesh.num_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    vert = np.zeros(mesh.num_vertices,
                    dtype=[("xyz", "<f4", 3), ("n", "<f4", 3), ("rgb", "u1", 3)])
    vert["xyz"] = mesh.vertices.astype(np.float32)
    vert["n"] = mesh.normals.astype(np.float32)
    vert["rgb"] = np.clip(np.round(mesh.colors * 255.0), 0, 255).astype(np.uint8)
    face = np.zeros(mesh.num_triangles, dtype=[("k", "u1"), ("idx", "<i4", 3)])
    face["k"] = 3
    face["idx"] = mesh.triangles.astype(np.int32)
    try:
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(vert.tobytes())
            f.write(face.tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write mesh to {path}: {exc}") from exc


def read_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise FormatError(f"{path} is not a PLY file")
    header_lines = blob[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in header_lines:
        raise FormatError(f"{path}: only binary little-endian PLY is supported")
    counts: dict[str, int] = {}
    props: dict[str, list[str]] = {}
    current = None
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "element":
            current = parts[1]
            counts[current] = int(parts[2])
            props[current] = []
        elif parts[0] == "property" and current is not None:
            props[current].append(line)
    body = blob[end + len(b"end_header\n"):]
    nv = counts.get("vertex", 0)
    nf = counts.get("face", 0)
    vprops = props.get("vertex", [])
    has_normals = any("nx" in p for p in vprops)
    has_rgb = any("red" in p for p in vprops)
    has_scale = any(" scale" in p for p in vprops)
    fields = [("xyz", "<f4", 3)]
    if has_normals:
        fields.append(("n", "<f4", 3))
    if has_rgb:
        fields.append(("rgb", "u1", 3))
    if has_scale:
        fields.append(("scale", "<f4"))
    vdtype = np.dtype(fields)
    vert = np.frombuffer(body, dtype=vdtype, count=nv)
    offset = vdtype.itemsize * nv
    tris = np.zeros((nf, 3), dtype=np.int64)
    if nf:
        fdtype = np.dtype([("k", "u1"), ("idx", "<i4", 3)])
        face = np.frombuffer(body[offset:], dtype=fdtype, count=nf)
        if not (face["k"] == 3).all():
            raise FormatError(f"{path}: non-triangular face encountered")
        tris = face["idx"].astype(np.int64)
    normals = vert["n"].astype(np.float64) if has_normals else np.zeros((nv, 3))
    colors = vert["rgb"].astype(np.float64) / 255.0 if has_rgb else np.full((nv, 3), 0.5)
    return Mesh(vertices=vert["xyz"].astype(np.float64), normals=normals,
                colors=colors, triangles=tris)


def write_point_cloud(points: np.ndarray, path: str | Path,
                      colors: np.ndarray | None = None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    path = Path(path)
    rgb_lines = ("property uchar red\nproperty uchar green\nproperty uchar blue\n"
                 if colors is not None else "")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(points)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"{rgb_lines}"
        "end_header\n"
    )
    fields = [("xyz", "<f4", 3)]
    if colors is not None:
        fields.append(("rgb", "u1", 3))
    rec = np.zeros(len(points), dtype=np.dtype(fields))
    rec["xyz"] = points.astype(np.float32)
    if colors is not None:
        rec["rgb"] = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())


def read_points(path: str | Path) -> np.ndarray:
    """Points from a PLY (vertices) or whitespace-separated xyz text file."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return read_mesh(path).vertices
    try:
        data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read points from {path}: {exc}") from exc
    return data[:, :3]


def write_seeds(seeds, path: str | Path) -> None:
    """Splat seeds as a PLY point cloud with color and a scalar scale."""
    path = Path(path)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(seeds)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "property float scale\n"
        "end_header\n"
    )
    rec = np.zeros(len(seeds), dtype=np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3),
                                               ("scale", "<f4")]))
    for i, s in enumerate(seeds):
        rec["xyz"][i] = s.position
        rec["rgb"][i] = np.clip(np.round(np.asarray(s.color) * 255.0), 0, 255)
        rec["scale"][i] = s.scale
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(rec.tobytes())


# -- block records and the map container --------------------------------------

_RECORD_HEAD = struct.Struct("<BBqqq")  # archived flag, level, coord x y z


def pack_block_record(payload: BlockPayload, archived: bool = False) -> bytes:
    head = _RECORD_HEAD.pack(1 if archived else 0, payload.level, *payload.coord)
    return b"".join([
        head,
        payload.tsdf.astype("<f8").tobytes(),
        payload.weight.astype("<f8").tobytes(),
        payload.s2.astype("<f8").tobytes(),
        payload.color.astype("<f4").tobytes(),
    ])


def unpack_block_record(buf: bytes, offset: int) -> tuple[BlockPayload, bool, int]:
    archived, level, x, y, z = _RECORD_HEAD.unpack_from(buf, offset)
    offset += _RECORD_HEAD.size
    nvox = voxel_count(level)
    tsdf = np.frombuffer(buf, dtype="<f8", count=nvox, offset=offset).copy()
    offset += nvox * 8
    weight = np.frombuffer(buf, dtype="<f8", count=nvox, offset=offset).copy()
    offset += nvox * 8
    s2 = np.frombuffer(buf, dtype="<f8", count=nvox, offset=offset).copy()
    offset += nvox * 8
    color = np.frombuffer(buf, dtype="<f4", count=nvox * 3, offset=offset).copy().reshape(nvox, 3)
    offset += nvox * 12
    payload = BlockPayload(coord=(x, y, z), level=level, tsdf=tsdf,
                           weight=weight, s2=s2, color=color)
    return payload, bool(archived), offset


# magic, version, sensor_mode, nu_fine, block_edge, tau, n_hash,
# bucket_capacity, overflow_capacity, heap caps (2), live count, archived count
_MAP_HEADER = struct.Struct("<8sIIdddQIIQQQQ")

_SENSOR_CODE = {"depth": 0, "pointcloud": 1}
_SENSOR_NAME = {v: k for k, v in _SENSOR_CODE.items()}


def save_map(table: HashTable, path: str | Path, archive=None,
             sensor_mode: str = "depth", tau: float = 0.0) -> None:
    """Serialize the live table plus archive contents with a checksummed header."""
    path = Path(path)
    caps = [h.capacity for h in table.heaps]
    live_records = []
    n_live = 0
    for level in range(table.num_levels):
        coords, handles = table.live_blocks(level, sort=True)
        for handle in handles:
            live_records.append(pack_block_record(table.heaps[level].payload(int(handle))))
            n_live += 1
    archived_records = []
    if archive is not None:
        for coord in archive.coords():
            archived_records.append(pack_block_record(archive.peek(coord), archived=True))
    header = _MAP_HEADER.pack(
        MAP_MAGIC, MAP_VERSION, _SENSOR_CODE.get(sensor_mode, 0),
        table.voxel_size(0), table.block_edge, tau, table.n_hash,
        table.bucket_capacity, table.overflow_capacity,
        caps[0], caps[1] if len(caps) > 1 else 0,
        n_live, len(archived_records))
    crc = zlib.crc32(header)
    with open(path, "wb") as f:
        f.write(header)
        f.write(struct.pack("<I", crc))
        for rec in live_records:
            f.write(rec)
        for rec in archived_records:
            f.write(rec)


def load_map(path: str | Path):
    """Rebuild (table, archive, info) from a map file.

    A version mismatch or a header whose checksum does not match (any
    edited field, e.g. the voxel size) is a hard error.
    """
    from .streaming import ArchiveStore

    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read map {path}: {exc}") from exc
    if len(blob) < _MAP_HEADER.size + 4:
        raise FormatError(f"{path}: truncated map file")
    (magic, version, sensor_code, nu_fine, block_edge, tau, n_hash,
     bucket, overflow, cap0, cap1, n_live, n_archived) = _MAP_HEADER.unpack_from(blob, 0)
    if magic != MAP_MAGIC:
        raise FormatError(f"{path}: not a map file (bad magic)")
    if version != MAP_VERSION:
        raise FormatError(
            f"{path}: map version {version} is not supported (supported: {MAP_VERSION})")
    (crc_stored,) = struct.unpack_from("<I", blob, _MAP_HEADER.size)
    if zlib.crc32(blob[:_MAP_HEADER.size]) != crc_stored:
        raise FormatError(f"{path}: header checksum mismatch; file edited or corrupt")
    table = HashTable(n_hash=n_hash, bucket_capacity=bucket, overflow_capacity=overflow,
                      block_edge=block_edge, heap_capacities=(cap0, cap1))
    archive = ArchiveStore()
    offset = _MAP_HEADER.size + 4
    for _ in range(n_live + n_archived):
        payload, archived, offset = unpack_block_record(blob, offset)
        if archived:
            archive._records[payload.coord] = pack_block_record(payload, archived=True)
            archive.nbytes += len(archive._records[payload.coord])
        else:
            handle = table.insert(payload.coord, payload.level)
            table.heaps[payload.level].write_payload(handle, payload)
    info = {"sensor_mode": _SENSOR_NAME.get(sensor_code, "depth"),
            "nu_fine": nu_fine, "block_edge": block_edge, "tau": tau}
    return table, archive, info
