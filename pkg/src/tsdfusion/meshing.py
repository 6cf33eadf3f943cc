"""Marching Cubes over the mixed-resolution grid.

Every voxel cuboid is one Marching Cubes cell; corner values are gathered
from the up-to-8 voxels whose cells meet the corner, blending across
resolution levels with weights that favor finer sources. Where a coarse
block touches a finer one, its outermost cells shrink by half a coarse
voxel along that axis so the two resolutions never triangulate the same
region twice; a vertex-collapse pass then tidies the seams.

All corner positions live on an integer lattice of half fine-voxel units
(16 per block edge). That makes positions computed by neighboring blocks
bit-identical, so shared vertices deduplicate exactly and extraction is
reproducible run to run. Extraction is read-only over the table; blocks
could be meshed in parallel, with vertex dedup and collapsing as a serial
post-pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hashgrid import HashTable, voxel_side
from .mc_tables import CORNER_OFFSETS, CORNER_PAIRS, EDGE_LOCATION, EDGE_TABLE, TRI_TABLE

HALF_UNITS = 16  # half fine-voxel lattice units per block edge
_CHUNK_BLOCKS = 256

# the 8 half-unit probe offsets reaching into each octant around a corner
_OCTANTS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                    dtype=np.int64)
_FACE_SLOTS = {(-1, 0, 0): 4, (1, 0, 0): 22, (0, -1, 0): 10,
               (0, 1, 0): 16, (0, 0, -1): 12, (0, 0, 1): 14}
_NEIGHBOR_OFFSETS = np.array([[ox, oy, oz] for ox in (-1, 0, 1)
                              for oy in (-1, 0, 1) for oz in (-1, 0, 1)], dtype=np.int64)


@dataclass
class Mesh:
    """Indexed triangle set with per-vertex position, normal, and color."""

    vertices: np.ndarray   # (V, 3) float64 meters
    normals: np.ndarray    # (V, 3) float64 unit vectors
    colors: np.ndarray     # (V, 3) float64 in [0, 1]
    triangles: np.ndarray  # (T, 3) int64

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)),
                   np.zeros((0, 3), dtype=np.int64))

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


@dataclass
class CornerSample:
    sdf: float
    valid: bool
    source_level: int


def effective_cell_extent(level: int, finer_faces, block_edge: float
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis cell corner planes (meters, block-local) after truncation.

    finer_faces holds 6 flags ordered (-x, +x, -y, +y, -z, +z); each flagged
    face of a coarse block pulls its outermost corner plane inward by half
    a voxel. The finest level is never truncated.
    """
    side = voxel_side(level)
    step = HALF_UNITS // side
    axes = []
    for axis in range(3):
        h = np.arange(side + 1, dtype=np.float64) * step
        if level > 0:
            if finer_faces[2 * axis]:
                h[0] += step / 2
            if finer_faces[2 * axis + 1]:
                h[-1] -= step / 2
        axes.append(h * (block_edge / HALF_UNITS))
    return axes[0], axes[1], axes[2]


# -- corner sampling ---------------------------------------------------------


def _gather(table: HashTable, bidx: np.ndarray, block_coords: np.ndarray,
            corner_h: np.ndarray, nb_handles: np.ndarray, nb_levels: np.ndarray,
            nb_found: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted corner gather for (M, 3) block-local half-unit positions.

    bidx maps each corner to its home block row in block_coords and the
    nb_* tables (the 27-neighborhood handles). Returns (values, valid,
    colors). Candidates accumulate in fixed octant order and deduplicate by
    a geometric key (level, global voxel coordinate), never by heap handle,
    so results only depend on map content, not heap layout.
    """
    m = len(corner_h)
    probes = corner_h[:, None, :] + _OCTANTS[None, :, :]        # (M, 8, 3)
    off = probes // HALF_UNITS                                   # in {-1, 0, 1}
    nb27 = ((off[..., 0] + 1) * 3 + (off[..., 1] + 1)) * 3 + (off[..., 2] + 1)
    rows = bidx[:, None]
    found = nb_found[rows, nb27]
    lvl = nb_levels[rows, nb27]
    hndl = nb_handles[rows, nb27]

    local = probes - off * HALF_UNITS
    csize = np.left_shift(np.int64(2), lvl)                      # 2 fine, 4 coarse
    side = HALF_UNITS // csize
    v3 = local // csize[..., None]
    vidx = (v3[..., 0] * side + v3[..., 1]) * side + v3[..., 2]

    gvox = (block_coords[bidx][:, None, :] + off) * side[..., None] + v3
    half = np.int64(1) << 19
    key = (lvl << np.int64(60)) | ((gvox[..., 0] + half) << np.int64(40)) \
        | ((gvox[..., 1] + half) << np.int64(20)) | (gvox[..., 2] + half)
    key = np.where(found, key, np.int64(-1))
    # octant order is geometric, so accumulating in place keeps results
    # independent of heap layout; duplicates (coarse voxels hit by several
    # probes) are zeroed pairwise
    dup = np.zeros_like(found)
    for j in range(1, 8):
        hit = np.zeros(m, dtype=bool)
        for i in range(j):
            hit |= key[:, j] == key[:, i]
        dup[:, j] = hit & found[:, j]

    sdf = np.zeros((m, 8))
    wobs = np.zeros((m, 8))
    col = np.zeros((m, 8, 3))
    for level in range(table.num_levels):
        heap = table.heaps[level]
        sel = found & (lvl == level)
        if not sel.any():
            continue
        flat = (hndl[sel] * heap.nvox + vidx[sel])
        sdf[sel] = heap.tsdf[flat]
        wobs[sel] = heap.weight[flat]
        col[sel] = heap.color[flat]

    center = off * HALF_UNITS + (v3 + 0.5) * csize[..., None]
    delta = np.abs(corner_h[:, None, :] - center)
    coeff = np.prod(np.maximum(0.0, 1.0 - delta / csize[..., None]), axis=2)
    w = coeff * (2.0 / csize) * (wobs > 0) * found * ~dup
    wsum = w.sum(axis=1)
    valid = wsum > 0
    denom = np.where(valid, wsum, 1.0)
    values = (w * sdf).sum(axis=1) / denom
    colors = (w[..., None] * col).sum(axis=1) / denom[:, None]
    values[~valid] = 0.0
    return values, valid, colors


def sample_corner(table: HashTable, corner_pos, home_level: int) -> CornerSample:
    """Blend the voxels meeting a lattice corner, favoring finer sources.

    Each contribution is weighted by its trilinear coefficient times the
    fine-to-source voxel-size ratio; voxels without observations carry no
    weight. corner_pos must lie on the half fine-voxel lattice.
    """
    unit = table.block_edge / HALF_UNITS
    h = np.asarray(np.round(np.asarray(corner_pos, dtype=np.float64) / unit), dtype=np.int64)
    best_level = home_level
    num, den = 0.0, 0.0
    seen: set[tuple[int, int]] = set()
    for oct_off in _OCTANTS:
        probe = h + oct_off
        bcoord = probe // HALF_UNITS
        entry = table.find(tuple(bcoord))
        if entry is None:
            continue
        handle, level = entry
        heap = table.heaps[level]
        csize = 2 << level
        local = probe - bcoord * HALF_UNITS
        v3 = local // csize
        vidx = int((v3[0] * heap.side + v3[1]) * heap.side + v3[2])
        ident = (level, handle * heap.nvox + vidx)
        if ident in seen:
            continue
        seen.add(ident)
        wobs = heap.weight[ident[1]]
        if wobs <= 0:
            continue
        center = bcoord * HALF_UNITS + (v3 + 0.5) * csize
        delta = np.abs(h - center)
        coeff = float(np.prod(np.maximum(0.0, 1.0 - delta / csize)))
        w = coeff * (2.0 / csize)
        if w > 0:
            num += w * heap.tsdf[ident[1]]
            den += w
            best_level = min(best_level, level)
    if den == 0.0:
        return CornerSample(sdf=0.0, valid=False, source_level=home_level)
    return CornerSample(sdf=num / den, valid=True, source_level=best_level)


# -- single-cell reference triangulation -------------------------------------


def cell_triangles(corners, corner_positions, iso: float = 0.0) -> list[np.ndarray]:
    """Triangulate one cell from its 8 corner samples.

    corners follow the canonical ordering documented in mc_tables; any
    invalid corner suppresses the cell. Returns a list of (3, 3) position
    arrays.
    """
    positions = np.asarray(corner_positions, dtype=np.float64).reshape(8, 3)
    sdf = np.array([c.sdf for c in corners], dtype=np.float64)
    if not all(c.valid for c in corners):
        return []
    case = 0
    for i in range(8):
        if sdf[i] < iso:
            case |= 1 << i
    if EDGE_TABLE[case] == 0:
        return []
    edge_vertex = {}
    for e in range(12):
        if EDGE_TABLE[case] & (1 << e):
            a, b = CORNER_PAIRS[e]
            t = (iso - sdf[a]) / (sdf[b] - sdf[a])
            edge_vertex[e] = positions[a] + t * (positions[b] - positions[a])
    out = []
    row = TRI_TABLE[case]
    for k in range(0, 16, 3):
        if row[k] < 0:
            break
        out.append(np.stack([edge_vertex[int(row[k + j])] for j in range(3)]))
    return out


# -- full extraction ----------------------------------------------------------


@dataclass
class _Sink:
    verts_h: list = field(default_factory=list)     # (Nv, 3) float64 global half-units
    normals: list = field(default_factory=list)
    colors: list = field(default_factory=list)
    tris: list = field(default_factory=list)
    base: int = 0


def _corner_axes(level: int, trunc_lo: np.ndarray, trunc_hi: np.ndarray) -> np.ndarray:
    """(B, 3, n+1) block-local corner planes in half-units, float64."""
    side = voxel_side(level)
    step = HALF_UNITS // side
    b = len(trunc_lo)
    base = np.arange(side + 1, dtype=np.float64) * step
    axes = np.broadcast_to(base, (b, 3, side + 1)).copy()
    if level > 0:
        axes[:, :, 0] += trunc_lo * (step / 2)
        axes[:, :, -1] -= trunc_hi * (step / 2)
    return axes


def _corner_gradients(values: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """(B, n+1, n+1, n+1, 3) central differences of the corner value grid,
    one-sided at the grid borders."""
    b, n1 = values.shape[0], values.shape[1]
    grads = np.zeros(values.shape + (3,))
    for axis in range(3):
        coords = axes[:, axis]  # (B, n+1)
        shape = [1, 1, 1]
        shape[axis] = n1
        c = coords.reshape([b] + shape)
        v = values
        g = np.zeros_like(v)

        def at(i):
            s = [slice(None)] * 4
            s[axis + 1] = i
            return tuple(s)

        for i in range(n1):
            if i == 0:
                num = v[at(1)] - v[at(0)]
                den = c[at(1)] - c[at(0)]
            elif i == n1 - 1:
                num = v[at(i)] - v[at(i - 1)]
                den = c[at(i)] - c[at(i - 1)]
            else:
                num = v[at(i + 1)] - v[at(i - 1)]
                den = c[at(i + 1)] - c[at(i - 1)]
            g[at(i)] = num / den
        sl_g = [slice(None)] * 5
        sl_g[4] = axis
        grads[tuple(sl_g)] = g
    return grads


def _emit_chunk(table: HashTable, level: int, coords: np.ndarray, handles: np.ndarray,
                iso: float, sink: _Sink) -> None:
    b = len(coords)
    side = voxel_side(level)
    n1 = side + 1

    nb_coords = coords[:, None, :] + _NEIGHBOR_OFFSETS[None]
    nb_handles, nb_levels, nb_found = table.find_batch(nb_coords.reshape(-1, 3))
    nb_handles = nb_handles.reshape(b, 27)
    nb_levels = nb_levels.reshape(b, 27)
    nb_found = nb_found.reshape(b, 27)

    trunc_lo = np.zeros((b, 3), dtype=bool)
    trunc_hi = np.zeros((b, 3), dtype=bool)
    if level > 0:
        for axis, (neg, pos) in enumerate([((-1, 0, 0), (1, 0, 0)),
                                           ((0, -1, 0), (0, 1, 0)),
                                           ((0, 0, -1), (0, 0, 1))]):
            n_idx = _FACE_SLOTS[neg]
            p_idx = _FACE_SLOTS[pos]
            trunc_lo[:, axis] = nb_found[:, n_idx] & (nb_levels[:, n_idx] < level)
            trunc_hi[:, axis] = nb_found[:, p_idx] & (nb_levels[:, p_idx] < level)

    axes = _corner_axes(level, trunc_lo, trunc_hi)  # (B, 3, n+1) half-units
    gx = axes[:, 0, :, None, None]
    gy = axes[:, 1, None, :, None]
    gz = axes[:, 2, None, None, :]
    corner_h = np.stack(np.broadcast_arrays(gx, gy, gz), axis=-1)  # (B, n1, n1, n1, 3)

    flat_h = np.asarray(np.round(corner_h.reshape(b, -1, 3)), dtype=np.int64)
    k = flat_h.shape[1]
    bidx = np.repeat(np.arange(b, dtype=np.int64), k)
    values, valid, colors = _gather(table, bidx, coords, flat_h.reshape(-1, 3),
                                    nb_handles, nb_levels, nb_found)
    values = values.reshape(b, n1, n1, n1)
    valid = valid.reshape(b, n1, n1, n1)
    colors = colors.reshape(b, n1, n1, n1, 3)
    grads = _corner_gradients(values, axes)

    below = values < iso

    def corner(arr, i):
        dx, dy, dz = CORNER_OFFSETS[i]
        return arr[:, dx:dx + side, dy:dy + side, dz:dz + side]

    case = np.zeros((b, side, side, side), dtype=np.int64)
    cell_valid = np.ones((b, side, side, side), dtype=bool)
    for i in range(8):
        case |= corner(below, i).astype(np.int64) << i
        cell_valid &= corner(valid, i)
    case[~cell_valid] = 0
    if not (EDGE_TABLE[case] != 0).any():
        return

    # one vertex per cut grid edge, canonical low-to-high orientation
    world_h = coords.astype(np.float64) * HALF_UNITS  # (B, 3)
    edge_ids = []
    n_new = 0
    for axis in range(3):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis + 1] = slice(0, -1)
        hi[axis + 1] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        v0, v1 = values[lo], values[hi]
        cut = (below[lo] != below[hi]) & valid[lo] & valid[hi]
        ids = np.full(v0.shape, -1, dtype=np.int64)
        n_cut = int(cut.sum())
        ids[cut] = sink.base + n_new + np.arange(n_cut)
        n_new += n_cut
        edge_ids.append(ids)
        if n_cut == 0:
            continue
        t = ((iso - v0[cut]) / (v1[cut] - v0[cut]))[:, None]
        p0 = corner_h[lo][cut]
        p1 = corner_h[hi][cut]
        bsel = np.broadcast_to(np.arange(b)[:, None, None, None], cut.shape)[cut]
        pos = p0 + t * (p1 - p0) + world_h[bsel]
        nrm = grads[lo][cut] + t * (grads[hi][cut] - grads[lo][cut])
        colr = colors[lo][cut] + t * (colors[hi][cut] - colors[lo][cut])
        sink.verts_h.append(pos)
        sink.normals.append(nrm)
        sink.colors.append(colr)
    sink.base += n_new

    emit = np.nonzero(EDGE_TABLE[case] != 0)
    if len(emit[0]) == 0:
        return
    cb, ci, cj, ck = emit
    cell_case = case[emit]
    for k3 in range(0, 16, 3):
        tri_edges = TRI_TABLE[cell_case, k3:k3 + 3]
        live = tri_edges[:, 0] >= 0
        if not live.any():
            break
        idx = np.nonzero(live)[0]
        tri = np.zeros((len(idx), 3), dtype=np.int64)
        for corner_slot in range(3):
            e = tri_edges[idx, corner_slot]
            axis = EDGE_LOCATION[e, 0]
            off = EDGE_LOCATION[e, 1:]
            for a in range(3):
                pick = axis == a
                if not pick.any():
                    continue
                rows = idx[pick]
                tri[pick, corner_slot] = edge_ids[a][
                    cb[rows], ci[rows] + off[pick, 0],
                    cj[rows] + off[pick, 1], ck[rows] + off[pick, 2]]
        sink.tris.append(tri)


def extract_mesh(table: HashTable, iso: float = 0.0,
                 collapse_epsilon: float | None = None) -> Mesh:
    """Triangulate the zero isosurface of the whole grid.

    Blocks are processed level by level in canonical coordinate order;
    shared vertices across cells and blocks deduplicate exactly, then the
    vertex-collapse pass (default eps = 0.25 fine voxels) cleans seams.
    """
    sink = _Sink()
    per_level = {}
    ranges: dict[tuple[int, int, int], tuple[float, float]] = {}
    for level in range(table.num_levels):
        coords, handles = table.live_blocks(level, sort=True)
        if len(handles) == 0:
            per_level[level] = (coords, handles)
            continue
        heap = table.heaps[level]
        w = heap.weight.reshape(heap.capacity, heap.nvox)[handles]
        d = heap.tsdf.reshape(heap.capacity, heap.nvox)[handles]
        observed = w > 0
        any_obs = observed.any(axis=1)
        dmin = np.where(observed, d, np.inf).min(axis=1)
        dmax = np.where(observed, d, -np.inf).max(axis=1)
        coords, handles = coords[any_obs], handles[any_obs]
        for c, lo_, hi_ in zip(coords, dmin[any_obs], dmax[any_obs]):
            ranges[tuple(c)] = (lo_, hi_)
        per_level[level] = (coords, handles)

    for level in range(table.num_levels):
        coords, handles = per_level[level]
        if len(handles) == 0:
            continue
        # corner samples are convex blends of adjacent observed voxels, so a
        # cell can emit only if values in the block or its neighbors straddle
        # the isolevel; everything else is skipped outright
        keep = np.zeros(len(handles), dtype=bool)
        for i, c in enumerate(coords):
            lo_u, hi_u = np.inf, -np.inf
            for off in _NEIGHBOR_OFFSETS:
                r = ranges.get((c[0] + off[0], c[1] + off[1], c[2] + off[2]))
                if r is not None:
                    lo_u = min(lo_u, r[0])
                    hi_u = max(hi_u, r[1])
            keep[i] = lo_u <= iso <= hi_u
        coords, handles = coords[keep], handles[keep]
        for lo in range(0, len(handles), _CHUNK_BLOCKS):
            _emit_chunk(table, level, coords[lo:lo + _CHUNK_BLOCKS],
                        handles[lo:lo + _CHUNK_BLOCKS], iso, sink)
    if not sink.tris:
        return Mesh.empty()

    verts_h = np.concatenate(sink.verts_h)
    normals = np.concatenate(sink.normals)
    colors = np.concatenate(sink.colors)
    tris = np.concatenate(sink.tris)

    # exact dedup: boundary vertices are bit-identical between blocks
    view = verts_h.view([("x", np.float64), ("y", np.float64), ("z", np.float64)]).ravel()
    uniq, first, inverse = np.unique(view, return_index=True, return_inverse=True)
    merged_normals = np.zeros((len(uniq), 3))
    np.add.at(merged_normals, inverse, normals)
    vertices = verts_h[first] * (table.block_edge / HALF_UNITS)
    colors = colors[first]
    tris = inverse[tris]

    norms = np.linalg.norm(merged_normals, axis=1, keepdims=True)
    merged_normals = merged_normals / np.where(norms > 0, norms, 1.0)
    merged_normals[norms.ravel() == 0] = (0.0, 0.0, 1.0)

    mesh = Mesh(vertices=vertices, normals=merged_normals,
                colors=np.clip(colors, 0.0, 1.0), triangles=tris)
    _orient_triangles(mesh)
    eps = collapse_epsilon
    if eps is None:
        eps = 0.25 * table.voxel_size(0)
    return collapse_vertices(mesh, eps)


def _orient_triangles(mesh: Mesh) -> None:
    """Flip windings so geometric normals agree with the sampled gradient."""
    if mesh.num_triangles == 0:
        return
    v = mesh.vertices
    t = mesh.triangles
    geo = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    ref = mesh.normals[t].sum(axis=1)
    flip = np.einsum("ij,ij->i", geo, ref) < 0
    t[flip] = t[flip][:, ::-1]


def collapse_vertices(mesh: Mesh, epsilon: float) -> Mesh:
    """Merge vertices within epsilon via spatial bucketing to their centroid.

    With epsilon 0 only exact duplicates merge. Triangles are re-indexed
    and degenerate ones (repeated indices or area below 1e-12 m^2) are
    dropped; vertex and triangle counts never increase. Idempotent at
    fixed epsilon: centroids stay inside their bucket.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if mesh.num_vertices == 0:
        return mesh
    v = mesh.vertices
    if epsilon == 0:
        keys = v.view([("x", np.float64), ("y", np.float64), ("z", np.float64)]).ravel()
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        new_v = v[first]
        new_n = mesh.normals[first]
        new_c = mesh.colors[first]
    else:
        cells = np.floor(v / epsilon).astype(np.int64)
        keys = cells.view([("x", np.int64), ("y", np.int64), ("z", np.int64)]).ravel()
        _, inverse = np.unique(keys, return_inverse=True)
        counts = np.bincount(inverse).astype(np.float64)
        new_v = np.zeros((len(counts), 3))
        np.add.at(new_v, inverse, v)
        new_v /= counts[:, None]
        new_n = np.zeros((len(counts), 3))
        np.add.at(new_n, inverse, mesh.normals)
        nn = np.linalg.norm(new_n, axis=1, keepdims=True)
        new_n = new_n / np.where(nn > 0, nn, 1.0)
        new_c = np.zeros((len(counts), 3))
        np.add.at(new_c, inverse, mesh.colors)
        new_c /= counts[:, None]

    tris = inverse[mesh.triangles]
    distinct = ((tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2])
                & (tris[:, 0] != tris[:, 2]))
    tris = tris[distinct]
    if len(tris):
        a, b, c = new_v[tris[:, 0]], new_v[tris[:, 1]], new_v[tris[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        tris = tris[area >= 1e-12]

    used = np.zeros(len(new_v), dtype=bool)
    used[tris.ravel()] = True
    if mesh.num_triangles == 0:
        used[:] = True  # a pure point set keeps its vertices
    remap = np.cumsum(used) - 1
    return Mesh(vertices=new_v[used], normals=new_n[used], colors=new_c[used],
                triangles=remap[tris] if len(tris) else np.zeros((0, 3), dtype=np.int64))
