"""Variance-adaptive multi-resolution TSDF fusion on a flat spatial hash."""

from .config import PipelineConfig, load_config, save_config
from .geometry import DepthFrame, Intrinsics, PointCloudFrame, SensorPose
from .hashgrid import BlockPayload, HashTable, hash_key, voxel_index
from .dda import dda_blocks
from .integrate import (IntegrationStats, Voxel, allocate_for_measurement,
                        integrate_depth, integrate_pointcloud, sdf_projective,
                        sdf_ray, update_voxel)
from .adapt import (apply_merges, block_mean_variance, downsample_block,
                    select_merge_candidates)
from .streaming import (ArchiveStore, active_fill_fraction, select_evictable,
                        stream_in, stream_out)
from .meshing import (CornerSample, Mesh, cell_triangles, collapse_vertices,
                      effective_cell_extent, extract_mesh, sample_corner)
from .quadtree import QuadNode, SplatSeed, build_quadtree, region_contrast, seed_splats
from .metrics import eval_reconstruction, sample_mesh_points
from .formats import load_map, read_mesh, read_points, save_map, write_mesh
from .pipeline import FusionEngine, RunReport, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "load_config", "save_config",
    "DepthFrame", "Intrinsics", "PointCloudFrame", "SensorPose",
    "BlockPayload", "HashTable", "hash_key", "voxel_index", "dda_blocks",
    "IntegrationStats", "Voxel", "allocate_for_measurement", "integrate_depth",
    "integrate_pointcloud", "sdf_projective", "sdf_ray", "update_voxel",
    "apply_merges", "block_mean_variance", "downsample_block", "select_merge_candidates",
    "ArchiveStore", "active_fill_fraction", "select_evictable", "stream_in", "stream_out",
    "CornerSample", "Mesh", "cell_triangles", "collapse_vertices",
    "effective_cell_extent", "extract_mesh", "sample_corner",
    "QuadNode", "SplatSeed", "build_quadtree", "region_contrast", "seed_splats",
    "eval_reconstruction", "sample_mesh_points",
    "load_map", "read_mesh", "read_points", "save_map", "write_mesh",
    "FusionEngine", "RunReport", "run_pipeline",
    "__version__",
]
