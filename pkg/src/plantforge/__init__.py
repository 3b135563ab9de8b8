"""plantforge: synthetic plant point clouds, dataset tooling, grouping-based
instance segmentation, and segmentation metrics."""

from .cloud import LabeledCloud, merge_clouds
from .dataset import (DatasetManifest, DatasetStats, compute_stats,
                      load_standard, make_splits, write_standard)
from .deform import (DeformField, ForceSpec, Material, MaterialMap,
                     apply_deformation, augment, build_lattice, solve_elastic)
from .formats import convert
from .geom import (SpatialIndex, VoxelGrid, blockwise_downsample,
                   farthest_point_sample, radius_neighbors, voxelize)
from .grouping import (GroupingParams, InstancePrediction, ModelOutput,
                       group, infer_params, oracle_output)
from .mesh import TriMesh
from .metrics import EvalReport, aggregate, instance_eval, semantic_eval
from .protocol import ProtocolConfig, assemble_folds, run_simreal_protocol
from .treegen import (BranchRecord, GeneratorConfig, TreeModel, TreeStats,
                      extract_stats, generate_population, generate_tree,
                      interpolate_stats)
from .vls import ScannerConfig, TriangleBVH, default_tls_positions, scan

__version__ = "0.1.0"

__all__ = [
    "LabeledCloud", "merge_clouds",
    "DatasetManifest", "DatasetStats", "compute_stats", "load_standard",
    "make_splits", "write_standard",
    "DeformField", "ForceSpec", "Material", "MaterialMap",
    "apply_deformation", "augment", "build_lattice", "solve_elastic",
    "convert",
    "SpatialIndex", "VoxelGrid", "blockwise_downsample",
    "farthest_point_sample", "radius_neighbors", "voxelize",
    "GroupingParams", "InstancePrediction", "ModelOutput", "group",
    "infer_params", "oracle_output",
    "TriMesh",
    "EvalReport", "aggregate", "instance_eval", "semantic_eval",
    "ProtocolConfig", "assemble_folds", "run_simreal_protocol",
    "BranchRecord", "GeneratorConfig", "TreeModel", "TreeStats",
    "extract_stats", "generate_population", "generate_tree",
    "interpolate_stats",
    "ScannerConfig", "TriangleBVH", "default_tls_positions", "scan",
    "__version__",
]
