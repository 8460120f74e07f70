from .cloud import EPOCH_2023, EPOCH_2025, PointCloud, SpatialIndex
from .features import FeatureSet, eigen_features, estimate_normals
from .ply import load_ply, save_ply
from .preprocess import (dedup_by_voxel, pack_keys, shared_pack,
                         statistical_outlier_removal, voxel_downsample,
                         voxel_keys)

__all__ = [
    "EPOCH_2023", "EPOCH_2025", "PointCloud", "SpatialIndex",
    "FeatureSet", "eigen_features", "estimate_normals",
    "load_ply", "save_ply",
    "dedup_by_voxel", "pack_keys", "shared_pack",
    "statistical_outlier_removal", "voxel_downsample", "voxel_keys",
]
