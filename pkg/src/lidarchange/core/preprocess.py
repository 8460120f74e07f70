"""Cloud preprocessing: outlier removal, voxel downsampling, voxel keying.

Voxel keys are anchored at the global coordinate origin (floor(coord / leaf))
so that both epochs share voxel boundaries; occupancy comparisons across
epochs are then consistent by construction.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DegenerateInputError
from .cloud import PointCloud


def voxel_keys(points: np.ndarray, leaf: float) -> np.ndarray:
    """Integer (N, 3) voxel coordinates, origin-anchored."""
    return np.floor(points / leaf).astype(np.int64)


def pack_keys(keys: np.ndarray, basis=None):
    """Collapse (N, 3) integer keys to one int64 per point.

    The key grid itself stays globally anchored; packing only needs
    uniqueness within a call, so keys are offset by the call's minimum.
    Pass the returned ``basis`` to a later call to pack a second key set
    into the same code space (needed for cross-epoch occupancy sets).
    """
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64), (np.zeros(3, dtype=np.int64),
                                             np.ones(3, dtype=np.int64))
    if basis is None:
        kmin = keys.min(axis=0)
        span = keys.max(axis=0) - kmin + 1
        basis = (kmin, span)
    kmin, span = basis
    if int(span[0]) * int(span[1]) * int(span[2]) >= 2 ** 62:
        raise ValueError("voxel key span too large to pack")
    rel = keys - kmin
    if np.any(rel < 0) or np.any(rel >= span):
        raise ValueError("keys outside packing basis")
    packed = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    return packed.astype(np.int64), basis


def shared_pack(keys_a: np.ndarray, keys_b: np.ndarray):
    """Pack two key sets into one shared code space."""
    if len(keys_a) == 0 and len(keys_b) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    both = np.vstack([k for k in (keys_a, keys_b) if len(k)])
    kmin = both.min(axis=0)
    span = both.max(axis=0) - kmin + 1
    pa, _ = pack_keys(keys_a, (kmin, span)) if len(keys_a) else (np.zeros(0, np.int64), None)
    pb, _ = pack_keys(keys_b, (kmin, span)) if len(keys_b) else (np.zeros(0, np.int64), None)
    return pa, pb


def statistical_outlier_removal(
    cloud: PointCloud, k: int = 16, std_mult: float = 2.0
) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds the global mean + std_mult * std.

    Raises:
        DegenerateInputError: empty cloud or k >= point count.
    """
    n = len(cloud)
    if n == 0:
        raise DegenerateInputError("statistical_outlier_removal: empty cloud")
    if k < 1:
        raise DegenerateInputError("statistical_outlier_removal: k must be >= 1")
    if k >= n:
        raise DegenerateInputError(
            f"statistical_outlier_removal: k={k} >= point count {n}")
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=k + 1, workers=-1)
    mean_dist = dists[:, 1:].mean(axis=1)
    thresh = mean_dist.mean() + std_mult * mean_dist.std()
    return cloud.select(mean_dist <= thresh)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """One output point per occupied voxel, at the voxel's point centroid.

    Normals and intensity are averaged over the voxel (normals renormalized);
    voxels whose averaged normal cancels out get an invalid normal.
    """
    if leaf <= 0:
        raise ValueError("leaf must be positive")
    n = len(cloud)
    if n == 0:
        return cloud.select(np.zeros(0, dtype=int))
    packed, _ = pack_keys(voxel_keys(cloud.points, leaf))
    order = np.argsort(packed, kind="stable")
    sorted_keys = packed[order]
    uniq_start = np.flatnonzero(np.r_[True, sorted_keys[1:] != sorted_keys[:-1]])
    groups = np.zeros(n, dtype=np.int64)
    groups[uniq_start] = 1
    groups = np.cumsum(groups) - 1          # group id per sorted position
    n_groups = groups[-1] + 1
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)

    def group_mean(values: np.ndarray) -> np.ndarray:
        cols = []
        v = values[order]
        for c in range(v.shape[1]):
            cols.append(np.bincount(groups, weights=v[:, c], minlength=n_groups))
        return np.column_stack(cols) / counts[:, None]

    pts = group_mean(cloud.points)
    intensity = None
    if cloud.intensity is not None:
        intensity = group_mean(cloud.intensity[:, None])[:, 0]
    normals = None
    if cloud.normals is not None:
        filled = np.where(np.isfinite(cloud.normals), cloud.normals, 0.0)
        normals = group_mean(filled)
        lengths = np.linalg.norm(normals, axis=1)
        ok = lengths > 1e-9
        normals[ok] /= lengths[ok, None]
        normals[~ok] = np.nan
    return PointCloud(points=pts, intensity=intensity, normals=normals,
                      source_epoch=cloud.source_epoch)


def dedup_by_voxel(cloud: PointCloud, leaf: float) -> PointCloud:
    """Keep one representative point per voxel (first by stable key order).

    Unlike :func:`voxel_downsample` this preserves original coordinates; used
    to undo tile-halo duplication before density-sensitive statistics.
    """
    if len(cloud) == 0:
        return cloud
    packed, _ = pack_keys(voxel_keys(cloud.points, leaf))
    _, first = np.unique(packed, return_index=True)
    return cloud.select(np.sort(first))
