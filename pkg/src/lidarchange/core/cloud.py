"""Point-cloud data model and spatial indexing.

A :class:`PointCloud` is the atomic geometric carrier used everywhere: raw
coordinates in a georeferenced metric frame, optional per-point intensity and
unit normals, and an epoch tag. Clouds are treated as immutable after
construction; every operation returns a new cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DataError

EPOCH_2023 = "E23"
EPOCH_2025 = "E25"


@dataclass
class PointCloud:
    """Points with optional intensity and normals.

    Attributes:
        points: (N, 3) float64 coordinates in meters.
        intensity: optional (N,) scalar per point.
        normals: optional (N, 3) unit vectors; rows of NaN mark points whose
            normal could not be estimated (fewer than 3 neighbors).
        source_epoch: "E23" or "E25" (or "" when not epoch-bound).
    """

    points: np.ndarray
    intensity: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    source_epoch: str = ""

    def __post_init__(self):
        self.points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise DataError(f"points must be (N, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            bad = int(np.flatnonzero(~np.isfinite(self.points).all(axis=1))[0])
            raise DataError(f"non-finite coordinate at point index {bad}")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float64)
            if self.intensity.shape != (len(self.points),):
                raise DataError("intensity length must match point count")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.points.shape:
                raise DataError("normals shape must match points")
            valid = np.isfinite(self.normals).all(axis=1)
            if valid.any():
                norms = np.linalg.norm(self.normals[valid], axis=1)
                nz = norms > 0
                if not nz.all():
                    raise DataError("zero-length normal encountered")
                # renormalize silently; files may carry slightly off-unit vectors
                scaled = self.normals[valid]
                scaled[nz] /= norms[nz, None]
                self.normals[valid] = scaled

    def __len__(self) -> int:
        return len(self.points)

    @property
    def valid_normal_mask(self) -> np.ndarray:
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.isfinite(self.normals).all(axis=1)

    def select(self, index) -> "PointCloud":
        """New cloud restricted to the given index or boolean mask."""
        return PointCloud(
            points=self.points[index],
            intensity=None if self.intensity is None else self.intensity[index],
            normals=None if self.normals is None else self.normals[index],
            source_epoch=self.source_epoch,
        )

    def with_points(self, points: np.ndarray, normals=None) -> "PointCloud":
        return PointCloud(
            points=points,
            intensity=self.intensity,
            normals=self.normals if normals is None else normals,
            source_epoch=self.source_epoch,
        )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            z = np.zeros(3)
            return z, z
        return self.points.min(axis=0), self.points.max(axis=0)


@dataclass
class SpatialIndex:
    """Read-only k-NN / radius acceleration structure over a cloud.

    Queries return exactly the points a linear scan would (same set,
    distance-sorted). Shareable across workers once built.
    """

    cloud: PointCloud
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        pts = self.cloud.points if len(self.cloud) else np.zeros((0, 3))
        self._tree = cKDTree(pts) if len(pts) else None

    @property
    def tree(self) -> cKDTree:
        return self._tree

    def nearest(self, queries: np.ndarray, k: int = 1, max_dist: float = np.inf):
        """Distances and indices of the k nearest points per query row."""
        if self._tree is None:
            n = len(np.atleast_2d(queries))
            shape = (n, k) if k > 1 else (n,)
            return np.full(shape, np.inf), np.full(shape, -1, dtype=int)
        d, i = self._tree.query(queries, k=k, distance_upper_bound=max_dist, workers=-1)
        return d, i

    def radius(self, query: np.ndarray, r: float, sort: bool = True) -> np.ndarray:
        """Indices of all points within r of a single query point."""
        if self._tree is None:
            return np.zeros(0, dtype=int)
        idx = np.asarray(self._tree.query_ball_point(query, r), dtype=int)
        if sort and len(idx):
            d = np.linalg.norm(self.cloud.points[idx] - query, axis=1)
            idx = idx[np.argsort(d, kind="stable")]
        return idx

    def radius_all(self, queries: np.ndarray, r: float) -> list:
        """Neighbor index lists for many query points (unsorted)."""
        if self._tree is None:
            return [[] for _ in range(len(queries))]
        return self._tree.query_ball_point(queries, r, workers=-1)
