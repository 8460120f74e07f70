"""Normal estimation and per-point geometric features.

All neighborhood statistics run through one vectorized moment accumulator
(flattened neighbor lists + bincount) so that 100k+ point tiles stay fast.
Coordinates are centered before accumulating second moments: georeferenced
frames put points at ~1e6 m, where raw outer products would lose the
millimeter-scale eigen structure.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud


@dataclass
class FeatureSet:
    """Per-point geometric features (arrays of length N).

    linearity/planarity/sphericity derive from the sorted eigenvalues of the
    local covariance; verticality is |n . e_z|; height is the height above
    ground once the frame is normalized (raw z before that); roughness is the
    normal-direction spread in a lateral cylinder; density in points/m^3.
    """

    linearity: np.ndarray
    planarity: np.ndarray
    sphericity: np.ndarray
    verticality: np.ndarray
    height: np.ndarray
    roughness: np.ndarray
    density: np.ndarray

    def __len__(self) -> int:
        return len(self.linearity)

    def vector(self) -> np.ndarray:
        """Stacked (N, 5) feature rows used by the superpoint partition."""
        return np.column_stack([self.linearity, self.planarity, self.sphericity,
                                self.verticality, self.height])

    def select(self, index) -> "FeatureSet":
        return FeatureSet(*(getattr(self, f)[index] for f in (
            "linearity", "planarity", "sphericity", "verticality",
            "height", "roughness", "density")))


def flatten_neighbor_lists(lists) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor lists -> (flat indices, per-query counts)."""
    counts = np.fromiter(map(len, lists), count=len(lists), dtype=np.int64)
    total = int(counts.sum())
    flat = np.fromiter(chain.from_iterable(lists), count=total, dtype=np.int64)
    return flat, counts


def neighborhood_moments(points: np.ndarray, tree: cKDTree,
                         queries: np.ndarray, radius: float):
    """Counts, means and covariances of radius neighborhoods.

    Returns (counts (N,), means (N,3), covs (N,3,3)); covariance rows with
    fewer than 1 neighbor are zero.
    """
    lists = tree.query_ball_point(queries, radius, workers=-1)
    flat, counts = flatten_neighbor_lists(lists)
    return counts, *_moments_from_flat(points, flat, counts)


def _moments_from_flat(points: np.ndarray, flat: np.ndarray, counts: np.ndarray):
    n = len(counts)
    center = points.mean(axis=0) if len(points) else np.zeros(3)
    owners = np.repeat(np.arange(n), counts)
    x = points[flat] - center
    sums = np.column_stack([np.bincount(owners, weights=x[:, c], minlength=n)
                            for c in range(3)])
    safe = np.maximum(counts, 1).astype(np.float64)
    means = sums / safe[:, None]
    # six unique second-moment entries
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    m2 = {p: np.bincount(owners, weights=x[:, p[0]] * x[:, p[1]], minlength=n) / safe
          for p in pairs}
    covs = np.empty((n, 3, 3))
    for (a, b) in pairs:
        covs[:, a, b] = covs[:, b, a] = m2[(a, b)] - means[:, a] * means[:, b]
    return means + center, covs


def sorted_eigh(covs: np.ndarray):
    """Batched symmetric eigendecomposition, eigenvalues descending.

    Ties are resolved deterministically by LAPACK's ordering plus a fixed
    sign rule applied by callers; inputs are symmetrized first.
    """
    sym = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    w, v = np.linalg.eigh(sym)              # ascending
    return w[..., ::-1], v[..., ::-1]       # descending


def _orient_normals(normals: np.ndarray, points: np.ndarray,
                    neigh_means: np.ndarray, z_tol: float = 0.01,
                    exterior_tol: float = 0.05) -> np.ndarray:
    """Deterministic normal sign rule.

    Prefer n . e_z >= 0; nearly horizontal normals orient toward the
    neighborhood exterior when that direction is decisive, else by making
    the largest-magnitude component positive.
    """
    out = normals.copy()
    nz = out[:, 2]
    vertical = np.abs(nz) > z_tol
    flip = vertical & (nz < 0)
    out[flip] *= -1.0

    horiz = ~vertical
    if horiz.any():
        d = points[horiz] - neigh_means[horiz]
        dot = np.einsum("ij,ij->i", out[horiz], d)
        decisive = np.abs(dot) > exterior_tol
        sub = out[horiz]
        sub[decisive & (dot < 0)] *= -1.0
        # remaining: largest-|component| made positive
        rest = ~decisive
        if rest.any():
            r = sub[rest]
            lead = np.abs(r).argmax(axis=1)
            sign = np.sign(r[np.arange(len(r)), lead])
            sign[sign == 0] = 1.0
            sub[rest] = r * sign[:, None]
        out[horiz] = sub
    return out


def estimate_normals(cloud: PointCloud, radius: float = 0.8) -> PointCloud:
    """Per-point normals from radius-neighborhood covariance.

    The normal is the eigenvector of the smallest eigenvalue. Points with
    fewer than 3 neighbors (self included) get a NaN normal row, flagged but
    not fatal.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = len(cloud)
    if n == 0:
        return cloud.with_points(cloud.points, normals=np.zeros((0, 3)))
    tree = cKDTree(cloud.points)
    counts, means, covs = neighborhood_moments(cloud.points, tree, cloud.points, radius)
    _, vecs = sorted_eigh(covs)
    normals = vecs[:, :, 2]                 # smallest-eigenvalue direction
    lengths = np.linalg.norm(normals, axis=1)
    ok = lengths > 0
    normals[ok] /= lengths[ok, None]
    normals = _orient_normals(normals, cloud.points, means)
    normals[counts < 3] = np.nan
    return cloud.with_points(cloud.points, normals=normals)


def eigen_features(
    cloud: PointCloud,
    radius: float = 0.6,
    roughness_radius: float = 1.0,
    heights: np.ndarray | None = None,
    roughness_axial_cap: float = 4.0,
) -> FeatureSet:
    """Eigen shape features, roughness and density per point.

    Requires normals (for verticality and the roughness cylinder axis).
    ``heights`` supplies height-above-ground; defaults to raw z, which is
    correct once the cloud is in the normalized vertical frame. The roughness
    cylinder is laterally bounded by ``roughness_radius`` around the point's
    normal axis; the axial extent is unbounded in principle and capped at
    ``roughness_axial_cap`` for tractability.
    """
    n = len(cloud)
    if n == 0:
        z = np.zeros(0)
        return FeatureSet(z, z, z, z, z, z, z)
    tree = cKDTree(cloud.points)
    counts, _, covs = neighborhood_moments(cloud.points, tree, cloud.points, radius)
    vals, _ = sorted_eigh(covs)
    vals = np.maximum(vals, 0.0)
    l1 = vals[:, 0]
    safe = np.where(l1 > 0, l1, 1.0)
    linearity = np.where(l1 > 0, (vals[:, 0] - vals[:, 1]) / safe, 0.0)
    planarity = np.where(l1 > 0, (vals[:, 1] - vals[:, 2]) / safe, 0.0)
    sphericity = np.where(l1 > 0, vals[:, 2] / safe, 0.0)

    normals = cloud.normals if cloud.normals is not None else np.full((n, 3), np.nan)
    valid_n = np.isfinite(normals).all(axis=1)
    verticality = np.zeros(n)
    verticality[valid_n] = np.abs(normals[valid_n, 2])

    roughness = _cylinder_roughness(cloud.points, tree, normals, valid_n,
                                    roughness_radius, roughness_axial_cap)
    density = counts / (4.0 / 3.0 * np.pi * radius ** 3)
    height = np.asarray(heights, dtype=np.float64) if heights is not None \
        else cloud.points[:, 2].copy()
    return FeatureSet(linearity, planarity, sphericity, verticality,
                      height, roughness, density)


def _cylinder_roughness(points, tree, normals, valid_n, lateral_radius, axial_cap):
    """Std of neighbor offsets along each point's normal, lateral <= radius."""
    n = len(points)
    out = np.zeros(n)
    query_r = float(np.hypot(lateral_radius, axial_cap))
    lists = tree.query_ball_point(points, query_r, workers=-1)
    flat, counts = flatten_neighbor_lists(lists)
    owners = np.repeat(np.arange(n), counts)
    keep_owner = valid_n[owners]
    owners = owners[keep_owner]
    flat = flat[keep_owner]
    d = points[flat] - points[owners]
    axis = normals[owners]
    t = np.einsum("ij,ij->i", d, axis)
    lateral2 = np.einsum("ij,ij->i", d, d) - t * t
    inside = lateral2 <= lateral_radius ** 2 + 1e-12
    owners, t = owners[inside], t[inside]
    cnt = np.bincount(owners, minlength=n).astype(np.float64)
    safe = np.maximum(cnt, 1.0)
    mean_t = np.bincount(owners, weights=t, minlength=n) / safe
    mean_t2 = np.bincount(owners, weights=t * t, minlength=n) / safe
    var = np.maximum(mean_t2 - mean_t ** 2, 0.0)
    out = np.where(cnt >= 2, np.sqrt(var), 0.0)
    return out
