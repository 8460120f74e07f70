"""Feature-based coarse alignment: ISS keypoints, FPFH descriptors, RANSAC.

Runs on the coarsest pyramid level. All randomness is drawn from a seeded
generator so reruns reproduce bit-identical transforms.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ..config import RegistrationConfig
from ..core.cloud import PointCloud
from ..core.features import (flatten_neighbor_lists, neighborhood_moments,
                             sorted_eigh)
from ..errors import CoarseAlignmentError
from .rigid import RigidTransform, kabsch


def iss_keypoints(cloud: PointCloud, salient_radius: float = 1.5,
                  nonmax_radius: float = 2.0, gamma21: float = 0.975,
                  gamma32: float = 0.975, min_neighbors: int = 6) -> np.ndarray:
    """Indices of intrinsic-shape-signature keypoints.

    A point is salient when its neighborhood covariance eigenvalues decay
    (l2/l1 and l3/l2 below the gamma bounds) and its smallest eigenvalue is a
    local maximum within the non-max radius.
    """
    pts = cloud.points
    tree = cKDTree(pts)
    counts, _, covs = neighborhood_moments(pts, tree, pts, salient_radius)
    vals, _ = sorted_eigh(covs)
    vals = np.maximum(vals, 0.0)
    l1, l2, l3 = vals[:, 0], vals[:, 1], vals[:, 2]
    ok = (counts >= min_neighbors) & (l1 > 0) & (l2 > 0)
    sal = np.zeros(len(pts))
    sal[ok] = l3[ok]
    candidate = ok & (l2 / np.where(l1 > 0, l1, 1) < gamma21) \
                   & (l3 / np.where(l2 > 0, l2, 1) < gamma32) & (l3 > 0)
    cand_idx = np.flatnonzero(candidate)
    if len(cand_idx) == 0:
        return cand_idx
    cand_tree = cKDTree(pts[cand_idx])
    lists = cand_tree.query_ball_point(pts[cand_idx], nonmax_radius, workers=-1)
    keep = []
    cand_sal = sal[cand_idx]
    for i, neigh in enumerate(lists):
        s = cand_sal[i]
        others = cand_sal[neigh]
        if s >= others.max() - 1e-15:
            # deterministic tie-break: lowest original index wins
            top = np.asarray(neigh)[others >= s - 1e-15]
            if cand_idx[i] == cand_idx[top].min():
                keep.append(cand_idx[i])
    return np.asarray(keep, dtype=int)


def fpfh_descriptors(cloud: PointCloud, radius: float = 2.0,
                     bins: int = 11) -> np.ndarray:
    """Fast point feature histograms (N, 3*bins), L1-normalized per block.

    Points lacking a valid normal get a zero descriptor.
    """
    pts = cloud.points
    n = len(pts)
    normals = cloud.normals
    if normals is None:
        raise CoarseAlignmentError("FPFH requires normals")
    valid = np.isfinite(normals).all(axis=1)
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    if len(pairs):
        both = np.vstack([pairs, pairs[:, ::-1]])
    else:
        both = np.zeros((0, 2), dtype=int)
    src, tgt = both[:, 0], both[:, 1]
    ok = valid[src] & valid[tgt]
    src, tgt = src[ok], tgt[ok]

    d = pts[tgt] - pts[src]
    dist = np.linalg.norm(d, axis=1)
    nz = dist > 1e-9
    src, tgt, d, dist = src[nz], tgt[nz], d[nz], dist[nz]
    dn = d / dist[:, None]
    u = normals[src]
    v = np.cross(dn, u)
    vn = np.linalg.norm(v, axis=1)
    good = vn > 1e-9
    src, tgt, dn, dist, u, v = src[good], tgt[good], dn[good], dist[good], u[good], v[good]
    v /= np.linalg.norm(v, axis=1)[:, None]
    w = np.cross(u, v)
    nt = normals[tgt]
    alpha = np.einsum("ij,ij->i", v, nt)
    phi = np.einsum("ij,ij->i", u, dn)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", u, nt))

    spfh = np.zeros((n, 3 * bins))
    for block, (val, lo, hi) in enumerate(
            [(alpha, -1.0, 1.0), (phi, -1.0, 1.0), (theta, -np.pi, np.pi)]):
        b = np.clip(((val - lo) / (hi - lo) * bins).astype(int), 0, bins - 1)
        np.add.at(spfh, (src, block * bins + b), 1.0)

    # neighbor-weighted aggregation: fpfh_i = spfh_i + mean_j spfh_j / d_ij
    weights = 1.0 / np.maximum(dist, 1e-6)
    deg = np.bincount(src, minlength=n).astype(float)
    inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    W = sparse.csr_matrix((weights * inv_deg[src], (src, tgt)), shape=(n, n))
    fpfh = spfh + W @ spfh

    for block in range(3):
        sl = slice(block * bins, (block + 1) * bins)
        s = fpfh[:, sl].sum(axis=1, keepdims=True)
        fpfh[:, sl] = np.divide(fpfh[:, sl], s, out=np.zeros_like(fpfh[:, sl]),
                                where=s > 0)
    return fpfh


def _mutual_matches(desc_a: np.ndarray, desc_b: np.ndarray) -> np.ndarray:
    ta, tb = cKDTree(desc_a), cKDTree(desc_b)
    _, ab = tb.query(desc_a, k=1, workers=-1)
    _, ba = ta.query(desc_b, k=1, workers=-1)
    ia = np.arange(len(desc_a))
    mutual = ba[ab] == ia
    return np.column_stack([ia[mutual], ab[mutual]])


def coarse_align(src: PointCloud, tgt: PointCloud,
                 config: RegistrationConfig | None = None,
                 rng: np.random.Generator | None = None) -> RigidTransform:
    """RANSAC alignment over FPFH correspondences between ISS keypoints.

    Raises:
        CoarseAlignmentError: fewer than 3 surviving correspondences, or no
            transform gathers at least 3 inliers. Callers with an external
            prior (georeferenced epochs) may fall back to identity.
    """
    cfg = config or RegistrationConfig()
    rng = rng or np.random.default_rng(cfg.seed)
    if len(src) < 50 or len(tgt) < 50:
        raise CoarseAlignmentError("need at least 50 points per cloud")
    if src.normals is None or tgt.normals is None:
        raise CoarseAlignmentError("both clouds need normals")

    kp_s = iss_keypoints(src, cfg.iss_salient_radius, cfg.iss_nonmax_radius,
                         cfg.iss_gamma21, cfg.iss_gamma32)
    kp_t = iss_keypoints(tgt, cfg.iss_salient_radius, cfg.iss_nonmax_radius,
                         cfg.iss_gamma21, cfg.iss_gamma32)
    if len(kp_s) < 3 or len(kp_t) < 3:
        raise CoarseAlignmentError(
            f"too few keypoints (src {len(kp_s)}, tgt {len(kp_t)})")

    desc_s = fpfh_descriptors(src, cfg.fpfh_radius)[kp_s]
    desc_t = fpfh_descriptors(tgt, cfg.fpfh_radius)[kp_t]
    matches = _mutual_matches(desc_s, desc_t)
    if len(matches) < 3:
        raise CoarseAlignmentError(f"only {len(matches)} descriptor correspondences")

    a = src.points[kp_s[matches[:, 0]]]
    b = tgt.points[kp_t[matches[:, 1]]]
    thresh = cfg.ransac_inlier_thresh
    best_inliers: np.ndarray | None = None
    best_count = 0
    m = len(matches)
    for _ in range(cfg.ransac_iterations):
        pick = rng.choice(m, size=3, replace=False)
        pa, pb = a[pick], b[pick]
        # edge-length consistency prunes most wrong samples cheaply
        ea = np.linalg.norm(pa[[0, 0, 1]] - pa[[1, 2, 2]], axis=1)
        eb = np.linalg.norm(pb[[0, 0, 1]] - pb[[1, 2, 2]], axis=1)
        if np.any(np.abs(ea - eb) > thresh) or np.any(ea < 1e-6):
            continue
        t = kabsch(pa, pb)
        resid = np.linalg.norm(t.apply(a) - b, axis=1)
        inl = resid < thresh
        cnt = int(inl.sum())
        if cnt > best_count:
            best_count, best_inliers = cnt, inl
            if cnt > 0.9 * m:
                break
    if best_inliers is None or best_count < 3:
        raise CoarseAlignmentError(
            f"RANSAC found no transform with >= 3 inliers over {m} correspondences")
    refined = kabsch(a[best_inliers], b[best_inliers])
    # one re-estimation pass over the refined inlier set
    resid = np.linalg.norm(refined.apply(a) - b, axis=1)
    inl = resid < thresh
    if inl.sum() >= 3:
        refined = kabsch(a[inl], b[inl])
    return refined
