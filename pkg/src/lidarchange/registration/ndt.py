"""Normal-distributions-transform alignment.

The target cloud is summarized by per-voxel Gaussians; alignment maximizes
the summed Gaussian likelihood of the transformed source points by damped
Gauss-Newton steps with a backtracking line search, so the score never
decreases across accepted iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.cloud import PointCloud
from ..core.preprocess import pack_keys, voxel_keys
from ..errors import NdtUnusableError
from .rigid import RigidTransform


@dataclass
class NdtResult:
    transform: RigidTransform
    score: float
    iterations: int
    converged: bool


class NdtGrid:
    """Per-voxel Gaussian summary of a target cloud.

    Voxels need at least ``min_points`` points; covariance eigenvalues are
    floored at ``cov_floor`` times the largest eigenvalue to keep every
    Gaussian invertible.
    """

    def __init__(self, cloud: PointCloud, cell: float,
                 min_points: int = 5, cov_floor: float = 1e-3):
        if cell <= 0:
            raise ValueError("cell must be positive")
        self.cell = cell
        pts = cloud.points
        keys = voxel_keys(pts, cell)
        packed, basis = pack_keys(keys)
        self._basis = basis
        order = np.argsort(packed, kind="stable")
        sp = packed[order]
        starts = np.flatnonzero(np.r_[True, sp[1:] != sp[:-1]])
        counts = np.diff(np.r_[starts, len(sp)])
        keep = counts >= min_points
        if not keep.any():
            raise NdtUnusableError(
                f"no voxel has >= {min_points} points at cell {cell}")
        self._center = pts.mean(axis=0)
        means, infos = [], []
        codes = []
        x = pts - self._center
        for s, c in zip(starts[keep], counts[keep]):
            block = x[order[s:s + c]]
            mu = block.mean(axis=0)
            cov = np.cov(block.T, bias=True)
            w, v = np.linalg.eigh(cov)
            w = np.maximum(w, cov_floor * max(w[-1], 1e-12))
            info = (v / w) @ v.T
            means.append(mu)
            infos.append(info)
            codes.append(sp[s])
        self.means = np.asarray(means) + self._center
        self.infos = np.asarray(infos)
        code_arr = np.asarray(codes, dtype=np.int64)
        code_order = np.argsort(code_arr, kind="stable")
        self._codes_sorted = code_arr[code_order]
        self._slots_sorted = code_order

    def assign(self, points: np.ndarray) -> np.ndarray:
        """Voxel slot per point, -1 where the voxel holds no Gaussian."""
        keys = voxel_keys(points, self.cell)
        kmin, span = self._basis
        rel = keys - kmin
        inside = np.all((rel >= 0) & (rel < span), axis=1)
        out = np.full(len(points), -1, dtype=np.int64)
        if inside.any():
            packed, _ = pack_keys(keys[inside], self._basis)
            pos = np.searchsorted(self._codes_sorted, packed)
            pos_ok = pos < len(self._codes_sorted)
            hit = np.zeros(len(packed), dtype=bool)
            hit[pos_ok] = self._codes_sorted[pos[pos_ok]] == packed[pos_ok]
            slots = np.full(len(packed), -1, dtype=np.int64)
            slots[hit] = self._slots_sorted[pos[hit]]
            out[inside] = slots
        return out

    def score_terms(self, points: np.ndarray):
        """Per-point Gaussian likelihood terms and their residual data."""
        slot = self.assign(points)
        ok = slot >= 0
        q = points[ok] - self.means[slot[ok]]
        B = self.infos[slot[ok]]
        Bq = np.einsum("nij,nj->ni", B, q)
        m2 = np.einsum("ni,ni->n", q, Bq)
        e = np.exp(-0.5 * m2)
        return ok, q, B, Bq, e


def ndt_align(src: PointCloud, tgt: PointCloud, t_init: RigidTransform,
              cell: float, max_iter: int = 50, tol_trans: float = 1e-4,
              tol_rot: float = 1e-5, min_points: int = 5) -> NdtResult:
    """Align src onto tgt by maximizing the NDT score from ``t_init``.

    Raises:
        NdtUnusableError: every target voxel is degenerate.
    """
    grid = NdtGrid(tgt, cell, min_points=min_points)
    t = t_init
    score = _score(grid, t.apply(src.points))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        moved = t.apply(src.points)
        ok, q, B, Bq, e = grid.score_terms(moved)
        if not ok.any():
            break
        x = moved[ok]
        # gradient of -score and PSD Gauss-Newton Hessian
        jt_bq = np.concatenate([np.cross(x, Bq), Bq], axis=1)      # (n, 6)
        grad = (e[:, None] * jt_bq).sum(axis=0)
        ax = _cross_matrices(x)
        M12 = np.einsum("nab,nbc->nac", ax, B)
        M11 = np.einsum("nab,ncb->nac", M12, ax)
        H = np.zeros((6, 6))
        H[:3, :3] = np.einsum("n,nab->ab", e, M11)
        H[:3, 3:] = np.einsum("n,nab->ab", e, M12)
        H[3:, :3] = H[:3, 3:].T
        H[3:, 3:] = np.einsum("n,nab->ab", e, B)
        H += 1e-9 * np.eye(6)
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        accepted = False
        for _ in range(8):
            cand = t.perturbed(step[:3], step[3:])
            new_score = _score(grid, cand.apply(src.points))
            if new_score >= score - 1e-12:
                t, score = cand, new_score
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        if np.linalg.norm(step[3:]) < tol_trans and np.linalg.norm(step[:3]) < tol_rot:
            converged = True
            break
    return NdtResult(transform=t, score=score, iterations=it, converged=converged)


def _score(grid: NdtGrid, points: np.ndarray) -> float:
    ok, _, _, _, e = grid.score_terms(points)
    return float(e.sum())


def _cross_matrices(v: np.ndarray) -> np.ndarray:
    n = len(v)
    m = np.zeros((n, 3, 3))
    m[:, 0, 1] = -v[:, 2]
    m[:, 0, 2] = v[:, 1]
    m[:, 1, 0] = v[:, 2]
    m[:, 1, 2] = -v[:, 0]
    m[:, 2, 0] = -v[:, 1]
    m[:, 2, 1] = v[:, 0]
    return m
