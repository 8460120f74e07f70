"""Robust point-to-plane ICP with an optional plane-to-plane penalty.

Residuals are target-normal projections of correspondence offsets; Tukey's
biweight bounds their influence while a Huber weight on the Euclidean
correspondence distance down-weights long-range pairs. Gauss-Newton updates
use analytic Jacobians; ill-conditioned updates are rejected by a condition
bound on the 6x6 Hessian (the normal-direction information test).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import RegistrationConfig
from ..core.cloud import PointCloud, SpatialIndex
from ..errors import RegistrationError
from .planes import PlaneSet
from .rigid import RigidTransform, orthonormalize

FLAG_ILL_CONDITIONED = "ill-conditioned"


@dataclass
class RegistrationReport:
    """Outcome of one ICP solve (or the final cascade level)."""

    transform: RigidTransform
    rmse_pt2plane: float
    inlier_ratio: float
    pose_std: np.ndarray                 # 3 rotation stds (rad), 3 translation (m)
    sigma_reg: float
    iterations_per_level: list = field(default_factory=list)
    converged: bool = True
    flags: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)  # (before, after) pairs

    def to_text(self) -> str:
        m = self.transform.matrix().reshape(-1)
        lines = ["transform = " + " ".join(repr(float(v)) for v in m),
                 f"rmse_pt2plane = {self.rmse_pt2plane!r}",
                 f"inlier_ratio = {self.inlier_ratio!r}",
                 f"sigma_reg = {self.sigma_reg!r}",
                 "pose_std = " + " ".join(repr(float(v)) for v in self.pose_std),
                 "iterations_per_level = " + " ".join(str(i) for i in self.iterations_per_level),
                 f"converged = {int(self.converged)}",
                 "flags = " + ",".join(self.flags)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RegistrationReport":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        m = np.array([float(x) for x in kv["transform"].split()]).reshape(4, 4)
        return cls(
            transform=RigidTransform.from_matrix(m),
            rmse_pt2plane=float(kv["rmse_pt2plane"]),
            inlier_ratio=float(kv["inlier_ratio"]),
            pose_std=np.array([float(x) for x in kv["pose_std"].split()]),
            sigma_reg=float(kv["sigma_reg"]),
            iterations_per_level=[int(x) for x in kv.get("iterations_per_level", "").split()],
            converged=bool(int(kv.get("converged", "1"))),
            flags=[f for f in kv.get("flags", "").split(",") if f],
        )


def point_to_plane_residuals(src_pts: np.ndarray, transform: RigidTransform,
                             tgt_pts: np.ndarray, tgt_normals: np.ndarray):
    """Residuals r_i = n_i . (T p_i - q_i) and their analytic Jacobians.

    The Jacobian is taken with respect to a small left-composed motion
    (rotation vector, translation): J_i = [x_i' x n_i, n_i] with x' = T p.
    """
    x = transform.apply(src_pts)
    r = np.einsum("ij,ij->i", tgt_normals, x - tgt_pts)
    J = np.concatenate([np.cross(x, tgt_normals), tgt_normals], axis=1)
    return r, J


def tukey_weight(r: np.ndarray, tau: float) -> np.ndarray:
    """IRLS weight of Tukey's biweight: (1 - (r/tau)^2)^2 inside, 0 outside."""
    u = r / tau
    w = 1.0 - u * u
    return np.where(np.abs(u) <= 1.0, w * w, 0.0)


def tukey_rho(r: np.ndarray, tau: float) -> np.ndarray:
    u = np.clip((r / tau) ** 2, 0.0, 1.0)
    return tau * tau / 6.0 * (1.0 - (1.0 - u) ** 3)


def huber_weight(d: np.ndarray, delta: float) -> np.ndarray:
    return np.where(d <= delta, 1.0, delta / np.maximum(d, 1e-12))


def icp_point_to_plane(
    src: PointCloud,
    tgt_index: SpatialIndex,
    t_init: RigidTransform,
    config: RegistrationConfig | None = None,
    planes: tuple[PlaneSet, PlaneSet] | None = None,
) -> RegistrationReport:
    """Minimize the robust point-to-plane objective from ``t_init``.

    ``planes``, when given, adds the plane-to-plane normal penalty between
    extracted source/target plane sets at the configured weight.

    Raises:
        RegistrationError: fewer than 10 correspondences at any iteration, or
            a non-finite Hessian.
    """
    cfg = config or RegistrationConfig()
    tgt = tgt_index.cloud
    if tgt.normals is None:
        raise RegistrationError("icp", "target cloud has no normals")
    tgt_valid = tgt.valid_normal_mask
    t = t_init
    trace: list[tuple[float, float]] = []
    flags: list[str] = []
    converged = False
    iterations = 0

    pl_src = pl_tgt = None
    if planes is not None and len(planes[0].normals) and len(planes[1].normals):
        pl_src, pl_tgt = _match_planes(planes[0], planes[1], t_init)

    def correspondences(transform):
        moved = transform.apply(src.points)
        dist, idx = tgt_index.nearest(moved, k=1, max_dist=cfg.icp_corr_dist)
        ok = np.isfinite(dist)
        ok[ok] &= tgt_valid[idx[ok]]
        n_corr = int(ok.sum())
        if n_corr < 10:
            raise RegistrationError(
                "icp", f"only {n_corr} correspondences within {cfg.icp_corr_dist} m")
        return src.points[ok], tgt.points[idx[ok]], tgt.normals[idx[ok]], dist[ok]

    def objective(transform, p, q, n, w_h):
        r, _ = point_to_plane_residuals(p, transform, q, n)
        obj = float((w_h * tukey_rho(r, cfg.tukey_tau)).sum())
        if pl_src is not None:
            e, _ = _plane_residuals(pl_src, pl_tgt, transform)
            obj += cfg.plane_weight * float((e * e).sum())
        return obj

    for iterations in range(1, cfg.icp_max_iter + 1):
        p, q, n, d = correspondences(t)
        r, J = point_to_plane_residuals(p, t, q, n)
        w_h = huber_weight(d, cfg.huber_delta)
        c = w_h * tukey_weight(r, cfg.tukey_tau)
        obj = objective(t, p, q, n, w_h)

        H = (J * c[:, None]).T @ J
        g = J.T @ (c * r)
        if pl_src is not None:
            e, Jp = _plane_residuals(pl_src, pl_tgt, t)
            Jp2 = Jp.reshape(-1, 6)
            H += 2.0 * cfg.plane_weight * (Jp2.T @ Jp2)
            g += 2.0 * cfg.plane_weight * Jp2.T @ e.reshape(-1)
        if not np.all(np.isfinite(H)) or not np.all(np.isfinite(g)):
            raise RegistrationError("icp", "non-finite Hessian")
        if np.linalg.cond(H) > cfg.hessian_cond_max:
            flags.append(FLAG_ILL_CONDITIONED)
            break

        step = np.linalg.solve(H, -g)
        accepted = False
        for _ in range(6):
            cand = t.perturbed(step[:3], step[3:])
            cand = RigidTransform(rotation=orthonormalize(cand.rotation),
                                  translation=cand.translation)
            obj2 = objective(cand, p, q, n, w_h)
            if obj2 <= obj + 1e-12:
                trace.append((obj, obj2))
                t = cand
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            converged = True
            break
        if np.linalg.norm(step[3:]) < cfg.icp_tol_trans \
                and np.linalg.norm(step[:3]) < cfg.icp_tol_rot:
            converged = True
            break

    # final-state statistics and covariance at the converged transform
    p, q, n, d = correspondences(t)
    r, J = point_to_plane_residuals(p, t, q, n)
    w_h = huber_weight(d, cfg.huber_delta)
    c = w_h * tukey_weight(r, cfg.tukey_tau)
    H = (J * c[:, None]).T @ J
    live = c > 0
    n_live = int(live.sum())
    rmse = float(np.sqrt(np.mean(r * r)))
    variance = float((c * r * r).sum()) / max(n_live - 6, 1)
    try:
        cov = variance * np.linalg.inv(H)
        pose_std = np.sqrt(np.maximum(np.diag(cov), 0.0))
        sigma_reg = float(np.max(pose_std[3:]))
    except np.linalg.LinAlgError:
        pose_std = np.full(6, np.nan)
        sigma_reg = 0.0
        flags.append("singular-hessian")
    return RegistrationReport(
        transform=t, rmse_pt2plane=rmse,
        inlier_ratio=float(n_live / max(len(src), 1)),
        pose_std=pose_std, sigma_reg=sigma_reg,
        iterations_per_level=[iterations], converged=converged,
        flags=flags, objective_trace=trace)


def _match_planes(a: PlaneSet, b: PlaneSet, t: RigidTransform):
    """Pair source planes with their most parallel target plane."""
    rotated = a.normals @ t.rotation.T
    dots = np.abs(rotated @ b.normals.T)
    pick = dots.argmax(axis=1)
    good = dots[np.arange(len(a.normals)), pick] > np.cos(np.radians(15.0))
    if not good.any():
        return None, None
    src_n = a.normals[good]
    tgt_n = b.normals[pick[good]]
    # align signs so the penalty measures direction difference, not flips
    flip = np.einsum("ij,ij->i", src_n @ t.rotation.T, tgt_n) < 0
    tgt_n = tgt_n.copy()
    tgt_n[flip] *= -1.0
    return src_n, tgt_n


def _plane_residuals(src_n: np.ndarray, tgt_n: np.ndarray, t: RigidTransform):
    """Residual vectors R n_src - n_tgt with Jacobians wrt the left increment."""
    m = src_n @ t.rotation.T
    e = m - tgt_n
    n = len(m)
    J = np.zeros((n, 3, 6))
    # d(dR m)/d omega = -[m]x
    J[:, 0, 1] = m[:, 2]
    J[:, 0, 2] = -m[:, 1]
    J[:, 1, 0] = -m[:, 2]
    J[:, 1, 2] = m[:, 0]
    J[:, 2, 0] = m[:, 1]
    J[:, 2, 1] = -m[:, 0]
    return e, J
