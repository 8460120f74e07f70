"""Rigid SE(3) transform type and small-motion helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]],
                     [v[2], 0, -v[0]],
                     [-v[1], v[0], 0]], dtype=float)


def rotation_from_axis_angle(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector."""
    theta = float(np.linalg.norm(omega))
    if theta < 1e-12:
        return np.eye(3) + skew(omega)
    k = omega / theta
    K = skew(k)
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix by polar decomposition."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass
class RigidTransform:
    """Rotation + translation mapping source coordinates into target frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self, tol: float = 1e-9) -> None:
        R = self.rotation
        if R.shape != (3, 3):
            raise DataError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=tol):
            raise DataError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise DataError("rotation determinant is not +1")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(rotation=m[:3, :3], translation=m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            rotation=orthonormalize(self.rotation @ other.rotation),
            translation=self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(rotation=Rt, translation=-Rt @ self.translation)

    def perturbed(self, omega: np.ndarray, delta_t: np.ndarray) -> "RigidTransform":
        """Left-compose a small motion (rotation vector, translation)."""
        dR = rotation_from_axis_angle(np.asarray(omega, dtype=float))
        return RigidTransform(
            rotation=orthonormalize(dR @ self.rotation),
            translation=dR @ self.translation + np.asarray(delta_t, dtype=float))

    def difference(self, other: "RigidTransform") -> tuple[float, float]:
        """(rotation angle rad, translation distance m) between two transforms."""
        dR = self.rotation.T @ other.rotation
        return rotation_angle(dR), float(np.linalg.norm(self.translation - other.translation))


def transform_cloud(cloud, transform: RigidTransform):
    normals = None
    if cloud.normals is not None:
        normals = np.where(np.isfinite(cloud.normals),
                           transform.apply_vectors(cloud.normals), np.nan)
    return cloud.with_points(transform.apply(cloud.points), normals=normals)


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform taking src points onto dst points."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    S = np.diag([1.0, 1.0, d])
    R = vt.T @ S @ u.T
    return RigidTransform(rotation=orthonormalize(R), translation=cd - R @ cs)
