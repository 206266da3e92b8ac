"""SE(3) / se(3) primitives.

Twists and wrenches are 6-vectors ordered ``[linear; angular]``.  Poses are
stored as a rotation matrix plus a position vector; :meth:`Pose.matrix`
gives the homogeneous 4x4 form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_ANGLE = 1e-8
_STRUCT_TOL = 1e-9


class StructuralError(ValueError):
    """A matrix does not have the expected Lie-algebra sparsity pattern."""


def skew(w):
    """3x3 skew matrix with ``skew(w) @ x == cross(w, x)``."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def unskew(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


@dataclass(frozen=True)
class Pose:
    """Element of SE(3)."""

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        p = np.array(self.position, dtype=float).reshape(3)
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> Pose:
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def translation(cls, p) -> Pose:
        return cls(np.eye(3), p)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def inverse(self) -> Pose:
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.position)

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.position + self.position,
        )

    def act(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.position

    def is_valid(self, tol: float = 1e-12) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0.0)
            and abs(np.linalg.det(R) - 1.0) <= tol
        )


def hat(xi) -> np.ndarray:
    """Map a twist ``[v; w]`` to its 4x4 se(3) matrix."""
    xi = np.asarray(xi, dtype=float)
    X = np.zeros((4, 4))
    X[:3, :3] = skew(xi[3:])
    X[:3, 3] = xi[:3]
    return X


def vee(X) -> np.ndarray:
    """Inverse of :func:`hat`; raises :class:`StructuralError` off-pattern."""
    X = np.asarray(X, dtype=float)
    if X.shape != (4, 4):
        raise StructuralError(f"expected a 4x4 matrix, got shape {X.shape}")
    W = X[:3, :3]
    if np.max(np.abs(W + W.T)) > _STRUCT_TOL or np.max(np.abs(X[3])) > _STRUCT_TOL:
        raise StructuralError("matrix is not an element of se(3)")
    return np.concatenate([X[:3, 3], unskew(W)])


def exp_se3(xi, theta: float = 1.0) -> Pose:
    """Rodrigues exponential ``exp(hat(xi) * theta)``.

    ``xi`` need not have a unit angular part; the small-rotation branch
    switches to a second-order series below ``|w theta| < 1e-8``.
    """
    xi = np.asarray(xi, dtype=float)
    rho = xi[:3] * theta
    phi = xi[3:] * theta
    angle = float(np.linalg.norm(phi))
    K = skew(phi)
    K2 = K @ K
    if angle < _SMALL_ANGLE:
        R = np.eye(3) + K + 0.5 * K2
        V = np.eye(3) + 0.5 * K + K2 / 6.0
    else:
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / angle**2
        c = (angle - np.sin(angle)) / angle**3
        R = np.eye(3) + a * K + b * K2
        V = np.eye(3) + b * K + c * K2
    return Pose(R, V @ rho)


def adjoint_of(g: Pose) -> np.ndarray:
    """6x6 adjoint ``[[R, p^ R], [0, R]]`` of a pose."""
    R, p = g.rotation, g.position
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = R
    Ad[:3, 3:] = skew(p) @ R
    Ad[3:, 3:] = R
    return Ad


def adjoint_inv_of(g: Pose) -> np.ndarray:
    """``inv(adjoint_of(g))`` built from the analytic pose inverse."""
    return adjoint_of(g.inverse())


def ad_of(xi) -> np.ndarray:
    """6x6 Lie-bracket operator ``[[w^, v^], [0, w^]]``."""
    xi = np.asarray(xi, dtype=float)
    ad = np.zeros((6, 6))
    W = skew(xi[3:])
    ad[:3, :3] = W
    ad[:3, 3:] = skew(xi[:3])
    ad[3:, 3:] = W
    return ad


def bracket(xi, eta) -> np.ndarray:
    A, B = hat(xi), hat(eta)
    return vee(A @ B - B @ A)


def revolute_screw(axis, point) -> np.ndarray:
    """Zero-pitch screw ``[-w x q; w]`` about a unit axis through ``point``."""
    w = np.asarray(axis, dtype=float)
    w = w / np.linalg.norm(w)
    q = np.asarray(point, dtype=float)
    return np.concatenate([-np.cross(w, q), w])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def zyx_euler(R) -> tuple[float, float, float, bool]:
    """(roll, pitch, yaw) for ``R = Rz(yaw) Ry(pitch) Rx(roll)`` plus a gimbal-lock flag."""
    R = np.asarray(R)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = float(np.arcsin(sp))
    gimbal = abs(sp) > 1.0 - 1e-9
    if gimbal:
        roll = 0.0
        yaw = float(np.arctan2(-R[0, 1], R[1, 1]))
    else:
        roll = float(np.arctan2(R[2, 1], R[2, 2]))
        yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    return roll, pitch, yaw, gimbal
