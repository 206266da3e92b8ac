"""Ground contact, tripod gait reference, leg inverse kinematics and joint PID."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .liegroup import Pose


class Unreachable(ValueError):
    def __init__(self, deficit: float):
        self.deficit = float(deficit)
        super().__init__(f"target outside the leg workspace by {self.deficit:.3e} m")


# ----------------------------------------------------------------------------
# contact


@dataclass(frozen=True)
class ContactParams:
    k_z: float = 10000.0
    d_z: float = 150.0
    d_t: float = 50.0

    def __post_init__(self):
        if min(self.k_z, self.d_z, self.d_t) < 0:
            raise ValueError("contact parameters must be non-negative")


def contact_forces_world(p: np.ndarray, pdot: np.ndarray, params: ContactParams) -> np.ndarray:
    """World-frame point forces for tips at heights ``p[..., 2]`` over the plane z = 0."""
    p = np.asarray(p, dtype=float)
    pdot = np.asarray(pdot, dtype=float)
    z, zd = p[..., 2], pdot[..., 2]
    touching = z < 0.0
    fz = np.where(touching, np.maximum(0.0, -params.k_z * z - params.d_z * zd), 0.0)
    f = np.zeros(np.broadcast_shapes(p.shape, pdot.shape))
    f[..., 0] = np.where(touching, -params.d_t * pdot[..., 0], 0.0)
    f[..., 1] = np.where(touching, -params.d_t * pdot[..., 1], 0.0)
    f[..., 2] = fz
    return f


def contact_wrench(tip_pose: Pose, tip_velocity, params: ContactParams = ContactParams()) -> np.ndarray:
    """Tip-frame wrench ``[force; torque]`` of a point contact.

    ``tip_velocity`` is the world-frame linear velocity of the tip point.
    """
    f = contact_forces_world(tip_pose.position, tip_velocity, params)
    return np.concatenate([tip_pose.rotation.T @ f, np.zeros(3)])


# ----------------------------------------------------------------------------
# gait

KNEE_BRANCH = {"down": 1, "up": -1}


@dataclass(frozen=True)
class GaitParams:
    """Tripod gait.  ``groups`` hold zero-based leg indices; group 2 runs half a cycle late.

    ``stance_offset`` pushes the reference tip outward from the hip along
    the leg's zero-angle direction; with zero offset the reference would
    sit on the yaw axis.
    """

    L_sl: float = 0.05
    L_sh: float = 0.12
    L_sd: float = 0.001
    T_g: float = 1.3
    H_0: float = 0.12
    dt: float = 1e-3
    groups: tuple[tuple[int, ...], tuple[int, ...]] = ((0, 3, 4), (1, 2, 5))
    stance_offset: float = 0.122
    knee: str = "down"

    def __post_init__(self):
        if self.knee not in KNEE_BRANCH:
            raise ValueError("knee must be 'down' or 'up'")
        if self.dt <= 0 or self.T_g <= 0:
            raise ValueError("dt and T_g must be positive")
        n = self.N_g
        if n < 4 or n % 2:
            raise ValueError(f"N_g = T_g / dt must be even and >= 4, got {n}")
        if abs(n * self.dt - self.T_g) > 1e-9 * self.T_g:
            raise ValueError("T_g must be an integer multiple of dt")

    @property
    def N_g(self) -> int:
        return int(round(self.T_g / self.dt))

    def phase_shift(self, leg: int) -> int:
        if leg in self.groups[0]:
            return 0
        if leg in self.groups[1]:
            return self.N_g // 2
        raise ValueError(f"leg {leg} belongs to no gait group")


def gait_reference(leg: int, k: int, params: GaitParams, hip, outward) -> np.ndarray:
    """Desired tip position in the body frame at step ``k``.

    ``hip`` is the hip position and ``outward`` the horizontal unit vector
    of the leg's zero-angle direction, both in the body frame.  The first
    half of each leg's cycle is swing, the second half support.
    """
    Ng = params.N_g
    kk = (int(k) + params.phase_shift(leg)) % Ng
    hip = np.asarray(hip, dtype=float)
    u = np.asarray(outward, dtype=float)
    x = hip[0] + params.stance_offset * u[0]
    y = hip[1] + params.stance_offset * u[1] - 0.5 * params.L_sl * np.cos(2.0 * np.pi * kk / Ng)
    amp = params.L_sh if kk < Ng // 2 else params.L_sd
    z = hip[2] + 0.5 * amp * (1.0 - np.cos(2.0 * np.pi * kk / (0.5 * Ng))) - params.H_0
    return np.array([x, y, z])


def in_swing(leg: int, k: int, params: GaitParams) -> bool:
    return (int(k) + params.phase_shift(leg)) % params.N_g < params.N_g // 2


# ----------------------------------------------------------------------------
# inverse kinematics


@dataclass(frozen=True)
class LegGeometry:
    """Yaw-pitch-pitch leg: yaw at the hip, pitch joints at ``L1`` and ``L1 + L2``."""

    L1: float
    L2: float
    L3: float


def leg_fk(theta, geom: LegGeometry) -> np.ndarray:
    """Tip position in the hip frame (closed form, same axes as the default leg)."""
    t1, t2, t3 = theta
    r = geom.L1 + geom.L2 * np.cos(t2) + geom.L3 * np.cos(t2 + t3)
    z = geom.L2 * np.sin(t2) + geom.L3 * np.sin(t2 + t3)
    return np.array([r * np.cos(t1), r * np.sin(t1), z])


def leg_ik(target, geom: LegGeometry, knee: str = "down", tol: float = 1e-12) -> np.ndarray:
    """Joint angles putting the tip at ``target`` (hip frame).

    ``knee="down"`` puts the middle joint below the line from the first
    pitch joint to the tip (``theta_3 >= 0``); ``"up"`` is the mirror branch.
    """
    branch = KNEE_BRANCH[knee]
    x, y, z = np.asarray(target, dtype=float)
    t1 = float(np.arctan2(y, x))
    r = np.hypot(x, y) - geom.L1
    d2 = r * r + z * z
    L2, L3 = geom.L2, geom.L3
    D = (d2 - L2 * L2 - L3 * L3) / (2.0 * L2 * L3)
    if D > 1.0 + tol:
        raise Unreachable(np.sqrt(d2) - (L2 + L3))
    if D < -1.0 - tol:
        raise Unreachable(abs(L2 - L3) - np.sqrt(d2))
    D = min(1.0, max(-1.0, D))
    t3 = branch * float(np.arccos(D))
    t2 = float(np.arctan2(z, r) - np.arctan2(L3 * np.sin(t3), L2 + L3 * np.cos(t3)))
    t2 = (t2 + np.pi) % (2.0 * np.pi) - np.pi
    return np.array([t1, t2, t3])


# ----------------------------------------------------------------------------
# PID


@dataclass(frozen=True)
class PIDGains:
    K1: float = 50.0
    K2: float = 1.0
    K3: float = 10.0
    integral_clamp: float = 2.0  # N m, bound on K3 * integral
    torque_limit: float = np.inf
    lock_stiffness: float = 500.0
    lock_damping: float = 1.0

    def __post_init__(self):
        if min(self.K1, self.K2, self.K3, self.integral_clamp, self.lock_stiffness, self.lock_damping) < 0:
            raise ValueError("gains must be non-negative")


@dataclass
class PIDState:
    integral: np.ndarray
    locked: np.ndarray = field(default=None)
    lock_angles: np.ndarray = field(default=None)

    @classmethod
    def zeros(cls, n: int) -> PIDState:
        return cls(np.zeros(n), np.zeros(n, dtype=bool), np.zeros(n))


def pid_torque(theta_des, theta_dot_des, theta, theta_dot, state: PIDState, gains: PIDGains, dt: float = 0.0):
    """Joint torques; advances ``state.integral`` by ``dt`` first when ``dt > 0``.

    Locked joints are held at ``state.lock_angles`` by a stiff spring-damper.
    """
    e = np.asarray(theta_des) - np.asarray(theta)
    ed = np.asarray(theta_dot_des) - np.asarray(theta_dot)
    if dt > 0.0:
        state.integral += e * dt
    if gains.K3 > 0.0:
        lim = gains.integral_clamp / gains.K3
        np.clip(state.integral, -lim, lim, out=state.integral)
    tau = gains.K1 * e + gains.K2 * ed + gains.K3 * state.integral
    if state.locked is not None and state.locked.any():
        hold = gains.lock_stiffness * (state.lock_angles - theta) - gains.lock_damping * np.asarray(theta_dot)
        tau = np.where(state.locked, hold, tau)
    return np.clip(tau, -gains.torque_limit, gains.torque_limit)
