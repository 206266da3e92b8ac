"""Product-of-exponentials kinematics of single-branch legs.

Functions here work on one attached :class:`~mlrdyn.model.LegMorphology`
(screws in the main-body frame).  Joints and links are numbered from 1;
0 stands for the empty product.
"""

from __future__ import annotations

import numpy as np

from .liegroup import Pose, adjoint_inv_of, adjoint_of, exp_se3
from .model import LegMorphology, MorphologyVectors, RobotModel


def _check_link(leg: LegMorphology, j: int) -> None:
    if not 1 <= j <= leg.dof:
        raise IndexError(f"link {j} out of range 1..{leg.dof}")


def joint_exponentials(leg: LegMorphology, theta) -> list[Pose]:
    return [exp_se3(leg.screws[k], float(theta[k])) for k in range(leg.dof)]


def chain_product(leg: LegMorphology, theta, k: int, j: int) -> Pose:
    """``exp(xi_k theta_k) ... exp(xi_j theta_j)``; identity when empty."""
    g = Pose.identity()
    for m in range(max(k, 1), j + 1):
        g = g @ exp_se3(leg.screws[m - 1], float(theta[m - 1]))
    return g


def link_pose(leg: LegMorphology, j: int, theta) -> Pose:
    """Pose of link ``j`` relative to the main body."""
    _check_link(leg, j)
    return chain_product(leg, theta, 1, j) @ leg.home_link_poses[j - 1]


def tip_pose(leg: LegMorphology, theta) -> Pose:
    if leg.tip_home_pose is None:
        raise ValueError(f"{leg.name} has no tip frame")
    return chain_product(leg, theta, 1, leg.dof) @ leg.tip_home_pose


def accumulated_adjoint(leg: LegMorphology, k: int, j: int, theta) -> np.ndarray:
    """``Ad((e_k ... e_j)^-1)``; identity for ``k == 0`` and zero for ``k > j``."""
    if k == 0:
        return np.eye(6)
    if k > j:
        return np.zeros((6, 6))
    return adjoint_inv_of(chain_product(leg, theta, k, j))


def instantaneous_screws(leg: LegMorphology, theta) -> np.ndarray:
    """Rows ``xi'_k = Ad(e_1 ... e_{k-1}) xi_k``."""
    out = np.empty((leg.dof, 6))
    g = Pose.identity()
    for k in range(leg.dof):
        out[k] = adjoint_of(g) @ leg.screws[k]
        g = g @ exp_se3(leg.screws[k], float(theta[k]))
    return out


def leg_body_jacobian(leg: LegMorphology, j: int, theta) -> np.ndarray:
    """6 x n map from joint rates to link ``j`` velocity, zero beyond column ``j``.

    ``j = n + 1`` is accepted and means the tip frame (all columns).
    """
    if not 1 <= j <= leg.dof + 1:
        raise IndexError(f"link {j} out of range 1..{leg.dof + 1}")
    J = np.zeros((6, leg.dof))
    cols = min(j, leg.dof)
    J[:, :cols] = instantaneous_screws(leg, theta)[:cols].T
    return J


def tip_jacobian_block(leg: LegMorphology, theta) -> tuple[np.ndarray, np.ndarray]:
    """``(Ad^-1 of the tip pose, Ad^-1 of the tip pose times the tip Jacobian)``."""
    Ai = adjoint_inv_of(tip_pose(leg, theta))
    return Ai, Ai @ leg_body_jacobian(leg, leg.dof + 1, theta)


def contact_jacobian(model: RobotModel, mv: MorphologyVectors, theta) -> np.ndarray:
    """Stacked tip Jacobian at reduced dimension; rows only for present tips."""
    theta = np.asarray(theta, dtype=float)
    tips = mv.tip_present(model)
    J = np.zeros((6 * model.N, model.dof))
    for i, leg in enumerate(model.attached_legs):
        if not tips[i]:
            continue
        sl = model.leg_slice(i)
        Ai, AJ = tip_jacobian_block(leg, theta[sl])
        J[6 * i : 6 * i + 6, :6] = Ai
        J[6 * i : 6 * i + 6, 6 + sl.start : 6 + sl.stop] = AJ
    rows = np.concatenate([np.arange(6 * i, 6 * i + 6) for i in np.flatnonzero(tips)] or [[]])
    return J[np.ix_(rows.astype(np.int64), mv.present_dofs)]
