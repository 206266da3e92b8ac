"""Reference evaluation of the quasi-velocity equations of motion.

    M(theta) v_dot + C(theta, v) v + N(Q) = tau + J^T F

The per-link functions are written for clarity and serve as the oracle
for the compiled kernels (:mod:`mlrdyn._kernels`) and the trigonometric
fast path (:mod:`mlrdyn.fastdyn`).  Link and joint numbers start at 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kinematics import (
    accumulated_adjoint,
    contact_jacobian,
    instantaneous_screws,
    leg_body_jacobian,
    link_pose,
)
from .liegroup import Pose, ad_of, skew
from .model import LegMorphology, MorphologyVectors, RobotModel, validate_morphology


class SingularMass(np.linalg.LinAlgError):
    """The mass matrix could not be factorized."""


@dataclass(frozen=True)
class StructuralMatrices:
    """M, C, N and the stacked tip Jacobian at the reduced dimension."""

    M: np.ndarray
    C: np.ndarray
    N: np.ndarray
    J: np.ndarray

    @property
    def dof(self) -> int:
        return self.M.shape[0]

    def allclose(self, other: StructuralMatrices, atol: float) -> bool:
        return all(
            a.shape == b.shape and (a.size == 0 or np.max(np.abs(a - b)) <= atol)
            for a, b in zip(self.astuple(), other.astuple())
        )

    def astuple(self):
        return self.M, self.C, self.N, self.J


# ----------------------------------------------------------------------------
# per link


def link_mass(leg: LegMorphology, j: int, theta):
    """Mass blocks of link ``j``: ``(M_bb, M_btheta, M_thetatheta)``."""
    A = accumulated_adjoint(leg, 1, j, theta)
    Mbb = A.T @ leg.spatial_inertias[j - 1] @ A
    J = leg_body_jacobian(leg, j, theta)
    Mbt = Mbb @ J
    return Mbb, Mbt, J.T @ Mbt


def d_accumulated_adjoint(leg: LegMorphology, j: int, k: int, theta) -> np.ndarray:
    """Derivative of ``Ad^1_j`` with respect to joint ``k``.

    ``-Ad^{k+1}_j ad(xi_k) Ad^1_k`` for ``k <= j``; the leading factor is the
    identity when ``k == j``.
    """
    if k > j:
        return np.zeros((6, 6))
    lead = np.eye(6) if k == j else accumulated_adjoint(leg, k + 1, j, theta)
    return -lead @ ad_of(leg.screws[k - 1]) @ accumulated_adjoint(leg, 1, k, theta)


def d_instantaneous_screw(leg: LegMorphology, beta: int, k: int, theta) -> np.ndarray:
    """Derivative of ``xi'_beta`` with respect to joint ``k`` (zero unless ``k < beta``)."""
    if k >= beta:
        return np.zeros(6)
    inner = leg.screws[beta - 1]
    if k + 1 <= beta - 1:
        inner = np.linalg.solve(accumulated_adjoint(leg, k + 1, beta - 1, theta), inner)
    outer = np.linalg.inv(accumulated_adjoint(leg, 1, k, theta))
    return outer @ ad_of(leg.screws[k - 1]) @ inner


def d_link_jacobian(leg: LegMorphology, j: int, k: int, theta) -> np.ndarray:
    dJ = np.zeros((6, leg.dof))
    for beta in range(k + 1, j + 1):
        dJ[:, beta - 1] = d_instantaneous_screw(leg, beta, k, theta)
    return dJ


def mass_partials(leg: LegMorphology, j: int, theta, k: int):
    """Closed-form derivative of :func:`link_mass` with respect to joint ``k``."""
    n = leg.dof
    if k > j:
        return np.zeros((6, 6)), np.zeros((6, n)), np.zeros((n, n))
    A = accumulated_adjoint(leg, 1, j, theta)
    dA = d_accumulated_adjoint(leg, j, k, theta)
    II = leg.spatial_inertias[j - 1]
    X = dA.T @ II @ A
    Mbb = A.T @ II @ A
    dMbb = X + X.T
    J = leg_body_jacobian(leg, j, theta)
    dJ = d_link_jacobian(leg, j, k, theta)
    dMbt = dMbb @ J + Mbb @ dJ
    Y = dJ.T @ Mbb @ J
    dMtt = J.T @ dMbb @ J + Y + Y.T
    return dMbb, dMbt, dMtt


# ----------------------------------------------------------------------------
# whole robot, full (healthy) dimension with existence weights


def _weights(model: RobotModel, mv: MorphologyVectors) -> np.ndarray:
    x = mv.link_existence.astype(float).copy()
    for i in range(model.N):
        x[model.leg_slice(i)] *= mv.leg_existence[i]
    return x


def _expand(model: RobotModel, mv: MorphologyVectors, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size == model.dof:
        return v
    if v.size != mv.reduced_dof:
        raise ValueError(f"expected {mv.reduced_dof} or {model.dof} entries, got {v.size}")
    full = np.zeros(model.dof)
    full[mv.present_dofs] = v
    return full


def _reduce(mv: MorphologyVectors, A: np.ndarray) -> np.ndarray:
    d = mv.present_dofs
    return A[np.ix_(d, d)] if A.ndim == 2 else A[d]


def mass_full(model: RobotModel, mv: MorphologyVectors, theta) -> np.ndarray:
    x = _weights(model, mv)
    M = np.zeros((model.dof, model.dof))
    M[:6, :6] = model.body_inertia
    for i, leg in enumerate(model.attached_legs):
        sl = model.leg_slice(i)
        cols = slice(6 + sl.start, 6 + sl.stop)
        for j in range(1, leg.dof + 1):
            w = x[sl.start + j - 1]
            if w == 0.0:
                continue
            Mbb, Mbt, Mtt = link_mass(leg, j, theta[sl])
            M[:6, :6] += w * Mbb
            M[:6, cols] += w * Mbt
            M[cols, :6] += w * Mbt.T
            M[cols, cols] += w * Mtt
    return M


def assemble_mass(model: RobotModel, mv: MorphologyVectors, theta) -> np.ndarray:
    validate_morphology(model, mv)
    return _reduce(mv, mass_full(model, mv, np.asarray(theta, dtype=float)))


def mass_derivative_full(model: RobotModel, mv: MorphologyVectors, theta, q: int) -> np.ndarray:
    """``dM/dtheta_q`` at full dimension (``q`` is a zero-based index into theta)."""
    x = _weights(model, mv)
    dM = np.zeros((model.dof, model.dof))
    for i, leg in enumerate(model.attached_legs):
        sl = model.leg_slice(i)
        if not sl.start <= q < sl.stop:
            continue
        k = q - sl.start + 1
        cols = slice(6 + sl.start, 6 + sl.stop)
        for j in range(k, leg.dof + 1):
            w = x[sl.start + j - 1]
            if w == 0.0:
                continue
            dMbb, dMbt, dMtt = mass_partials(leg, j, theta[sl], k)
            dM[:6, :6] += w * dMbb
            dM[:6, cols] += w * dMbt
            dM[cols, :6] += w * dMbt.T
            dM[cols, cols] += w * dMtt
    return dM


def coriolis_full(model: RobotModel, mv: MorphologyVectors, theta, v) -> np.ndarray:
    n = model.dof
    M = mass_full(model, mv, theta)
    P = M @ v
    dMs = [mass_derivative_full(model, mv, theta, q) for q in range(model.N_T)]
    A = np.zeros((n, n))
    for q, dM in enumerate(dMs):
        A += dM * v[6 + q]
    corr = np.zeros((n, n))
    corr[:3, 3:6] = skew(P[:3])
    corr[3:6, :3] = skew(P[:3])
    corr[3:6, 3:6] = skew(P[3:6])
    # row q of the lower block is (dP / dtheta_q)^T
    for q, dM in enumerate(dMs):
        corr[6 + q, :] = 0.5 * (dM @ v)
    return A - corr


def coriolis(model: RobotModel, mv: MorphologyVectors, theta, v) -> np.ndarray:
    """Coriolis matrix at the reduced dimension.  ``v`` may be reduced or full."""
    validate_morphology(model, mv)
    theta = np.asarray(theta, dtype=float)
    return _reduce(mv, coriolis_full(model, mv, theta, _expand(model, mv, v)))


def _gravity_body(model: RobotModel, g_sb: Pose) -> np.ndarray:
    return g_sb.rotation.T @ model.gravity


def mass_moment(model: RobotModel, mv: MorphologyVectors, theta):
    """Total present mass and ``sum m_k p_k`` in the body frame."""
    x = _weights(model, mv)
    m_tot = model.body_mass
    mp = model.body_mass * model.body_com
    for i, leg in enumerate(model.attached_legs):
        sl = model.leg_slice(i)
        for j in range(1, leg.dof + 1):
            w = x[sl.start + j - 1]
            if w == 0.0:
                continue
            p = _link_com(leg, j, theta[sl])
            m_tot += w * leg.masses[j - 1]
            mp = mp + w * leg.masses[j - 1] * p
    return m_tot, mp


def _link_com(leg: LegMorphology, j: int, theta) -> np.ndarray:
    g = link_pose(leg, j, theta)
    c_local = leg.home_link_poses[j - 1].inverse().act(leg.home_coms[j - 1])
    return g.act(c_local)


def potential_energy(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta) -> float:
    m_tot, mp = mass_moment(model, mv, np.asarray(theta, dtype=float))
    return float(-model.gravity @ (m_tot * g_sb.position + g_sb.rotation @ mp))


def potential_forces_full(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta) -> np.ndarray:
    x = _weights(model, mv)
    gb = _gravity_body(model, g_sb)
    m_tot, mp = mass_moment(model, mv, theta)
    N = np.zeros(model.dof)
    N[:3] = -m_tot * gb
    N[3:6] = -np.cross(mp, gb)
    for i, leg in enumerate(model.attached_legs):
        sl = model.leg_slice(i)
        th = theta[sl]
        xs = instantaneous_screws(leg, th)
        for j in range(1, leg.dof + 1):
            w = x[sl.start + j - 1]
            if w == 0.0:
                continue
            p = _link_com(leg, j, th)
            f = w * leg.masses[j - 1] * gb
            for k in range(1, j + 1):
                dp = xs[k - 1, :3] + np.cross(xs[k - 1, 3:], p)
                N[6 + sl.start + k - 1] -= f @ dp
    return N


def potential_forces(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta) -> np.ndarray:
    validate_morphology(model, mv)
    return _reduce(mv, potential_forces_full(model, mv, g_sb, np.asarray(theta, dtype=float)))


def kinetic_energy(model: RobotModel, mv: MorphologyVectors, theta, v) -> float:
    v = _expand(model, mv, v)
    return float(0.5 * v @ mass_full(model, mv, np.asarray(theta, dtype=float)) @ v)


def total_energy(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta, v) -> float:
    return kinetic_energy(model, mv, theta, v) + potential_energy(model, mv, g_sb, theta)


def structural_matrices(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta, v) -> StructuralMatrices:
    """All four matrices: full-dimension assembly with existence weights, then reshape."""
    validate_morphology(model, mv)
    theta = np.asarray(theta, dtype=float)
    vf = _expand(model, mv, v)
    return StructuralMatrices(
        M=_reduce(mv, mass_full(model, mv, theta)),
        C=_reduce(mv, coriolis_full(model, mv, theta, vf)),
        N=_reduce(mv, potential_forces_full(model, mv, g_sb, theta)),
        J=contact_jacobian(model, mv, theta),
    )


def reconfigure(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta, v) -> StructuralMatrices:
    """Structural matrices of the damaged robot without re-deriving anything."""
    return structural_matrices(model, mv, g_sb, theta, v)


def solve_mass(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cf = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMass(str(exc)) from exc
    return scipy.linalg.cho_solve(cf, rhs, check_finite=False)


def forward_dynamics_from(S: StructuralMatrices, v, tau, F_tips=None) -> np.ndarray:
    rhs = np.asarray(tau, dtype=float) - S.C @ v - S.N
    if F_tips is not None and S.J.shape[0]:
        rhs = rhs + S.J.T @ np.asarray(F_tips, dtype=float).reshape(-1)
    return solve_mass(S.M, rhs)


def forward_dynamics(model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta, v, tau, F_tips=None):
    """Quasi-acceleration at the reduced dimension ``(v, tau, F_tips reduced)``."""
    S = structural_matrices(model, mv, g_sb, theta, v)
    v = np.asarray(v, dtype=float)
    if v.size != S.dof:
        v = v[mv.present_dofs]
    return forward_dynamics_from(S, v, tau, F_tips)


# ----------------------------------------------------------------------------
# compiled evaluation


class KernelEvaluator:
    """Per-simulation evaluation context around the compiled kernels.

    Holds padded per-leg arrays and scratch buffers; not shared between
    threads.  Subclasses fill the per-leg block rows in :meth:`_blocks`.
    """

    def __init__(self, model: RobotModel, mv: MorphologyVectors | None = None):
        self.model = model
        legs = model.attached_legs
        N = model.N
        n = max(model.leg_sizes)
        self.nmax = n
        self.nj = np.array(model.leg_sizes, dtype=np.int64)
        self.offs = np.asarray(model.offsets, dtype=np.int64)
        self.S = np.zeros((N, n, 6))
        self.II = np.tile(np.eye(6), (N, n, 1, 1))
        self.mass = np.zeros((N, n))
        self.c0 = np.zeros((N, n, 3))
        self.tip0 = np.tile(np.eye(4), (N, 1, 1))
        self.has_tip = np.zeros(N, dtype=bool)
        for i, leg in enumerate(legs):
            m = leg.dof
            self.S[i, :m] = leg.screws
            self.II[i, :m] = leg.spatial_inertias
            self.mass[i, :m] = leg.masses
            self.c0[i, :m] = leg.home_coms
            if leg.tip_home_pose is not None:
                self.tip0[i] = leg.tip_home_pose.matrix()
                self.has_tip[i] = True
        from ._kernels import layout

        lo = layout(n)
        self.layout = lo
        self.val = np.zeros((N, lo["value"]))
        self.dval = np.zeros((N, n, lo["partial"]))
        self.tipg = np.tile(np.eye(4), (N, 1, 1))
        dof = model.dof
        self.M = np.zeros((dof, dof))
        self.C = np.zeros((dof, dof))
        self.Nv = np.zeros(dof)
        self.J = np.zeros((6 * N, dof))
        self.Ib = np.ascontiguousarray(model.body_inertia)
        self.mc_body = model.body_mass * model.body_com
        self.set_morphology(mv or MorphologyVectors.healthy(model))

    def set_morphology(self, mv: MorphologyVectors) -> None:
        validate_morphology(self.model, mv)
        self.mv = mv
        w = np.zeros((self.model.N, self.nmax))
        for i in range(self.model.N):
            m = self.model.leg_sizes[i]
            w[i, :m] = mv.leg_links(i) * mv.leg_existence[i]
        self.w = w
        self.leg_mass = (w * self.mass).sum(axis=1)
        self.tipmask = mv.tip_present(self.model)
        self.dofs = mv.present_dofs
        self.tip_rows = np.concatenate(
            [np.arange(6 * i, 6 * i + 6) for i in np.flatnonzero(self.tipmask)] or [[]]
        ).astype(np.int64)
        self._morphology_changed()

    def _morphology_changed(self) -> None:
        pass

    def _blocks(self, theta: np.ndarray) -> None:
        raise NotImplementedError

    def evaluate_full(self, R: np.ndarray, theta, v_full) -> None:
        """Fill ``self.M``, ``C``, ``Nv``, ``J`` (full dimension) and ``tipg``."""
        from ._kernels import assemble_full

        theta = np.ascontiguousarray(theta, dtype=float)
        self._blocks(theta)
        gb = np.ascontiguousarray(R.T @ self.model.gravity)
        self.m_tot, self.mp = assemble_full(
            self.val, self.dval, self.nj, self.offs, self.Ib, self.model.body_mass,
            self.mc_body, self.leg_mass, np.ascontiguousarray(v_full, dtype=float), gb,
            self.tipmask, self.M, self.C, self.Nv, self.J,
        )

    def structural(self, g_sb: Pose, theta, v) -> StructuralMatrices:
        """Reduced structural matrices; ``v`` may be reduced or full length."""
        vf = _expand(self.model, self.mv, v)
        self.evaluate_full(g_sb.rotation, theta, vf)
        d = self.dofs
        ix = np.ix_(d, d)
        return StructuralMatrices(
            M=self.M[ix], C=self.C[ix], N=self.Nv[d], J=self.J[np.ix_(self.tip_rows, d)]
        )

    def potential_energy(self, p_sb: np.ndarray, R: np.ndarray) -> float:
        """Uses the mass moment of the last evaluation."""
        return float(-self.model.gravity @ (self.m_tot * p_sb + R @ self.mp))


class NaiveEvaluator(KernelEvaluator):
    """Closed-form route: accumulated adjoints and their derivatives every step."""

    name = "naive"

    def _blocks(self, theta):
        from ._kernels import leg_blocks_naive

        leg_blocks_naive(
            self.S, self.II, self.mass, self.c0, self.tip0, self.nj, self.w, theta,
            self.offs, self.val, self.dval, self.tipg,
        )
