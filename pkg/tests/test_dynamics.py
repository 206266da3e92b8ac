import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mlrdyn import _jit, _kernels
from mlrdyn.dynamics import (
    NaiveEvaluator,
    SingularMass,
    assemble_mass,
    coriolis,
    d_accumulated_adjoint,
    d_instantaneous_screw,
    forward_dynamics,
    link_mass,
    mass_full,
    mass_partials,
    potential_energy,
    potential_forces,
    solve_mass,
    structural_matrices,
    total_energy,
)
from mlrdyn.kinematics import accumulated_adjoint, instantaneous_screws, link_pose
from mlrdyn.liegroup import Pose, ad_of, adjoint_inv_of, exp_se3, vee
from mlrdyn.model import MorphologyVectors, build_hexapod_default

from conftest import damage_morphologies, random_rotation

MODEL = build_hexapod_default()
MORPHS = damage_morphologies(MODEL)
LEG = MODEL.attached_legs[3]
H = 1e-6
angles3 = arrays(np.float64, 3, elements=st.floats(-np.pi, np.pi))


def fd(f, x, k, h=H):
    e = np.zeros_like(x)
    e[k] = h
    return (f(x + e) - f(x - e)) / (2 * h)


def link_kinetic_oracle(leg, j, theta, Vb, rate):
    """½ V^T I V with the link twist from finite differences of its pose."""
    g = link_pose(leg, j, theta).matrix()
    gp = link_pose(leg, j, theta + H * rate).matrix()
    gm = link_pose(leg, j, theta - H * rate).matrix()
    rel = vee(np.linalg.inv(g) @ (gp - gm) / (2 * H))
    V = adjoint_inv_of(Pose.from_matrix(g)) @ Vb + rel
    return 0.5 * V @ leg.link_inertias[j - 1] @ V


@given(angles3, arrays(np.float64, 9, elements=st.floats(-2, 2)))
def test_link_mass_matches_link_kinetic_energy(theta, v):
    Vb, rate = v[:6], v[6:]
    for j in (1, 2, 3):
        Mbb, Mbt, Mtt = link_mass(LEG, j, theta)
        T = 0.5 * Vb @ Mbb @ Vb + Vb @ Mbt @ rate + 0.5 * rate @ Mtt @ rate
        assert T == pytest.approx(link_kinetic_oracle(LEG, j, theta, Vb, rate), abs=1e-8)


@given(angles3)
def test_accumulated_adjoint_derivative(theta):
    for j in (1, 2, 3):
        for k in (1, 2, 3):
            ref = fd(lambda t: accumulated_adjoint(LEG, 1, j, t), theta, k - 1)
            np.testing.assert_allclose(d_accumulated_adjoint(LEG, j, k, theta), ref, atol=1e-7)


def test_accumulated_adjoint_derivative_diagonal_is_nonzero(rng):
    th = rng.uniform(-1, 1, 3)
    # the k == j partial exists; only k > j vanishes
    assert np.abs(d_accumulated_adjoint(LEG, 2, 2, th)).max() > 1e-3
    assert not np.any(d_accumulated_adjoint(LEG, 2, 3, th))
    expected = -ad_of(LEG.screws[1]) @ accumulated_adjoint(LEG, 1, 2, th)
    np.testing.assert_allclose(d_accumulated_adjoint(LEG, 2, 2, th), expected, atol=1e-15)


@given(angles3)
def test_instantaneous_screw_derivative(theta):
    for beta in (1, 2, 3):
        for k in (1, 2, 3):
            ref = fd(lambda t: instantaneous_screws(LEG, t)[beta - 1], theta, k - 1)
            np.testing.assert_allclose(d_instantaneous_screw(LEG, beta, k, theta), ref, atol=1e-7)


@given(angles3)
def test_mass_partials_match_finite_differences(theta):
    for j in (1, 2, 3):
        for k in (1, 2, 3):
            got = mass_partials(LEG, j, theta, k)
            for blk in range(3):
                ref = fd(lambda t: link_mass(LEG, j, t)[blk], theta, k - 1)
                np.testing.assert_allclose(got[blk], ref, atol=1e-8)


@pytest.mark.parametrize("name", list(MORPHS))
def test_mass_matrix_against_brute_force_energy(name, rng):
    mv = MORPHS[name]
    for _ in range(3):
        theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
        v = rng.normal(size=MODEL.dof)
        v[np.setdiff1d(np.arange(MODEL.dof), mv.present_dofs)] = 0.0
        M = mass_full(MODEL, mv, theta)
        T = 0.5 * v[:6] @ MODEL.body_inertia @ v[:6]
        for i, leg in enumerate(MODEL.attached_legs):
            sl = MODEL.leg_slice(i)
            for j in range(1, leg.dof + 1):
                if mv.leg_existence[i] and mv.leg_links(i)[j - 1]:
                    T += link_kinetic_oracle(leg, j, theta[sl], v[:6], v[6:][sl])
        assert 0.5 * v @ M @ v == pytest.approx(T, rel=1e-7)


def euler_poincare_coriolis(mv, theta, v):
    """C v from d/dt(Mv) - ad_V^T (Mv) on the body rows and the Lagrange
    term on the joint rows, with dM from central differences."""
    d = mv.present_dofs
    vf = np.zeros(MODEL.dof)
    vf[d] = v
    dMs = [fd(lambda t: mass_full(MODEL, mv, t), theta, q) for q in range(MODEL.N_T)]
    Mdot = sum(dM * vf[6 + q] for q, dM in enumerate(dMs))
    p = mass_full(MODEL, mv, theta) @ vf
    out = Mdot @ vf
    out[:6] -= ad_of(vf[:6]).T @ p[:6]
    for q, dM in enumerate(dMs):
        out[6 + q] -= 0.5 * vf @ dM @ vf
    return out[d]


@pytest.mark.parametrize("name", list(MORPHS))
def test_coriolis_force_matches_euler_poincare(name, rng):
    mv = MORPHS[name]
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    v = rng.normal(size=mv.reduced_dof)
    Cv = coriolis(MODEL, mv, theta, v) @ v
    np.testing.assert_allclose(Cv, euler_poincare_coriolis(mv, theta, v), atol=1e-6)


@pytest.mark.parametrize("name", list(MORPHS))
def test_mdot_minus_2c_is_skew_along_v(name, rng):
    mv = MORPHS[name]
    d = mv.present_dofs
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    v = rng.normal(size=mv.reduced_dof)
    vf = np.zeros(MODEL.dof)
    vf[d] = v
    h = 1e-6
    Mdot = (mass_full(MODEL, mv, theta + h * vf[6:]) - mass_full(MODEL, mv, theta - h * vf[6:]))[np.ix_(d, d)] / (2 * h)
    C = coriolis(MODEL, mv, theta, v)
    assert v @ (Mdot - 2 * C) @ v == pytest.approx(0.0, abs=1e-7)


def test_coriolis_vanishes_at_rest_and_is_linear(rng):
    mv = MORPHS["healthy"]
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    assert not np.any(coriolis(MODEL, mv, theta, np.zeros(MODEL.dof)))
    a, b = rng.normal(size=(2, MODEL.dof))
    np.testing.assert_allclose(
        coriolis(MODEL, mv, theta, 2 * a - b),
        2 * coriolis(MODEL, mv, theta, a) - coriolis(MODEL, mv, theta, b),
        atol=1e-12,
    )


@pytest.mark.parametrize("name", list(MORPHS))
def test_potential_forces_are_gradient_of_potential(name, rng):
    mv = MORPHS[name]
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    g = Pose(random_rotation(rng), rng.normal(size=3))
    N = potential_forces(MODEL, mv, g, theta)
    ref = np.zeros(MODEL.dof)
    for i in range(6):
        e = np.zeros(6)
        e[i] = H
        ref[i] = (
            potential_energy(MODEL, mv, g @ exp_se3(e), theta)
            - potential_energy(MODEL, mv, g @ exp_se3(-e), theta)
        ) / (2 * H)
    for q in range(MODEL.N_T):
        ref[6 + q] = fd(lambda t: np.array(potential_energy(MODEL, mv, g, t)), theta, q)
    np.testing.assert_allclose(N, ref[mv.present_dofs], atol=1e-8)


def test_potential_energy_of_resting_robot(hexapod):
    mv = MorphologyVectors.healthy(hexapod)
    g = Pose(np.eye(3), [0, 0, 0.5])
    U = potential_energy(hexapod, mv, g, np.zeros(18))
    assert U == pytest.approx(hexapod.total_mass * 9.81 * 0.5)


@pytest.mark.parametrize("name", list(MORPHS))
def test_forward_dynamics_residual(name, rng):
    mv = MORPHS[name]
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    g = Pose(random_rotation(rng), rng.normal(size=3))
    v = rng.normal(size=mv.reduced_dof)
    tau = rng.normal(size=mv.reduced_dof)
    S = structural_matrices(MODEL, mv, g, theta, v)
    F = rng.normal(size=S.J.shape[0])
    a = forward_dynamics(MODEL, mv, g, theta, v, tau, F)
    r = S.M @ a + S.C @ v + S.N - tau - S.J.T @ F
    assert np.abs(r).max() <= 1e-10


def test_energy_is_kinetic_plus_potential(rng):
    mv = MORPHS["legs45_one_link"]
    theta = rng.uniform(-1, 1, MODEL.N_T)
    v = rng.normal(size=mv.reduced_dof)
    g = Pose(np.eye(3), [0, 0, 0.2])
    M = assemble_mass(MODEL, mv, theta)
    E = 0.5 * v @ M @ v + potential_energy(MODEL, mv, g, theta)
    assert total_energy(MODEL, mv, g, theta, v) == pytest.approx(E, rel=1e-14)


def test_singular_mass_raises():
    with pytest.raises(SingularMass):
        solve_mass(np.zeros((3, 3)), np.ones(3))
    with pytest.raises(SingularMass):
        solve_mass(-np.eye(3), np.ones(3))


@pytest.mark.parametrize("name", list(MORPHS))
def test_kernel_evaluator_matches_reference(name, rng):
    mv = MORPHS[name]
    ev = NaiveEvaluator(MODEL, mv)
    for _ in range(5):
        theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
        g = Pose(random_rotation(rng), rng.normal(size=3))
        v = rng.normal(size=mv.reduced_dof)
        ref = structural_matrices(MODEL, mv, g, theta, v)
        got = ev.structural(g, theta, v)
        assert got.allclose(ref, atol=1e-12)
        U = ev.potential_energy(g.position, g.rotation)
        assert U == pytest.approx(potential_energy(MODEL, mv, g, theta), abs=1e-12)


@pytest.mark.skipif(not _jit.HAVE_NUMBA, reason="numba not installed")
def test_compiled_and_numpy_kernels_agree(rng):
    ev = NaiveEvaluator(MODEL, MORPHS["legs45_one_link"])
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    bufs = []
    for f in (_kernels.naive_leg_blocks, _kernels.naive_leg_blocks_np):
        val, dval, tipg = np.zeros_like(ev.val), np.zeros_like(ev.dval), np.zeros_like(ev.tipg)
        f(ev.S, ev.II, ev.mass, ev.c0, ev.tip0, ev.nj, ev.w, theta, ev.offs, val, dval, tipg)
        bufs.append((val, dval, tipg))
    for a, b in zip(*bufs):
        np.testing.assert_allclose(a, b, atol=1e-13)
    val, dval, _ = bufs[0]
    v = rng.normal(size=MODEL.dof)
    gb = np.array([0.0, 0.0, -9.81])
    outs = []
    for f in (_kernels.assemble, _kernels.assemble_np):
        M, C = np.zeros((24, 24)), np.zeros((24, 24))
        Nv, J = np.zeros(24), np.zeros((36, 24))
        r = f(val, dval, ev.nj, ev.offs, ev.Ib, MODEL.body_mass, ev.mc_body, ev.leg_mass, v, gb,
              ev.tipmask, M, C, Nv, J)
        outs.append((M, C, Nv, J, r[0], r[1]))
    for a, b in zip(*outs):
        np.testing.assert_allclose(a, b, atol=1e-13)
