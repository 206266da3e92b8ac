"""Acceptance checks; each prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from mlrdyn import engine
from mlrdyn.dynamics import (
    NaiveEvaluator,
    d_accumulated_adjoint,
    forward_dynamics_from,
    mass_derivative_full,
    mass_full,
    coriolis,
    structural_matrices,
)
from mlrdyn.engine import GaitController, Scenario, Simulator, load_scenario, preset, run_scenario
from mlrdyn.fastdyn import FastEvaluator
from mlrdyn.kinematics import accumulated_adjoint
from mlrdyn.liegroup import Pose, ad_of
from mlrdyn.model import DamageEvent, MorphologyVectors, apply_damage, build_hexapod_default

from conftest import random_rotation

pytestmark = pytest.mark.acceptance

MODEL = build_hexapod_default()
HEALTHY = MorphologyVectors.healthy(MODEL)
SCEN1 = apply_damage(HEALTHY, DamageEvent.remove_legs(2, 3))  # legs 3, 4 removed
SCEN2 = apply_damage(HEALTHY, DamageEvent.truncate((3, 4), 1))  # legs 4, 5 keep one link
MORPHS = {"healthy": HEALTHY, "legs 3,4 removed": SCEN1, "legs 4,5 one link": SCEN2}
ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, msg: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {msg}")

    return emit


def random_state(rng, mv):
    g = Pose(random_rotation(rng), rng.normal(scale=0.5, size=3))
    theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
    v = rng.normal(size=mv.reduced_dof)
    return g, theta, v


# 1 ------------------------------------------------------------------------


def test_criterion_1_fast_naive_equivalence(report):
    rng = np.random.default_rng(1)
    worst = {"M": 0.0, "C": 0.0, "N": 0.0, "J": 0.0}
    engine.warm_up("naive")
    engine.warm_up("fast")
    t0 = time.perf_counter()
    for mv in MORPHS.values():
        naive = NaiveEvaluator(MODEL, mv)
        fast = engine.make_evaluator(MODEL, "fast", mv)
        for _ in range(1000):
            g, theta, v = random_state(rng, mv)
            a = naive.structural(g, theta, v)
            b = fast.structural(g, theta, v)
            for name, x, y in zip("MCNJ", a.astuple(), b.astuple()):
                worst[name] = max(worst[name], float(np.max(np.abs(x - y), initial=0.0)))
    wall = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-9 and wall < 60.0
    report(1, ok, "fast vs naive over 3x1000 states, max |diff| "
           + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" (<= 1e-9), sweep {wall:.1f} s (< 60 s)")
    assert ok


# 2 ------------------------------------------------------------------------


def test_criterion_2_closed_forms_and_residual(report):
    rng = np.random.default_rng(2)
    h = 1e-6
    rel_ad = rel_m = 0.0
    for _ in range(200):
        i = int(rng.integers(MODEL.N))
        leg = MODEL.attached_legs[i]
        th = rng.uniform(-np.pi, np.pi, leg.dof)
        j = int(rng.integers(1, leg.dof + 1))
        k = int(rng.integers(1, j + 1))
        e = np.zeros(leg.dof)
        e[k - 1] = h
        fd = (accumulated_adjoint(leg, 1, j, th + e) - accumulated_adjoint(leg, 1, j, th - e)) / (2 * h)
        got = d_accumulated_adjoint(leg, j, k, th)
        rel_ad = max(rel_ad, np.abs(got - fd).max() / np.abs(fd).max())

        mv = list(MORPHS.values())[int(rng.integers(3))]
        theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
        q = int(rng.choice(mv.present_joints))
        e = np.zeros(MODEL.N_T)
        e[q] = h
        fd = (mass_full(MODEL, mv, theta + e) - mass_full(MODEL, mv, theta - e)) / (2 * h)
        got = mass_derivative_full(MODEL, mv, theta, q)
        rel_m = max(rel_m, np.abs(got - fd).max() / np.abs(fd).max())

    # Coriolis force against d/dt(Mv) - ad_V^T(Mv) and dT/dtheta, with dM from differences
    rel_c = 0.0
    for _ in range(40):
        mv = list(MORPHS.values())[int(rng.integers(3))]
        d = mv.present_dofs
        theta = rng.uniform(-np.pi, np.pi, MODEL.N_T)
        vf = np.zeros(MODEL.dof)
        vf[d] = rng.normal(size=d.size)
        dMs = []
        for q in range(MODEL.N_T):
            e = np.zeros(MODEL.N_T)
            e[q] = h
            dMs.append((mass_full(MODEL, mv, theta + e) - mass_full(MODEL, mv, theta - e)) / (2 * h))
        p = mass_full(MODEL, mv, theta) @ vf
        ref = sum(dM * vf[6 + q] for q, dM in enumerate(dMs)) @ vf
        ref[:6] -= ad_of(vf[:6]).T @ p[:6]
        ref[6:] -= 0.5 * np.array([vf @ dM @ vf for dM in dMs])
        got = coriolis(MODEL, mv, theta, vf[d]) @ vf[d]
        rel_c = max(rel_c, np.abs(got - ref[d]).max() / np.abs(ref[d]).max())

    resid = 0.0
    evs = {n: engine.make_evaluator(MODEL, "fast", mv) for n, mv in MORPHS.items()}
    for s in range(200):
        name = list(MORPHS)[s % 3]
        mv = MORPHS[name]
        g, theta, v = random_state(rng, mv)
        S = structural_matrices(MODEL, mv, g, theta, v) if s % 2 else evs[name].structural(g, theta, v)
        tau = rng.normal(size=mv.reduced_dof)
        F = rng.normal(size=S.J.shape[0])
        a = forward_dynamics_from(S, v, tau, F)
        r = S.M @ a + S.C @ v + S.N - tau - S.J.T @ F
        resid = max(resid, float(np.abs(r).max()))
    ok = rel_ad <= 1e-5 and rel_m <= 1e-5 and rel_c <= 1e-5 and resid <= 1e-10
    report(2, ok, f"adjoint partials rel {rel_ad:.1e}, mass partials rel {rel_m:.1e}, "
           f"Coriolis force rel {rel_c:.1e} (<= 1e-5); forward-dynamics residual {resid:.1e} (<= 1e-10)")
    assert ok


# 3 ------------------------------------------------------------------------


def test_criterion_3_energy_conservation(report):
    sc = load_scenario(ROOT / "scenarios" / "conservative.json")
    assert sc.integrator == "rk4" and sc.dt == 1e-4 and sc.duration == 1.0
    rng = np.random.default_rng(3)
    sim = Simulator(sc)
    v = np.zeros(MODEL.dof)
    v[:6] = rng.normal(scale=0.3, size=6)
    v[6:] = rng.normal(scale=1.0, size=MODEL.N_T)
    sim.set_state(Pose(np.eye(3), [0.0, 0.0, 0.5]), rng.uniform(-1, 1, MODEL.N_T), v)
    E0 = sim.energy()
    log = sim.run()
    E1 = sim.energy()
    drift = abs(E1 - E0) / abs(E0)
    worst = float(np.max(np.abs(log.energy - E0))) / abs(E0)
    ok = drift <= 1e-4 and worst <= 1e-4
    report(3, ok, f"RK4 dt=1e-4 s over 1 s, |dE|/|E0| final {drift:.1e}, worst row {worst:.1e} (<= 1e-4)")
    assert ok


# 4 ------------------------------------------------------------------------


def test_criterion_4_reconfiguration_equivalence(report):
    rng = np.random.default_rng(4)
    mat = 0.0
    for mv in (SCEN1, SCEN2):
        red = MODEL.reduced(mv)
        ref_evs = [NaiveEvaluator(red), engine.make_evaluator(red, "fast")]
        for path in engine.PATHS:
            ev = engine.make_evaluator(MODEL, path)
            ev.set_morphology(mv)
            for s in range(100):
                g, theta, v = random_state(rng, mv)
                a = ev.structural(g, theta, v)
                b = ref_evs[s % 2].structural(g, theta[mv.present_joints], v)
                mat = max(mat, max(float(np.max(np.abs(x - y), initial=0.0))
                                   for x, y in zip(a.astuple(), b.astuple())))

    traj = 0.0
    for name, mv in (("scenario1", SCEN1), ("scenario2", SCEN2)):
        injected = preset(name)
        sim_a = Simulator(injected)
        h0 = sim_a.p[2]
        red = MODEL.reduced(mv)
        legs = [i for i in range(MODEL.N) if mv.leg_existence[i]]
        ctl = GaitController(MODEL, injected.gait, injected.pid)
        direct = Scenario(name=name + "-direct", robot=red, initial_height=h0)
        sim_b = Simulator(direct, controller=ctl, leg_map=legs)
        la, lb = sim_a.run(), sim_b.run()
        joints = mv.present_joints
        diffs = [
            np.abs(la.position - lb.position).max(axis=1),
            np.abs(la.rotation - lb.rotation).reshape(len(la), -1).max(axis=1),
            np.abs(la.theta[:, joints] - lb.theta).max(axis=1),
            np.abs(la.v[:, mv.present_dofs] - lb.v).max(axis=1),
        ]
        traj = max(traj, float(np.max(diffs)))
    ok = mat <= 1e-12 and traj <= 1e-12
    report(4, ok, f"reconfigured vs rebuilt matrices max |diff| {mat:.1e}; injected-at-t=0 vs damaged-model "
           f"trajectories max per-step |diff| {traj:.1e} over 5 s (<= 1e-12)")
    assert ok


# 5 ------------------------------------------------------------------------


def test_criterion_5_runtime(report):
    engine.warm_up("fast")
    engine.warm_up("naive")
    res = run_scenario(preset("healthy"))
    wall = res.summary["wall_time"]
    rng = np.random.default_rng(5)
    thetas = rng.uniform(-np.pi, np.pi, (64, MODEL.N_T))
    vs = rng.normal(size=(64, MODEL.dof))
    med = {}
    for path in engine.PATHS:
        ev = engine.make_evaluator(MODEL, path)
        t = []
        for s in range(3000):
            t0 = time.perf_counter()
            ev.evaluate_full(np.eye(3), thetas[s % 64], vs[s % 64])
            t.append(time.perf_counter() - t0)
        med[path] = float(np.median(t)) * 1e6
    target = "met" if wall <= 2.5 else "missed"
    ok = wall <= 5.0 and med["fast"] < med["naive"]
    report(5, ok, f"5 s tripod walk, fast path, wall {wall:.2f} s (hard bound 5 s, 2.5 s target {target}); "
           f"structural median fast {med['fast']:.1f} us < naive {med['naive']:.1f} us")
    assert ok


# 6 ------------------------------------------------------------------------


def test_criterion_6_scenario_trends(report):
    out = {}
    for name in ("healthy", "scenario1", "scenario2"):
        log = run_scenario(preset(name)).log
        out[name] = (log.position - log.position[0], log.position)
    d1, p1 = out["scenario1"]
    d2, _ = out["scenario2"]
    dh, _ = out["healthy"]
    # bounded: X and Z stay within 0.1 m of the start and the body stays above the floor
    s1 = abs(d1[-1, 1]) < 0.02 and np.abs(d1[:, 0]).max() <= 0.1 and np.abs(d1[:, 2]).max() <= 0.1 \
        and p1[:, 2].min() > 0.0
    s2 = d2[-1, 1] > 0.02 and abs(d2[-1, 0]) > 1e-3
    target = 0.1 * 5.0
    sh = 0.5 * target <= dh[-1, 1] <= 1.5 * target
    ok = s1 and s2 and sh
    report(6, ok, f"scenario 1 net Y {d1[-1, 1]:+.4f} m, X/Z excursion {np.abs(d1[:, 0]).max():.3f}/"
           f"{np.abs(d1[:, 2]).max():.3f} m; scenario 2 net Y {d2[-1, 1]:+.3f} m, net X {d2[-1, 0]:+.3f} m; "
           f"healthy net Y {dh[-1, 1]:.3f} m (target 0.5 m +-50%)")
    assert ok


# 7 ------------------------------------------------------------------------


def test_criterion_7_mass_matrix_properties(report):
    rng = np.random.default_rng(7)
    sym = 0.0
    min_eig = np.inf
    c_rest = 0.0
    for mv in MORPHS.values():
        evs = [engine.make_evaluator(MODEL, p, mv) for p in engine.PATHS]
        for s in range(1000):
            g, theta, v = random_state(rng, mv)
            S = evs[s % 2].structural(g, theta, v)
            sym = max(sym, float(np.abs(S.M - S.M.T).max()))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(S.M).min()))
            np.linalg.cholesky(S.M)
            rest = evs[s % 2].structural(g, theta, np.zeros(mv.reduced_dof)).C
            c_rest = max(c_rest, float(np.abs(rest).max()))
            if s % 100 == 0:
                c_rest = max(c_rest, float(np.abs(coriolis(MODEL, mv, theta, np.zeros(mv.reduced_dof))).max()))
    ok = sym <= 1e-12 and min_eig > 0.0 and c_rest == 0.0
    report(7, ok, f"3x1000 states: max |M - M^T| {sym:.1e} (<= 1e-12), min eigenvalue {min_eig:.2e} (> 0), "
           f"max |C(theta, 0)| = {c_rest:g} (exactly 0)")
    assert ok
