"""Time stepping, scheduled damage, scenario files, trajectory logs and timing."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dynamics import KernelEvaluator, NaiveEvaluator, SingularMass
from .fastdyn import FastEvaluator, decompose_leg, load_decomposition, save_decomposition
from .liegroup import Pose, exp_se3, skew, zyx_euler
from .locomotion import (
    ContactParams,
    GaitParams,
    LegGeometry,
    PIDGains,
    PIDState,
    Unreachable,
    contact_forces_world,
    gait_reference,
    leg_ik,
    pid_torque,
)
from .model import (
    DamageEvent,
    MorphologyVectors,
    RobotModel,
    apply_damage,
    build_hexapod_default,
    load_robot,
    robot_from_dict,
    yaw_pitch_pitch_leg,
)

SCENARIO_SCHEMA_VERSION = 1
LOG_SCHEMA_VERSION = 1
INTEGRATORS = ("semi-implicit", "rk4")
PATHS = ("naive", "fast")


class NumericalDivergence(RuntimeError):
    def __init__(self, step: int, norm: float):
        self.step = step
        self.norm = norm
        super().__init__(f"velocity norm {norm:.3e} exceeds the bound at step {step}")


class ScenarioError(ValueError):
    pass


# ----------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs.  ``damage`` holds ``(time, DamageEvent)`` pairs."""

    name: str = "healthy"
    robot: RobotModel | None = None
    gait: GaitParams = GaitParams()
    contact: ContactParams = ContactParams()
    pid: PIDGains = PIDGains()
    duration: float = 5.0
    dt: float = 1e-3
    integrator: str = "semi-implicit"
    path: str = "fast"
    damage: tuple = ()
    controller: bool = True
    contact_enabled: bool = True
    initial_height: float | None = None
    velocity_bound: float = 1e3
    implicit_damping: bool = True
    body_contacts: str | tuple = "box"
    decomposition_cache: str | None = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ScenarioError("dt must be positive")
        if not self.duration >= 0:
            raise ScenarioError("duration must be non-negative")
        if self.integrator not in INTEGRATORS:
            raise ScenarioError(f"integrator must be one of {INTEGRATORS}")
        if self.path not in PATHS:
            raise ScenarioError(f"path must be one of {PATHS}")
        for t, ev in self.damage:
            if not 0.0 <= t <= self.duration:
                raise ScenarioError(f"damage time {t} outside [0, {self.duration}]")
            if not isinstance(ev, DamageEvent):
                raise ScenarioError("damage entries must be (time, DamageEvent)")
        bc = self.body_contacts
        if isinstance(bc, str):
            if bc not in ("box", "hips", "none"):
                raise ScenarioError("body_contacts must be 'box', 'hips', 'none' or a list of points")
        elif any(len(q) != 3 for q in bc):
            raise ScenarioError("body contact points need three coordinates")
        if self.controller and abs(self.gait.dt - self.dt) > 1e-15:
            object.__setattr__(self, "gait", replace(self.gait, dt=self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def model(self) -> RobotModel:
        return self.robot if self.robot is not None else build_hexapod_default()

    def with_overrides(self, **kw) -> Scenario:
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


def preset(name: str, **overrides) -> Scenario:
    """``healthy``, ``scenario1`` (legs 3 and 4 removed) or ``scenario2``
    (legs 4 and 5 keep only their first link), all damaged at t = 0."""
    if name == "healthy":
        sc = Scenario(name="healthy")
    elif name == "scenario1":
        sc = Scenario(name="scenario1", damage=((0.0, DamageEvent.remove_legs(2, 3)),))
    elif name == "scenario2":
        sc = Scenario(name="scenario2", damage=((0.0, DamageEvent.truncate((3, 4), 1)),))
    else:
        raise ScenarioError(f"unknown preset {name!r}")
    return sc.with_overrides(**overrides)


_SC_KEYS = {
    "schema_version", "name", "preset", "robot", "gait", "contact", "pid", "duration", "dt",
    "integrator", "path", "damage", "controller", "contact_enabled", "initial_height",
    "velocity_bound", "implicit_damping", "body_contacts", "decomposition_cache", "outputs",
}
_GAIT_KEYS = {"L_sl", "L_sh", "L_sd", "T_g", "H_0", "groups", "stance_offset", "knee"}
_CONTACT_KEYS = {"k_z", "d_z", "d_t"}
_PID_KEYS = {"K1", "K2", "K3", "integral_clamp", "torque_limit", "lock_stiffness", "lock_damping"}
_DAMAGE_KEYS = {"time", "legs", "keep_links"}


def _check_keys(where: str, d, allowed: set) -> dict:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(extra)}")
    return d


def scenario_from_dict(data: dict, base_dir: Path | None = None) -> Scenario:
    """Build a scenario from its JSON form.  Leg numbers in files are one based."""
    _check_keys("scenario", data, _SC_KEYS)
    if data.get("schema_version") != SCENARIO_SCHEMA_VERSION:
        raise ScenarioError(f"scenario: schema_version must be {SCENARIO_SCHEMA_VERSION}")
    sc = preset(data["preset"]) if "preset" in data else Scenario()
    kw: dict = {}
    for key in ("name", "duration", "dt", "integrator", "path", "controller",
                "contact_enabled", "initial_height", "velocity_bound", "implicit_damping", "outputs"):
        if key in data:
            kw[key] = data[key]
    if "decomposition_cache" in data:
        dc = Path(data["decomposition_cache"])
        if base_dir is not None and not dc.is_absolute():
            dc = base_dir / dc
        kw["decomposition_cache"] = str(dc)
    if "body_contacts" in data:
        bc = data["body_contacts"]
        kw["body_contacts"] = bc if isinstance(bc, str) else tuple(tuple(map(float, q)) for q in bc)
    if "robot" in data:
        r = data["robot"]
        if isinstance(r, str):
            p = Path(r)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            kw["robot"] = load_robot(p)
        else:
            kw["robot"] = robot_from_dict(r)
    if "gait" in data:
        g = dict(_check_keys("gait", data["gait"], _GAIT_KEYS))
        if "groups" in g:
            g["groups"] = tuple(tuple(int(i) - 1 for i in grp) for grp in g["groups"])
        kw["gait"] = replace(sc.gait, **g)
    if "contact" in data:
        kw["contact"] = ContactParams(**_check_keys("contact", data["contact"], _CONTACT_KEYS))
    if "pid" in data:
        kw["pid"] = replace(sc.pid, **_check_keys("pid", data["pid"], _PID_KEYS))
    if "damage" in data:
        events = []
        for j, d in enumerate(data["damage"]):
            d = _check_keys(f"damage[{j}]", d, _DAMAGE_KEYS)
            legs = [int(i) - 1 for i in d["legs"]]
            if min(legs, default=0) < 0:
                raise ScenarioError(f"damage[{j}]: leg numbers start at 1")
            events.append((float(d.get("time", 0.0)), DamageEvent(tuple(legs), int(d.get("keep_links", 0)))))
        kw["damage"] = tuple(events)
    try:
        return replace(sc, **kw)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(data, base_dir=path.parent)


# ----------------------------------------------------------------------------
# gait controller


def ypp_geometry(model: RobotModel, leg: int) -> LegGeometry:
    """Link lengths of a yaw-pitch-pitch leg; raises if the leg has another layout."""
    cat = model.catalog[model.legs[leg].morphology]
    if cat.dof != 3 or cat.tip_home_pose is None:
        raise ValueError(f"leg {leg} is not a three-joint leg with a tip")
    L1 = -cat.screws[1][2]
    L12 = -cat.screws[2][2]
    L = (L1, L12 - L1, cat.tip_home_pose.position[0] - L12)
    ref = yaw_pitch_pitch_leg(lengths=L)
    if not (np.allclose(ref.screws, cat.screws, atol=1e-12)
            and np.allclose(ref.tip_home_pose.matrix(), cat.tip_home_pose.matrix(), atol=1e-12)):
        raise ValueError(f"leg {leg} is not a yaw-pitch-pitch leg")
    return LegGeometry(*L)


class GaitController:
    """Tripod reference, inverse kinematics and joint PID for a reference robot.

    The joint targets over one cycle are tabulated once; desired rates are
    the central difference of that periodic table.
    """

    def __init__(self, model: RobotModel, gait: GaitParams, gains: PIDGains):
        self.model = model
        self.gait = gait
        self.gains = gains
        Ng = gait.N_g
        table = np.zeros((Ng, model.N_T))
        for i in range(model.N):
            geom = ypp_geometry(model, i)
            att = model.legs[i].attachment
            outward = att.rotation[:, 0]
            inv = att.inverse()
            sl = slice(model.offsets[i], model.offsets[i] + 3)
            for k in range(Ng):
                target = gait_reference(i, k, gait, att.position, outward)
                try:
                    table[k, sl] = leg_ik(inv.act(target), geom, gait.knee)
                except Unreachable as exc:
                    raise Unreachable(exc.deficit) from None
        self.theta_des = table
        self.theta_dot_des = (np.roll(table, -1, axis=0) - np.roll(table, 1, axis=0)) / (2.0 * gait.dt)


# ----------------------------------------------------------------------------
# trajectory log


@dataclass
class TrajectoryLog:
    t: np.ndarray
    position: np.ndarray
    rotation: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    forces: np.ndarray
    energy: np.ndarray
    n_joints_logged: int
    leg_labels: tuple = ()

    @classmethod
    def allocate(cls, rows: int, N_T: int, N: int, labels) -> TrajectoryLog:
        nan = np.nan
        return cls(
            t=np.full(rows, nan), position=np.full((rows, 3), nan), rotation=np.full((rows, 3, 3), nan),
            theta=np.full((rows, N_T), nan), v=np.full((rows, 6 + N_T), nan),
            forces=np.full((rows, N, 3), nan), energy=np.full(rows, nan), n_joints_logged=N_T,
            leg_labels=tuple(labels),
        )

    def __len__(self) -> int:
        return self.t.shape[0]

    def euler(self) -> tuple[np.ndarray, np.ndarray]:
        """ZYX angles (roll, pitch, yaw) per row and gimbal flags."""
        out = np.zeros((len(self), 3))
        flag = np.zeros(len(self), dtype=bool)
        for r in range(len(self)):
            roll, pitch, yaw, g = zyx_euler(self.rotation[r])
            out[r] = roll, pitch, yaw
            flag[r] = g
        return out, flag

    def columns(self) -> list[str]:
        cols = ["t", "x", "y", "z", "roll", "pitch", "yaw"]
        cols += [f"theta_{j + 1}" for j in range(self.theta.shape[1])]
        for lab in self.leg_labels:
            cols += [f"f{a}_{lab}" for a in "xyz"]
        return cols + ["energy", "gimbal_flag"]

    def table(self) -> np.ndarray:
        eul, flag = self.euler()
        return np.column_stack(
            [self.t, self.position, eul, self.theta, self.forces.reshape(len(self), -1),
             self.energy, flag.astype(float)]
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# mlrdyn trajectory log, schema {LOG_SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(self.columns())
            tab = self.table()
            nf = tab.shape[1] - 1
            for row in tab:
                w.writerow([repr(float(x)) for x in row[:nf]] + [int(row[nf])])

    def to_dict(self) -> dict:
        eul, flag = self.euler()

        def clean(a):
            return np.where(np.isfinite(a), a, None).tolist()

        return {
            "schema_version": LOG_SCHEMA_VERSION,
            "t": self.t.tolist(), "position": self.position.tolist(), "euler_zyx": eul.tolist(),
            "gimbal_flag": flag.tolist(), "theta": clean(self.theta), "v": clean(self.v),
            "forces": clean(self.forces), "energy": self.energy.tolist(),
        }


# ----------------------------------------------------------------------------
# simulator

_DECOMP_CACHE: dict = {}


def inertia_box_corners(I6) -> np.ndarray:
    """Corners of the uniform box with the body's mass and rotational inertia.

    The box is centred on the centre of mass and aligned with the body axes.
    """
    from .model import com_offset

    I6 = np.asarray(I6, dtype=float)
    m = I6[0, 0]
    c = com_offset(I6)
    Ic = I6[3:, 3:] - m * skew(c).T @ skew(c)
    Ixx, Iyy, Izz = np.diag(Ic)
    h2 = 6.0 / m * np.array([Iyy + Izz - Ixx, Ixx + Izz - Iyy, Ixx + Iyy - Izz])
    half = 0.5 * np.sqrt(np.maximum(h2, 0.0))
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    return c + signs * half


def decomposition_filename(leg) -> str:
    return f"{leg.name}-{leg.fingerprint()[:16]}.mlrdec"


def _decompositions(model: RobotModel, cache_dir=None):
    """Per-leg decompositions, memoised in-process and optionally on disk."""
    base = []
    for cat in model.catalog:
        key = cat.fingerprint()
        f = Path(cache_dir) / decomposition_filename(cat) if cache_dir is not None else None
        dec = _DECOMP_CACHE.get(key)
        if dec is None and f is not None and f.exists():
            dec = load_decomposition(f, cat)
        if dec is None:
            dec = decompose_leg(cat, reduced=True)
        if f is not None and not f.exists():
            f.parent.mkdir(parents=True, exist_ok=True)
            save_decomposition(dec, f)
        _DECOMP_CACHE[key] = dec
        base.append(dec)
    return tuple(base[m.morphology].instantiate(m.attachment) for m in model.legs)


def make_evaluator(model: RobotModel, path: str, mv: MorphologyVectors | None = None,
                   cache_dir=None) -> KernelEvaluator:
    if path == "naive":
        return NaiveEvaluator(model, mv)
    if path == "fast":
        return FastEvaluator(model, mv, decompositions=_decompositions(model, cache_dir))
    raise ScenarioError(f"unknown evaluation path {path!r}")


class Simulator:
    """One sequential simulation context.

    ``v`` is the reduced quasi-velocity (removed joints dropped); ``theta``
    keeps every joint so removed angles stay frozen.  ``leg_map[i]`` names
    the leg of the controller's reference robot that leg ``i`` follows.
    """

    def __init__(self, scenario: Scenario, model: RobotModel | None = None,
                 controller: GaitController | None = None, leg_map=None,
                 evaluator: KernelEvaluator | None = None):
        self.scenario = sc = scenario
        self.model = model = model if model is not None else sc.model()
        self.ev = evaluator or make_evaluator(model, sc.path, cache_dir=sc.decomposition_cache)
        self.mv = self.ev.mv
        self.leg_map = tuple(range(model.N)) if leg_map is None else tuple(leg_map)
        if len(self.leg_map) != model.N:
            raise ValueError("leg_map needs one entry per leg")
        self.controller = None
        if sc.controller:
            self.controller = controller or GaitController(model, sc.gait, sc.pid)
            ref = self.controller.model
            idx = []
            for i, r in enumerate(self.leg_map):
                idx.extend(ref.offsets[r] + j for j in range(model.leg_sizes[i]))
            self.ref_joint = np.array(idx, dtype=np.int64)
        self.gravity = model.gravity
        self.step_index = 0
        self.pid_state = PIDState.zeros(model.N_T)
        self.R = np.eye(3)
        self.p = np.array([0.0, 0.0, self._default_height() if sc.initial_height is None else sc.initial_height])
        self.theta = np.zeros(model.N_T)
        if self.controller is not None:
            self.theta[:] = self.controller.theta_des[0, self.ref_joint]
        self._vfull = np.zeros(model.dof)
        self.v = np.zeros(self.mv.reduced_dof)
        self._morphology_changed()
        bc = sc.body_contacts
        if bc == "box":
            pts = inertia_box_corners(model.body_inertia)
        elif bc == "hips":
            pts = [m.attachment.position for m in model.legs]
        elif bc == "none":
            pts = []
        else:
            pts = list(bc)
        self.body_points = np.array(pts, dtype=float).reshape(-1, 3)
        self.last_forces = np.full((model.N, 3), np.nan)
        self.last_energy = np.nan

    def _default_height(self) -> float:
        """Gait height lowered by the static spring sinkage of all tips.

        Starting exactly on the plane would leave contact detection at
        t = 0 to rounding.
        """
        sc = self.scenario
        h = sc.gait.H_0
        ntips = sum(leg.has_tip for leg in self.model.attached_legs)
        if sc.contact_enabled and ntips and sc.contact.k_z > 0:
            h -= self.model.total_mass * np.linalg.norm(self.gravity) / (ntips * sc.contact.k_z)
        return h

    # state ---------------------------------------------------------------

    @property
    def t(self) -> float:
        return self.step_index * self.scenario.dt

    @property
    def body_pose(self) -> Pose:
        return Pose(self.R.copy(), self.p.copy())

    def set_state(self, body_pose: Pose, theta, v) -> None:
        self.R = np.array(body_pose.rotation, dtype=float)
        self.p = np.array(body_pose.position, dtype=float)
        self.theta = np.array(theta, dtype=float)
        v = np.asarray(v, dtype=float)
        if v.size == self.model.dof and v.size != self.mv.reduced_dof:
            v = v[self.mv.present_dofs]
        if v.size != self.mv.reduced_dof:
            raise ValueError("velocity length does not match the morphology")
        self.v = v.copy()

    def full_velocity(self) -> np.ndarray:
        out = np.full(self.model.dof, np.nan)
        out[self.mv.present_dofs] = self.v
        return out

    def _morphology_changed(self) -> None:
        mv = self.mv
        self.dofs = mv.present_dofs
        self.joints = mv.present_joints
        self.all_present = self.dofs.size == self.model.dof
        self.tip_idx = np.flatnonzero(mv.tip_present(self.model))
        lo = self.ev.layout
        self._tAd = slice(lo["tipAd"], lo["tipAJ"])

    def inject_damage(self, event: DamageEvent) -> None:
        new = apply_damage(self.mv, event)
        if new == self.mv:
            return
        vfull = self.full_velocity()
        self.ev.set_morphology(new)
        self.mv = new
        self._morphology_changed()
        self.v = vfull[self.dofs].copy()

    # dynamics ------------------------------------------------------------

    def _evaluate(self, R, p, theta, v):
        vf = self._vfull
        vf[:] = 0.0
        vf[self.dofs] = v
        ev = self.ev
        ev.evaluate_full(R, theta, vf)
        if self.all_present:
            M, C, Nv = ev.M, ev.C, ev.Nv
        else:
            ix = np.ix_(self.dofs, self.dofs)
            M, C, Nv = ev.M[ix], ev.C[ix], ev.Nv[self.dofs]
        return M, C, Nv

    def _tip_forces(self, R, p, v):
        """World forces at present tips, their generalised force and the
        generalised damping matrix of the active dampers (all reduced)."""
        ev = self.ev
        tips = self.tip_idx
        nd = self.dofs.size
        if tips.size == 0 or not self.scenario.contact_enabled:
            return np.zeros((0, 3)), np.zeros(nd), None
        A = ev.val[tips, self._tAd].reshape(-1, 6, 6)
        Rbt = A[:, :3, :3].transpose(0, 2, 1)
        P = -Rbt @ A[:, :3, 3:]
        pbt = np.stack([P[:, 2, 1], P[:, 0, 2], P[:, 1, 0]], axis=1)
        Rst = R @ Rbt
        pst = p + pbt @ R.T
        rows = (6 * tips[:, None] + np.arange(6)).ravel()
        Jt = ev.J[rows][:, self.dofs] if not self.all_present else ev.J[rows]
        tw = (Jt @ v).reshape(-1, 6)
        vel = np.einsum("nij,nj->ni", Rst, tw[:, :3])
        cp = self.scenario.contact
        f = contact_forces_world(pst, vel, cp)
        F = np.zeros((tips.size, 6))
        F[:, :3] = np.einsum("nji,nj->ni", Rst, f)
        Q = Jt.T @ F.ravel()
        B = None
        touching = pst[:, 2] < 0.0
        if self.scenario.implicit_damping and touching.any():
            # d(world tip velocity)/dv for touching tips
            W = np.einsum("nij,njk->nik", Rst[touching], Jt.reshape(-1, 6, nd)[touching, :3])
            d = np.empty((W.shape[0], 3))
            d[:, :2] = cp.d_t
            d[:, 2] = np.where(f[touching, 2] > 0.0, cp.d_z, 0.0)
            B = np.einsum("nik,ni,nil->kl", W, d, W)
        return f, Q, B

    def _torques(self, theta, v, advance: bool):
        tau = np.zeros(self.dofs.size)
        if self.controller is None or self.joints.size == 0:
            return tau
        k = self.step_index % self.scenario.gait.N_g
        ref = self.ref_joint[self.joints]
        ctl = self.controller
        st = self.pid_state
        j = self.joints
        sub = PIDState(st.integral[j], st.locked[j], st.lock_angles[j])
        tau[6:] = pid_torque(
            ctl.theta_des[k, ref], ctl.theta_dot_des[k, ref], theta[j], v[6:], sub, ctl.gains,
            self.scenario.dt if advance else 0.0,
        )
        st.integral[j] = sub.integral
        return tau

    def _body_forces(self, R, p, v):
        """Generalised force and damping matrix of the body contact points."""
        pts = self.body_points
        if pts.shape[0] == 0 or not self.scenario.contact_enabled:
            return None, None
        pw = p + pts @ R.T
        touching = pw[:, 2] < 0.0
        if not touching.any():
            return None, None
        r = pts[touching]
        vb = v[:3] + np.cross(v[3:6], r)
        vel = vb @ R.T
        cp = self.scenario.contact
        f = contact_forces_world(pw[touching], vel, cp)
        fb = f @ R
        Q = np.zeros(self.dofs.size)
        Q[:3] = fb.sum(axis=0)
        Q[3:6] = np.cross(r, fb).sum(axis=0)
        B = None
        if self.scenario.implicit_damping:
            W = np.zeros((r.shape[0], 3, 6))
            W[:, :, :3] = R
            W[:, :, 3:] = -R @ np.stack([skew(q) for q in r])
            d = np.empty((r.shape[0], 3))
            d[:, :2] = cp.d_t
            d[:, 2] = np.where(f[:, 2] > 0.0, cp.d_z, 0.0)
            B = np.zeros((self.dofs.size,) * 2)
            B[:6, :6] = np.einsum("nik,ni,nil->kl", W, d, W)
        return Q, B

    def _accel(self, R, p, theta, v, advance: bool, dt: float = 0.0):
        """Acceleration; with ``dt > 0`` the linear dampers are taken at the
        end-of-step velocity, ``(M + dt B) a = rhs``."""
        M, C, Nv = self._evaluate(R, p, theta, v)
        f, Q, B = self._tip_forces(R, p, v)
        Qb, Bb = self._body_forces(R, p, v)
        if Qb is not None:
            Q = Q + Qb
            if Bb is not None:
                B = Bb if B is None else B + Bb
        tau = self._torques(theta, v, advance)
        rhs = tau + Q - C @ v - Nv
        A = M
        if dt > 0.0:
            A = M.copy()
            if B is not None:
                A += dt * B
            if self.controller is not None and self.joints.size:
                A[6:, 6:] += dt * self.controller.gains.K2 * np.eye(self.joints.size)
        try:
            vdot = cho_solve(cho_factor(A, check_finite=False), rhs, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMass(str(exc)) from None
        return vdot, f, M

    def _record_energy(self, M, v, R, p) -> float:
        return float(0.5 * v @ M @ v + self.ev.potential_energy(p, R))

    def _record_forces(self, f) -> None:
        self.last_forces[:] = np.nan
        if self.scenario.contact_enabled:
            self.last_forces[self.tip_idx] = f

    def step(self) -> None:
        """Advance one time step."""
        dt = self.scenario.dt
        if self.scenario.integrator == "rk4":
            self._step_rk4(dt)
        else:
            vdot, f, M = self._accel(
                self.R, self.p, self.theta, self.v, True, dt if self.scenario.implicit_damping else 0.0
            )
            self.last_energy = self._record_energy(M, self.v, self.R, self.p)
            self._record_forces(f)
            self.v = self.v + dt * vdot
            g = exp_se3(dt * self.v[:6])
            self.p = self.p + self.R @ g.position
            self.R = self.R @ g.rotation
            self.theta[self.joints] += dt * self.v[6:]
        self.step_index += 1
        nv = float(np.max(np.abs(self.v)))
        if not np.isfinite(nv) or nv > self.scenario.velocity_bound:
            raise NumericalDivergence(self.step_index, nv)

    def _step_rk4(self, dt: float) -> None:
        j = self.joints

        def deriv(R, p, th_j, v, first):
            th = self.theta.copy()
            th[j] = th_j
            vdot, f, M = self._accel(R, p, th, v, first)
            if first:
                self.last_energy = self._record_energy(M, v, R, p)
                self._record_forces(f)
            return R @ skew(v[3:6]), R @ v[:3], v[6:], vdot

        y0 = (self.R, self.p, self.theta[j].copy(), self.v)
        k1 = deriv(*y0, True)
        k2 = deriv(*(a + 0.5 * dt * b for a, b in zip(y0, k1)), False)
        k3 = deriv(*(a + 0.5 * dt * b for a, b in zip(y0, k2)), False)
        k4 = deriv(*(a + dt * b for a, b in zip(y0, k3)), False)
        y1 = [a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y0, k1, k2, k3, k4)]
        U, _, Vt = np.linalg.svd(y1[0])
        self.R = U @ Vt
        self.p = y1[1]
        self.theta[j] = y1[2]
        self.v = y1[3]

    def energy(self) -> float:
        """Total energy of the current state (one structural evaluation)."""
        M, _, _ = self._evaluate(self.R, self.p, self.theta, self.v)
        return self._record_energy(M, self.v, self.R, self.p)

    def observe(self) -> None:
        """Refresh ``last_energy`` and ``last_forces`` for the current state without stepping."""
        M, _, _ = self._evaluate(self.R, self.p, self.theta, self.v)
        f, _, _ = self._tip_forces(self.R, self.p, self.v)
        self.last_energy = self._record_energy(M, self.v, self.R, self.p)
        self._record_forces(f)

    # driving -------------------------------------------------------------

    def _log_row(self, log: TrajectoryLog, r: int, t, R, p, theta, v) -> None:
        log.t[r] = t
        log.position[r] = p
        log.rotation[r] = R
        log.theta[r, self.joints] = theta[self.joints]
        log.v[r, self.dofs] = v
        log.forces[r] = self.last_forces
        log.energy[r] = self.last_energy

    def run(self, callback=None) -> TrajectoryLog:
        """Integrate over the scenario duration, applying scheduled damage.

        Row ``s`` holds the state at ``t = s dt``; its energy and contact
        forces come from the evaluation that starts step ``s``.
        """
        sc = self.scenario
        n = sc.n_steps
        events = sorted(sc.damage, key=lambda e: e[0])
        log = TrajectoryLog.allocate(n + 1, self.model.N_T, self.model.N, [i + 1 for i in self.leg_map])
        ei = 0
        for s in range(n + 1):
            while ei < len(events) and events[ei][0] <= self.t + 0.5 * sc.dt:
                self.inject_damage(events[ei][1])
                ei += 1
            pre = (self.t, self.R, self.p, self.theta.copy(), self.v)
            if s == n:
                self.observe()
            else:
                try:
                    self.step()
                except (NumericalDivergence, SingularMass):
                    raise
                except Exception as exc:
                    raise RuntimeError(f"step {s}: {exc}") from exc
            self._log_row(log, s, *pre)
            if callback is not None:
                callback(self)
        return log


# ----------------------------------------------------------------------------
# scenarios end to end


@dataclass
class RunResult:
    log: TrajectoryLog
    summary: dict


def summarize(log: TrajectoryLog, wall: float, scenario: Scenario) -> dict:
    eul, flag = log.euler()
    d = log.position[-1] - log.position[0]
    return {
        "scenario": scenario.name,
        "path": scenario.path,
        "steps": len(log) - 1,
        "duration": scenario.duration,
        "net_displacement": d.tolist(),
        "x_range": [float(log.position[:, 0].min()), float(log.position[:, 0].max())],
        "z_range": [float(log.position[:, 2].min()), float(log.position[:, 2].max())],
        "euler_min": eul.min(axis=0).tolist(),
        "euler_max": eul.max(axis=0).tolist(),
        "gimbal_rows": int(flag.sum()),
        "wall_time": wall,
        "real_time_factor": scenario.duration / wall if wall > 0 else float("inf"),
    }


def run_scenario(scenario: Scenario, model: RobotModel | None = None, **kw) -> RunResult:
    sim = Simulator(scenario, model=model, **kw)
    t0 = time.perf_counter()
    log = sim.run()
    wall = time.perf_counter() - t0
    summary = summarize(log, wall, scenario)
    out = scenario.outputs or {}
    if out.get("csv"):
        log.write_csv(out["csv"])
    if out.get("json"):
        Path(out["json"]).write_text(json.dumps({"summary": summary, "log": log.to_dict()}))
    return RunResult(log, summary)


def warm_up(path: str = "fast") -> None:
    """Compile (or load from cache) the kernels used by ``path``."""
    sc = Scenario(duration=0.002, path=path)
    Simulator(sc).run()


def _percentiles(x) -> dict:
    x = np.asarray(x) * 1e6
    return {"mean_us": float(x.mean()), "p50_us": float(np.percentile(x, 50)),
            "p95_us": float(np.percentile(x, 95))}


def benchmark(scenario: Scenario, paths=PATHS, structural_samples: int = 2000, seed: int = 0,
              equivalence_tol: float = 1e-9) -> dict:
    """Wall time of full runs per path plus per-call structural evaluation times.

    Kernels are compiled before timing.  Logged body positions and joint
    angles of all paths are compared against the first; ``equivalent``
    reports whether they agree within ``equivalence_tol``.
    """
    report: dict = {"scenario": scenario.name, "paths": {}}
    logs = {}
    model = scenario.model()
    rng = np.random.default_rng(seed)
    thetas = rng.uniform(-np.pi, np.pi, (64, model.N_T))
    vs = rng.normal(size=(64, model.dof))
    for path in paths:
        warm_up(path)
        sc = replace(scenario, path=path)
        res = run_scenario(sc)
        logs[path] = res.log
        ev = make_evaluator(model, path)
        R = np.eye(3)
        times = []
        for s in range(structural_samples):
            th, v = thetas[s % 64], vs[s % 64]
            t0 = time.perf_counter()
            ev.evaluate_full(R, th, v)
            times.append(time.perf_counter() - t0)
        report["paths"][path] = {
            "wall_time_s": res.summary["wall_time"],
            "real_time_factor": res.summary["real_time_factor"],
            "step_us": res.summary["wall_time"] / max(1, res.summary["steps"]) * 1e6,
            "structural": _percentiles(times),
        }
    ref = paths[0]
    worst = 0.0
    for path in paths[1:]:
        dp = float(np.max(np.abs(logs[path].position - logs[ref].position)))
        dth = float(np.nanmax(np.abs(logs[path].theta - logs[ref].theta)))
        report["paths"][path][f"max_position_diff_vs_{ref}"] = dp
        report["paths"][path][f"max_theta_diff_vs_{ref}"] = dth
        worst = max(worst, dp, dth)
    report["equivalence_tol"] = equivalence_tol
    report["equivalent"] = bool(worst <= equivalence_tol)
    return report
