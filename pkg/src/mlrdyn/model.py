"""Robot description: body inertia, leg catalog, attachments, morphology vectors."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .liegroup import Pose, adjoint_inv_of, adjoint_of, revolute_screw

SCHEMA_VERSION = 1
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


class InvalidMorphology(ValueError):
    """Morphology vectors that reconfiguration cannot accept."""


class NonPrefixPattern(InvalidMorphology):
    def __init__(self, leg: int):
        self.leg = leg
        super().__init__(f"leg {leg}: a present link follows an absent one")


class InconsistentLegFlag(InvalidMorphology):
    def __init__(self, leg: int):
        self.leg = leg
        super().__init__(f"leg {leg}: leg existence flag disagrees with its link flags")


class RobotFileError(ValueError):
    pass


def generalized_inertia(mass: float, inertia_diag: Sequence[float]) -> np.ndarray:
    """6x6 generalized mass ``diag(m, m, m, Ixx, Iyy, Izz)`` at the CoM."""
    return np.diag([mass, mass, mass, *inertia_diag]).astype(float)


def com_offset(I: np.ndarray) -> np.ndarray:
    """CoM of a generalized inertia relative to its own frame.

    With twists ordered ``[v; w]`` the lower-left block is ``m * skew(c)``.
    """
    B = I[3:, :3]
    return np.array([B[2, 1], B[0, 2], B[1, 0]]) / I[0, 0]


def _check_spd(name: str, I: np.ndarray) -> None:
    if I.shape != (6, 6):
        raise ValueError(f"{name}: expected 6x6 inertia, got {I.shape}")
    if np.max(np.abs(I - I.T)) > 1e-12:
        raise ValueError(f"{name}: inertia is not symmetric")
    if np.min(np.linalg.eigvalsh(I)) <= 0.0:
        raise ValueError(f"{name}: inertia is not positive definite")


@dataclass(frozen=True)
class LegMorphology:
    """One serial single-branch leg type.

    ``screws`` are expressed in the frame the leg is described in (the
    hip frame for a catalog entry, the body frame once attached), at the
    zero configuration.
    """

    screws: np.ndarray
    home_link_poses: tuple[Pose, ...]
    link_inertias: np.ndarray
    tip_home_pose: Pose | None = None
    name: str = "leg"

    def __post_init__(self):
        screws = np.array(self.screws, dtype=float).reshape(-1, 6)
        inertias = np.array(self.link_inertias, dtype=float).reshape(-1, 6, 6)
        poses = tuple(self.home_link_poses)
        n = screws.shape[0]
        if n < 1:
            raise ValueError("a leg needs at least one joint")
        if len(poses) != n or inertias.shape[0] != n:
            raise ValueError("screws, home poses and inertias must have equal length")
        for j, I in enumerate(inertias):
            _check_spd(f"{self.name} link {j}", I)
        for a in (screws, inertias):
            a.setflags(write=False)
        object.__setattr__(self, "screws", screws)
        object.__setattr__(self, "link_inertias", inertias)
        object.__setattr__(self, "home_link_poses", poses)

    @property
    def dof(self) -> int:
        return self.screws.shape[0]

    @property
    def has_tip(self) -> bool:
        return self.tip_home_pose is not None

    @cached_property
    def masses(self) -> np.ndarray:
        return self.link_inertias[:, 0, 0].copy()

    @cached_property
    def home_coms(self) -> np.ndarray:
        """Link CoM positions at zero configuration, in the leg's frame."""
        out = np.empty((self.dof, 3))
        for j, (g0, I) in enumerate(zip(self.home_link_poses, self.link_inertias)):
            out[j] = g0.act(com_offset(I))
        return out

    @cached_property
    def spatial_inertias(self) -> np.ndarray:
        """Home-configuration inertias ``Ad(g0)^-T I Ad(g0)^-1`` per link."""
        out = np.empty_like(self.link_inertias)
        for j, (g0, I) in enumerate(zip(self.home_link_poses, self.link_inertias)):
            Ai = adjoint_inv_of(g0)
            out[j] = Ai.T @ I @ Ai
        return out

    def attached(self, g: Pose, name: str | None = None) -> LegMorphology:
        """Re-express the leg after mounting its hip frame at ``g``."""
        Ad = adjoint_of(g)
        return LegMorphology(
            screws=self.screws @ Ad.T,
            home_link_poses=tuple(g @ p for p in self.home_link_poses),
            link_inertias=self.link_inertias,
            tip_home_pose=None if self.tip_home_pose is None else g @ self.tip_home_pose,
            name=name or self.name,
        )

    def truncated(self, n_links: int) -> LegMorphology:
        """Keep the first ``n_links`` links; the tip goes with the last link."""
        if not 1 <= n_links <= self.dof:
            raise ValueError(f"cannot keep {n_links} of {self.dof} links")
        return LegMorphology(
            screws=self.screws[:n_links],
            home_link_poses=self.home_link_poses[:n_links],
            link_inertias=self.link_inertias[:n_links],
            tip_home_pose=self.tip_home_pose if n_links == self.dof else None,
            name=self.name if n_links == self.dof else f"{self.name}[:{n_links}]",
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.screws, dtype="<f8").tobytes())
        for p in self.home_link_poses:
            h.update(np.ascontiguousarray(p.matrix(), dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.link_inertias, dtype="<f8").tobytes())
        if self.tip_home_pose is not None:
            h.update(np.ascontiguousarray(self.tip_home_pose.matrix(), dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class LegMount:
    morphology: int
    attachment: Pose


@dataclass(frozen=True)
class RobotModel:
    body_inertia: np.ndarray
    catalog: tuple[LegMorphology, ...]
    legs: tuple[LegMount, ...]
    gravity: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GRAVITY))
    name: str = "robot"

    def __post_init__(self):
        Ib = np.array(self.body_inertia, dtype=float)
        _check_spd("body", Ib)
        Ib.setflags(write=False)
        g = np.array(self.gravity, dtype=float).reshape(3)
        g.setflags(write=False)
        object.__setattr__(self, "body_inertia", Ib)
        object.__setattr__(self, "gravity", g)
        object.__setattr__(self, "catalog", tuple(self.catalog))
        object.__setattr__(self, "legs", tuple(self.legs))
        for mount in self.legs:
            if not 0 <= mount.morphology < len(self.catalog):
                raise ValueError(f"leg refers to unknown catalog entry {mount.morphology}")

    @property
    def N(self) -> int:
        return len(self.legs)

    @cached_property
    def leg_sizes(self) -> tuple[int, ...]:
        return tuple(self.catalog[m.morphology].dof for m in self.legs)

    @property
    def N_T(self) -> int:
        return int(sum(self.leg_sizes))

    @property
    def dof(self) -> int:
        return 6 + self.N_T

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start index of each leg's joints inside ``theta``."""
        return np.concatenate([[0], np.cumsum(self.leg_sizes)[:-1]]).astype(np.int64)

    @cached_property
    def attached_legs(self) -> tuple[LegMorphology, ...]:
        return tuple(
            self.catalog[m.morphology].attached(m.attachment, name=f"leg{i + 1}")
            for i, m in enumerate(self.legs)
        )

    @property
    def body_mass(self) -> float:
        return float(self.body_inertia[0, 0])

    @cached_property
    def body_com(self) -> np.ndarray:
        return com_offset(self.body_inertia)

    @property
    def total_mass(self) -> float:
        return self.body_mass + float(sum(leg.masses.sum() for leg in self.attached_legs))

    def leg_slice(self, i: int) -> slice:
        o = int(self.offsets[i])
        return slice(o, o + self.leg_sizes[i])

    def reduced(self, mv: MorphologyVectors) -> RobotModel:
        """Build the damaged robot from scratch (removed legs dropped, legs truncated)."""
        validate_morphology(self, mv)
        catalog: list[LegMorphology] = []
        legs: list[LegMount] = []
        for i, mount in enumerate(self.legs):
            if not mv.leg_existence[i]:
                continue
            keep = int(mv.leg_links(i).sum())
            catalog.append(self.catalog[mount.morphology].truncated(keep))
            legs.append(LegMount(len(catalog) - 1, mount.attachment))
        return RobotModel(self.body_inertia, catalog, legs, self.gravity, self.name + "-reduced")


@dataclass(frozen=True)
class MorphologyVectors:
    """Link existence numbers (one per joint) and leg existence numbers."""

    link_existence: np.ndarray
    leg_existence: np.ndarray
    leg_sizes: tuple[int, ...]

    def __post_init__(self):
        x = np.array(self.link_existence, dtype=np.int64).reshape(-1)
        xb = np.array(self.leg_existence, dtype=np.int64).reshape(-1)
        sizes = tuple(int(n) for n in self.leg_sizes)
        if x.size != sum(sizes) or xb.size != len(sizes):
            raise ValueError("morphology vector lengths do not match the leg sizes")
        if not (np.isin(x, (0, 1)).all() and np.isin(xb, (0, 1)).all()):
            raise ValueError("existence numbers must be binary")
        x.setflags(write=False)
        xb.setflags(write=False)
        object.__setattr__(self, "link_existence", x)
        object.__setattr__(self, "leg_existence", xb)
        object.__setattr__(self, "leg_sizes", sizes)

    @classmethod
    def healthy(cls, model: RobotModel) -> MorphologyVectors:
        return cls(np.ones(model.N_T, np.int64), np.ones(model.N, np.int64), model.leg_sizes)

    @classmethod
    def from_links(cls, link_existence, leg_sizes) -> MorphologyVectors:
        """Derive consistent leg flags from the link flags."""
        x = np.asarray(link_existence, dtype=np.int64)
        offs = np.concatenate([[0], np.cumsum(leg_sizes)])
        xb = [int(x[offs[i] : offs[i + 1]].sum() > 0) for i in range(len(leg_sizes))]
        return cls(x, xb, tuple(leg_sizes))

    def leg_links(self, i: int) -> np.ndarray:
        o = sum(self.leg_sizes[:i])
        return self.link_existence[o : o + self.leg_sizes[i]]

    def present_links(self, i: int) -> int:
        return int(self.leg_links(i).sum()) if self.leg_existence[i] else 0

    @property
    def reduced_dof(self) -> int:
        return 6 + int(self.present_joints.size)

    @cached_property
    def present_joints(self) -> np.ndarray:
        """Indices into ``theta`` of joints whose link exists (and whose leg exists)."""
        idx = []
        o = 0
        for i, n in enumerate(self.leg_sizes):
            if self.leg_existence[i]:
                idx.extend(o + j for j in range(n) if self.link_existence[o + j])
            o += n
        return np.array(idx, dtype=np.int64)

    @cached_property
    def present_dofs(self) -> np.ndarray:
        """Indices into the full quasi-velocity that survive the reshape."""
        return np.concatenate([np.arange(6), 6 + self.present_joints]).astype(np.int64)

    def tip_present(self, model: RobotModel) -> np.ndarray:
        out = np.zeros(model.N, dtype=bool)
        for i, leg in enumerate(model.attached_legs):
            out[i] = bool(
                self.leg_existence[i] and leg.has_tip and self.leg_links(i)[-1] == 1
            )
        return out

    def __eq__(self, other):
        if not isinstance(other, MorphologyVectors):
            return NotImplemented
        return (
            self.leg_sizes == other.leg_sizes
            and np.array_equal(self.link_existence, other.link_existence)
            and np.array_equal(self.leg_existence, other.leg_existence)
        )

    def __hash__(self):
        return hash((self.leg_sizes, self.link_existence.tobytes(), self.leg_existence.tobytes()))


def validate_morphology(model: RobotModel, mv: MorphologyVectors) -> None:
    """Raise unless every leg keeps a contiguous prefix of its links.

    A leg flagged absent must have no present links and vice versa.
    """
    if mv.leg_sizes != model.leg_sizes:
        raise InvalidMorphology("morphology vectors do not match the robot's leg sizes")
    for i in range(model.N):
        links = mv.leg_links(i)
        if bool(mv.leg_existence[i]) != bool(links.sum() > 0):
            raise InconsistentLegFlag(i)
        seen_gap = False
        for x in links:
            if not x:
                seen_gap = True
            elif seen_gap:
                raise NonPrefixPattern(i)


@dataclass(frozen=True)
class DamageEvent:
    """Remove whole legs, or every link beyond the first ``keep_links``.

    Leg indices are zero based.  ``keep_links=0`` removes the leg.
    """

    legs: tuple[int, ...]
    keep_links: int = 0

    def __post_init__(self):
        object.__setattr__(self, "legs", tuple(int(i) for i in self.legs))
        if self.keep_links < 0:
            raise ValueError("keep_links must be non-negative")

    @classmethod
    def remove_legs(cls, *legs: int) -> DamageEvent:
        return cls(legs, 0)

    @classmethod
    def truncate(cls, legs: Iterable[int], keep_links: int) -> DamageEvent:
        return cls(tuple(legs), keep_links)


def apply_damage(mv: MorphologyVectors, events) -> MorphologyVectors:
    """Return new morphology vectors with the damage applied (idempotent)."""
    if isinstance(events, DamageEvent):
        events = [events]
    for i in range(len(mv.leg_sizes)):
        links = mv.leg_links(i)
        if bool(mv.leg_existence[i]) != bool(links.sum() > 0):
            raise InconsistentLegFlag(i)
        if np.any(np.diff(links) > 0):
            raise NonPrefixPattern(i)
    x = mv.link_existence.copy()
    offs = np.concatenate([[0], np.cumsum(mv.leg_sizes)])
    for ev in events:
        for i in ev.legs:
            if not 0 <= i < len(mv.leg_sizes):
                raise InvalidMorphology(f"damage names unknown leg {i}")
            start = offs[i] + min(ev.keep_links, mv.leg_sizes[i])
            x[start : offs[i + 1]] = 0
    xb = mv.leg_existence.copy()
    for i in range(len(mv.leg_sizes)):
        if x[offs[i] : offs[i + 1]].sum() == 0:
            xb[i] = 0
    return MorphologyVectors(x, xb, mv.leg_sizes)


@dataclass
class RobotState:
    """Configuration ``(g_sb, theta)`` and quasi-velocity ``[V_sb^b; theta_dot]``.

    Vectors keep the full healthy length; entries of removed joints are
    frozen and ignored by the reduced dynamics.
    """

    body_pose: Pose
    theta: np.ndarray
    v: np.ndarray

    @classmethod
    def zero(cls, model: RobotModel, body_pose: Pose | None = None) -> RobotState:
        return cls(body_pose or Pose.identity(), np.zeros(model.N_T), np.zeros(model.dof))

    def copy(self) -> RobotState:
        return RobotState(self.body_pose, self.theta.copy(), self.v.copy())


# ----------------------------------------------------------------------------
# Default hexapod

# hip positions in the body frame, leg order 1..6
HEXAPOD_HIPS = (
    (0.051, 0.093, 0.0),
    (-0.051, 0.093, 0.0),
    (0.073, 0.0, 0.0),
    (-0.073, 0.0, 0.0),
    (0.051, -0.093, 0.0),
    (-0.051, -0.093, 0.0),
)
HEXAPOD_BODY_MASS = 1.35
HEXAPOD_BODY_INERTIA = (46e-4, 9.36e-4, 52e-4)
HEXAPOD_LINK_MASSES = (0.02, 0.07, 0.11)
HEXAPOD_LINK_LENGTHS = (0.045, 0.077, 0.123)
HEXAPOD_LINK_INERTIAS = (
    (1.0e-4, 8.28e-4, 9.09e-4),
    (0.23e-4, 3.07e-4, 2.91e-4),
    (0.22e-4, 10.0e-4, 10.01e-4),
)

# 180 degree yaw, written out so no sin(pi) residue leaks into the model
_FLIP_Z = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])


def yaw_pitch_pitch_leg(
    lengths=HEXAPOD_LINK_LENGTHS,
    masses=HEXAPOD_LINK_MASSES,
    inertias=HEXAPOD_LINK_INERTIAS,
    name: str = "ypp3",
) -> LegMorphology:
    """Three-link leg in its hip frame, stretched along +x at zero angles.

    Joint 1 yaws about +z at the hip; joints 2 and 3 pitch about -y, so a
    positive angle lifts the distal links.  Link frames sit at mid-length
    with x along the link.
    """
    L1, L2, L3 = lengths
    screws = [
        revolute_screw((0, 0, 1), (0, 0, 0)),
        revolute_screw((0, -1, 0), (L1, 0, 0)),
        revolute_screw((0, -1, 0), (L1 + L2, 0, 0)),
    ]
    centers = (0.5 * L1, L1 + 0.5 * L2, L1 + L2 + 0.5 * L3)
    poses = tuple(Pose.translation((c, 0.0, 0.0)) for c in centers)
    I = [generalized_inertia(m, d) for m, d in zip(masses, inertias)]
    return LegMorphology(
        screws=np.array(screws),
        home_link_poses=poses,
        link_inertias=np.array(I),
        tip_home_pose=Pose.translation((L1 + L2 + L3, 0.0, 0.0)),
        name=name,
    )


def hip_attachment(hip) -> Pose:
    """Hip frame at ``hip`` with its x axis pointing away from the body's y axis."""
    R = np.eye(3) if hip[0] >= 0 else _FLIP_Z
    return Pose(R, hip)


def build_hexapod_default(gravity=DEFAULT_GRAVITY) -> RobotModel:
    """Six identical yaw-pitch-pitch legs on a small hexapod body."""
    leg = yaw_pitch_pitch_leg()
    mounts = tuple(LegMount(0, hip_attachment(h)) for h in HEXAPOD_HIPS)
    return RobotModel(
        body_inertia=generalized_inertia(HEXAPOD_BODY_MASS, HEXAPOD_BODY_INERTIA),
        catalog=(leg,),
        legs=mounts,
        gravity=np.array(gravity, dtype=float),
        name="hexapod",
    )


# ----------------------------------------------------------------------------
# Robot description files

_TOP_KEYS = {"schema_version", "name", "gravity", "body", "catalog", "legs"}
_BODY_KEYS = {"mass", "inertia", "generalized_inertia"}
_ENTRY_KEYS = {"name", "screws", "link_home_poses", "tip_home_pose", "links"}
_LINK_KEYS = {"mass", "inertia", "generalized_inertia"}
_POSE_KEYS = {"rotation", "position", "yaw"}
_LEG_KEYS = {"morphology", "attachment"}


def _reject_unknown(where: str, d: dict, allowed: set) -> None:
    if not isinstance(d, dict):
        raise RobotFileError(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise RobotFileError(f"{where}: unknown field(s) {sorted(extra)}")


def _pose_from_json(where: str, d) -> Pose:
    _reject_unknown(where, d, _POSE_KEYS)
    if "rotation" in d and "yaw" in d:
        raise RobotFileError(f"{where}: give either rotation or yaw, not both")
    if "rotation" in d:
        R = np.array(d["rotation"], dtype=float)
    elif "yaw" in d:
        from .liegroup import rot_z

        R = rot_z(float(d["yaw"]))
    else:
        R = np.eye(3)
    pose = Pose(R, d.get("position", (0.0, 0.0, 0.0)))
    if not pose.is_valid(1e-9):
        raise RobotFileError(f"{where}: rotation is not orthonormal")
    return pose


def _pose_to_json(p: Pose) -> dict:
    return {"rotation": p.rotation.tolist(), "position": p.position.tolist()}


def _inertia_from_json(where: str, d) -> np.ndarray:
    if "generalized_inertia" in d:
        return np.array(d["generalized_inertia"], dtype=float)
    if "mass" not in d or "inertia" not in d:
        raise RobotFileError(f"{where}: need mass + inertia or generalized_inertia")
    inertia = np.array(d["inertia"], dtype=float)
    if inertia.shape == (3,):
        return generalized_inertia(float(d["mass"]), inertia)
    if inertia.shape == (3, 3):
        out = np.zeros((6, 6))
        out[:3, :3] = float(d["mass"]) * np.eye(3)
        out[3:, 3:] = inertia
        return out
    raise RobotFileError(f"{where}: inertia must be 3 principal values or a 3x3 matrix")


def robot_from_dict(data: dict) -> RobotModel:
    _reject_unknown("robot", data, _TOP_KEYS)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise RobotFileError(f"robot: schema_version must be {SCHEMA_VERSION}")
    missing = {"body", "catalog", "legs"} - set(data)
    if missing:
        raise RobotFileError(f"robot: missing field(s) {sorted(missing)}")
    for a, entry in enumerate(data["catalog"]):
        if isinstance(entry, dict):
            lack = {"screws", "link_home_poses", "links"} - set(entry)
            if lack:
                raise RobotFileError(f"catalog[{a}]: missing field(s) {sorted(lack)}")
    body = data["body"]
    _reject_unknown("body", body, _BODY_KEYS)
    Ib = _inertia_from_json("body", body)
    catalog = []
    for a, entry in enumerate(data["catalog"]):
        where = f"catalog[{a}]"
        _reject_unknown(where, entry, _ENTRY_KEYS)
        links = entry["links"]
        inertias = []
        for j, link in enumerate(links):
            _reject_unknown(f"{where}.links[{j}]", link, _LINK_KEYS)
            inertias.append(_inertia_from_json(f"{where}.links[{j}]", link))
        poses = tuple(
            _pose_from_json(f"{where}.link_home_poses[{j}]", p)
            for j, p in enumerate(entry["link_home_poses"])
        )
        tip = entry.get("tip_home_pose")
        try:
            catalog.append(
                LegMorphology(
                    screws=np.array(entry["screws"], dtype=float),
                    home_link_poses=poses,
                    link_inertias=np.array(inertias),
                    tip_home_pose=None if tip is None else _pose_from_json(f"{where}.tip", tip),
                    name=entry.get("name", f"morphology{a}"),
                )
            )
        except ValueError as exc:
            raise RobotFileError(f"{where}: {exc}") from exc
    names = {m.name: a for a, m in enumerate(catalog)}
    legs = []
    for i, leg in enumerate(data["legs"]):
        _reject_unknown(f"legs[{i}]", leg, _LEG_KEYS)
        ref = leg["morphology"]
        idx = names.get(ref) if isinstance(ref, str) else int(ref)
        if idx is None:
            raise RobotFileError(f"legs[{i}]: unknown morphology {ref!r}")
        legs.append(LegMount(idx, _pose_from_json(f"legs[{i}].attachment", leg["attachment"])))
    try:
        return RobotModel(
            body_inertia=Ib,
            catalog=tuple(catalog),
            legs=tuple(legs),
            gravity=np.array(data.get("gravity", DEFAULT_GRAVITY), dtype=float),
            name=data.get("name", "robot"),
        )
    except ValueError as exc:
        raise RobotFileError(str(exc)) from exc


def robot_to_dict(model: RobotModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": model.name,
        "gravity": model.gravity.tolist(),
        "body": {"generalized_inertia": model.body_inertia.tolist()},
        "catalog": [
            {
                "name": m.name,
                "screws": m.screws.tolist(),
                "link_home_poses": [_pose_to_json(p) for p in m.home_link_poses],
                "tip_home_pose": None if m.tip_home_pose is None else _pose_to_json(m.tip_home_pose),
                "links": [{"generalized_inertia": I.tolist()} for I in m.link_inertias],
            }
            for m in model.catalog
        ],
        "legs": [
            {"morphology": mount.morphology, "attachment": _pose_to_json(mount.attachment)}
            for mount in model.legs
        ],
    }


def load_robot(path) -> RobotModel:
    with open(path, encoding="utf-8") as fh:
        return robot_from_dict(json.load(fh))


def save_robot(model: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(robot_to_dict(model), indent=2), encoding="utf-8")
