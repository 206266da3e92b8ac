"""Trigonometric-basis fast path.

Every entry of a revolute leg's mass blocks, first mass moments and tip
Jacobian is a polynomial in ``sin`` and ``cos`` of its joint angles with
per-joint degree at most two.  :func:`decompose_leg` extracts the exact
coefficient tables once per leg type (in the hip frame); at run time a
step only evaluates the basis functions and multiplies by the tables.
Derivatives use the same tables with the basis derivative in place of
the basis, so the Coriolis terms need no matrix products either.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._jit import USE_NUMBA
from ._kernels import fast_leg_blocks, fast_leg_blocks_np, layout
from .dynamics import KernelEvaluator, StructuralMatrices
from .liegroup import Pose, ad_of, adjoint_inv_of, hat
from .model import LegMorphology, MorphologyVectors, RobotModel, validate_morphology
from .trigpoly import TrigBasis, TrigPoly

CACHE_MAGIC = b"MLRDCMP\x00"
CACHE_SCHEMA = 1


class NonRevoluteJoint(ValueError):
    def __init__(self, joint: int):
        self.joint = joint
        super().__init__(f"joint {joint} is not a zero-pitch revolute joint with a unit axis")


class DecompositionCacheError(ValueError):
    pass


def _check_revolute(leg: LegMorphology, tol: float = 1e-12) -> None:
    for k, xi in enumerate(leg.screws):
        w, v = xi[3:], xi[:3]
        if abs(np.linalg.norm(w) - 1.0) > tol or abs(w @ v) > tol:
            raise NonRevoluteJoint(k)


def _ad_exp(n: int, k: int, xi, sign: float) -> TrigPoly:
    """``Ad(exp(sign * xi * theta_k)) = I + sign * s * ad + (1 - c) * ad^2``."""
    ad = ad_of(xi)
    ad2 = ad @ ad
    return TrigPoly.joint(n, k, np.eye(6) + ad2, sign * ad, -ad2)


def _pose_exp(n: int, k: int, xi) -> TrigPoly:
    X = hat(xi)
    X2 = X @ X
    return TrigPoly.joint(n, k, np.eye(4) + X2, X, -X2)


@dataclass(frozen=True)
class LegDecomposition:
    """Coefficient tables of one leg over a :class:`TrigBasis`.

    Arrays carry the basis on their last axis: ``Ibb`` (n, 6, 6, g),
    ``Ibt`` (n, 6, n, g), ``Itt`` (n, n, n, g) per link; ``IN`` (n, 3, g)
    holds ``m_j * p_j``; ``IJ_ad`` (6, 6, g) and ``IJ_aj`` (6, n, g) give the
    tip block ``[Ad^-1_tip, Ad^-1_tip J_tip]``.
    """

    basis: TrigBasis
    Ibb: np.ndarray
    Ibt: np.ndarray
    Itt: np.ndarray
    IN: np.ndarray
    IJ_ad: np.ndarray
    IJ_aj: np.ndarray
    link_masses: np.ndarray
    has_tip: bool
    morphology_hash: str
    attachment: np.ndarray = field(default_factory=lambda: np.eye(4))

    @property
    def n(self) -> int:
        return self.Ibb.shape[0]

    @property
    def gamma(self) -> int:
        return self.basis.size

    # reconstruction -----------------------------------------------------

    def _eval(self, C: np.ndarray, F: np.ndarray) -> np.ndarray:
        return C @ F

    def link_mass(self, j: int, theta):
        """``(M_bb, M_btheta, M_thetatheta)`` of link ``j`` (1-based)."""
        F = self.basis.evaluate(theta)
        return self.Ibb[j - 1] @ F, self.Ibt[j - 1] @ F, self.Itt[j - 1] @ F

    def mass_partials(self, j: int, theta, k: int):
        """Derivative blocks of link ``j`` with respect to joint ``k`` (both 1-based)."""
        dF = self.basis.derivative_table(k - 1) @ self.basis.evaluate(theta)
        return self.Ibb[j - 1] @ dF, self.Ibt[j - 1] @ dF, self.Itt[j - 1] @ dF

    def mass_moment(self, theta) -> np.ndarray:
        return self.IN.sum(axis=0) @ self.basis.evaluate(theta)

    def tip_block(self, theta):
        F = self.basis.evaluate(theta)
        return self.IJ_ad @ F, self.IJ_aj @ F

    # attachment ---------------------------------------------------------

    def instantiate(self, g: Pose) -> LegDecomposition:
        """Coefficient tables of the leg mounted at ``g`` (hip to body)."""
        B = adjoint_inv_of(g)
        Ibb = np.einsum("ba,jbcq,cd->jadq", B, self.Ibb, B)
        Ibt = np.einsum("ba,jbcq->jacq", B, self.Ibt)
        IN = np.einsum("ab,jbq->jaq", g.rotation, self.IN)
        IN = IN.copy()
        IN[:, :, 0] += self.link_masses[:, None] * g.position[None, :]
        IJ_ad = np.einsum("abq,bc->acq", self.IJ_ad, B)
        return replace(
            self,
            Ibb=Ibb,
            Ibt=Ibt,
            Itt=self.Itt.copy(),
            IN=IN,
            IJ_ad=IJ_ad,
            IJ_aj=self.IJ_aj.copy(),
            attachment=g.matrix() @ self.attachment,
        )

    def nnz(self, tol: float = 0.0) -> int:
        return int(
            sum(np.count_nonzero(np.abs(a) > tol) for a in (self.Ibb, self.Ibt, self.Itt, self.IN, self.IJ_ad, self.IJ_aj))
        )


def decompose_leg(leg: LegMorphology, attachment: Pose | None = None, reduced: bool = True) -> LegDecomposition:
    """Exact coefficient extraction for a revolute leg.

    ``leg`` is described in its own hip frame.  With ``attachment`` the
    tables are mapped to the body frame afterwards.
    """
    _check_revolute(leg)
    n = leg.dof
    basis = TrigBasis(n, reduced=reduced)
    adinv = [_ad_exp(n, k, leg.screws[k], -1.0) for k in range(n)]
    # A[j] = Ad((e_1 ... e_j)^-1), per-joint linear
    A = []
    acc = TrigPoly.constant(n, np.eye(6))
    for k in range(n):
        acc = adinv[k] @ acc
        A.append(acc)

    def tail(k: int, j: int) -> TrigPoly:
        # Ad((e_{k+1} ... e_j)^-1) xi_k, equal to Ad^1_j xi'_k
        vec = TrigPoly.constant(n, leg.screws[k])
        for m in range(k + 1, j):
            vec = adinv[m] @ vec
        return vec

    zero6 = TrigPoly.constant(n, np.zeros(6))
    II = leg.spatial_inertias
    G = TrigPoly.constant(n, np.eye(4))
    Ibb = np.zeros((n, 6, 6, basis.size))
    Ibt = np.zeros((n, 6, n, basis.size))
    Itt = np.zeros((n, n, n, basis.size))
    IN = np.zeros((n, 3, basis.size))
    for j in range(n):
        G = G @ _pose_exp(n, j, leg.screws[j])
        Y = TrigPoly.stack([tail(k, j + 1) if k <= j else zero6 for k in range(n)], axis=1)
        AtI = A[j].T @ II[j]
        Ibb[j] = basis.represent(AtI @ A[j])
        Ibt[j] = basis.represent(AtI @ Y)
        Itt[j] = basis.represent(Y.T @ II[j] @ Y)
        com = G @ np.append(leg.home_coms[j], 1.0)
        IN[j] = leg.masses[j] * basis.represent(com[:3])
    if leg.tip_home_pose is not None:
        T = adjoint_inv_of(leg.tip_home_pose)
        IJ_ad = basis.represent(T @ A[n - 1])
        IJ_aj = basis.represent(T @ TrigPoly.stack([tail(k, n) for k in range(n)], axis=1))
    else:
        IJ_ad = np.zeros((6, 6, basis.size))
        IJ_aj = np.zeros((6, n, basis.size))
    dec = LegDecomposition(
        basis=basis,
        Ibb=Ibb,
        Ibt=Ibt,
        Itt=Itt,
        IN=IN,
        IJ_ad=IJ_ad,
        IJ_aj=IJ_aj,
        link_masses=leg.masses.copy(),
        has_tip=leg.tip_home_pose is not None,
        morphology_hash=leg.fingerprint(),
    )
    return dec if attachment is None else dec.instantiate(attachment)


def decompose_model(model: RobotModel, reduced: bool = True) -> tuple[LegDecomposition, ...]:
    """One decomposition per catalog entry, instantiated for every mounted leg."""
    base = [decompose_leg(m, reduced=reduced) for m in model.catalog]
    return tuple(base[mount.morphology].instantiate(mount.attachment) for mount in model.legs)


# ----------------------------------------------------------------------------
# cache files


def save_decomposition(dec: LegDecomposition, path) -> None:
    blocks = {
        "Ibb": dec.Ibb,
        "Ibt": dec.Ibt,
        "Itt": dec.Itt,
        "IN": dec.IN,
        "IJ_ad": dec.IJ_ad,
        "IJ_aj": dec.IJ_aj,
        "link_masses": dec.link_masses,
        "attachment": dec.attachment,
    }
    header = {
        "schema_version": CACHE_SCHEMA,
        "morphology_sha256": dec.morphology_hash,
        "gamma": dec.gamma,
        "n": dec.n,
        "reduced": dec.basis.reduced,
        "has_tip": dec.has_tip,
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in blocks.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for v in blocks.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_decomposition(path, leg: LegMorphology | None = None) -> LegDecomposition:
    """Read a cache file; with ``leg`` the stored morphology hash must match."""
    data = Path(path).read_bytes()
    if data[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise DecompositionCacheError("not a decomposition cache file")
    off = len(CACHE_MAGIC)
    (hlen,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    try:
        header = json.loads(data[off : off + hlen].decode())
    except ValueError as exc:
        raise DecompositionCacheError("corrupt header") from exc
    off += hlen
    if header.get("schema_version") != CACHE_SCHEMA:
        raise DecompositionCacheError(f"unsupported cache schema {header.get('schema_version')}")
    if leg is not None and header["morphology_sha256"] != leg.fingerprint():
        raise DecompositionCacheError("cache was built for a different leg morphology")
    arrays = {}
    for b in header["blocks"]:
        count = int(np.prod(b["shape"]))
        nbytes = 8 * count
        if off + nbytes > len(data):
            raise DecompositionCacheError("truncated cache file")
        arrays[b["name"]] = np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(b["shape"]).copy()
        off += nbytes
    if off != len(data):
        raise DecompositionCacheError("trailing bytes in cache file")
    basis = TrigBasis(header["n"], reduced=header["reduced"])
    if basis.size != header["gamma"]:
        raise DecompositionCacheError("basis size mismatch")
    return LegDecomposition(
        basis=basis,
        has_tip=bool(header["has_tip"]),
        morphology_hash=header["morphology_sha256"],
        **arrays,
    )


# ----------------------------------------------------------------------------
# run-time evaluation


def weighted_tables(dec: LegDecomposition, weights, nmax: int):
    """Value and partial coefficient rows in the kernel layout, summed over links."""
    n, g = dec.n, dec.gamma
    lo = layout(nmax)
    w = np.asarray(weights, dtype=float)[:n]
    val = np.zeros((lo["value"], g))
    Mbb = np.einsum("j,jabq->abq", w, dec.Ibb)
    Mbt = np.einsum("j,jabq->abq", w, dec.Ibt)
    Mtt = np.einsum("j,jabq->abq", w, dec.Itt)
    val[: lo["Mbt"]] = Mbb.reshape(36, g)
    tmp = np.zeros((6, nmax, g))
    tmp[:, :n] = Mbt
    val[lo["Mbt"] : lo["Mtt"]] = tmp.reshape(-1, g)
    tmp = np.zeros((nmax, nmax, g))
    tmp[:n, :n] = Mtt
    val[lo["Mtt"] : lo["mp"]] = tmp.reshape(-1, g)
    val[lo["mp"] : lo["partial"]] = np.einsum("j,jaq->aq", w, dec.IN)
    val[lo["tipAd"] : lo["tipAJ"]] = dec.IJ_ad.reshape(36, g)
    tmp = np.zeros((6, nmax, g))
    tmp[:, :n] = dec.IJ_aj
    val[lo["tipAJ"] : lo["value"]] = tmp.reshape(-1, g)
    return val


def _symmetric_mirror(nmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangle slots that are computed and (dst, src) lower copies."""
    lo = layout(nmax)
    computed = np.ones(lo["value"], dtype=bool)
    mirror = []
    for a in range(6):
        for b in range(a):
            computed[6 * a + b] = False
            mirror.append((6 * a + b, 6 * b + a))
    for a in range(nmax):
        for b in range(a):
            d = lo["Mtt"] + a * nmax + b
            computed[d] = False
            mirror.append((d, lo["Mtt"] + b * nmax + a))
    return computed, np.array(mirror, dtype=np.int64).reshape(-1, 2)


class FastEvaluator(KernelEvaluator):
    """Structural matrices from coefficient tables (no matrix chains at run time).

    ``prune`` drops coefficients below ``prune * max|coefficient|`` of their
    table; zero keeps every nonzero.
    """

    name = "fast"

    def __init__(
        self,
        model: RobotModel,
        mv: MorphologyVectors | None = None,
        decompositions: tuple[LegDecomposition, ...] | None = None,
        reduced: bool = True,
        prune: float = 1e-15,
    ):
        self.decompositions = tuple(decompositions or decompose_model(model, reduced=reduced))
        if len(self.decompositions) != model.N:
            raise ValueError("need one decomposition per leg")
        for dec, leg, size in zip(self.decompositions, model.attached_legs, model.leg_sizes):
            if dec.n != size:
                raise ValueError("decomposition does not match the leg size")
        self.prune = prune
        super().__init__(model, mv)

    def _morphology_changed(self) -> None:
        # fast reconfiguration: weighted sums of the link tables, then packing
        N, nmax = self.model.N, self.nmax
        lo = self.layout
        computed, mirror = _symmetric_mirror(nmax)
        partial = np.zeros(lo["value"], dtype=bool)
        partial[: lo["partial"]] = True
        tables = []
        active = []
        for i, dec in enumerate(self.decompositions):
            T = weighted_tables(dec, self.w[i], nmax)
            scale = np.max(np.abs(T), initial=0.0)
            T[np.abs(T) <= self.prune * scale] = 0.0
            if not self.w[i].any():
                T[:] = 0.0
            tables.append(T)
            active.append(np.flatnonzero(np.any(T != 0.0, axis=0)))
        nb = np.array([a.size for a in active], dtype=np.int64)
        gA = max(1, int(nb.max(initial=0)))
        self.expo = np.zeros((N, gA, nmax), dtype=np.int64)
        self.nb = nb
        self.zkind = np.array([0 if not d.basis.reduced else 1 for d in self.decompositions], dtype=np.int64)
        self.dense = np.zeros((N, lo["value"], gA))
        self.ddense = np.zeros((N, lo["partial"], gA))
        v_rows = [np.flatnonzero(computed & ~partial)] * N
        p_rows = [np.flatnonzero(computed & partial)] * N

        def csr(rows_per_leg, tabs):
            ptr = np.zeros((N, len(rows_per_leg[0]) + 1), dtype=np.int64)
            qs, cs = [], []
            for i in range(N):
                q_i, c_i = [], []
                for r, row in enumerate(rows_per_leg[i]):
                    nz = np.flatnonzero(tabs[i][row])
                    q_i.extend(nz)
                    c_i.extend(tabs[i][row, nz])
                    ptr[i, r + 1] = len(q_i)
                qs.append(q_i)
                cs.append(c_i)
            width = max(1, max(len(q) for q in qs))
            Q = np.zeros((N, width), dtype=np.int64)
            Cc = np.zeros((N, width))
            for i in range(N):
                Q[i, : len(qs[i])] = qs[i]
                Cc[i, : len(cs[i])] = cs[i]
            dst = np.array([rows_per_leg[i] for i in range(N)], dtype=np.int64).reshape(N, -1)
            return ptr, Q, Cc, dst

        compact = []
        for i, (T, act) in enumerate(zip(tables, active)):
            Tc = T[:, act]
            compact.append(Tc)
            if act.size:
                self.expo[i, : act.size, : self.decompositions[i].n] = self.decompositions[i].basis.exponent_index[act]
            self.dense[i, :, : act.size] = Tc
            self.ddense[i, :, : act.size] = Tc[: lo["partial"]]
        self.csr = csr(v_rows, compact)
        self.dcsr = csr(p_rows, compact)
        self.mirror = mirror
        self.nnz = int(self.csr[0][:, -1].sum() + self.dcsr[0][:, -1].sum())

    def _blocks(self, theta):
        if USE_NUMBA:
            fast_leg_blocks(
                self.expo, self.nb, self.zkind, *self.csr, *self.dcsr, self.mirror,
                self.nj, theta, self.offs, self.val, self.dval,
            )
        else:
            fast_leg_blocks_np(
                self.expo, self.nb, self.zkind, self.dense, self.ddense,
                self.nj, theta, self.offs, self.val, self.dval,
            )


# ----------------------------------------------------------------------------
# functional interface


def eval_fast_mass(decomps, model: RobotModel, mv: MorphologyVectors, theta) -> np.ndarray:
    """Reduced mass matrix from the coefficient tables."""
    S = eval_fast_structural(decomps, model, mv, Pose.identity(), theta, np.zeros(mv.reduced_dof))
    return S.M


def eval_fast_partials(dec: LegDecomposition, theta, j: int, k: int):
    """Derivative blocks of link ``j`` with respect to joint ``k`` (1-based)."""
    return dec.mass_partials(j, theta, k)


def eval_fast_structural(decomps, model: RobotModel, mv: MorphologyVectors, g_sb: Pose, theta, v) -> StructuralMatrices:
    validate_morphology(model, mv)
    ev = FastEvaluator(model, mv, decompositions=decomps)
    return ev.structural(g_sb, theta, v)
