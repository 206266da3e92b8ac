"""Hot loops: per-leg structural blocks (closed form and trig basis) and assembly.

Every kernel exists as an explicit-loop function compiled by numba and as
a vectorised numpy twin (suffix ``_np``).  The dispatchers at the bottom
pick one according to :data:`mlrdyn._jit.USE_NUMBA`.

Per-leg results use one flat layout so both evaluation routes share the
assembly step.  For a padded leg size ``n``::

    value row : Mbb(36) | Mbt(6n) | Mtt(n*n) | mp(3) | tipAd(36) | tipAJ(6n)
    partial k : Mbb(36) | Mbt(6n) | Mtt(n*n) | mp(3)

``mp`` is the weighted first mass moment sum m_j p_j of the leg.
"""

from __future__ import annotations

import numpy as np

from ._jit import USE_NUMBA, njit


def layout(n: int) -> dict[str, int]:
    o = {"Mbb": 0, "Mbt": 36}
    o["Mtt"] = o["Mbt"] + 6 * n
    o["mp"] = o["Mtt"] + n * n
    o["partial"] = o["mp"] + 3
    o["tipAd"] = o["partial"]
    o["tipAJ"] = o["tipAd"] + 36
    o["value"] = o["tipAJ"] + 6 * n
    return o


# ----------------------------------------------------------------------------
# small dense helpers (numba)


@njit(cache=True)
def _mm(A, B, out):
    n, m = A.shape
    p = B.shape[1]
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += A[i, k] * B[k, j]
            out[i, j] = s


@njit(cache=True)
def _mtm(A, B, out):
    # A^T B
    m, n = A.shape
    p = B.shape[1]
    for i in range(n):
        for j in range(p):
            s = 0.0
            for k in range(m):
                s += A[k, i] * B[k, j]
            out[i, j] = s


@njit(cache=True)
def _exp_screw(xi, th, R, p):
    wx, wy, wz = xi[3] * th, xi[4] * th, xi[5] * th
    vx, vy, vz = xi[0] * th, xi[1] * th, xi[2] * th
    a2 = wx * wx + wy * wy + wz * wz
    ang = np.sqrt(a2)
    if ang < 1e-8:
        A = 1.0
        B = 0.5
        Cc = 1.0 / 6.0
    else:
        A = np.sin(ang) / ang
        B = (1.0 - np.cos(ang)) / a2
        Cc = (ang - np.sin(ang)) / (a2 * ang)
    K = np.empty((3, 3))
    K[0, 0] = 0.0
    K[0, 1] = -wz
    K[0, 2] = wy
    K[1, 0] = wz
    K[1, 1] = 0.0
    K[1, 2] = -wx
    K[2, 0] = -wy
    K[2, 1] = wx
    K[2, 2] = 0.0
    v = (vx, vy, vz)
    for i in range(3):
        for j in range(3):
            k2 = K[i, 0] * K[0, j] + K[i, 1] * K[1, j] + K[i, 2] * K[2, j]
            dij = 1.0 if i == j else 0.0
            R[i, j] = dij + A * K[i, j] + B * k2
    for i in range(3):
        s = 0.0
        for j in range(3):
            k2 = K[i, 0] * K[0, j] + K[i, 1] * K[1, j] + K[i, 2] * K[2, j]
            dij = 1.0 if i == j else 0.0
            s += (dij + B * K[i, j] + Cc * k2) * v[j]
        p[i] = s


@njit(cache=True)
def _adjoint(R, p, out):
    for i in range(3):
        for j in range(3):
            out[i, j] = R[i, j]
            out[i + 3, j + 3] = R[i, j]
            out[i + 3, j] = 0.0
    for j in range(3):
        # (p^ R)[:, j] = p x R[:, j]
        out[0, 3 + j] = p[1] * R[2, j] - p[2] * R[1, j]
        out[1, 3 + j] = p[2] * R[0, j] - p[0] * R[2, j]
        out[2, 3 + j] = p[0] * R[1, j] - p[1] * R[0, j]


@njit(cache=True)
def _adjoint_inv(R, p, out):
    # Ad of (R^T, -R^T p) = [[R^T, -R^T p^], [0, R^T]]
    for i in range(3):
        for j in range(3):
            out[i, j] = R[j, i]
            out[i + 3, j + 3] = R[j, i]
            out[i + 3, j] = 0.0
    for i in range(3):
        # row i of -R^T p^ is (p x R[:, i])^T
        r0, r1, r2 = R[0, i], R[1, i], R[2, i]
        out[i, 3] = r2 * p[1] - r1 * p[2]
        out[i, 4] = r0 * p[2] - r2 * p[0]
        out[i, 5] = r1 * p[0] - r0 * p[1]


@njit(cache=True)
def _ad(xi, out):
    out[:, :] = 0.0
    w0, w1, w2 = xi[3], xi[4], xi[5]
    v0, v1, v2 = xi[0], xi[1], xi[2]
    for o in (0, 3):
        out[o + 0, o + 1] = -w2
        out[o + 0, o + 2] = w1
        out[o + 1, o + 0] = w2
        out[o + 1, o + 2] = -w0
        out[o + 2, o + 0] = -w1
        out[o + 2, o + 1] = w0
    out[0, 4] = -v2
    out[0, 5] = v1
    out[1, 3] = v2
    out[1, 5] = -v0
    out[2, 3] = -v1
    out[2, 4] = v0


@njit(cache=True)
def _block_transpose(A, out):
    # inverse of an adjoint matrix [[R, B], [0, R]] is [[R^T, B^T], [0, R^T]]
    for i in range(3):
        for j in range(3):
            out[i, j] = A[j, i]
            out[i + 3, j + 3] = A[j, i]
            out[i, j + 3] = A[j, i + 3]
            out[i + 3, j] = 0.0


# ----------------------------------------------------------------------------
# closed-form leg blocks


@njit(cache=True)
def naive_leg_blocks(S, II, mass, c0, tip0, nj, w, theta, offs, val, dval, tipg):
    """Closed-form blocks for every leg.

    ``S`` screws (N, n, 6); ``II`` home spatial inertias (N, n, 6, 6);
    ``c0`` home CoMs (N, n, 3); ``tip0`` tip home poses (N, 4, 4); ``w``
    link weights (N, n); ``theta`` full joint vector; ``offs`` leg offsets.
    Writes ``val`` (N, L), ``dval`` (N, n, Lp) and tip poses ``tipg`` (N, 4, 4).
    """
    N, nmax = w.shape
    oMbt = 36
    oMtt = oMbt + 6 * nmax
    omp = oMtt + nmax * nmax
    otAd = omp + 3
    otAJ = otAd + 36
    Rk = np.empty((nmax, 3, 3))
    pk = np.empty((nmax, 3))
    Gr = np.empty((nmax + 1, 3, 3))
    Gp = np.empty((nmax + 1, 3))
    adinv = np.empty((nmax, 6, 6))
    AA = np.zeros((nmax + 2, nmax + 1, 6, 6))
    xs = np.empty((nmax, 6))
    adk = np.empty((nmax, 6, 6))
    AdG = np.empty((6, 6))
    IA = np.empty((6, 6))
    Mbb = np.empty((6, 6))
    J = np.zeros((6, nmax))
    MJ = np.empty((6, nmax))
    tmp = np.empty((6, 6))
    dA = np.empty((6, 6))
    X = np.empty((6, 6))
    dMbb = np.empty((6, 6))
    dJ = np.zeros((6, nmax))
    inv1 = np.empty((6, 6))
    inv2 = np.empty((6, 6))
    t6 = np.empty(6)
    dMJ = np.empty((6, nmax))
    MdJ = np.empty((6, nmax))
    eye6 = np.eye(6)
    pc = np.empty(3)
    for i in range(N):
        n = nj[i]
        val[i, :] = 0.0
        dval[i, :, :] = 0.0
        o = offs[i]
        # joint exponentials and cumulative poses
        for a in range(3):
            for b in range(3):
                Gr[0, a, b] = 1.0 if a == b else 0.0
            Gp[0, a] = 0.0
        for k in range(n):
            _exp_screw(S[i, k], theta[o + k], Rk[k], pk[k])
            _adjoint_inv(Rk[k], pk[k], adinv[k])
            for a in range(3):
                s = Gp[k, a]
                for b in range(3):
                    acc = 0.0
                    for c in range(3):
                        acc += Gr[k, a, c] * Rk[k, c, b]
                    Gr[k + 1, a, b] = acc
                    s += Gr[k, a, b] * pk[k, b]
                Gp[k + 1, a] = s
            _adjoint(Gr[k], Gp[k], AdG)
            for a in range(6):
                s = 0.0
                for b in range(6):
                    s += AdG[a, b] * S[i, k, b]
                xs[k, a] = s
            _ad(S[i, k], adk[k])
        # accumulated adjoints AA[a, b] = Ad((e_a ... e_b)^-1), 1-based, AA[a, a-1] = I
        for a in range(1, n + 2):
            AA[a, a - 1, :, :] = eye6
            for b in range(a, n + 1):
                _mm(adinv[b - 1], AA[a, b - 1], AA[a, b])
        for j in range(1, n + 1):
            wj = w[i, j - 1]
            if wj == 0.0:
                continue
            A = AA[1, j]
            _mm(II[i, j - 1], A, IA)
            _mtm(A, IA, Mbb)
            J[:, :] = 0.0
            for b in range(j):
                for a in range(6):
                    J[a, b] = xs[b, a]
            _mm(Mbb, J, MJ)
            for a in range(6):
                for b in range(6):
                    val[i, a * 6 + b] += wj * Mbb[a, b]
                for b in range(nmax):
                    val[i, oMbt + a * nmax + b] += wj * MJ[a, b]
            for a in range(j):
                for b in range(j):
                    s = 0.0
                    for c in range(6):
                        s += J[c, a] * MJ[c, b]
                    val[i, oMtt + a * nmax + b] += wj * s
            # CoM
            mj = mass[i, j - 1]
            for a in range(3):
                s = Gp[j, a]
                for b in range(3):
                    s += Gr[j, a, b] * c0[i, j - 1, b]
                pc[a] = s
                val[i, omp + a] += wj * mj * pc[a]
            for k in range(1, j + 1):
                vk = xs[k - 1]
                dval[i, k - 1, omp + 0] += wj * mj * (vk[0] + vk[4] * pc[2] - vk[5] * pc[1])
                dval[i, k - 1, omp + 1] += wj * mj * (vk[1] + vk[5] * pc[0] - vk[3] * pc[2])
                dval[i, k - 1, omp + 2] += wj * mj * (vk[2] + vk[3] * pc[1] - vk[4] * pc[0])
                # dA = -AA[k+1, j] ad_k AA[1, k]
                _mm(adk[k - 1], AA[1, k], tmp)
                _mm(AA[k + 1, j], tmp, dA)
                for a in range(6):
                    for b in range(6):
                        dA[a, b] = -dA[a, b]
                _mtm(dA, IA, X)
                for a in range(6):
                    for b in range(6):
                        dMbb[a, b] = X[a, b] + X[b, a]
                # dJ columns beta = k+1..j
                dJ[:, :] = 0.0
                if k < j:
                    _block_transpose(AA[1, k], inv1)
                    _mm(inv1, adk[k - 1], tmp)
                    for beta in range(k + 1, j + 1):
                        _block_transpose(AA[k + 1, beta - 1], inv2)
                        for a in range(6):
                            s = 0.0
                            for b in range(6):
                                s += inv2[a, b] * S[i, beta - 1, b]
                            t6[a] = s
                        for a in range(6):
                            s = 0.0
                            for b in range(6):
                                s += tmp[a, b] * t6[b]
                            dJ[a, beta - 1] = s
                _mm(dMbb, J, dMJ)
                _mm(Mbb, dJ, MdJ)
                base = dval[i, k - 1]
                for a in range(6):
                    for b in range(6):
                        base[a * 6 + b] += wj * dMbb[a, b]
                    for b in range(j):
                        base[oMbt + a * nmax + b] += wj * (dMJ[a, b] + MdJ[a, b])
                for a in range(j):
                    for b in range(a, j):
                        s = 0.0
                        for c in range(6):
                            s += J[c, a] * dMJ[c, b] + dJ[c, a] * MJ[c, b] + MJ[c, a] * dJ[c, b]
                        base[oMtt + a * nmax + b] += wj * s
                        if b != a:
                            base[oMtt + b * nmax + a] += wj * s
        # tip
        for a in range(3):
            s = Gp[n, a]
            for b in range(3):
                acc = 0.0
                for c in range(3):
                    acc += Gr[n, a, c] * tip0[i, c, b]
                tipg[i, a, b] = acc
                s += Gr[n, a, b] * tip0[i, b, 3]
            tipg[i, a, 3] = s
            tipg[i, 3, a] = 0.0
        tipg[i, 3, 3] = 1.0
        _adjoint_inv(tipg[i, :3, :3], tipg[i, :3, 3], tmp)
        for a in range(6):
            for b in range(6):
                val[i, otAd + a * 6 + b] = tmp[a, b]
            for b in range(n):
                s = 0.0
                for c in range(6):
                    s += tmp[a, c] * xs[b, c]
                val[i, otAJ + a * nmax + b] = s


# ----------------------------------------------------------------------------
# trig-basis leg blocks


@njit(cache=True)
def fast_leg_blocks(expo, nb, zkind, csr_ptr, csr_q, csr_c, csr_dst, dcsr_ptr, dcsr_q, dcsr_c,
                    dcsr_dst, mirror, nj, theta, offs, val, dval):
    """Evaluate the decomposed blocks of every leg from its coefficient tables.

    ``expo`` (N, gmax, n) per-joint basis indices of each active basis
    element; ``nb`` active counts; ``zkind`` 0 for {1,s,c,s2,sc,c2}, 1 for
    {1,s,c,sc,c2}.  ``csr_*`` hold value-only slots and ``dcsr_*`` the slots
    that also need partials; ``mirror`` lists (dst, src) copies for the
    symmetric blocks.
    """
    N = expo.shape[0]
    gmax = expo.shape[1]
    nmax = expo.shape[2]
    z = np.empty((nmax, 6))
    dz = np.empty((nmax, 6))
    F = np.empty(gmax)
    dF = np.empty((nmax, gmax))
    for i in range(N):
        n = nj[i]
        o = offs[i]
        for j in range(n):
            s = np.sin(theta[o + j])
            c = np.cos(theta[o + j])
            z[j, 0] = 1.0
            z[j, 1] = s
            z[j, 2] = c
            dz[j, 0] = 0.0
            dz[j, 1] = c
            dz[j, 2] = -s
            if zkind[i] == 0:
                z[j, 3] = s * s
                z[j, 4] = s * c
                z[j, 5] = c * c
                dz[j, 3] = 2.0 * s * c
                dz[j, 4] = c * c - s * s
                dz[j, 5] = -2.0 * s * c
            else:
                z[j, 3] = s * c
                z[j, 4] = c * c
                z[j, 5] = 0.0
                dz[j, 3] = c * c - s * s
                dz[j, 4] = -2.0 * s * c
                dz[j, 5] = 0.0
        for q in range(nb[i]):
            f = 1.0
            for j in range(n):
                f *= z[j, expo[i, q, j]]
            F[q] = f
            for k in range(n):
                d = dz[k, expo[i, q, k]]
                if d != 0.0:
                    for j in range(n):
                        if j != k:
                            d *= z[j, expo[i, q, j]]
                dF[k, q] = d
        val[i, :] = 0.0
        dval[i, :, :] = 0.0
        for r in range(csr_ptr.shape[1] - 1):
            a = csr_ptr[i, r]
            b = csr_ptr[i, r + 1]
            if a == b:
                continue
            s = 0.0
            for e in range(a, b):
                s += csr_c[i, e] * F[csr_q[i, e]]
            val[i, csr_dst[i, r]] = s
        for r in range(dcsr_ptr.shape[1] - 1):
            a = dcsr_ptr[i, r]
            b = dcsr_ptr[i, r + 1]
            if a == b:
                continue
            dst = dcsr_dst[i, r]
            s = 0.0
            for e in range(a, b):
                s += dcsr_c[i, e] * F[dcsr_q[i, e]]
            val[i, dst] = s
            for k in range(n):
                s = 0.0
                for e in range(a, b):
                    s += dcsr_c[i, e] * dF[k, dcsr_q[i, e]]
                dval[i, k, dst] = s
        for m in range(mirror.shape[0]):
            d = mirror[m, 0]
            sidx = mirror[m, 1]
            val[i, d] = val[i, sidx]
            for k in range(n):
                dval[i, k, d] = dval[i, k, sidx]


# ----------------------------------------------------------------------------
# assembly


@njit(cache=True)
def assemble(val, dval, nj, offs, Ib, m_body, mc_body, leg_mass, v, gb, tipmask, M, C, Nv, J):
    """Full-dimension M, C, N and stacked tip Jacobian from per-leg blocks."""
    N, nmax = dval.shape[0], dval.shape[1]
    oMbt = 36
    oMtt = oMbt + 6 * nmax
    omp = oMtt + nmax * nmax
    otAd = omp + 3
    otAJ = otAd + 36
    dof = M.shape[0]
    M[:, :] = 0.0
    C[:, :] = 0.0
    Nv[:] = 0.0
    J[:, :] = 0.0
    for a in range(6):
        for b in range(6):
            M[a, b] = Ib[a, b]
    m_tot = m_body
    mp0 = mc_body[0]
    mp1 = mc_body[1]
    mp2 = mc_body[2]
    for i in range(N):
        n = nj[i]
        o = 6 + offs[i]
        m_tot += leg_mass[i]
        mp0 += val[i, omp]
        mp1 += val[i, omp + 1]
        mp2 += val[i, omp + 2]
        for a in range(6):
            for b in range(6):
                M[a, b] += val[i, a * 6 + b]
            for b in range(n):
                x = val[i, oMbt + a * nmax + b]
                M[a, o + b] = x
                M[o + b, a] = x
        for a in range(n):
            for b in range(n):
                M[o + a, o + b] = val[i, oMtt + a * nmax + b]
        # A = sum_k dM/dtheta_k * theta_dot_k, and the lower correction rows
        for k in range(n):
            td = v[o + k]
            d = dval[i, k]
            for a in range(6):
                for b in range(6):
                    C[a, b] += td * d[a * 6 + b]
                for b in range(n):
                    x = td * d[oMbt + a * nmax + b]
                    C[a, o + b] += x
                    C[o + b, a] += x
            for a in range(n):
                for b in range(n):
                    C[o + a, o + b] += td * d[oMtt + a * nmax + b]
            # row (o + k) of the correction is 0.5 * (dM_k v)^T, dM_k nonzero on body + leg i
            r = o + k
            for a in range(6):
                s = 0.0
                for b in range(6):
                    s += d[a * 6 + b] * v[b]
                for b in range(n):
                    s += d[oMbt + a * nmax + b] * v[o + b]
                C[r, a] -= 0.5 * s
            for a in range(n):
                s = 0.0
                for b in range(6):
                    s += d[oMbt + b * nmax + a] * v[b]
                for b in range(n):
                    s += d[oMtt + a * nmax + b] * v[o + b]
                C[r, o + a] -= 0.5 * s
            Nv[r] = -(gb[0] * d[omp] + gb[1] * d[omp + 1] + gb[2] * d[omp + 2])
        if tipmask[i]:
            for a in range(6):
                for b in range(6):
                    J[6 * i + a, b] = val[i, otAd + a * 6 + b]
                for b in range(n):
                    J[6 * i + a, o + b] = val[i, otAJ + a * nmax + b]
    # body-body correction from the momentum
    P = np.zeros(6)
    for a in range(6):
        s = 0.0
        for b in range(dof):
            s += M[a, b] * v[b]
        P[a] = s
    pv0, pv1, pv2 = P[0], P[1], P[2]
    pw0, pw1, pw2 = P[3], P[4], P[5]
    # C_bb -= [[0, P_v^], [P_v^, P_w^]]
    C[0, 4] += pv2
    C[0, 5] -= pv1
    C[1, 3] -= pv2
    C[1, 5] += pv0
    C[2, 3] += pv1
    C[2, 4] -= pv0
    C[3, 1] += pv2
    C[3, 2] -= pv1
    C[4, 0] -= pv2
    C[4, 2] += pv0
    C[5, 0] += pv1
    C[5, 1] -= pv0
    C[3, 4] += pw2
    C[3, 5] -= pw1
    C[4, 3] -= pw2
    C[4, 5] += pw0
    C[5, 3] += pw1
    C[5, 4] -= pw0
    Nv[0] = -m_tot * gb[0]
    Nv[1] = -m_tot * gb[1]
    Nv[2] = -m_tot * gb[2]
    # -(mp x gb)
    Nv[3] = -(mp1 * gb[2] - mp2 * gb[1])
    Nv[4] = -(mp2 * gb[0] - mp0 * gb[2])
    Nv[5] = -(mp0 * gb[1] - mp1 * gb[0])
    return m_tot, np.array([mp0, mp1, mp2])


# ----------------------------------------------------------------------------
# numpy twins


def _skew_batch(w):
    K = np.zeros(w.shape[:-1] + (3, 3))
    K[..., 0, 1] = -w[..., 2]
    K[..., 0, 2] = w[..., 1]
    K[..., 1, 0] = w[..., 2]
    K[..., 1, 2] = -w[..., 0]
    K[..., 2, 0] = -w[..., 1]
    K[..., 2, 1] = w[..., 0]
    return K


def _exp_batch(xi, th):
    w = xi[..., 3:] * th[..., None]
    v = xi[..., :3] * th[..., None]
    a2 = np.sum(w * w, axis=-1)
    ang = np.sqrt(a2)
    small = ang < 1e-8
    safe = np.where(small, 1.0, ang)
    A = np.where(small, 1.0, np.sin(safe) / safe)
    B = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe**2)
    Cc = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / safe**3)
    K = _skew_batch(w)
    K2 = K @ K
    I = np.eye(3)
    R = I + A[..., None, None] * K + B[..., None, None] * K2
    V = I + B[..., None, None] * K + Cc[..., None, None] * K2
    return R, np.einsum("...ij,...j->...i", V, v)


def _adjoint_batch(R, p):
    Ad = np.zeros(R.shape[:-2] + (6, 6))
    Ad[..., :3, :3] = R
    Ad[..., 3:, 3:] = R
    Ad[..., :3, 3:] = _skew_batch(p) @ R
    return Ad


def _adjoint_inv_batch(R, p):
    Rt = np.swapaxes(R, -1, -2)
    return _adjoint_batch(Rt, -np.einsum("...ij,...j->...i", Rt, p))


def _ad_batch(xi):
    ad = np.zeros(xi.shape[:-1] + (6, 6))
    W = _skew_batch(xi[..., 3:])
    ad[..., :3, :3] = W
    ad[..., 3:, 3:] = W
    ad[..., :3, 3:] = _skew_batch(xi[..., :3])
    return ad


def _block_transpose_batch(A):
    out = np.zeros_like(A)
    out[..., :3, :3] = np.swapaxes(A[..., :3, :3], -1, -2)
    out[..., 3:, 3:] = np.swapaxes(A[..., 3:, 3:], -1, -2)
    out[..., :3, 3:] = np.swapaxes(A[..., :3, 3:], -1, -2)
    return out


def naive_leg_blocks_np(S, II, mass, c0, tip0, nj, w, theta, offs, val, dval, tipg):
    N, n = w.shape
    lo = layout(n)
    idx = offs[:, None] + np.arange(n)[None, :]
    pad = np.arange(n)[None, :] < nj[:, None]
    th = np.where(pad, theta[np.minimum(idx, theta.size - 1)], 0.0)
    Rk, pk = _exp_batch(S, th)
    adinv = _adjoint_inv_batch(Rk, pk)
    adk = _ad_batch(S)
    Gr = [np.broadcast_to(np.eye(3), (N, 3, 3))]
    Gp = [np.zeros((N, 3))]
    xs = np.empty((N, n, 6))
    for k in range(n):
        xs[:, k] = np.einsum("lij,lj->li", _adjoint_batch(Gr[k], Gp[k]), S[:, k])
        Gp.append(Gp[k] + np.einsum("lij,lj->li", Gr[k], pk[:, k]))
        Gr.append(Gr[k] @ Rk[:, k])
    eye = np.broadcast_to(np.eye(6), (N, 6, 6))
    AA = {}
    for a in range(1, n + 2):
        AA[a, a - 1] = eye
        for b in range(a, n + 1):
            AA[a, b] = adinv[:, b - 1] @ AA[a, b - 1]
    val[:] = 0.0
    dval[:] = 0.0
    Mbb_acc = np.zeros((N, 6, 6))
    Mbt_acc = np.zeros((N, 6, n))
    Mtt_acc = np.zeros((N, n, n))
    mp = np.zeros((N, 3))
    dMbb_acc = np.zeros((N, n, 6, 6))
    dMbt_acc = np.zeros((N, n, 6, n))
    dMtt_acc = np.zeros((N, n, n, n))
    dmp = np.zeros((N, n, 3))
    for j in range(1, n + 1):
        wj = w[:, j - 1][:, None, None]
        A = AA[1, j]
        IA = II[:, j - 1] @ A
        Mbb = np.swapaxes(A, -1, -2) @ IA
        J = np.zeros((N, 6, n))
        J[:, :, :j] = np.swapaxes(xs[:, :j], -1, -2)
        MJ = Mbb @ J
        Mbb_acc += wj * Mbb
        Mbt_acc += wj * MJ
        Mtt_acc += wj * (np.swapaxes(J, -1, -2) @ MJ)
        pc = Gp[j] + np.einsum("lij,lj->li", Gr[j], c0[:, j - 1])
        wm = (w[:, j - 1] * mass[:, j - 1])[:, None]
        mp += wm * pc
        for k in range(1, j + 1):
            vk = xs[:, k - 1]
            dmp[:, k - 1] += wm * (vk[:, :3] + np.cross(vk[:, 3:], pc))
            dA = -(AA[k + 1, j] @ adk[:, k - 1] @ AA[1, k])
            X = np.swapaxes(dA, -1, -2) @ IA
            dMbb = X + np.swapaxes(X, -1, -2)
            dJ = np.zeros((N, 6, n))
            if k < j:
                lead = _block_transpose_batch(AA[1, k]) @ adk[:, k - 1]
                for beta in range(k + 1, j + 1):
                    inner = np.einsum(
                        "lij,lj->li", _block_transpose_batch(AA[k + 1, beta - 1]), S[:, beta - 1]
                    )
                    dJ[:, :, beta - 1] = np.einsum("lij,lj->li", lead, inner)
            dMJ = dMbb @ J
            MdJ = Mbb @ dJ
            Y = np.swapaxes(dJ, -1, -2) @ MJ
            dMbb_acc[:, k - 1] += wj * dMbb
            dMbt_acc[:, k - 1] += wj * (dMJ + MdJ)
            dMtt_acc[:, k - 1] += wj * (np.swapaxes(J, -1, -2) @ dMJ + Y + np.swapaxes(Y, -1, -2))
    tipR = Gr[n] @ tip0[:, :3, :3]
    tipp = Gp[n] + np.einsum("lij,lj->li", Gr[n], tip0[:, :3, 3])
    tipg[:] = 0.0
    tipg[:, :3, :3] = tipR
    tipg[:, :3, 3] = tipp
    tipg[:, 3, 3] = 1.0
    tAd = _adjoint_inv_batch(tipR, tipp)
    tAJ = tAd @ np.swapaxes(xs, -1, -2)
    val[:, : lo["Mbt"]] = Mbb_acc.reshape(N, 36)
    val[:, lo["Mbt"] : lo["Mtt"]] = Mbt_acc.reshape(N, -1)
    val[:, lo["Mtt"] : lo["mp"]] = Mtt_acc.reshape(N, -1)
    val[:, lo["mp"] : lo["partial"]] = mp
    val[:, lo["tipAd"] : lo["tipAJ"]] = tAd.reshape(N, 36)
    val[:, lo["tipAJ"] : lo["value"]] = tAJ.reshape(N, -1)
    dval[:, :, : lo["Mbt"]] = dMbb_acc.reshape(N, n, 36)
    dval[:, :, lo["Mbt"] : lo["Mtt"]] = dMbt_acc.reshape(N, n, -1)
    dval[:, :, lo["Mtt"] : lo["mp"]] = dMtt_acc.reshape(N, n, -1)
    dval[:, :, lo["mp"] : lo["partial"]] = dmp


def basis_values_np(expo, nb, zkind, nj, theta, offs):
    """Active basis values ``F`` (N, g) and partials ``dF`` (N, n, g)."""
    N, g, n = expo.shape
    idx = offs[:, None] + np.arange(n)[None, :]
    pad = np.arange(n)[None, :] < nj[:, None]
    th = np.where(pad, theta[np.minimum(idx, theta.size - 1)], 0.0)
    s, c = np.sin(th), np.cos(th)
    one, zero = np.ones_like(s), np.zeros_like(s)
    full = np.stack([one, s, c, s * s, s * c, c * c], -1)
    dfull = np.stack([zero, c, -s, 2 * s * c, c * c - s * s, -2 * s * c], -1)
    red = np.stack([one, s, c, s * c, c * c, zero], -1)
    dred = np.stack([zero, c, -s, c * c - s * s, -2 * s * c, zero], -1)
    z = np.where((zkind == 0)[:, None, None], full, red)
    dz = np.where((zkind == 0)[:, None, None], dfull, dred)
    # padded joints contribute the factor z = 1 (index 0)
    zq = np.take_along_axis(z[:, None, :, :], expo[..., None], axis=-1)[..., 0]  # (N, g, n)
    dzq = np.take_along_axis(dz[:, None, :, :], expo[..., None], axis=-1)[..., 0]
    F = np.prod(zq, axis=-1)
    dF = np.empty((N, n, g))
    for k in range(n):
        others = np.prod(np.delete(zq, k, axis=-1), axis=-1) if n > 1 else np.ones((N, g))
        dF[:, k] = dzq[..., k] * others
    live = np.arange(g)[None, :] < nb[:, None]
    return F * live, dF * live[:, None, :]


def fast_leg_blocks_np(expo, nb, zkind, dense, ddense, nj, theta, offs, val, dval):
    """Dense-coefficient twin of :func:`fast_leg_blocks`.

    ``dense`` (N, L, g) holds the value coefficients of every slot, mirror
    entries included; ``ddense`` (N, Lp, g) those needing partials.
    """
    F, dF = basis_values_np(expo, nb, zkind, nj, theta, offs)
    val[:] = np.einsum("ilq,iq->il", dense, F)
    dval[:] = np.einsum("ilq,ikq->ikl", ddense, dF)


def assemble_np(val, dval, nj, offs, Ib, m_body, mc_body, leg_mass, v, gb, tipmask, M, C, Nv, J):
    N, n = dval.shape[0], dval.shape[1]
    lo = layout(n)
    M[:] = 0.0
    C[:] = 0.0
    Nv[:] = 0.0
    J[:] = 0.0
    Mbb = val[:, : lo["Mbt"]].reshape(N, 6, 6)
    Mbt = val[:, lo["Mbt"] : lo["Mtt"]].reshape(N, 6, n)
    Mtt = val[:, lo["Mtt"] : lo["mp"]].reshape(N, n, n)
    dMbb = dval[:, :, : lo["Mbt"]].reshape(N, n, 6, 6)
    dMbt = dval[:, :, lo["Mbt"] : lo["Mtt"]].reshape(N, n, 6, n)
    dMtt = dval[:, :, lo["Mtt"] : lo["mp"]].reshape(N, n, n, n)
    dmp = dval[:, :, lo["mp"] : lo["partial"]]
    M[:6, :6] = Ib + Mbb.sum(axis=0)
    for i in range(N):
        m = int(nj[i])
        o = 6 + int(offs[i])
        sl = slice(o, o + m)
        M[:6, sl] = Mbt[i, :, :m]
        M[sl, :6] = Mbt[i, :, :m].T
        M[sl, sl] = Mtt[i, :m, :m]
        td = v[sl]
        C[:6, :6] += np.einsum("k,kab->ab", td, dMbb[i, :m])
        Cbt = np.einsum("k,kab->ab", td, dMbt[i, :m, :, :m])
        C[:6, sl] += Cbt
        C[sl, :6] += Cbt.T
        C[sl, sl] += np.einsum("k,kab->ab", td, dMtt[i, :m, :m, :m])
        # rows of 0.5 (dM_k v)^T
        C[sl, :6] -= 0.5 * (dMbb[i, :m] @ v[:6] + dMbt[i, :m, :, :m] @ td)
        C[sl, sl] -= 0.5 * (
            np.einsum("kba,b->ka", dMbt[i, :m, :, :m], v[:6]) + dMtt[i, :m, :m, :m] @ td
        )
        Nv[sl] = -(dmp[i, :m] @ gb)
        if tipmask[i]:
            J[6 * i : 6 * i + 6, :6] = val[i, lo["tipAd"] : lo["tipAJ"]].reshape(6, 6)
            J[6 * i : 6 * i + 6, sl] = val[i, lo["tipAJ"] : lo["value"]].reshape(6, n)[:, :m]
    P = M[:6] @ v
    Pv, Pw = P[:3], P[3:]
    from .liegroup import skew

    C[:3, 3:6] -= skew(Pv)
    C[3:6, :3] -= skew(Pv)
    C[3:6, 3:6] -= skew(Pw)
    m_tot = m_body + float(np.sum(leg_mass))
    mp = mc_body + val[:, lo["mp"] : lo["partial"]].sum(axis=0)
    Nv[:3] = -m_tot * gb
    Nv[3:6] = -np.cross(mp, gb)
    return m_tot, mp


# ----------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    leg_blocks_naive = naive_leg_blocks
    assemble_full = assemble
else:
    leg_blocks_naive = naive_leg_blocks_np
    assemble_full = assemble_np
