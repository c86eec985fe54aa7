"""Hot loops of the phi-FEM assembly and of the set-distance computations.

Every kernel exists twice: an explicit loop version compiled with numba and a
vectorized numpy version. ``_accel.use_numba()`` picks one at call time. Both
compute the same quantities with the same quadrature, so results agree to
floating-point reassociation.

Local matrices act on the ``w`` degrees of freedom with ``u = phi * w + g`` and
test functions ``v = phi * s``; terms involving ``g`` are returned on the
right-hand side.
"""
import numpy as np

from . import _accel
from ._accel import njit

# Degree-4 six-point rule on the reference triangle (barycentric, weights sum to 1).
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
TRI_POINTS = np.array(
    [
        [_A1, _A1, 1 - 2 * _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [1 - 2 * _A1, _A1, _A1],
        [_A2, _A2, 1 - 2 * _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [1 - 2 * _A2, _A2, _A2],
    ]
)
TRI_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# Two-point Gauss rule on [0, 1], exact to degree 3.
EDGE_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_WEIGHTS = np.array([0.5, 0.5])


def barycentric_gradients(P):
    """Gradients of the P1 basis of each triangle; ``P`` is ``(n, 3, 2)``.

    Returns ``(grads, signed_double_area)``.
    """
    x, y = P[..., 0], P[..., 1]
    two_area = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    G = np.empty(P.shape)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        G[:, a, 0] = (y[:, b] - y[:, c]) / two_area
        G[:, a, 1] = (x[:, c] - x[:, b]) / two_area
    return G, two_area


# --------------------------------------------------------------------------- cells


def _cell_numpy(P, phi, f, g, cut, h, sigma):
    G, two_area = barycentric_gradients(P)
    area = 0.5 * np.abs(two_area)
    gphi = np.einsum("ca,cak->ck", phi, G)
    gg = np.einsum("ca,cak->ck", g, G)
    phi_q = phi @ TRI_POINTS.T
    f_q = f @ TRI_POINTS.T
    B = phi_q[:, :, None, None] * G[:, None] + TRI_POINTS[None, :, :, None] * gphi[:, None, None, :]
    K = area[:, None, None] * np.einsum("q,cqak,cqbk->cab", TRI_WEIGHTS, B, B)
    r = -area[:, None] * np.einsum("q,ck,cqbk->cb", TRI_WEIGHTS, gg, B)
    r += area[:, None] * np.einsum("q,cq,qb->cb", TRI_WEIGHTS, f_q * phi_q, TRI_POINTS)

    lap = 2.0 * np.einsum("ck,cak->ca", gphi, G)
    pen = np.where(cut, sigma * h * h * area, 0.0)
    K += pen[:, None, None] * lap[:, :, None] * lap[:, None, :]
    r -= (pen * f.mean(axis=1))[:, None] * lap
    return K, r


@njit
def _cell_loops(P, phi, f, g, cut, h, sigma, QP, QW):
    n = P.shape[0]
    K = np.zeros((n, 3, 3))
    r = np.zeros((n, 3))
    G = np.empty((3, 2))
    B = np.empty((3, 2))
    for c in range(n):
        two_area = (P[c, 1, 0] - P[c, 0, 0]) * (P[c, 2, 1] - P[c, 0, 1]) - (
            P[c, 2, 0] - P[c, 0, 0]
        ) * (P[c, 1, 1] - P[c, 0, 1])
        area = 0.5 * abs(two_area)
        for a in range(3):
            b = (a + 1) % 3
            d = (a + 2) % 3
            G[a, 0] = (P[c, b, 1] - P[c, d, 1]) / two_area
            G[a, 1] = (P[c, d, 0] - P[c, b, 0]) / two_area
        gpx = 0.0
        gpy = 0.0
        ggx = 0.0
        ggy = 0.0
        for a in range(3):
            gpx += phi[c, a] * G[a, 0]
            gpy += phi[c, a] * G[a, 1]
            ggx += g[c, a] * G[a, 0]
            ggy += g[c, a] * G[a, 1]
        for q in range(QW.shape[0]):
            phq = 0.0
            fq = 0.0
            for a in range(3):
                phq += QP[q, a] * phi[c, a]
                fq += QP[q, a] * f[c, a]
            for a in range(3):
                B[a, 0] = phq * G[a, 0] + QP[q, a] * gpx
                B[a, 1] = phq * G[a, 1] + QP[q, a] * gpy
            wq = QW[q] * area
            for a in range(3):
                for b in range(3):
                    K[c, a, b] += wq * (B[a, 0] * B[b, 0] + B[a, 1] * B[b, 1])
                r[c, a] += wq * (fq * phq * QP[q, a] - (ggx * B[a, 0] + ggy * B[a, 1]))
        if cut[c]:
            pen = sigma * h * h * area
            fmean = (f[c, 0] + f[c, 1] + f[c, 2]) / 3.0
            for a in range(3):
                la = 2.0 * (gpx * G[a, 0] + gpy * G[a, 1])
                for b in range(3):
                    lb = 2.0 * (gpx * G[b, 0] + gpy * G[b, 1])
                    K[c, a, b] += pen * la * lb
                r[c, a] -= pen * fmean * la
    return K, r


def cell_matrices(P, phi, f, g, cut, h, sigma):
    """Volume terms and cut-cell Laplacian penalty, one 3x3 block per cell."""
    P = np.ascontiguousarray(P, dtype=np.float64)
    phi, f, g = (np.ascontiguousarray(a, dtype=np.float64) for a in (phi, f, g))
    cut = np.ascontiguousarray(cut, dtype=np.bool_)
    if _accel.use_numba():
        return _cell_loops(P, phi, f, g, cut, float(h), float(sigma), TRI_POINTS, TRI_WEIGHTS)
    return _cell_numpy(P, phi, f, g, cut, h, sigma)


# ------------------------------------------------------------- boundary of Omega_h


def _boundary_numpy(P, phi, g, edge):
    n = len(P)
    G, _ = barycentric_gradients(P)
    gphi = np.einsum("ca,cak->ck", phi, G)
    gg = np.einsum("ca,cak->ck", g, G)
    rows = np.arange(n)
    i0, i1, i2 = edge, (edge + 1) % 3, (edge + 2) % 3
    p0, p1, p2 = P[rows, i0], P[rows, i1], P[rows, i2]
    t = p1 - p0
    length = np.hypot(t[:, 0], t[:, 1])
    nrm = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    flip = np.einsum("ck,ck->c", nrm, p2 - p0) > 0
    nrm[flip] *= -1.0

    L = np.zeros((n, len(EDGE_POINTS), 3))
    L[rows[:, None], np.arange(len(EDGE_POINTS))[None, :], i0[:, None]] = 1.0 - EDGE_POINTS
    L[rows[:, None], np.arange(len(EDGE_POINTS))[None, :], i1[:, None]] = EDGE_POINTS
    phi_t = np.einsum("cta,ca->ct", L, phi)
    dn_basis = np.einsum("cak,ck->ca", G, nrm)
    dn_phi = np.einsum("ck,ck->c", gphi, nrm)
    dn_g = np.einsum("ck,ck->c", gg, nrm)
    Dn = phi_t[:, :, None] * dn_basis[:, None, :] + L * dn_phi[:, None, None]
    V = phi_t[:, :, None] * L
    w = EDGE_WEIGHTS[None, :] * length[:, None]
    K = -np.einsum("ct,cta,ctb->cab", w, Dn, V)
    r = np.einsum("ct,c,ctb->cb", w, dn_g, V)
    return K, r


@njit
def _boundary_loops(P, phi, g, edge, EP, EW):
    n = P.shape[0]
    K = np.zeros((n, 3, 3))
    r = np.zeros((n, 3))
    G = np.empty((3, 2))
    L = np.empty(3)
    for c in range(n):
        two_area = (P[c, 1, 0] - P[c, 0, 0]) * (P[c, 2, 1] - P[c, 0, 1]) - (
            P[c, 2, 0] - P[c, 0, 0]
        ) * (P[c, 1, 1] - P[c, 0, 1])
        for a in range(3):
            b = (a + 1) % 3
            d = (a + 2) % 3
            G[a, 0] = (P[c, b, 1] - P[c, d, 1]) / two_area
            G[a, 1] = (P[c, d, 0] - P[c, b, 0]) / two_area
        i0 = edge[c]
        i1 = (i0 + 1) % 3
        i2 = (i0 + 2) % 3
        tx = P[c, i1, 0] - P[c, i0, 0]
        ty = P[c, i1, 1] - P[c, i0, 1]
        length = np.sqrt(tx * tx + ty * ty)
        nx = ty / length
        ny = -tx / length
        if nx * (P[c, i2, 0] - P[c, i0, 0]) + ny * (P[c, i2, 1] - P[c, i0, 1]) > 0:
            nx = -nx
            ny = -ny
        dn_phi = 0.0
        dn_g = 0.0
        for a in range(3):
            dn_phi += phi[c, a] * (G[a, 0] * nx + G[a, 1] * ny)
            dn_g += g[c, a] * (G[a, 0] * nx + G[a, 1] * ny)
        for q in range(EP.shape[0]):
            L[i0] = 1.0 - EP[q]
            L[i1] = EP[q]
            L[i2] = 0.0
            pt = L[0] * phi[c, 0] + L[1] * phi[c, 1] + L[2] * phi[c, 2]
            wq = EW[q] * length
            for b in range(3):
                vb = pt * L[b]
                for a in range(3):
                    dn_a = pt * (G[a, 0] * nx + G[a, 1] * ny) + L[a] * dn_phi
                    K[c, a, b] -= wq * dn_a * vb
                r[c, b] += wq * dn_g * vb
    return K, r


def boundary_matrices(P, phi, g, edge):
    """Boundary term ``-int (du/dn) v`` over facets of the boundary of Omega_h.

    ``P``, ``phi``, ``g`` describe the owning cell; ``edge`` is the local
    index ``k`` of the facet joining local vertices ``k`` and ``k + 1``.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    phi, g = (np.ascontiguousarray(a, dtype=np.float64) for a in (phi, g))
    edge = np.ascontiguousarray(edge, dtype=np.int64)
    if _accel.use_numba():
        return _boundary_loops(P, phi, g, edge, EDGE_POINTS, EDGE_WEIGHTS)
    return _boundary_numpy(P, phi, g, edge)


# ---------------------------------------------------------- stabilized facets


def _facet_numpy(Q, phi, g, scale):
    # Q: (n, 4, 2) = shared s0, s1, opposite of the first cell, opposite of the second
    n = len(Q)
    Gp, _ = barycentric_gradients(Q[:, [0, 1, 2]])
    Gm, _ = barycentric_gradients(Q[:, [0, 1, 3]])
    Jg4 = np.zeros((n, 4, 2))
    Jg4[:, [0, 1, 2]] += Gp
    Jg4[:, [0, 1, 3]] -= Gm
    t = Q[:, 1] - Q[:, 0]
    length = np.hypot(t[:, 0], t[:, 1])
    nrm = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    jump_basis = np.einsum("cak,ck->ca", Jg4, nrm)
    jump_phi = np.einsum("ca,ca->c", phi, jump_basis)
    jump_g = np.einsum("ca,ca->c", g, jump_basis)
    L = np.zeros((len(EDGE_POINTS), 4))
    L[:, 0] = 1.0 - EDGE_POINTS
    L[:, 1] = EDGE_POINTS
    phi_t = phi[:, :2] @ L[:, :2].T
    J = phi_t[:, :, None] * jump_basis[:, None, :] + L[None] * jump_phi[:, None, None]
    w = scale * EDGE_WEIGHTS[None, :] * length[:, None]
    K = np.einsum("ct,cta,ctb->cab", w, J, J)
    r = -np.einsum("ct,c,ctb->cb", w, jump_g, J)
    return K, r


@njit
def _facet_loops(Q, phi, g, scale, EP, EW):
    n = Q.shape[0]
    K = np.zeros((n, 4, 4))
    r = np.zeros((n, 4))
    Jb = np.empty((4, 2))
    J = np.empty(4)
    ids = np.array([0, 1, 2])
    for c in range(n):
        for a in range(4):
            Jb[a, 0] = 0.0
            Jb[a, 1] = 0.0
        for side in range(2):
            o = 2 + side
            sgn = 1.0 if side == 0 else -1.0
            ids[2] = o
            two_area = (Q[c, 1, 0] - Q[c, 0, 0]) * (Q[c, o, 1] - Q[c, 0, 1]) - (
                Q[c, o, 0] - Q[c, 0, 0]
            ) * (Q[c, 1, 1] - Q[c, 0, 1])
            for k in range(3):
                b = ids[(k + 1) % 3]
                d = ids[(k + 2) % 3]
                Jb[ids[k], 0] += sgn * (Q[c, b, 1] - Q[c, d, 1]) / two_area
                Jb[ids[k], 1] += sgn * (Q[c, d, 0] - Q[c, b, 0]) / two_area
        tx = Q[c, 1, 0] - Q[c, 0, 0]
        ty = Q[c, 1, 1] - Q[c, 0, 1]
        length = np.sqrt(tx * tx + ty * ty)
        nx = ty / length
        ny = -tx / length
        jump_phi = 0.0
        jump_g = 0.0
        for a in range(4):
            jn = Jb[a, 0] * nx + Jb[a, 1] * ny
            jump_phi += phi[c, a] * jn
            jump_g += g[c, a] * jn
        for q in range(EP.shape[0]):
            l0 = 1.0 - EP[q]
            l1 = EP[q]
            pt = l0 * phi[c, 0] + l1 * phi[c, 1]
            for a in range(4):
                J[a] = pt * (Jb[a, 0] * nx + Jb[a, 1] * ny)
            J[0] += l0 * jump_phi
            J[1] += l1 * jump_phi
            wq = scale * EW[q] * length
            for a in range(4):
                for b in range(4):
                    K[c, a, b] += wq * J[a] * J[b]
                r[c, a] -= wq * jump_g * J[a]
    return K, r


def facet_matrices(Q, phi, g, scale):
    """Normal-derivative jump penalty ``scale * int [d_n u][d_n v]`` per facet.

    ``Q`` is ``(n, 4, 2)``: the two facet vertices followed by the opposite
    vertex of each adjacent cell; ``phi`` and ``g`` are ``(n, 4)`` in the same
    order. Returns ``4x4`` blocks and length-4 right-hand sides.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    phi, g = (np.ascontiguousarray(a, dtype=np.float64) for a in (phi, g))
    if _accel.use_numba():
        return _facet_loops(Q, phi, g, float(scale), EDGE_POINTS, EDGE_WEIGHTS)
    return _facet_numpy(Q, phi, g, scale)


# ------------------------------------------------------------------- distances


def _directed_hausdorff_numpy(a, b, chunk=1024):
    worst = 0.0
    for start in range(0, len(a), chunk):
        block = a[start : start + chunk]
        dx = block[:, 0, None] - b[None, :, 0]
        dy = block[:, 1, None] - b[None, :, 1]
        worst = max(worst, float((dx * dx + dy * dy).min(axis=1).max()))
    return float(np.sqrt(worst))


@njit
def _directed_hausdorff_loops(a, b):
    worst = 0.0
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            d = dx * dx + dy * dy
            if d < best:
                best = d
                if best <= worst:
                    break
        if best > worst:
            worst = best
    return np.sqrt(worst)


def directed_hausdorff(a, b):
    """``sup_{p in a} inf_{q in b} |p - q|``."""
    if _accel.use_numba():
        return float(_directed_hausdorff_loops(a, b))
    return _directed_hausdorff_numpy(a, b)
