"""Pointwise exterior algebra of 4-space.

Forms are plain numpy arrays whose last axis holds coefficients in the
lexicographic coordinate bases

    1-forms  dx0, dx1, dx2, dx3
    2-forms  dx01, dx02, dx03, dx12, dx13, dx23
    3-forms  dx012, dx013, dx023, dx123
    4-forms  dx0123

Every function broadcasts over leading axes, so the same code serves a
single point and a whole lattice of sites. A "frame" is an array of shape
(..., 3, 6) holding three 2-forms.

Norm convention: the coordinate basis of each degree is orthonormal for the
Euclidean metric, so (dx01 + dx23) has squared norm 2 and wedges with itself
to 2 dx0123. Whenever a "unit" self-dual form is needed for the quaternionic
maps J, we rescale to theta ^ theta = 2 vol, which is what makes J square to -1.
"""
from itertools import combinations, permutations

import numpy as np

BASIS = {p: list(combinations(range(4), p)) for p in range(5)}
PAIRS = BASIS[2]
DIM = {p: len(BASIS[p]) for p in range(5)}
_INDEX = {p: {I: n for n, I in enumerate(BASIS[p])} for p in range(5)}


class NotDefiniteError(ValueError):
    pass


class DegenerateVolumeError(ValueError):
    pass


class NotSelfDualError(ValueError):
    pass


def _perm_sign(seq):
    seq = list(seq)
    s = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                s = -s
    return s


def levi_civita(n):
    eps = np.zeros((n,) * n)
    for p in permutations(range(n)):
        eps[p] = _perm_sign(p)
    return eps


EPS3 = levi_civita(3)
EPS4 = levi_civita(4)


def _wedge_table(p, q):
    """Structure constants T[I, J, K] with dx^I ^ dx^J = sum_K T[I,J,K] dx^K."""
    T = np.zeros((DIM[p], DIM[q], DIM[p + q]))
    for a, I in enumerate(BASIS[p]):
        for b, J in enumerate(BASIS[q]):
            idx = I + J
            if len(set(idx)) < len(idx):
                continue
            T[a, b, _INDEX[p + q][tuple(sorted(idx))]] = _perm_sign(idx)
    return T


WEDGE_TABLE = {(p, q): _wedge_table(p, q) for p in range(5) for q in range(5) if p + q <= 4}
# symmetric pairing on 2-forms, a ^ b = (a @ W @ b) dx0123; signature (3,3)
WEDGE_MATRIX = WEDGE_TABLE[(2, 2)][:, :, 0]


WEDGE_TERMS = {pq: [(i, j, k, T[i, j, k]) for i, j, k in zip(*np.nonzero(T))]
               for pq, T in WEDGE_TABLE.items()}


def wedge(a, b, p, q):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    out = np.zeros(shape + (DIM[p + q],))
    for i, j, k, s in WEDGE_TERMS[(p, q)]:
        if s > 0:
            out[..., k] += a[..., i] * b[..., j]
        else:
            out[..., k] -= a[..., i] * b[..., j]
    return out


def wedge_pair(a, b):
    """Coefficient of dx0123 in a ^ b for 2-forms."""
    return np.einsum("...i,ij,...j->...", a, WEDGE_MATRIX, b)


def gram_matrix(f):
    """G_ij = f_i ^ f_j for a frame of shape (..., 3, 6)."""
    return np.einsum("...ia,ab,...jb->...ij", f, WEDGE_MATRIX, f)


def to_matrix(w):
    """2-form coefficients -> antisymmetric 4x4 component matrix."""
    w = np.asarray(w)
    m = np.zeros(w.shape[:-1] + (4, 4), dtype=w.dtype)
    for n, (i, j) in enumerate(PAIRS):
        m[..., i, j] = w[..., n]
        m[..., j, i] = -w[..., n]
    return m


def from_matrix(m):
    return np.stack([m[..., i, j] for i, j in PAIRS], axis=-1)


STANDARD_TRIPLE = np.array([
    [1.0, 0, 0, 0, 0, 1.0],
    [0, 1.0, 0, 0, -1.0, 0],
    [0, 0, 1.0, 1.0, 0, 0],
])
ANTI_TRIPLE = np.array([
    [1.0, 0, 0, 0, 0, -1.0],
    [0, 1.0, 0, 0, 1.0, 0],
    [0, 0, 1.0, -1.0, 0, 0],
])


# ---------------------------------------------------------------- metrics

def inverse_minors(g, p):
    """Gram matrix of the induced inner product on p-forms (uses g^{-1})."""
    g = np.asarray(g, dtype=float)
    ginv = np.linalg.inv(g)
    if p == 0:
        return np.ones(g.shape[:-2] + (1, 1))
    if p == 1:
        return ginv
    if p == 2:
        out = np.empty(g.shape[:-2] + (6, 6))
        for m, (a, b) in enumerate(PAIRS):
            for n, (c, d) in enumerate(PAIRS[m:], start=m):
                v = ginv[..., a, c] * ginv[..., b, d] - ginv[..., a, d] * ginv[..., b, c]
                out[..., m, n] = v
                out[..., n, m] = v
        return out
    rows = np.array(BASIS[p])
    sub = ginv[..., rows[:, None, :, None], rows[None, :, None, :]]
    return np.linalg.det(sub)


def form_inner(g, a, b, p):
    return np.einsum("...i,...ij,...j->...", a, inverse_minors(g, p), b)


def star_matrix(g, p, orientation=1):
    """Matrix of the Hodge star Lambda^p -> Lambda^{4-p}.

    Defined by a ^ *b = <a, b> vol_g, with vol_g = orientation * sqrt(det g) dx0123.
    """
    g = np.asarray(g, dtype=float)
    W = WEDGE_TABLE[(p, 4 - p)][:, :, 0]
    vol = orientation * np.sqrt(np.linalg.det(g))
    # W is a signed permutation, so its inverse is its transpose
    return vol[..., None, None] * np.einsum("ji,...jk->...ik", W, inverse_minors(g, p))


def hodge_star(g, w, p, orientation=1):
    return np.einsum("...ij,...j->...i", star_matrix(g, p, orientation), w)


def sd_split(g, w, orientation=1):
    s = hodge_star(g, w, 2, orientation)
    return 0.5 * (w + s), 0.5 * (w - s)


def interior(u, w, p):
    """Contraction i_u of a p-form."""
    out = np.zeros(np.broadcast_shapes(np.shape(u)[:-1], np.shape(w)[:-1]) + (DIM[p - 1],))
    for n, I in enumerate(BASIS[p]):
        for k, a in enumerate(I):
            rest = I[:k] + I[k + 1:]
            out[..., _INDEX[p - 1][rest]] += (-1) ** k * u[..., a] * w[..., n]
    return out


def j_map(g, theta, alpha, orientation=1, check=True):
    """J(alpha) = *(alpha ^ theta_hat), theta_hat the rescaling of theta with theta_hat^2 = 2 vol."""
    theta = np.asarray(theta, dtype=float)
    if check:
        _, minus = sd_split(g, theta, orientation)
        if np.max(np.abs(minus)) > 1e-10 * max(1.0, np.max(np.abs(theta))):
            raise NotSelfDualError("theta is not self-dual for this metric")
    vol = orientation * np.sqrt(np.linalg.det(g))
    scale = np.sqrt(2.0 * vol / wedge_pair(theta, theta))
    return hodge_star(g, wedge(alpha, theta * scale[..., None], 1, 2), 3, orientation)


# -------------------------------------------------- triples and their metrics

def urbantke(f, orientation=1):
    """Conformal metric density from a frame: eps^{ijk} f_i,ac f_j,bd f_k,ef eps^{cdef}."""
    m = to_matrix(f)
    dual = to_matrix(np.einsum("ab,...b->...a", WEDGE_MATRIX, f)) * orientation
    U = 0.0
    for i, j, k in permutations(range(3)):
        s = EPS3[i, j, k]
        U = U + s * m[..., i, :, :] @ dual[..., k, :, :] @ np.swapaxes(m[..., j, :, :], -1, -2)
    return 2.0 * U


def bracket_orientation(f, g):
    """Sign of the frame in the Lie algebra structure of the span.

    A 2-form w acts on vectors by w(u, v) = g(u, M v), i.e. M = g^{-1} w. For a
    frame of a 3-dimensional subalgebra, <[M1, M2], M3> with the positive
    invariant form -tr(XY) is positive exactly on oriented frames
    (e1, e2, [e1, e2]).
    """
    ginv = np.linalg.inv(g)
    M = ginv[..., None, :, :] @ to_matrix(f)
    c = M[..., 0, :, :] @ M[..., 1, :, :] - M[..., 1, :, :] @ M[..., 0, :, :]
    return np.sign(-np.einsum("...ab,...ba->...", c, M[..., 2, :, :]))


def definite_mask(f, orientation=1):
    """Sites where orientation * gram is positive definite."""
    G = orientation * gram_matrix(f)
    return np.linalg.eigvalsh(G)[..., 0] > 0


def conformal_metric(f, orientation=1):
    """Unit-determinant metric making the frame self-dual (no validity checks)."""
    U = urbantke(f, orientation)
    s = np.sign(U[..., 0, 0])[..., None, None]
    U = s * U
    det = np.linalg.det(U)
    return U / np.sqrt(np.sqrt(np.abs(det)))[..., None, None], det


def reconstruct_metric(f, vol, orientation=1, check=True):
    """Metric whose self-dual forms are spanned by f and whose volume is vol.

    vol is the positive density of the volume form, in units of dx0123 for
    the chosen orientation.
    """
    f = np.asarray(f, dtype=float)
    vol = np.asarray(vol, dtype=float)
    if check:
        if np.any(vol <= 0):
            raise DegenerateVolumeError("volume form must be positive")
        if not np.all(definite_mask(f, orientation)):
            raise NotDefiniteError("frame is not definite")
    g1, det = conformal_metric(f, orientation)
    if check:
        scale = np.max(np.abs(f)) ** 6 if f.size else 1.0
        if np.any(np.abs(det) ** 0.25 < 1e-14 * scale):
            raise NotDefiniteError("degenerate conformal factor")
    return g1 * np.sqrt(vol)[..., None, None]


def classify(f, orientation=1):
    """'PositiveDefinite', 'NegativeDefinite' or 'NotDefinite' for a single frame."""
    f = np.asarray(f, dtype=float)
    if not definite_mask(f, orientation):
        return "NotDefinite"
    g, _ = conformal_metric(f, orientation)
    s = bracket_orientation(f, g)
    return "PositiveDefinite" if s > 0 else "NegativeDefinite"


def frame_sign(f, orientation=1):
    """Vectorized sign field: +1 / -1 on definite sites, 0 elsewhere."""
    mask = definite_mask(f, orientation)
    g, _ = conformal_metric(np.where(mask[..., None, None], f, STANDARD_TRIPLE), orientation)
    return np.where(mask, bracket_orientation(f, g), 0.0)


def volume_density(g, orientation=1):
    return orientation * np.sqrt(np.linalg.det(g))


def pushforward(L, w, p):
    """Push a p-form forward by the linear map x -> L x, i.e. (L^{-1})^* w."""
    Linv = np.linalg.inv(L)
    rows = np.array(BASIS[p])
    # pullback matrix by Linv: dx^I -> sum_J det(Linv[I, J]) dx^J
    sub = Linv[rows[:, None, :, None], rows[None, :, None, :]]
    P = np.linalg.det(sub)
    return np.einsum("IJ,...I->...J", P, w)


# ----------------------------------------------------- Levi-Civita on Lambda^+

def connection_from_frame(g, theta, dtheta, orientation=1):
    """so(3) components alpha_i of the Levi-Civita connection on Lambda^+.

    theta is an orthonormal self-dual frame normalized to theta_i ^ theta_j =
    2 delta_ij vol_g, dtheta its exterior derivative (3-forms). The connection
    acts by nabla theta_j = sum_i alpha_i (e_i x e_j) in the frame, and
    alpha_1 = (J2 *dtheta_3 - J3 *dtheta_2 - *dtheta_1) / 2 cyclically.
    """
    g = np.asarray(g, dtype=float)
    sd = hodge_star(g[..., None, :, :], dtheta, 3, orientation)
    st3 = star_matrix(g, 3, orientation)
    vol = volume_density(g, orientation)
    unit = theta * np.sqrt(2.0 * vol[..., None] / wedge_pair(theta, theta))[..., None]
    J = [lambda a, k=k: np.einsum("...ij,...j->...i", st3, wedge(a, unit[..., k, :], 1, 2))
         for k in range(3)]
    alpha = []
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        alpha.append(0.5 * (J[j](sd[..., k, :]) - J[k](sd[..., j, :]) - sd[..., i, :]))
    return np.stack(alpha, axis=-2)


def torsion_residual(theta, dtheta, alpha):
    """dtheta_i - sum_j omega_ij ^ theta_j for the skew matrix omega built from alpha."""
    out = dtheta.copy()
    for i in range(3):
        for j in range(3):
            for k in range(3):
                s = EPS3[k, i, j]
                if s:
                    out[..., i, :] -= s * wedge(alpha[..., k, :], theta[..., j, :], 1, 2)
    return out
