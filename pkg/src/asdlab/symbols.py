"""Pointwise linear algebra of the connection equations at one point.

Everything here is a small dense matrix between concrete spaces, flattened as

    Lambda^1 (x) E   12   index 4*i + a   (so(3) index i, 1-form index a)
    Lambda^2 (x) E   18   index 6*i + c
    TX (+) E          7   (u^0..u^3, x_1..x_3)
    S^2 E             9   row-major 3x3 matrices (Frobenius pairing)

Inner products come from the metric g reconstructed from the curvature frame
with volume mu, so adjoints are K_in^{-1} A^T K_out.

With the basis-orthonormal norm on 2-forms, a unit self-dual form contracts
to vectors with |i_u theta|^2 = |u|^2 / 2. Hence at perfect data S*S = 3/2
and L(alpha ^ i_u F) = alpha(u) Q / 2.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space, sqrtm, subspace_angles

from . import exterior4 as ex

EYE3 = np.eye(3)


class ZeroCovectorError(ValueError):
    pass


@dataclass
class SymbolData:
    F: np.ndarray
    orientation: int = 1
    Q: np.ndarray = field(init=False)
    mu: float = field(init=False)
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        G = self.orientation * ex.gram_matrix(self.F)
        if np.linalg.eigvalsh(G)[0] <= 0:
            raise ex.NotDefiniteError("curvature frame is not definite")
        self.mu = float(np.trace(G) / 3.0)
        self.Q = G / self.mu
        self.g = ex.reconstruct_metric(self.F, self.mu, self.orientation)

    @property
    def K1(self):
        return np.kron(EYE3, np.linalg.inv(self.g))

    @property
    def K2(self):
        return np.kron(EYE3, ex.inverse_minors(self.g, 2))

    @property
    def K_TE(self):
        K = np.zeros((7, 7))
        K[:4, :4] = self.g
        K[4:, 4:] = EYE3
        return K


def random_definite(rng, perfect=False, orientation=1):
    """Random definite frame: GL(4) image of the standard triple, mixed by a positive 3x3 matrix.

    With perfect=True the mixing is orthogonal, so Q = Id.
    """
    while True:
        L = rng.normal(size=(4, 4))
        if abs(np.linalg.det(L)) > 0.2:
            break
    if np.linalg.det(L) < 0:
        L[:, 0] *= -1
    base = ex.pushforward(L, ex.STANDARD_TRIPLE if orientation > 0 else ex.ANTI_TRIPLE, 2)
    if perfect:
        R, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        C = R
    else:
        A = rng.normal(size=(3, 3))
        C = np.real(sqrtm(A @ A.T + 0.5 * EYE3))
    return SymbolData(C @ base, orientation)


def adjoint(A, K_in, K_out):
    return np.linalg.solve(K_in, A.T @ K_out)


# ------------------------------------------------------------ building blocks

def L_matrix(d):
    """L(T)_ij = (T_i ^ F_j + T_j ^ F_i) / (2 mu) as a 9 x 18 matrix."""
    WF = d.orientation * d.F @ ex.WEDGE_MATRIX      # row j: c -> F_j ^ dx_c coefficient
    out = np.zeros((3, 3, 3, 6))
    for i in range(3):
        for j in range(3):
            out[i, j, i] += WF[j]
            out[i, j, j] += WF[i]
    return out.reshape(9, 18) / (2 * d.mu)


def L_star_matrix(d):
    """L*(M) = M F, 18 x 9."""
    out = np.zeros((3, 6, 3, 3))
    for i in range(3):
        for j in range(3):
            out[i, :, i, j] = d.F[j]
    return out.reshape(18, 9)


def trace_row():
    return EYE3.reshape(1, 9)


def wedge_alpha(alpha):
    """a -> alpha ^ a on Lambda^1 (x) E, 18 x 12."""
    W = np.einsum("a,abk->kb", alpha, ex.WEDGE_TABLE[(1, 1)])   # 6 x 4
    return np.kron(EYE3, W)


def w_alpha_E(alpha):
    """x -> alpha (x) x, 12 x 3."""
    return np.kron(EYE3, np.asarray(alpha, dtype=float).reshape(4, 1))


def S_matrix(d):
    """u -> i_u F, 12 x 4."""
    cols = [ex.interior(np.eye(4)[a], d.F, 2).reshape(12) for a in range(4)]
    return np.stack(cols, axis=1)


def _check_alpha(alpha):
    alpha = np.asarray(alpha, dtype=float)
    if not np.any(alpha):
        raise ZeroCovectorError("symbol needs a nonzero covector")
    return alpha


# --------------------------------------------------------- linearizations

def delta_Q_matrix(d):
    """T -> 2 L(T) - (2/3) tr L(T) Q, 9 x 18."""
    L = L_matrix(d)
    return 2 * L - (2.0 / 3.0) * d.Q.reshape(9, 1) @ (trace_row() @ L)


def delta_Q(d, da):
    return (delta_Q_matrix(d) @ np.asarray(da).reshape(18)).reshape(3, 3)


def b_of_q(Q):
    return 4 * Q - (2.0 / 3.0) * np.trace(Q @ Q) * EYE3


def pi_apply(Q, M):
    return M - np.trace(Q @ M) / np.trace(Q @ Q) * Q


def theta_apply(Q, M, power=1.0):
    t = np.trace(M) / 3.0 * EYE3
    lam = 8.0 + (8.0 / 3.0) * np.trace(Q @ Q)
    return 8.0 ** power * (M - t) + lam ** power * t


def delta_B(d, da, form="compact"):
    """Linearization of B = 4Q - (2/3) tr(Q^2) Id in the curvature direction da.

    'compact' uses the projector form, 'expanded' the four-term form.
    """
    L = (L_matrix(d) @ np.asarray(da).reshape(18)).reshape(3, 3)
    Q = d.Q
    if form == "compact":
        return pi_apply(Q, theta_apply(Q, pi_apply(Q, L)))
    if form == "expanded":
        trL, trQL, trQ2 = np.trace(L), np.trace(Q @ L), np.trace(Q @ Q)
        return 8 * L - (8 / 3) * trL * Q - (8 / 3) * trQL * EYE3 + (8 / 9) * trL * trQ2 * EYE3
    raise ValueError(form)


def _op_matrix(f, n_in):
    return np.stack([np.ravel(f(e)) for e in np.eye(n_in)], axis=1)


def P_matrix(d):
    """Theta^{1/2} Pi L, 9 x 18."""
    Q = d.Q
    return _op_matrix(lambda M: theta_apply(Q, pi_apply(Q, M.reshape(3, 3)), 0.5), 9) @ L_matrix(d)


# ---------------------------------------------------------------- symbols

def sigma_alpha(d, alpha):
    alpha = _check_alpha(alpha)
    return delta_Q_matrix(d) @ wedge_alpha(alpha)


def H_alpha(d, alpha):
    alpha = _check_alpha(alpha)
    return P_matrix(d) @ wedge_alpha(alpha)


def injection(d, alpha):
    """S + w_alpha : TX (+) E -> Lambda^1 (x) E, 12 x 7."""
    alpha = _check_alpha(alpha)
    return np.hstack([S_matrix(d), w_alpha_E(alpha)])


def parabolic_symbol(d, alpha, frame_scale=1.0):
    """Sigma(alpha) = -(H*H + S S* w*w + w w*) on Lambda^1 (x) E, with its eigenvalues.

    frame_scale multiplies S (sqrt(2) gives the unit-contraction normalization).
    """
    alpha = _check_alpha(alpha)
    K1, K2 = d.K1, d.K2
    H = H_alpha(d, alpha)
    W = wedge_alpha(alpha)
    S = frame_scale * S_matrix(d)
    wE = w_alpha_E(alpha)
    Sig = -(adjoint(H, K1, np.eye(9)) @ H
            + S @ adjoint(S, d.g, K1) @ adjoint(W, K1, K2) @ W
            + wE @ adjoint(wE, EYE3, K1))
    return Sig, np.linalg.eigvals(Sig)


def uniqueness_symbol(d, alpha, phi, u):
    """-|alpha|^2 (|phi|^2 + <S*S u, u>) for the restricted symbol on E (+) TX."""
    alpha = _check_alpha(alpha)
    a2 = float(alpha @ np.linalg.solve(d.g, alpha))
    S = S_matrix(d)
    StS = adjoint(S, d.g, d.K1) @ S
    u = np.asarray(u, dtype=float)
    return -a2 * (float(np.dot(phi, phi)) + float(u @ d.g @ StS @ u))


# ---------------------------------------------------------------- checks

def _rank(A, rtol=1e-10):
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rtol * max(s[0], 1e-300)))


def exact_sequence_check(d, alpha, tol=1e-8):
    """Ranks of S + w_alpha (7) and sigma (5), and kernel(sigma) vs image(S + w_alpha).

    Subspaces are compared by principal angles in g-orthonormal coordinates.
    """
    alpha = _check_alpha(alpha)
    inj = injection(d, alpha)
    sig = sigma_alpha(d, alpha)
    R = np.real(sqrtm(d.K1))
    Rinv = np.linalg.inv(R)
    image = R @ inj
    kernel = null_space(sig @ Rinv, rcond=1e-10)
    angles = subspace_angles(image, kernel) if kernel.shape[1] == image.shape[1] else np.array([np.pi / 2])
    rep = dict(rank_injection=_rank(inj), rank_sigma=_rank(sig), kernel_dim=int(kernel.shape[1]),
               max_angle=float(np.max(angles)),
               sigma_w=float(np.max(np.abs(sig @ w_alpha_E(alpha)))),
               sigma_S=float(np.max(np.abs(sig @ S_matrix(d)))))
    rep["exact"] = (rep["rank_injection"] == 7 and rep["rank_sigma"] == 5
                    and rep["max_angle"] < tol)
    return rep


def v_alpha_dim(d, alpha):
    return _rank(H_alpha(d, alpha))


def parabolic_bound(d, alpha, b, frame_scale=1.0):
    """(-(Sigma b, b), lower bound) with the bound (1 - sqrt3/2)(|S* c|^2 + |x|^2).

    b = alpha (x) x + c with c orthogonal to alpha in each so(3) slot. The bound is
    for unit covectors, so alpha is rescaled to unit length for g first.
    """
    alpha = _check_alpha(alpha)
    alpha = alpha / np.sqrt(alpha @ np.linalg.solve(d.g, alpha))
    K1 = d.K1
    Sig, _ = parabolic_symbol(d, alpha, frame_scale)
    lhs = -float(b @ K1 @ Sig @ b)
    wE = w_alpha_E(alpha)
    a2 = float(alpha @ np.linalg.solve(d.g, alpha))
    x = adjoint(wE, EYE3, K1) @ b / a2
    c = b - wE @ x
    S = frame_scale * S_matrix(d)
    Sc = adjoint(S, d.g, K1) @ c
    rhs = (1 - np.sqrt(3) / 2) * (float(Sc @ d.g @ Sc) + a2 * float(x @ x))
    return lhs, rhs
