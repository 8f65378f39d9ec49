"""Definite SO(3)-connections on a stereographic chart of the round 4-sphere.

A connection is an array of shape sites + (3, 4): so(3) index (identified
with R^3 through the cross product, [e1, e2] = e3) then 1-form components.
Curvature F = dA + [A ^ A]/2 has shape sites + (3, 6).

Only chart grids with a frozen boundary layer are accepted. A definite
connection on the flat torus is impossible since its Euler characteristic
and signature vanish (2 chi + 3 tau = 0), so periodic grids are refused.
"""
import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import exterior4 as ex
from .lattice import Grid, MetricField, d_discrete, d_transpose, integrate
from .triple_lab import EscapedError, FlowEscapeError, StepError

EYE3 = np.eye(3)


class PeriodicRefusedError(ValueError):
    pass


@dataclass
class ConnState:
    grid: Grid
    background: np.ndarray
    a: np.ndarray
    orientation: int = 1

    def __post_init__(self):
        if self.grid.topology != "chart":
            raise PeriodicRefusedError(
                "no definite connection exists on the 4-torus (2*chi + 3*tau = 0); "
                "connection experiments run on a frozen-boundary chart")

    @property
    def A(self):
        return self.background + self.a


# ------------------------------------------------------------ pointwise algebra

_CYCLE = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


def bracket(A, b, p):
    """[A ^ b]_i = eps_ijk A_j ^ b_k for A a so(3) 1-form and b a so(3) p-form."""
    out = np.empty(np.broadcast_shapes(A.shape[:-2], b.shape[:-2]) + (3, ex.DIM[p + 1]))
    for i, j, k in _CYCLE:
        out[..., i, :] = (ex.wedge(A[..., j, :], b[..., k, :], 1, p)
                          - ex.wedge(A[..., k, :], b[..., j, :], 1, p))
    return out


def _wedge_T(A, y, p):
    """Transpose of b -> A ^ b for a scalar 1-form A: (p+1)-forms to p-forms."""
    out = np.zeros(np.broadcast_shapes(A.shape[:-1], y.shape[:-1]) + (ex.DIM[p],))
    for a, I, K, s in ex.WEDGE_TERMS[(1, p)]:
        if s > 0:
            out[..., I] += A[..., a] * y[..., K]
        else:
            out[..., I] -= A[..., a] * y[..., K]
    return out


def bracket_T(A, y, p):
    """Transpose of b -> [A ^ b] (p-forms to (p+1)-forms)."""
    out = np.empty(np.broadcast_shapes(A.shape[:-2], y.shape[:-2]) + (3, ex.DIM[p]))
    # (A ^ b)_i contains +A_j ^ b_k and -A_k ^ b_j for (i, j, k) cyclic
    for i, j, k in _CYCLE:
        out[..., k, :] = (_wedge_T(A[..., j, :], y[..., i, :], p)
                          - _wedge_T(A[..., i, :], y[..., j, :], p))
    return out


def curvature(grid, A):
    return d_discrete(grid, A, 1) + 0.5 * bracket(A, A, 1)


def d_A(grid, A, b, p):
    return d_discrete(grid, b, p) + bracket(A, b, p)


def d_A_T(grid, A, y, p):
    return d_transpose(grid, y, p) + bracket_T(A, y, p)


def q_mu_sign(F, orientation=1):
    G = orientation * ex.gram_matrix(F)
    mu = np.trace(G, axis1=-2, axis2=-1) / 3.0
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = G / mu[..., None, None]
    sign = ex.frame_sign(F, orientation)
    return Q, mu, sign


def g_of(F, mu, orientation=1):
    return MetricField(ex.reconstruct_metric(F, mu, orientation, check=False), mu)


def L_apply(F, mu, T):
    """L(T)_ij = (T_i ^ F_j + T_j ^ F_i) / (2 mu)."""
    X = (T @ ex.WEDGE_MATRIX) @ np.swapaxes(F, -1, -2)
    return (X + np.swapaxes(X, -1, -2)) / (2 * mu[..., None, None])


def L_star_apply(F, M):
    """L*(M) = M(F): (MF)_i = sum_j M_ij F_j."""
    return M @ F


def tr(M):
    return np.trace(M, axis1=-2, axis2=-1)


def trprod(M, N):
    return np.einsum("...ij,...ji->...", M, N)


def b_connection(Q):
    return 4 * Q - (2.0 / 3.0) * trprod(Q, Q)[..., None, None] * EYE3


def Pi_apply(Q, M):
    return M - (trprod(Q, M) / trprod(Q, Q))[..., None, None] * Q


def Theta_apply(Q, M, power=1.0):
    """Theta(M) = 8M + (8/9) tr(Q^2) tr(M) Id, raised to a real power.

    Theta is 8 on trace-free matrices and 8 + (8/3) tr(Q^2) on multiples of Id.
    """
    t = tr(M)[..., None, None] / 3.0
    iso = t * EYE3
    lam = 8.0 + (8.0 / 3.0) * trprod(Q, Q)
    return 8.0 ** power * (M - iso) + (lam ** power)[..., None, None] * iso


def PstarP(F, mu, Q, T):
    """L* Pi Theta Pi L on Lambda^2 (x) E."""
    return L_star_apply(F, Pi_apply(Q, Theta_apply(Q, Pi_apply(Q, L_apply(F, mu, T)))))


def S_apply(F, u):
    """S(u) = i_u F: vectors -> Lambda^1 (x) E."""
    return ex.interior(u[..., None, :], F, 2)


def S_star_apply(F, g, b):
    """Pointwise adjoint of S for the metric g: (S*b)^d = g^{dc} F_i,ca g^{ab} b_i,b."""
    ginv = np.linalg.inv(g)
    m = ex.to_matrix(F)
    return np.einsum("...dc,...ica,...ab,...ib->...d", ginv, m, ginv, b, optimize=True)


# ----------------------------------------------------------------- background

def chart_frame(x):
    """Round metric 4/(1+|x|^2)^2 and the self-dual frame phi^2 * standard triple."""
    r2 = np.sum(x * x, axis=-1)
    phi = 2.0 / (1.0 + r2)
    g = (phi ** 2)[..., None, None] * np.eye(4)
    theta = (phi ** 2)[..., None, None] * ex.STANDARD_TRIPLE
    return g, theta


def background_round_s4(grid):
    """Levi-Civita connection on Lambda^+ of the round sphere, from its frame."""
    g, theta = chart_frame(grid.coords())
    dtheta = d_discrete(grid, theta, 2)
    return ex.connection_from_frame(g, theta, dtheta)


_J_EUCLID = np.stack([np.stack([ex.j_map(np.eye(4), ex.STANDARD_TRIPLE[i], np.eye(4)[a])
                                for a in range(4)], axis=-1) for i in range(3)])


def analytic_round_connection(x):
    """alpha_i = J_i(d log phi) with the Euclidean J maps (conformal invariance of J)."""
    r2 = np.sum(x * x, axis=-1)
    beta = -2 * x / (1 + r2)[..., None]
    return np.einsum("iba,...a->...ib", _J_EUCLID, beta)


def analytic_round_curvature(x):
    r2 = np.sum(x * x, axis=-1)
    s = 1 + r2
    hess = -2 * np.eye(4) / s[..., None, None] + 4 * x[..., :, None] * x[..., None, :] / (s ** 2)[..., None, None]
    # d alpha_i: component (c, b) = d_c alpha_ib - d_b alpha_ic, alpha_ib = J_i[b,a] beta_a
    grad = np.einsum("iba,...ca->...icb", _J_EUCLID, hess)   # d_c alpha_ib
    dmat = grad - np.swapaxes(grad, -1, -2)
    dalpha = ex.from_matrix(dmat)
    A = analytic_round_connection(x)
    return dalpha + 0.5 * bracket(A, A, 1)


def chern_weil_oracle(half_width=4.0):
    """Closed-form integral of (1/3) sum F_i ^ F_i = 32 (1+r^2)^{-4} over the cube.

    Uses (1+r^2)^{-4} = (1/6) int t^3 exp(-t(1+r^2)) dt, which factorizes into erf's.
    """
    from scipy.integrate import quad
    from scipy.special import erf
    f = lambda t: t * np.exp(-t) * erf(half_width * np.sqrt(t)) ** 4
    val, _ = quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    return 32.0 * np.pi ** 2 / 6.0 * val


# ----------------------------------------------------------------- state level

def round_state(grid):
    A0 = background_round_s4(grid)
    return ConnState(grid, A0, np.zeros_like(A0))


def bump(grid, radius=2.0):
    """Smooth bump supported in the cube [-radius, radius]^4."""
    x = grid.coords() / radius
    out = np.ones(grid.shape)
    for ax in range(4):
        y = x[..., ax]
        with np.errstate(divide="ignore", over="ignore"):
            v = np.where(np.abs(y) < 1, np.exp(1 - 1 / np.maximum(1 - y * y, 1e-300)), 0.0)
        out *= v
    return out


def perturbed_state(grid, seed, amp=0.02, radius=2.0):
    """Background plus amp * bump * (random low-frequency so(3) 1-form), sup|a| = amp."""
    s = round_state(grid)
    rng = np.random.default_rng(seed)
    x = grid.coords()
    field = np.zeros(grid.shape + (3, 4))
    for _ in range(4):
        k = rng.normal(size=4) * 0.6
        ph = rng.uniform(0, 2 * np.pi)
        field += np.cos(x @ k + ph)[..., None, None] * rng.normal(size=(3, 4))
    a = bump(grid, radius)[..., None, None] * field
    a *= grid.interior_mask()[..., None, None]
    a *= amp / np.max(np.abs(a))
    return replace(s, a=a)


class Geometry:
    """Curvature, Q, mu, metric of a connection, computed once and shared.

    Only interior sites carry weight: the mass matrix vanishes on the frozen
    layer, so codiff is the exact adjoint of dA on interior-supported fields.
    """

    def __init__(self, s, A=None):
        self.s = s
        self.A = s.A if A is None else A
        self.F = curvature(s.grid, self.A)
        self.inside = s.grid.interior_mask()
        Q, mu, self.sign = q_mu_sign(self.F, s.orientation)
        # frozen sites may be degenerate; park harmless values there
        self.Q = np.where(self.inside[..., None, None], Q, EYE3)
        self.mu = np.where(self.inside, mu, 1.0)
        self.definite = ex.definite_mask(self.F, s.orientation) | ~self.inside
        self._metric = None
        self._cache = {}

    def check(self):
        if not np.all(self.definite):
            bad = np.argwhere(~self.definite)
            raise EscapedError(f"connection not definite at {len(bad)} interior sites",
                               [tuple(b) for b in bad[:10]])

    @property
    def metric(self):
        if self._metric is None:
            self.check()
            F = np.where(self.inside[..., None, None], self.F, ex.STANDARD_TRIPLE)
            self._metric = g_of(F, self.mu, self.s.orientation)
        return self._metric

    @property
    def ginv(self):
        if "ginv" not in self._cache:
            self._cache["ginv"] = np.linalg.inv(self.metric.g)
        return self._cache["ginv"]

    def s_star(self, b):
        """Pointwise adjoint of S for g_A, with the kernel g^{dc} F_i,ca g^{ab} cached."""
        if "sker" not in self._cache:
            gi = self.ginv
            k = np.einsum("...dc,...ica,...ab->...dib", gi, ex.to_matrix(self.F), gi, optimize=True)
            self._cache["sker"] = np.ascontiguousarray(k.reshape(k.shape[:-3] + (4, 12)))
        return (self._cache["sker"] @ b.reshape(b.shape[:-2] + (12, 1)))[..., 0]

    def mass(self, f, p):
        return self.metric.mass(self.s.grid, f, p) * self.inside[..., None, None]

    def mass_inv(self, f, p):
        return self.metric.mass_inv(self.s.grid, f, p) * self.inside[..., None, None]

    def _bracket_matrix(self, p):
        """Per-site matrix of b -> [A ^ b] on p-forms, flattened (3*DIM[p+1], 3*DIM[p])."""
        key = ("br", p)
        if key not in self._cache:
            n = 3 * ex.DIM[p]
            cols = []
            for c in range(n):
                e = np.zeros(n)
                e[c] = 1.0
                cols.append(bracket(self.A, e.reshape(3, ex.DIM[p]), p).reshape(self.A.shape[:-2] + (-1,)))
            self._cache[key] = np.ascontiguousarray(np.stack(cols, axis=-1))
        return self._cache[key]

    def _br(self, b, p):
        M = self._bracket_matrix(p)
        return (M @ b.reshape(b.shape[:-2] + (-1, 1))).reshape(b.shape[:-1] + (ex.DIM[p + 1],))

    def _br_T(self, y, p):
        M = self._bracket_matrix(p)
        out = np.swapaxes(M, -1, -2) @ y.reshape(y.shape[:-2] + (-1, 1))
        return out.reshape(y.shape[:-1] + (ex.DIM[p],))

    def codiff(self, y, p):
        """d_A* : p-forms -> (p-1)-forms."""
        z = self.mass(y, p)
        return self.mass_inv(d_transpose(self.s.grid, z, p - 1) + self._br_T(z, p - 1), p - 1)

    def dA(self, b, p):
        return d_discrete(self.s.grid, b, p) + self._br(b, p)


def energy_density(F, orientation=1):
    G = orientation * ex.gram_matrix(F)
    mu = tr(G) / 3.0
    return trprod(G, G) / mu


def energy_E(s, geo=None):
    """Discrete energy: sum of tr(Q^2) mu over interior sites."""
    geo = Geometry(s) if geo is None else geo
    geo.check()
    return integrate(s.grid, energy_density(geo.F, s.orientation) * geo.inside)


def _mask(s, f):
    return f * s.grid.interior_mask()[..., None, None]


def plain_gradient(s, geo):
    """Euclidean gradient of the discrete energy with respect to A (all sites)."""
    BF = np.einsum("...ij,...jc->...ic", b_connection(geo.Q), geo.F)
    BF = np.where(geo.inside[..., None, None], BF, 0.0)
    y = s.grid.cell * np.einsum("ab,...b->...a", ex.WEDGE_MATRIX, BF) * s.orientation
    return d_A_T(s.grid, geo.A, y, 1)


def vector_laplacian(geo, u):
    """Hodge Laplacian of the 1-form u_flat, raised back to a vector (Dirichlet via masking)."""
    s = geo.s
    g = geo.metric.g
    m = geo.inside[..., None]
    uf = (g @ (u * m)[..., None])[..., None, :, 0]
    cod = geo.mass_inv(d_transpose(s.grid, geo.mass(uf, 1), 0), 0)
    du = d_discrete(s.grid, uf, 1)
    codd = geo.mass_inv(d_transpose(s.grid, geo.mass(du, 2), 1), 1)
    lap = d_discrete(s.grid, cod * m[..., None], 0) + codd
    return (geo.ginv @ lap[..., 0, :, None])[..., 0] * m


def flow_rhs(s, mode="plain", geo=None, balance=None):
    """Right-hand side of the plain, adjusted or stabilized flow, zero on the frozen layer.

    balance, if given, is subtracted (the plain rhs of the discrete background),
    which makes the background an exact discrete fixed point.
    """
    geo = Geometry(s) if geo is None else geo
    r = -geo.mass_inv(plain_gradient(s, geo), 1)
    if balance is not None:
        r = r - balance
    a = _mask(s, s.a)
    if mode == "plain":
        pass
    elif mode == "adjusted":
        r = r - geo.dA(_mask(s, geo.codiff(a, 1)), 0)
        r = r - S_apply(geo.F, geo.s_star(geo.codiff(geo.dA(a, 1), 2)))
    elif mode == "stabilized":
        r = r - geo.dA(_mask(s, geo.codiff(a, 1)), 0)
        r = r - S_apply(geo.F, vector_laplacian(geo, geo.s_star(a)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _mask(s, r)


def g_operator_apply(geo, b):
    """G b = d*(P*P d b) + S Delta S* b + d d* b for interior-supported b."""
    s = geo.s
    b = _mask(s, b)
    db = _mask(s, geo.dA(b, 1))
    out = geo.codiff(PstarP(geo.F, geo.mu, geo.Q, db), 2)
    out = out + S_apply(geo.F, vector_laplacian(geo, geo.s_star(b)))
    out = out + geo.dA(_mask(s, geo.codiff(b, 1)), 0)
    return _mask(s, out)


def l2(geo, b, c):
    return float(np.sum(b * geo.mass(c, 1)))


def bianchi_residual(grid, A, F=None):
    F = curvature(grid, A) if F is None else F
    r = d_A(grid, A, F, 2)
    m = grid.interior_mask()
    return float(np.max(np.abs(r[m])))


def frame_torsion_residual(grid):
    """Interior sup of d theta - (analytic connection) ^ theta with discrete d."""
    x = grid.coords()
    _, theta = chart_frame(x)
    dtheta = d_discrete(grid, theta, 2)
    res = ex.torsion_residual(theta, dtheta, analytic_round_connection(x))
    return float(np.max(np.abs(res[grid.interior_mask()])))


def _residual_fields(grid):
    A = background_round_s4(grid)
    r_b = np.max(np.abs(d_A(grid, A, curvature(grid, A), 2)), axis=(-2, -1))
    x = grid.coords()
    _, theta = chart_frame(x)
    res = ex.torsion_residual(theta, d_discrete(grid, theta, 2), analytic_round_connection(x))
    return r_b, np.max(np.abs(res), axis=(-2, -1))


def chart_residuals(n, half_width, width=1, scheme="centered", tile=None):
    """Interior sup of the Bianchi and frame-torsion residuals of the round background.

    With tile set, the chart is swept in blocks padded by a halo deep enough that
    every core value equals the one-shot computation, so large n fits in memory.
    """
    full = Grid.chart(n, half_width, width, scheme)
    if tile is None:
        b, t = _residual_fields(full)
        m = full.interior_mask()
        return dict(bianchi=float(b[m].max()), torsion=float(t[m].max()))
    halo = 3 * full.stencil_radius
    h = full.spacing[0]
    inside = lambda lo, hi: slice(max(lo, width), min(hi, n - width))
    out = dict(bianchi=0.0, torsion=0.0)
    for start in itertools.product(range(0, n, tile), repeat=4):
        core = [inside(s0, s0 + tile) for s0 in start]
        if any(c.start >= c.stop for c in core):
            continue
        lo = [max(0, c.start - halo) for c in core]
        hi = [min(n, c.stop + halo) for c in core]
        sub = Grid(tuple(b - a for a, b in zip(lo, hi)), full.spacing, "chart", full.stencil_radius,
                   scheme, tuple(full.origin[k] + lo[k] * h for k in range(4)))
        b, t = _residual_fields(sub)
        sl = tuple(slice(c.start - a, c.stop - a) for c, a in zip(core, lo))
        out["bianchi"] = max(out["bianchi"], float(b[sl].max()))
        out["torsion"] = max(out["torsion"], float(t[sl].max()))
    return out


def chern_weil_integral(grid, A):
    """Chart integral of (1/3) sum_i F_i ^ F_i."""
    F = curvature(grid, A)
    return integrate(grid, np.einsum("...ia,ab,...ib->...", F, ex.WEDGE_MATRIX, F) / 3.0)


def sup_q_dev(Q, mask=None):
    dev = np.max(np.abs(np.linalg.eigvalsh(Q - EYE3)), axis=-1)
    return float(np.max(dev if mask is None else dev[mask]))


# ------------------------------------------------------- implicit stabilized step

def _interior_slices(grid):
    w = grid.width
    return (slice(w, -w),) * 4


def shifted_solver(geo, dt, shift=None, stiffness=2.0):
    """Solver for (I + dt G) x = r in the mass inner product, G frozen at geo.

    In Euclidean form the system is M(I + dt G), whose principal part on a
    conformally flat background is cell * (psi + dt * k * (-Laplacian)) with
    constant k; its Dirichlet sine-transform inverse is the preconditioner.
    Returns solve(r, rtol, maxiter) -> (x, iterations, info).
    """
    from scipy.fft import dstn, idstn
    from scipy.sparse.linalg import LinearOperator, cg

    s = geo.s
    grid = s.grid
    inside = geo.inside
    sl = _interior_slices(grid)
    n_int = tuple(n - 2 * grid.width for n in grid.shape)
    psi = np.trace(geo.metric.g, axis1=-2, axis2=-1)[inside] / 4.0
    shift = float(np.max(psi)) if shift is None else shift
    lam = 0.0
    for ax, (n, h) in enumerate(zip(n_int, grid.spacing)):
        k = np.arange(1, n + 1)
        e = (2 * np.sin(np.pi * k / (2 * (n + 1))) / h) ** 2
        lam = lam + e.reshape([-1 if i == ax else 1 for i in range(4)])
    symbol = grid.cell * (shift + dt * stiffness * lam)
    size = int(inside.sum()) * 12

    def embed(x):
        f = np.zeros(grid.shape + (3, 4))
        f[inside] = x.reshape(-1, 3, 4)
        return f

    def matvec(x):
        f = embed(x)
        return geo.mass(f + dt * g_operator_apply(geo, f), 1)[inside].ravel()

    def precond(y):
        z = embed(y)[sl]
        z = dstn(z, type=1, axes=(0, 1, 2, 3)) / symbol[..., None, None]
        out = np.zeros(grid.shape + (3, 4))
        out[sl] = idstn(z, type=1, axes=(0, 1, 2, 3))
        return out[inside].ravel()

    A = LinearOperator((size, size), matvec=matvec)
    P = LinearOperator((size, size), matvec=precond)

    def solve(r, rtol=1e-4, maxiter=200):
        count = [0]
        b = geo.mass(_mask(s, r), 1)[inside].ravel()
        x, info = cg(A, b, rtol=rtol, maxiter=maxiter, M=P,
                     callback=lambda _: count.__setitem__(0, count[0] + 1))
        return embed(x), count[0], info

    return solve


# ---------------------------------------------------------------- flow driver

def diagnostics(s, geo, background_sign=1):
    """One trajectory row (without step bookkeeping)."""
    inside = geo.inside
    ev = np.linalg.eigvalsh(geo.Q[inside])
    return dict(E=energy_E(s, geo), sup_Q_dev=float(np.max(np.abs(ev - 1.0))),
                min_eig_Q=float(ev[:, 0].min()),
                bianchi_res=bianchi_residual(s.grid, geo.A, geo.F),
                sign_flips=int(np.sum((geo.sign != background_sign) & inside)),
                interior_volume=integrate(s.grid, geo.mu * inside))


def _geometry_or_escape(s):
    geo = Geometry(s)
    try:
        geo.check()
    except EscapedError as e:
        raise FlowEscapeError(str(e), *e.args[1:]) from e
    return geo


def run_flow(s, mode="stabilized", max_steps=4, dt=4.0, c=0.2, armijo=1e-4, grow=2.0,
             max_halvings=None, rtol=1e-3, maxiter=8, target=None, log=None):
    """Flow a perturbed chart state.

    plain: Armijo-backtracked explicit descent on E, first trial step c*h^2.
    It follows the exact discrete gradient, so E decreases strictly but the
    discrete background is not a fixed point.
    adjusted / stabilized: linearly implicit Euler, (I + dt G) x = dt * rhs with
    G frozen at the background, solved by preconditioned CG to rtol or maxiter
    iterations (a truncated solve damps the slowly decaying far-field tail). A step
    that leaves the definite locus is retried at half dt; an accepted step lets
    dt grow again up to its starting value.

    In the implicit modes the background is balanced (its discrete plain rhs is
    subtracted) so that it is a fixed point. Returns (state, rows, status), status 'target' once
    sup|Q - Id| <= target, 'stationary' if the rhs vanishes, else 'budget'.
    """
    grid = s.grid
    base = replace(s, a=np.zeros_like(s.a))
    geo0 = Geometry(base)
    bg_sign = 1 if np.median(geo0.sign[geo0.inside]) >= 0 else -1
    balance = flow_rhs(base, "plain", geo0)
    geo = _geometry_or_escape(s)
    row = dict(step=0, t=0.0, **diagnostics(s, geo, bg_sign), step_size=0.0, ls_halvings=0, cg_iters=0)
    rows = [row]
    if log is not None:
        log(row)
    t = 0.0
    h = min(grid.spacing)
    trial0 = c * h * h if mode == "plain" else dt
    if max_halvings is None:
        max_halvings = 60 if mode == "plain" else 4
    step = trial0
    solvers = {}
    for n in range(1, max_steps + 1):
        if target is not None and rows[-1]["sup_Q_dev"] <= target:
            return s, rows, "target"
        rhs = flow_rhs(s, mode, geo, None if mode == "plain" else balance)
        if not np.any(rhs):
            return s, rows, "stationary"
        if mode == "plain":
            slope = l2(geo, rhs, rhs)
            E = rows[-1]["E"]
        trial = step
        iters = 0
        for halvings in range(max_halvings + 1):
            if mode == "plain":
                x = trial * rhs
            else:
                if trial not in solvers:
                    solvers = {trial: shifted_solver(geo0, trial)}
                x, it, _ = solvers[trial](trial * rhs, rtol, maxiter)
                iters += it
            cand = replace(s, a=s.a + x)
            gc = Geometry(cand)
            if np.all(gc.definite):
                d = diagnostics(cand, gc, bg_sign)
                if mode == "plain":
                    ok = d["E"] <= E - armijo * trial * slope and d["E"] < E
                else:
                    ok = np.isfinite(d["sup_Q_dev"])
                if ok:
                    break
            trial *= 0.5
        else:
            raise StepError(f"no acceptable step after {max_halvings} halvings at step {n}")
        s, geo = cand, gc
        t += trial
        step = trial * grow if mode == "plain" else min(trial * grow, trial0)
        row = dict(step=n, t=t, **d, step_size=trial, ls_halvings=halvings, cg_iters=iters)
        rows.append(row)
        if log is not None:
            log(row)
    if target is not None and rows[-1]["sup_Q_dev"] <= target:
        return s, rows, "target"
    return s, rows, "budget"


def min_eig_estimate(geo, k=1, tol=1e-3, maxiter=200, seed=0):
    """Smallest eigenvalues of G on interior fields, in the mass inner product.

    Uses LOBPCG on the generalized problem K v = lam M v with K = M G.
    """
    from scipy.sparse.linalg import LinearOperator, lobpcg

    inside = geo.inside
    size = int(inside.sum()) * 12

    def embed(x):
        f = np.zeros(geo.s.grid.shape + (3, 4))
        f[inside] = x.reshape(-1, 3, 4)
        return f

    def kmat(X):
        X = X.reshape(size, -1)
        return np.stack([geo.mass(g_operator_apply(geo, embed(x)), 1)[inside].ravel() for x in X.T], axis=1)

    def mmat(X):
        X = X.reshape(size, -1)
        return np.stack([geo.mass(embed(x), 1)[inside].ravel() for x in X.T], axis=1)

    K = LinearOperator((size, size), matvec=kmat, matmat=kmat)
    M = LinearOperator((size, size), matvec=mmat, matmat=mmat)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(size, k + 2))
    vals, _ = lobpcg(K, X, B=M, tol=tol, maxiter=maxiter, largest=False)
    return np.sort(vals)[:k]
