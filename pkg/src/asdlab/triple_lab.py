"""Definite triples of closed 2-forms on the periodic 4-torus.

A state is a closed reference triple omega plus a triple of potentials a;
the current triple is omega_a = omega + d a, so its cohomology class is
fixed and the energy F(a) = sum_x tr(Q^2) mu is bounded below by 3 times the
(fixed) total volume.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import sqrtm

from . import exterior4 as ex
from .lattice import Grid, MetricField, codifferential, d_discrete, deriv, integrate


class EscapedError(RuntimeError):
    """The triple left the definite locus."""

    def __init__(self, msg, sites=None):
        super().__init__(msg)
        self.sites = sites


class FlowEscapeError(EscapedError):
    pass


class StepError(RuntimeError):
    pass


class DegenerateVolumeError(ValueError):
    def __init__(self, msg, sites=None):
        super().__init__(msg)
        self.sites = sites


class IndefinitePeriodError(ValueError):
    pass


@dataclass
class TripleState:
    grid: Grid
    reference: np.ndarray   # sites + (3, 6), discretely closed
    a: np.ndarray           # sites + (3, 4)
    orientation: int = 1

    def __post_init__(self):
        if self.grid.topology != "periodic":
            raise ValueError("triple experiments live on the periodic torus")


def standard_state(grid, normalize=True):
    ref = np.broadcast_to(ex.STANDARD_TRIPLE, grid.shape + (3, 6)).copy()
    s = TripleState(grid, ref, np.zeros(grid.shape + (3, 4)))
    return normalize_periods(s) if normalize else s


def omega(s):
    return s.reference + d_discrete(s.grid, s.a, 1)


def closure_residual(s):
    return float(np.max(np.abs(d_discrete(s.grid, s.reference, 2))))


def _gram_mu(w, orientation=1):
    G = orientation * ex.gram_matrix(w)
    mu = np.trace(G, axis1=-2, axis2=-1) / 3.0
    return G, mu


def mu_volume(s):
    return _gram_mu(omega(s), s.orientation)[1]


def q_field(s, w=None):
    w = omega(s) if w is None else w
    G, mu = _gram_mu(w, s.orientation)
    bad = np.argwhere(np.abs(mu) < 1e-300)
    if len(bad):
        raise DegenerateVolumeError("volume form vanishes", [tuple(b) for b in bad])
    return G / mu[..., None, None]


def _check_definite(s, w, err=EscapedError):
    mask = ex.definite_mask(w, s.orientation)
    if not np.all(mask):
        bad = np.argwhere(~mask)
        raise err(f"triple not definite at {len(bad)} sites", [tuple(b) for b in bad[:10]])


def energy_density(w, orientation=1):
    G, mu = _gram_mu(w, orientation)
    return np.einsum("...ij,...ji->...", G, G) / mu


def energy_F(s, w=None):
    w = omega(s) if w is None else w
    _check_definite(s, w)
    return integrate(s.grid, energy_density(w, s.orientation))


def period_gram(s):
    w = omega(s)
    return np.array([[integrate(s.grid, ex.wedge_pair(w[..., i, :], w[..., j, :]))
                      for j in range(3)] for i in range(3)]) * s.orientation


def normalize_periods(s):
    """Rescale the triple by G^{-1/2} so that its period matrix is the identity."""
    G = period_gram(s)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0:
        raise IndefinitePeriodError(f"period matrix not positive definite: {ev}")
    R = np.real(sqrtm(np.linalg.inv(G)))
    R = 0.5 * (R + R.T)
    mix = lambda f: np.einsum("ij,...jc->...ic", R, f)
    return replace(s, reference=mix(s.reference), a=mix(s.a))


def b_operator(Q, variant="trQ2"):
    """Fibrewise B_a. The default is Q - tr(Q^2)/6; 'trQ' is the rejected Q - tr(Q)/6."""
    eye = np.eye(3)
    if variant == "trQ2":
        c = np.einsum("...ij,...ji->...", Q, Q) / 6.0
    elif variant == "trQ":
        c = np.trace(Q, axis1=-2, axis2=-1) / 6.0
    else:
        raise ValueError(variant)
    return Q - c[..., None, None] * eye


def metric_of(s, w):
    G, mu = _gram_mu(w, s.orientation)
    return MetricField(ex.reconstruct_metric(w, mu, s.orientation, check=False), mu)


def flow_rhs_triples(s, variant="trQ2", w=None):
    """-codifferential(B_a omega_a) for the metric g of omega_a, volume mu."""
    w = omega(s) if w is None else w
    _check_definite(s, w)
    Q = q_field(s, w)
    Bw = np.einsum("...ij,...jc->...ic", b_operator(Q, variant), w)
    return -codifferential(s.grid, Bw, 2, metric_of(s, w))


def rhs_norm2(s, rhs, w=None):
    w = omega(s) if w is None else w
    return float(np.sum(rhs * metric_of(s, w).mass(s.grid, rhs, 1)))


def sup_q_dev(Q):
    return float(np.max(np.abs(np.linalg.eigvalsh(Q - np.eye(3)))))


def band_limited(grid, rng, shells=3, rank=3):
    """Random smooth real 1-form field with Fourier modes 1 <= |k|^2 <= shells."""
    x = grid.coords()
    L = np.array(grid.lengths)
    out = np.zeros(grid.shape + (rank, 4))
    r = int(np.floor(np.sqrt(shells)))
    ks = [k for k in np.ndindex(*(2 * r + 1,) * 4)]
    for k in ks:
        k = np.array(k) - r
        n2 = int(k @ k)
        if not 1 <= n2 <= shells:
            continue
        # keep one of each +-k pair
        nz = k[np.nonzero(k)[0][0]]
        if nz < 0:
            continue
        phase = 2 * np.pi * (x @ (k / L))
        c, sn = rng.normal(size=(2, rank, 4))
        out += np.cos(phase)[..., None, None] * c + np.sin(phase)[..., None, None] * sn
    return out


def perturbed_state(grid, seed, amp=0.05, shells=3):
    """Normalized standard triple plus d of a band-limited potential.

    amp is the sup-norm of d a relative to the sup-norm of the reference.
    """
    s = standard_state(grid)
    rng = np.random.default_rng(seed)
    a = band_limited(grid, rng, shells)
    da = d_discrete(grid, a, 1)
    a *= amp * np.max(np.abs(s.reference)) / np.max(np.abs(da))
    return replace(s, a=a)


def run_flow_triples(s, tol=1e-6, max_steps=20000, c=0.2, armijo=1e-4, grow=2.0,
                     max_halvings=60, variant="trQ2", log=None):
    """Armijo-backtracked descent along the flow direction.

    The first trial step is c*h^2; after an accepted step the next trial step
    is grow times the accepted one. Returns (state, rows, status) with status
    in {'converged', 'budget'}; each row describes the state after the step
    that produced it.
    """
    h = min(s.grid.spacing)
    w = omega(s)
    _check_definite(s, w, FlowEscapeError)
    F = energy_F(s, w)
    vol = integrate(s.grid, _gram_mu(w, s.orientation)[1])
    rows = []
    t = 0.0
    step = c * h * h
    meta = dict(step_size=0.0, ls_halvings=0)
    # B_a is a quarter of the true gradient factor, so dF/dtau = -4 |rhs|^2
    factor = 4.0 if variant == "trQ2" else 1.0
    for n in range(max_steps + 1):
        ev = np.linalg.eigvalsh(q_field(s, w))
        dev = float(np.max(np.abs(ev - 1.0)))
        row = dict(step=n, t=t, F=F, vol=vol, sup_Q_dev=dev,
                   min_eig_Q=float(ev[..., 0].min()), **meta)
        rows.append(row)
        if log is not None:
            log(row)
        if dev < tol:
            return s, rows, "converged"
        if n == max_steps:
            break
        rhs = flow_rhs_triples(s, variant, w)
        slope = factor * rhs_norm2(s, rhs, w)
        trial = step
        for halvings in range(max_halvings + 1):
            cand = replace(s, a=s.a + trial * rhs)
            wc = omega(cand)
            if np.all(ex.definite_mask(wc, s.orientation)):
                Fc = integrate(s.grid, energy_density(wc, s.orientation))
                if Fc <= F - armijo * trial * slope and Fc < F:
                    break
            trial *= 0.5
        else:
            raise StepError(f"line search failed after {max_halvings} halvings at step {n}")
        s, w, F = cand, wc, Fc
        t += trial
        step = trial * grow
        meta = dict(step_size=trial, ls_halvings=halvings)
    return s, rows, "budget"


def gauge_actions(s, f, v):
    """Tangents to the potential from functions f (sites+(3,)) and a vector field v (sites+(4,)).

    Returns (d f_i, i_v omega_a).
    """
    df = d_discrete(s.grid, f[..., :, None], 0)
    return df, ex.interior(v[..., None, :], omega(s), 2)


def lie_derivative(grid, v, w):
    """Coordinate Lie derivative of a field of 2-forms along v (product rule, discrete partials)."""
    m = ex.to_matrix(w)
    dm = np.stack([deriv(grid, m, ax) for ax in range(4)], axis=-3)   # sites+(k,c,a,b)
    dv = np.stack([deriv(grid, v, ax) for ax in range(4)], axis=-2)   # sites+(a,c) = d_a v^c
    out = np.einsum("...c,...kcab->...kab", v, dm)
    out += np.einsum("...kcb,...ac->...kab", m, dv)
    out += np.einsum("...kac,...bc->...kab", m, dv)
    return ex.from_matrix(out)


def critical_check(s, tol=1e-8):
    w = omega(s)
    Q = q_field(s, w)
    Bw = np.einsum("...ij,...jc->...ic", b_operator(Q), w)
    met = metric_of(s, w)
    co = codifferential(s.grid, Bw, 2, met)
    dB = d_discrete(s.grid, Bw, 2)
    qdev = float(np.max(np.abs(Q - Q.mean(axis=(0, 1, 2, 3)))))
    rep = dict(codiff_B=float(np.max(np.abs(co))), d_B=float(np.max(np.abs(dB))),
               q_nonconstancy=qdev, sup_Q_dev=sup_q_dev(Q))
    rep["critical"] = max(rep["codiff_B"], rep["d_B"]) <= tol
    rep["q_constant"] = qdev <= tol
    return rep
