"""Fibre integrals over the 2-sphere bundle of Lambda^+.

A point of the fibre is a unit vector q in R^3 ~ so(3). The h-map sends
rho to the function h(rho)(q) = <rho, q> / 2pi, and the bundle 2-form splits
as (area form, 0, h(F)) so that its top power is 3 * area ^ h(F)^2 with

    h(F)^2 (q) = Q(q, q) mu / (4 pi^2).

moment_pair returns the bare sum  sum_x sum_k w_k f Q(q_k, q_k) mu cell;
multiply by MOMENT_CONSTANT for the integral of f omega^3.
"""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import lebedev_rule
from scipy.special import sph_harm_y

from . import exterior4 as ex

MOMENT_CONSTANT = 3.0 / (4.0 * np.pi ** 2)


class NotMeanZeroError(ValueError):
    pass


@dataclass
class SphereQuadrature:
    nodes: np.ndarray     # (n, 3) unit vectors
    weights: np.ndarray   # (n,), summing to 4 pi
    degree: int

    @classmethod
    def lebedev(cls, degree=9):
        """Lebedev rule; its nodes are closed under q -> -q."""
        if degree < 6:
            raise ValueError("need exactness degree >= 6")
        x, w = lebedev_rule(degree)
        return cls(x.T.copy(), w, degree)

    @classmethod
    def product(cls, degree=9):
        """Gauss-Legendre in z times an even uniform azimuth grid; antipodally symmetric."""
        n = degree // 2 + 1
        z, wz = np.polynomial.legendre.leggauss(n)
        m = 2 * (degree // 2 + 1)
        phi = (np.arange(m) + 0.5) * 2 * np.pi / m
        Z, P = np.meshgrid(z, phi, indexing="ij")
        r = np.sqrt(1 - Z * Z)
        nodes = np.stack([r * np.cos(P), r * np.sin(P), Z], axis=-1).reshape(-1, 3)
        weights = (wz[:, None] * np.full(m, 2 * np.pi / m)).reshape(-1)
        return cls(nodes, weights, degree)

    def integrate(self, values):
        """Integral over the sphere of values[..., k] sampled at the nodes."""
        return values @ self.weights

    def mean(self, values):
        return self.integrate(values) / (4 * np.pi)


def polar(q):
    q = np.asarray(q, dtype=float)
    theta = np.arccos(np.clip(q[..., 2], -1, 1))
    phi = np.arctan2(q[..., 1], q[..., 0])
    return theta, phi


def real_harmonic(n, m, q):
    """Orthonormal real spherical harmonic of degree n, order m at unit vectors q."""
    theta, phi = polar(q)
    Y = sph_harm_y(n, abs(m), theta, phi)
    if m > 0:
        return np.sqrt(2) * (-1) ** m * Y.real
    if m < 0:
        return np.sqrt(2) * (-1) ** m * Y.imag
    return Y.real


def harmonic_basis(q, max_degree=4):
    """Mean-zero test functions: all real harmonics with 1 <= degree <= max_degree."""
    labels, cols = [], []
    for n in range(1, max_degree + 1):
        for m in range(-n, n + 1):
            labels.append((n, m))
            cols.append(real_harmonic(n, m, q))
    return labels, np.stack(cols)


# ------------------------------------------------------------------ h-map

def h_map(rho, q):
    return np.einsum("...i,...i->...", rho, q) / (2 * np.pi)


def omega_z(F, q):
    """Parts of the bundle 2-form at (x, q): vertical area coefficient, mixed part, horizontal 2-form.

    'top' is the coefficient of area ^ dx0123 in omega^3.
    """
    H = np.einsum("...i,...ic->...c", q, F) / (2 * np.pi)
    return dict(vertical=1.0, mixed=np.zeros(4), horizontal=H, top=3.0 * ex.wedge_pair(H, H))


def quadratic_on_nodes(Q, quad):
    """Q(q_k, q_k) for every site and node: shape sites + (n,)."""
    return np.einsum("ka,...ab,kb->...k", quad.nodes, Q, quad.nodes)


# ------------------------------------------------------------- moment map

def moment_pair(Q, mu, f, quad, cell=1.0, tol=1e-12):
    """sum_x sum_k w_k f(x, q_k) Q_x(q_k, q_k) mu_x cell.

    f has shape sites + (n,) or (n,) (the same function on every fibre).
    """
    f = np.asarray(f, dtype=float)
    mean = quad.mean(f)
    if np.max(np.abs(mean)) > tol * max(1.0, np.max(np.abs(f))):
        raise NotMeanZeroError(f"fibre mean {np.max(np.abs(mean)):.3g} is not zero")
    vals = quadratic_on_nodes(Q, quad) * f
    return float(np.sum(quad.integrate(vals) * mu) * cell)


def fibre_variance(Q, quad):
    v = quadratic_on_nodes(Q, quad)
    return quad.mean(v * v) - quad.mean(v) ** 2


def perfect_check(Q, mu, quad, cell=1.0, max_degree=4, tol=1e-10):
    labels, basis = harmonic_basis(quad.nodes, max_degree)
    pairs = {f"{n},{m}": moment_pair(Q, mu, b, quad, cell) for (n, m), b in zip(labels, basis)}
    var = float(np.max(fibre_variance(Q, quad)))
    return dict(max_variance=var, moments=pairs,
                max_moment=float(max(abs(v) for v in pairs.values())),
                perfect=var <= tol, quadrature=dict(kind="lebedev", nodes=len(quad.weights),
                                                   degree=quad.degree))


def isotropy_pair(F, a, b, quad, cell=1.0):
    """Omega(h(a), h(b)) = integral over the bundle of h(a) ^ h(b) ^ omega^2.

    Only 2 area ^ h(a) ^ h(b) ^ h(F) has a 6-form part, so the fibre integrand is
    2 / (2 pi)^3 * sum_ijk q_i q_j q_k a_i ^ b_j ^ F_k, cubic and hence odd in q.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape[-2:] != (3, 4) or b.shape[-2:] != (3, 4):
        raise ValueError("tangents must be so(3)-valued 1-forms of shape (..., 3, 4)")
    q = quad.nodes
    ha = np.einsum("ki,...ic->...kc", q, a)
    hb = np.einsum("ki,...ic->...kc", q, b)
    hF = np.einsum("ki,...ic->...kc", q, F)
    two = ex.wedge(ha, hb, 1, 1)
    top = np.einsum("...kc,cd,...kd->...k", two, ex.WEDGE_MATRIX, hF)
    dens = 2.0 / (2 * np.pi) ** 3 * quad.integrate(top)
    return float(np.sum(dens) * cell)
