from math import gamma

import numpy as np
import pytest
from hypothesis import given, strategies as st

from asdlab import exterior4 as ex
from asdlab import moment_map as mm

seeds = st.integers(0, 2 ** 32 - 1)


def monomial_integral(a, b, c):
    """Exact integral of x^a y^b z^c over the unit sphere."""
    if a % 2 or b % 2 or c % 2:
        return 0.0
    be = [(k + 1) / 2 for k in (a, b, c)]
    return 2 * gamma(be[0]) * gamma(be[1]) * gamma(be[2]) / gamma(sum(be))


@pytest.fixture(scope="module")
def quad():
    return mm.SphereQuadrature.lebedev(9)


@pytest.mark.parametrize("make", [mm.SphereQuadrature.lebedev, mm.SphereQuadrature.product])
def test_quadrature_exactness(make):
    q = make(9)
    assert q.weights.sum() == pytest.approx(4 * np.pi, rel=1e-13)
    assert np.allclose(np.linalg.norm(q.nodes, axis=1), 1)
    x, y, z = q.nodes.T
    for a in range(10):
        for b in range(10 - a):
            for c in range(10 - a - b):
                got = q.integrate(x ** a * y ** b * z ** c)
                assert got == pytest.approx(monomial_integral(a, b, c), abs=1e-12)


def test_quadrature_antipodal():
    for q in (mm.SphereQuadrature.lebedev(9), mm.SphereQuadrature.product(9)):
        flipped = {tuple(np.round(-n, 12)) for n in q.nodes}
        assert flipped == {tuple(np.round(n, 12)) for n in q.nodes}


def test_quadrature_low_degree_refused():
    with pytest.raises(ValueError):
        mm.SphereQuadrature.lebedev(5)


def test_real_harmonics_orthonormal():
    q = mm.SphereQuadrature.lebedev(11)
    _, B = mm.harmonic_basis(q.nodes, 4)
    gram = (B * q.weights) @ B.T
    assert np.allclose(gram, np.eye(len(B)), atol=1e-12)


# ------------------------------------------------------------ h-map

def test_h_map_examples():
    e3 = np.array([0, 0, 1.0])
    assert mm.h_map(e3, e3) == pytest.approx(1 / (2 * np.pi))
    assert mm.h_map(e3, np.array([1.0, 0, 0])) == 0


@given(seeds)
def test_h_map_linear_and_odd(seed):
    rng = np.random.default_rng(seed)
    r1, r2, q = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    q /= np.linalg.norm(q)
    assert mm.h_map(2 * r1 - r2, q) == pytest.approx(2 * mm.h_map(r1, q) - mm.h_map(r2, q), abs=1e-12)
    assert mm.h_map(r1, -q) == -mm.h_map(r1, q)


def test_h_map_mean_zero(quad):
    rho = np.array([0.3, -1.2, 0.7])
    assert abs(quad.mean(mm.h_map(rho, quad.nodes))) < 1e-14


def test_h_map_hamiltonian(rng):
    # the area-form symplectic gradient of 2 pi h(rho) is the rotation field rho x q
    for _ in range(10):
        rho, q = rng.normal(size=3), rng.normal(size=3)
        q /= np.linalg.norm(q)
        e = 1e-6
        grad = np.array([(mm.h_map(rho, q + e * v) - mm.h_map(rho, q - e * v)) / (2 * e) for v in np.eye(3)])
        grad -= (grad @ q) * q
        assert np.allclose(2 * np.pi * np.cross(q, grad), np.cross(q, rho), atol=1e-8)


def test_omega_z(rng):
    z = mm.omega_z(np.zeros((3, 6)), np.array([0, 0, 1.0]))
    assert z["top"] == 0
    F = ex.STANDARD_TRIPLE
    # definite frame: top never vanishes on the fibre (its sign follows the Gram matrix)
    tops = np.array([mm.omega_z(F, q)["top"] for q in mm.SphereQuadrature.lebedev(9).nodes])
    assert np.all(tops * np.sign(np.linalg.det(ex.gram_matrix(F))) > 0)
    # a frame with an indefinite Gram has a zero of top on the sphere
    bad = np.array([[1.0, 0, 0, 0, 0, 1], [0, 1, 0, 0, -1, 0], [0, 0, 0, 0, 0, 0.0]])
    bad[2] = np.array([1.0, 0, 0, 0, 0, -1])
    vals = [mm.omega_z(bad, q)["top"] for q in mm.SphereQuadrature.lebedev(9).nodes]
    assert min(vals) < 0 < max(vals)


def test_omega_z_matches_gram(rng):
    F = rng.normal(size=(3, 6))
    q = rng.normal(size=3)
    q /= np.linalg.norm(q)
    assert mm.omega_z(F, q)["top"] == pytest.approx(3 * q @ ex.gram_matrix(F) @ q / (4 * np.pi ** 2))


# ------------------------------------------------------------ moment map

def test_perfect_state(quad):
    rep = mm.perfect_check(np.broadcast_to(np.eye(3), (5, 3, 3)), np.full(5, 2.0), quad)
    assert rep["perfect"] and rep["max_moment"] < 1e-8 and rep["max_variance"] < 1e-10


def test_diag_state_degree_two(quad):
    f = mm.real_harmonic(2, 2, quad.nodes)          # proportional to x^2 - y^2
    norm = np.sqrt(15 / (16 * np.pi))
    ss = np.linspace(0.01, 0.1, 10)
    pairs = np.array([mm.moment_pair(np.diag([1 + s, 1 - s, 1]), 1.0, f, quad) for s in ss])
    # oracle: s * norm * integral of (x^2 - y^2)^2 from exact monomial integrals
    oracle = norm * (monomial_integral(4, 0, 0) + monomial_integral(0, 4, 0) - 2 * monomial_integral(2, 2, 0))
    assert np.allclose(pairs, ss * oracle, rtol=1e-12)
    fit = np.polyfit(ss, pairs, 1)
    resid = pairs - np.polyval(fit, ss)
    r2 = 1 - resid @ resid / np.sum((pairs - pairs.mean()) ** 2)
    assert r2 > 0.999
    for m in range(-1, 2):
        assert abs(mm.moment_pair(np.diag([1 + 0.1, 1 - 0.1, 1]), 1.0, mm.real_harmonic(1, m, quad.nodes), quad)) < 1e-14


def test_not_mean_zero(quad):
    with pytest.raises(mm.NotMeanZeroError):
        mm.moment_pair(np.eye(3), 1.0, np.ones(len(quad.weights)), quad)


def test_nonperfect_has_variance(quad, rng):
    Q = np.eye(3) + 0.05 * np.diag(rng.normal(size=3))
    Q *= 3 / np.trace(Q)
    assert mm.fibre_variance(Q, quad) > 0
    assert not mm.perfect_check(Q[None], np.ones(1), quad)["perfect"]


@given(seeds)
def test_moment_linear_in_test_function(seed):
    quad = mm.SphereQuadrature.lebedev(9)
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(3, 3))
    Q = Q @ Q.T + np.eye(3)
    _, B = mm.harmonic_basis(quad.nodes, 4)
    c = rng.normal(size=len(B))
    got = mm.moment_pair(Q, 1.0, c @ B, quad)
    want = sum(ci * mm.moment_pair(Q, 1.0, b, quad) for ci, b in zip(c, B))
    assert got == pytest.approx(want, abs=1e-10 * np.abs(Q).max() * np.abs(c).sum())


def test_isotropy(rng):
    for make in (mm.SphereQuadrature.lebedev, mm.SphereQuadrature.product):
        q = make(9)
        for _ in range(10):
            F, a, b = rng.normal(size=(4, 3, 6)), rng.normal(size=(4, 3, 4)), rng.normal(size=(4, 3, 4))
            assert abs(mm.isotropy_pair(F, a, b, q)) <= 1e-10
            assert mm.isotropy_pair(F, a, a, q) == 0


def test_isotropy_shape_checked(quad):
    with pytest.raises(ValueError):
        mm.isotropy_pair(np.zeros((3, 6)), np.zeros((3, 6)), np.zeros((3, 6)), quad)
