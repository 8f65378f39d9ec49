"""Quick property suite behind `asdlab verify`; each entry names the invariant it checks."""
import numpy as np

from . import connection_lab as cl
from . import exterior4 as ex
from . import lattice, moment_map as mm, symbols as sy, topology as tp, triple_lab as tl


def _rot(rng):
    R, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return R * np.sign(np.linalg.det(R))


def run_suite(seed=0):
    rng = np.random.default_rng(seed)
    out = []

    def add(check, anchor, value, limit):
        out.append(dict(check=check, anchor=anchor, ok=bool(value <= limit),
                        detail=f"{value:.3g} <= {limit:.1g}"))

    # pointwise forms
    G = ex.gram_matrix(ex.STANDARD_TRIPLE)
    add("standard triple Gram", "wedge pairing of the model triple is 2 Id", np.max(np.abs(G - 2 * np.eye(3))), 1e-14)
    g = rng.normal(size=(4, 4))
    g = g @ g.T + 4 * np.eye(4)
    w = rng.normal(size=6)
    add("star squared", "Hodge star is an involution on 2-forms",
        np.max(np.abs(ex.hodge_star(g, ex.hodge_star(g, w, 2), 2) - w)), 1e-12)
    d = sy.random_definite(rng)
    sd = ex.hodge_star(d.g, d.F, 2) - d.F
    add("reconstructed metric", "a definite frame is self-dual for its metric", np.max(np.abs(sd)), 1e-10)

    # lattice
    grid = lattice.Grid.torus(6)
    f = rng.normal(size=grid.shape + (4,))
    dd = lattice.d_discrete(grid, lattice.d_discrete(grid, f, 1), 2)
    add("d o d", "discrete exterior derivative squares to zero", np.max(np.abs(dd)), 1e-10)

    # triples
    grid = lattice.Grid.torus(6)
    s = tl.perturbed_state(grid, seed, 0.05)
    Q = tl.q_field(s)
    add("triple trace", "tr Q = 3 at definite sites", np.max(np.abs(np.trace(Q, axis1=-2, axis2=-1) - 3)), 1e-12)
    add("triple closure", "the flowing triple stays closed", tl.closure_residual(s), 1e-10)
    add("triple standard point", "the normalized standard triple has Q = Id",
        tl.sup_q_dev(tl.q_field(tl.standard_state(grid))), 1e-12)

    # connections
    chart = lattice.Grid.chart(8, 1.0, 1)
    cs = cl.perturbed_state(chart, seed, 0.02, 0.8)
    geo = cl.Geometry(cs)
    m = geo.inside
    add("connection trace", "tr Q = 3 at definite sites",
        np.max(np.abs(np.trace(geo.Q[m], axis1=-2, axis2=-1) - 3)), 1e-12)
    R = _rot(rng)
    rot = lambda a: np.einsum("ij,...jc->...ic", R, a)
    Fr = cl.curvature(chart, rot(cs.A))
    add("gauge covariance", "constant rotations conjugate the curvature",
        np.max(np.abs(Fr - rot(geo.F))), 1e-12)
    Qr, mur, _ = cl.q_mu_sign(Fr)
    add("gauge invariant volume", "mu is unchanged by a constant rotation", np.max(np.abs(mur - cl.q_mu_sign(geo.F)[1])), 1e-12)
    u = rng.normal(size=4)
    Su = cl.S_apply(ex.STANDARD_TRIPLE / np.sqrt(2), u)
    add("frame contraction", "|i_u F|^2 = 3|u|^2 for a unit frame (here 3/2 in our norm)",
        abs(np.sum(Su * Su) - 1.5 * u @ u) / (u @ u), 1e-12)
    b0 = cl.round_state(chart)
    add("background fixed point", "the balanced rhs vanishes on the background",
        np.max(np.abs(cl.flow_rhs(b0, "stabilized", None, cl.flow_rhs(b0, "plain")))), 1e-12)

    # symbols
    worst = 0.0
    for _ in range(20):
        d = sy.random_definite(rng)
        rep = sy.exact_sequence_check(d, rng.normal(size=4))
        worst = max(worst, rep["max_angle"] if rep["exact"] else np.inf)
    add("exact sequence", "ranks 7 and 5, kernel equals image", worst, 1e-8)
    top = -np.inf
    for _ in range(20):
        d = sy.random_definite(rng)
        _, ev = sy.parabolic_symbol(d, rng.normal(size=4))
        top = max(top, float(np.max(ev.real)))
    add("parabolic symbol", "all eigenvalues have negative real part", top, -1e-12)

    # topology
    add("index S4", "index at (chi, tau) = (2, 0)", abs(tp.index(tp.TopoData(2, 0)) + 10), 0)
    add("index CP2bar", "index at (chi, tau) = (3, -1)", abs(tp.index(tp.TopoData(3, -1)) + 8), 0)
    bad = sum(not r["holds"] for r in tp.spinrep_check())
    add("spin representation identities", "exact character identities", bad, 0)

    # moment map
    quad = mm.SphereQuadrature.lebedev(9)
    rep = mm.perfect_check(np.broadcast_to(np.eye(3), (4, 3, 3)), np.ones(4), quad)
    add("perfect moment", "all low harmonic moments vanish at Q = Id", rep["max_moment"], 1e-8)
    iso = abs(mm.isotropy_pair(rng.normal(size=(3, 6)), rng.normal(size=(3, 4)),
                               rng.normal(size=(3, 4)), quad))
    add("isotropy", "h(a), h(b) pair to zero under a symmetric rule", iso, 1e-10)
    return out
