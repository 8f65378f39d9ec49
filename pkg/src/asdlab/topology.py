"""Characteristic numbers and SU(2) x SU(2) character arithmetic.

A character is a CharPoly: integer Laurent coefficients in (x, y), where x and
y are the maximal-torus variables of SU(2)+ and SU(2)-. S^m_+ has character
x^m + x^(m-2) + ... + x^(-m). All arithmetic is exact.
"""
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import convolve2d


@dataclass(frozen=True)
class TopoData:
    chi: int
    tau: int


class CharPoly:
    """Laurent polynomial in (x, y); coeffs[i, j] multiplies x^(i - ox) y^(j - oy)."""

    def __init__(self, coeffs, ox, oy):
        c = np.asarray(coeffs, dtype=np.int64)
        self.coeffs, self.ox, self.oy = c, int(ox), int(oy)
        self._trim()

    @classmethod
    def from_terms(cls, terms):
        """terms: {(px, py): coefficient}."""
        if not terms:
            return cls(np.zeros((1, 1)), 0, 0)
        xs = [p for p, _ in terms]
        ys = [q for _, q in terms]
        ox, oy = -min(xs), -min(ys)
        c = np.zeros((max(xs) + ox + 1, max(ys) + oy + 1), dtype=np.int64)
        for (p, q), v in terms.items():
            c[p + ox, q + oy] += v
        return cls(c, ox, oy)

    @classmethod
    def spin(cls, m_plus, m_minus=0):
        """Character of S^m_+ (x) S^n_-."""
        return cls.from_terms({(m_plus - 2 * a, m_minus - 2 * b): 1
                               for a in range(m_plus + 1) for b in range(m_minus + 1)})

    @classmethod
    def one(cls):
        return cls.spin(0, 0)

    def terms(self):
        idx = np.argwhere(self.coeffs != 0)
        return {(int(i) - self.ox, int(j) - self.oy): int(self.coeffs[i, j]) for i, j in idx}

    def _trim(self):
        nz = np.argwhere(self.coeffs != 0)
        if len(nz) == 0:
            self.coeffs, self.ox, self.oy = np.zeros((1, 1), dtype=np.int64), 0, 0
            return
        (i0, j0), (i1, j1) = nz.min(axis=0), nz.max(axis=0)
        self.coeffs = self.coeffs[i0:i1 + 1, j0:j1 + 1]
        self.ox -= i0
        self.oy -= j0

    def __add__(self, other):
        t = self.terms()
        for k, v in other.terms().items():
            t[k] = t.get(k, 0) + v
        return CharPoly.from_terms({k: v for k, v in t.items() if v})

    def __neg__(self):
        return CharPoly(-self.coeffs, self.ox, self.oy)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        c = convolve2d(self.coeffs, other.coeffs)
        return CharPoly(c, self.ox + other.ox, self.oy + other.oy)

    def __eq__(self, other):
        return self.terms() == other.terms()

    def __hash__(self):
        return hash(frozenset(self.terms().items()))

    def __repr__(self):
        return f"CharPoly({self.terms()})"

    def dim(self):
        return int(self.coeffs.sum())

    def adams(self, k):
        """psi^k: substitute x -> x^k, y -> y^k."""
        return CharPoly.from_terms({(k * p, k * q): v for (p, q), v in self.terms().items()})

    def sym2(self):
        return _halve(self * self + self.adams(2))

    def alt2(self):
        return _halve(self * self - self.adams(2))

    def is_weyl_symmetric(self):
        t = self.terms()
        return all(t.get((-p, q)) == v and t.get((p, -q)) == v for (p, q), v in t.items())

    def decompose(self):
        """Multiplicities {(m, n): k} of S^m_+ (x) S^n_- by peeling highest weights."""
        rest = self
        out = {}
        while rest.terms():
            t = rest.terms()
            m = max(p for p, _ in t)
            n = max(q for p, q in t if p == m)
            k = t[(m, n)]
            if k < 0:
                raise ValueError("not a genuine representation")
            out[(m, n)] = out.get((m, n), 0) + k
            rest = rest - CharPoly.from_terms({(0, 0): k}) * CharPoly.spin(m, n)
        return out


def _halve(c):
    if np.any(c.coeffs % 2):
        raise ValueError("odd coefficients")
    return CharPoly(c.coeffs // 2, c.ox, c.oy)


def from_decomposition(dec):
    out = CharPoly.from_terms({})
    for (m, n), k in dec.items():
        for _ in range(k):
            out = out + CharPoly.spin(m, n)
    return out


# ------------------------------------------- characters from SO(4) weights

def _so4_weights_to_char(weights):
    """Weights a*phi1 + b*phi2 of the SO(4) torus, as (a, b), to a CharPoly.

    phi1 = s + t, phi2 = s - t where x = e^{is}, y = e^{it}.
    """
    terms = {}
    for a, b in weights:
        k = (a + b, a - b)
        terms[k] = terms.get(k, 0) + 1
    return CharPoly.from_terms(terms)


def vector_rep():
    """R^4 (x) C: weights +-phi1, +-phi2."""
    return _so4_weights_to_char([(1, 0), (-1, 0), (0, 1), (0, -1)])


def self_dual_rep():
    """Lambda^+ (x) C: dz1^dz2, its conjugate and the Kahler form; weights +-(phi1+phi2), 0."""
    return _so4_weights_to_char([(1, 1), (-1, -1), (0, 0)])


def two_forms_rep():
    return vector_rep().alt2()


# ----------------------------------------------------------- identity suite

def spinrep_check():
    S = CharPoly.spin
    V = vector_rep()
    Lp = self_dual_rep()
    items = {
        "vector = S+ S-": (V, S(1, 1)),
        "self-dual = S2+": (Lp, S(2, 0)),
        "traceless Sym2(S2+) = S4+": (Lp.sym2() - CharPoly.one(), S(4, 0)),
        "S3+ S+ = S4+ + S2+": (S(3, 0) * S(1, 0), S(4, 0) + S(2, 0)),
        "(S+ S-) S2+ = S+ S- + S3+ S-": (V * Lp, S(1, 1) + S(3, 1)),
        "(S+ S-)(S3+ S-) = S4+ S2- + S2+ S2- + S4+ + S2+":
            (V * S(3, 1), S(4, 2) + S(2, 2) + S(4, 0) + S(2, 0)),
        "S+ S+ = 1 + S2+": (S(1, 0) * S(1, 0), CharPoly.one() + S(2, 0)),
        "Lambda2 = Lambda+ + Lambda-": (two_forms_rep(), S(2, 0) + S(0, 2)),
    }
    report = []
    for name, (lhs, rhs) in items.items():
        report.append(dict(identity=name, holds=lhs == rhs, dim_lhs=lhs.dim(), dim_rhs=rhs.dim(),
                           decomposition={f"{m},{n}": k for (m, n), k in sorted(rhs.decompose().items())}))
    return report


# -------------------------------------------------------------- index side

def index(d):
    return -5 * d.chi - 7 * d.tau


def p1_and_bounds(d):
    p1 = 2 * d.chi + 3 * d.tau
    return dict(chi=d.chi, tau=d.tau, p1=p1, energy_bound_pi2=8 * p1,
                definite_feasible=p1 > 0, hitchin_thorpe=2 * d.chi > 3 * abs(d.tau))


def chern_character_spin(m):
    """ch(S^m_+) as (rank, coefficient of c2(S_+)) from the formal roots +-l, c2 = -l^2."""
    roots = [m - 2 * k for k in range(m + 1)]
    deg4 = sum(Fraction(r * r, 2) for r in roots)     # coefficient of l^2
    return Fraction(m + 1), -deg4


def index_via_characters(d):
    """Index of the twisted Dirac operator S3+ (x) S- -> S3+ (x) S+ from A-hat * ch."""
    rank, c2_coef = chern_character_spin(3)
    ahat_p1 = Fraction(-1, 24)
    # degree-4 part of A-hat * ch(S3+): c2_coef * c2 + rank * ahat_p1 * p1; D^- carries a minus sign
    int_c2 = Fraction(-(2 * d.chi + 3 * d.tau), 4)
    int_p1 = Fraction(3 * d.tau)
    val = -(c2_coef * int_c2 + rank * ahat_p1 * int_p1)
    if val.denominator != 1:
        raise ArithmeticError(f"non-integral index {val}")
    return int(val)


def index_report(d):
    rep = p1_and_bounds(d)
    rep.update(index=index(d), index_via_characters=index_via_characters(d))
    return rep
