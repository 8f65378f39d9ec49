"""Discrete exterior calculus on structured 4D grids.

A field of p-forms with fibre rank k is an array of shape
grid.shape + (k, DIM[p]): sites first (row-major), then fibre index, then
form components. Forms are collocated at sites.

The codifferential is not discretized on its own; it is assembled as the
exact adjoint of the discrete d under the mass-matrix inner product
<a, b> = sum_x cell * vol(x) * a(x)^T G_p(x) b(x), so discrete flows built on
it are exact gradient flows of the discrete energies.
"""
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .exterior4 import BASIS, DIM, _INDEX, inverse_minors

CONVENTION = "lex-basis/orthonormal-euclidean/so3-cross/v1"


@dataclass(frozen=True)
class Grid:
    shape: tuple
    spacing: tuple
    topology: str = "periodic"  # or "chart"
    width: int = 0               # frozen boundary layer, chart only
    scheme: str = "centered"     # or "spectral" (periodic only)
    origin: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.shape) != 4 or min(self.shape) < 4:
            raise ValueError("grid needs 4 axes with at least 4 sites each")
        if len(self.spacing) != 4 or min(self.spacing) <= 0:
            raise ValueError("spacing must be 4 positive numbers")
        if self.topology not in ("periodic", "chart"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.scheme not in ("centered", "centered4", "spectral"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.topology == "chart":
            if self.scheme == "spectral":
                raise ValueError("spectral scheme needs periodic topology")
            if self.width < self.stencil_radius:
                raise ValueError(f"frozen layer must cover the stencil radius ({self.stencil_radius})")
            if min(self.shape) <= 2 * self.width:
                raise ValueError("no interior sites left")

    @property
    def stencil_radius(self):
        return {"centered": 1, "centered4": 2}.get(self.scheme, self.shape[0] // 2)

    @classmethod
    def torus(cls, n, length=1.0, scheme="centered"):
        return cls((n,) * 4, (length / n,) * 4, "periodic", 0, scheme)

    @classmethod
    def chart(cls, n, half_width=4.0, width=2, scheme="centered"):
        h = 2 * half_width / (n - 1)
        return cls((n,) * 4, (h,) * 4, "chart", width, scheme, (-half_width,) * 4)

    @property
    def cell(self):
        return float(np.prod(self.spacing))

    @property
    def lengths(self):
        return tuple(n * h for n, h in zip(self.shape, self.spacing))

    def axes(self):
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.shape)]

    def coords(self):
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior_mask(self):
        m = np.ones(self.shape, dtype=bool)
        if self.topology == "chart":
            w = self.width
            m[:] = False
            m[w:-w, w:-w, w:-w, w:-w] = True
        return m

    def header(self):
        return {"shape": list(self.shape), "spacing": list(self.spacing),
                "topology": self.topology, "width": self.width,
                "scheme": self.scheme, "origin": list(self.origin)}


# ------------------------------------------------------------- 1D derivatives

_STENCILS = {
    "centered": ((-1, 1), (-0.5, 0.5)),
    "centered4": ((-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12)),
}
# one-sided closures for the first rows of a bounded axis (last rows mirror with a sign flip)
_CLOSURES = {
    "centered": [(-1.5, 2.0, -0.5)],
    "centered4": [(-25 / 12, 4.0, -3.0, 4 / 3, -1 / 4),
                  (-1 / 4, -5 / 6, 3 / 2, -1 / 2, 1 / 12)],
}


@lru_cache(maxsize=64)
def diff_matrix(n, h, topology, scheme):
    """1D derivative operator on n sites as a sparse (or dense, spectral) matrix."""
    if scheme == "spectral":
        k = 2j * np.pi * np.fft.fftfreq(n, d=h)
        if n % 2 == 0:
            k[n // 2] = 0.0
        return np.fft.ifft(k[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0).real
    offs, coefs = _STENCILS[scheme]
    D = sp.lil_matrix((n, n))
    if topology == "periodic":
        for i in range(n):
            for o, c in zip(offs, coefs):
                D[i, (i + o) % n] += c / h
        return D.tocsr()
    closures = _CLOSURES[scheme]
    m = len(closures)
    for i in range(m, n - m):
        for o, c in zip(offs, coefs):
            D[i, i + o] += c / h
    for i, row in enumerate(closures):
        for j, c in enumerate(row):
            D[i, j] += c / h
            D[n - 1 - i, n - 1 - j] -= c / h
    return D.tocsr()


def _apply_along(M, f, ax):
    g = np.moveaxis(f, ax, 0)
    shp = g.shape
    out = M @ g.reshape(shp[0], -1)
    return np.moveaxis(np.asarray(out).reshape(shp), 0, ax)


def deriv(grid, f, ax):
    """Derivative along grid axis ax (0..3) of an array whose leading axes are the sites."""
    D = diff_matrix(grid.shape[ax], grid.spacing[ax], grid.topology, grid.scheme)
    return _apply_along(D, f, ax)


def deriv_T(grid, f, ax):
    """Transpose of deriv as a linear map on site arrays."""
    D = diff_matrix(grid.shape[ax], grid.spacing[ax], grid.topology, grid.scheme)
    return _apply_along(D.T, f, ax)


# ------------------------------------------------------------ exterior d

def _d_table(p):
    """(J, I, axis, sign) with (d w)_J = sum sign * d_axis w_I."""
    rows = []
    for jn, J in enumerate(BASIS[p + 1]):
        for m, a in enumerate(J):
            I = J[:m] + J[m + 1:]
            rows.append((jn, _INDEX[p][I], a, (-1) ** m))
    return rows


D_TABLE = {p: _d_table(p) for p in range(4)}


def d_discrete(grid, f, p):
    """Discrete exterior derivative of a field of shape sites + (k, DIM[p])."""
    if p > 3:
        raise ValueError("no 5-forms in 4 dimensions")
    ders = [deriv(grid, f, ax) for ax in range(4)]
    out = np.zeros(f.shape[:-1] + (DIM[p + 1],))
    for J, I, a, s in D_TABLE[p]:
        out[..., J] += s * ders[a][..., I]
    return out


def d_transpose(grid, f, p):
    """Transpose of d_discrete acting on (p+1)-form fields; returns p-forms."""
    parts = [np.zeros(f.shape[:-1] + (DIM[p],)) for _ in range(4)]
    for J, I, a, s in D_TABLE[p]:
        parts[a][..., I] += s * f[..., J]
    return sum(deriv_T(grid, parts[a], a) for a in range(4))


# --------------------------------------------------------- metric weights

class MetricField:
    """Per-site metric with volume density, caching induced form metrics."""

    def __init__(self, g, vol=None):
        self.g = np.asarray(g, dtype=float)
        if not np.all(np.linalg.eigvalsh(self.g)[..., 0] > 0):
            raise ValueError("metric field is not positive definite")
        self.vol = np.sqrt(np.linalg.det(self.g)) if vol is None else np.asarray(vol, dtype=float)
        self._G = {}
        self._Ginv = {}
        self._W = {}

    @classmethod
    def euclidean(cls, grid):
        return cls(np.broadcast_to(np.eye(4), grid.shape + (4, 4)).copy())

    def G(self, p):
        if p not in self._G:
            self._G[p] = inverse_minors(self.g, p)
        return self._G[p]

    def Ginv(self, p):
        if p not in self._Ginv:
            self._Ginv[p] = np.linalg.inv(self.G(p))
        return self._Ginv[p]

    def _weights(self, grid, p, inverse):
        key = (grid.cell, p, inverse)
        if key not in self._W:
            w = (grid.cell * self.vol)[..., None, None]
            M = self.Ginv(p) / w if inverse else self.G(p) * w
            self._W[key] = np.ascontiguousarray(np.swapaxes(M, -1, -2))
        return self._W[key]

    def mass(self, grid, f, p):
        """Apply the mass matrix to a field of p-forms (any fibre rank)."""
        return f @ self._weights(grid, p, False)

    def mass_inv(self, grid, f, p):
        return f @ self._weights(grid, p, True)


def inner(grid, a, b, p, metric):
    return float(np.sum(a * metric.mass(grid, b, p)))


def codifferential(grid, f, p, metric):
    """Mass-matrix adjoint of d_discrete: (p)-forms -> (p-1)-forms."""
    if p < 1:
        raise ValueError("codifferential needs p >= 1")
    return metric.mass_inv(grid, d_transpose(grid, metric.mass(grid, f, p), p - 1), p - 1)


def integrate(grid, density):
    return float(np.sum(density) * grid.cell)


# ------------------------------------------------------------- snapshots

def write_snapshot(path, grid, data, degree, extra=None):
    data = np.ascontiguousarray(data, dtype="<f8")
    rank = data.shape[4] if data.ndim == 6 else 1
    head = dict(grid.header(), fibre_rank=rank, form_degree=degree,
                convention=CONVENTION, components=int(data.shape[-1]) if data.ndim > 4 else 1)
    if extra:
        head.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode() + b"\n")
        fh.write(data.tobytes(order="C"))


def read_snapshot(path):
    with open(path, "rb") as fh:
        head = json.loads(fh.readline().decode())
        raw = fh.read()
    grid = Grid(tuple(head["shape"]), tuple(head["spacing"]), head["topology"],
                head["width"], head["scheme"], tuple(head["origin"]))
    arr = np.frombuffer(raw, dtype="<f8")
    tail = (head["fibre_rank"], head["components"]) if head["components"] > 1 or head["fibre_rank"] > 1 else ()
    return grid, arr.reshape(tuple(grid.shape) + tail).copy(), head
