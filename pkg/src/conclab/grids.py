"""Regular lattices over coordinate balls, and scalar/vector fields on them.

The lattice of a ball of radius R with spacing h is {h z : z in Z^N,
|h z| <= R}.  Fields are stored on the full bounding cube with NaN outside
the ball mask, which is also the serialized layout (header: dim, radius,
spacing; payload: row-major float64 with masked entries as NaN).
"""

import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import LatticeMismatch


@lru_cache(maxsize=256)
def ball_lattice(radius, spacing, dim):
    return BallLattice(radius, spacing, dim)


class BallLattice:
    """Geometry of the lattice: coordinates, mask, quadrature weights."""

    def __init__(self, radius, spacing, dim):
        if spacing <= 0 or radius <= 0:
            raise ValueError("radius and spacing must be positive")
        self.radius = float(radius)
        self.spacing = float(spacing)
        self.dim = int(dim)
        self.m = int(np.floor(radius / spacing + 1e-9))
        axis = np.arange(-self.m, self.m + 1) * self.spacing
        self.axis = axis
        self.shape = (2 * self.m + 1,) * dim
        grids = np.meshgrid(*([axis] * dim), indexing='ij')
        self.coords = np.stack(grids, axis=-1)
        r = np.linalg.norm(self.coords, axis=-1)
        self.mask = r <= self.radius * (1 + 1e-12) + 1e-15
        self.flat_index = np.flatnonzero(self.mask.ravel())
        self.points = self.coords.reshape(-1, dim)[self.flat_index]
        # Trapezoid-style product weights restricted to the mask (the cube
        # boundary never meets the ball, so edge halving is a no-op here).
        w = np.full(self.shape, self.spacing ** dim)
        for a in range(dim):
            sl = [slice(None)] * dim
            for edge in (0, -1):
                sl[a] = edge
                w[tuple(sl)] *= 0.5
        self.weights = np.where(self.mask, w, 0.0)
        self.flat_weights = self.weights.ravel()[self.flat_index]

    def cube_to_flat(self, cube):
        return cube.reshape(-1, *cube.shape[self.dim:])[self.flat_index]

    def flat_to_cube(self, flat, fill=np.nan):
        out = np.full((int(np.prod(self.shape)),) + tuple(flat.shape[1:]), fill)
        out[self.flat_index] = flat
        return out.reshape(self.shape + tuple(flat.shape[1:]))


def _shift(cube, axis, step):
    """Shift along an axis, padding with NaN (no wraparound)."""
    out = np.full_like(cube, np.nan)
    src = [slice(None)] * cube.ndim
    dst = [slice(None)] * cube.ndim
    if step > 0:
        src[axis] = slice(0, -step)
        dst[axis] = slice(step, None)
    elif step < 0:
        src[axis] = slice(-step, None)
        dst[axis] = slice(0, step)
    else:
        return cube.copy()
    out[tuple(dst)] = cube[tuple(src)]
    return out


def masked_gradient(cube, spacing, dim):
    """Per-axis first derivative: central where possible, one-sided at the
    mask boundary, NaN where no neighbor exists."""
    grads = []
    for a in range(dim):
        up = _shift(cube, a, -1)      # value at index + 1
        dn = _shift(cube, a, +1)      # value at index - 1
        central = (up - dn) / (2 * spacing)
        fwd = (up - cube) / spacing
        bwd = (cube - dn) / spacing
        g = np.where(np.isfinite(central), central,
                     np.where(np.isfinite(fwd), fwd, bwd))
        grads.append(g)
    return np.stack(grads, axis=-1)


def interp_linear(cube, lat, pts, valid_cube=None):
    """Multilinear interpolation of a cube field at (Q, N) points.

    Returns (values, valid); a point is valid only when every corner of its
    cell is finite (and inside the cube).  Extra trailing axes of ``cube``
    are interpolated componentwise.
    """
    pts = np.atleast_2d(pts)
    q = pts.shape[0]
    dim = lat.dim
    extra = cube.shape[dim:]
    u = pts / lat.spacing + lat.m
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    # Points exactly on the far face still need a full cell.
    at_edge = i0 == 2 * lat.m
    i0 = np.where(at_edge, i0 - 1, i0)
    frac = np.where(at_edge, 1.0, frac)
    inside = ((i0 >= 0) & (i0 <= 2 * lat.m - 1)).all(axis=1)
    i0c = np.clip(i0, 0, 2 * lat.m - 1)

    vals = np.zeros((q,) + extra)
    ok = inside.copy()
    flat_cube = cube.reshape((-1,) + extra)
    if valid_cube is not None:
        flat_valid = valid_cube.ravel()
    strides = np.array([np.prod(lat.shape[a + 1:], dtype=np.int64)
                        for a in range(dim)])
    for corner in product((0, 1), repeat=dim):
        idx = (i0c + np.array(corner)) @ strides
        w = np.ones(q)
        for a, c in enumerate(corner):
            w = w * (frac[:, a] if c else 1.0 - frac[:, a])
        cv = flat_cube[idx]
        finite = np.isfinite(cv).reshape(q, -1).all(axis=1)
        if valid_cube is not None:
            finite &= flat_valid[idx]
        ok &= finite
        cv = np.where(finite.reshape((q,) + (1,) * len(extra)), cv, 0.0)
        vals = vals + w.reshape((q,) + (1,) * len(extra)) * cv
    return vals, ok


_HEADER = struct.Struct('<qdd')


@dataclass
class GridFunction:
    """Scalar samples on the ball lattice, NaN outside the mask.

    Attributes
    ----------
    radius, spacing : float
    values : ndarray
        Full bounding-cube array of shape (2m+1,)*dim.
    """
    radius: float
    spacing: float
    values: np.ndarray
    _grad: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def dim(self):
        return self.values.ndim

    @property
    def lattice(self):
        return ball_lattice(self.radius, self.spacing, self.dim)

    @property
    def flat(self):
        return self.lattice.cube_to_flat(self.values)

    @classmethod
    def from_callable(cls, radius, spacing, dim, fn):
        lat = ball_lattice(radius, spacing, dim)
        flat = np.asarray(fn(lat.points), dtype=float)
        return cls(radius, spacing, lat.flat_to_cube(flat))

    @classmethod
    def from_flat(cls, radius, spacing, dim, flat):
        lat = ball_lattice(radius, spacing, dim)
        return cls(radius, spacing, lat.flat_to_cube(np.asarray(flat, dtype=float)))

    @classmethod
    def zeros(cls, radius, spacing, dim):
        return cls.from_flat(radius, spacing, dim,
                             np.zeros(ball_lattice(radius, spacing, dim).points.shape[0]))

    def same_lattice(self, other):
        return (self.dim == other.dim
                and abs(self.radius - other.radius) < 1e-12
                and abs(self.spacing - other.spacing) < 1e-12)

    def require_same_lattice(self, other):
        if not self.same_lattice(other):
            raise LatticeMismatch(
                f"lattice ({self.radius}, {self.spacing}) vs "
                f"({other.radius}, {other.spacing})")

    def gradient_flat(self):
        """First derivatives at the in-mask points, shape (P, dim)."""
        if self._grad is None:
            g = masked_gradient(self.values, self.spacing, self.dim)
            self._grad = self.lattice.cube_to_flat(g)
        return self._grad

    def integrate(self):
        lat = self.lattice
        vals = np.where(np.isfinite(self.flat), self.flat, 0.0)
        return float(vals @ lat.flat_weights)

    def interp(self, pts):
        return interp_linear(self.values, self.lattice, pts)

    def smoothed(self, cells=2):
        """Local average over lattice neighbors within ``cells`` * spacing."""
        dim = self.dim
        acc = np.zeros_like(self.values)
        cnt = np.zeros_like(self.values)
        rng = range(-cells, cells + 1)
        for off in product(rng, repeat=dim):
            if sum(o * o for o in off) > cells * cells:
                continue
            sh = self.values
            for a, o in enumerate(off):
                sh = _shift(sh, a, o)
            fin = np.isfinite(sh)
            acc[fin] += sh[fin]
            cnt[fin] += 1.0
        out = np.full_like(self.values, np.nan)
        center = np.isfinite(self.values) & (cnt > 0)
        out[center] = acc[center] / cnt[center]
        return GridFunction(self.radius, self.spacing, out)

    def scaled(self, alpha):
        return GridFunction(self.radius, self.spacing, alpha * self.values)

    def plus(self, other, beta=1.0):
        self.require_same_lattice(other)
        return GridFunction(self.radius, self.spacing,
                            self.values + beta * other.values)

    def sup_norm(self):
        vals = self.flat
        vals = vals[np.isfinite(vals)]
        return float(np.abs(vals).max()) if vals.size else 0.0

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(_HEADER.pack(self.dim, self.radius, self.spacing))
        buf.write(np.ascontiguousarray(self.values, dtype='<f8').tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        dim, radius, spacing = _HEADER.unpack_from(data, 0)
        lat = ball_lattice(radius, spacing, dim)
        payload = np.frombuffer(data, dtype='<f8', offset=_HEADER.size)
        expect = int(np.prod(lat.shape))
        if payload.size != expect:
            raise ValueError(f"payload has {payload.size} values, expected {expect}")
        return cls(radius, spacing, payload.reshape(lat.shape).copy())

    def to_csv(self):
        lat = self.lattice
        lines = [",".join([f"x{i}" for i in range(self.dim)] + ["value"])]
        for pt, v in zip(lat.points, self.flat):
            cols = [format(c, '.17g') for c in pt] + [format(v, '.17g')]
            lines.append(",".join(cols))
        return "\n".join(lines) + "\n"


@dataclass
class GridMap:
    """R^N-valued samples on the ball lattice with an explicit defined mask.

    Where ``defined`` is True the values are finite and (for transition
    maps) land inside the target chart ball.
    """
    radius: float
    spacing: float
    values: np.ndarray          # cube + (dim,) components
    defined: np.ndarray         # bool cube

    @property
    def dim(self):
        return self.values.ndim - 1

    @property
    def lattice(self):
        return ball_lattice(self.radius, self.spacing, self.dim)

    @classmethod
    def from_flat(cls, radius, spacing, dim, flat_values, flat_defined):
        lat = ball_lattice(radius, spacing, dim)
        vals = lat.flat_to_cube(np.asarray(flat_values, dtype=float))
        defined = lat.flat_to_cube(
            np.asarray(flat_defined, dtype=float), fill=0.0) > 0.5
        vals[~defined] = np.nan
        return cls(radius, spacing, vals, defined)

    @property
    def flat(self):
        return self.lattice.cube_to_flat(self.values)

    @property
    def flat_defined(self):
        return self.lattice.cube_to_flat(self.defined)

    def fully_defined(self):
        return bool(self.flat_defined.all())

    def interp(self, pts):
        return interp_linear(self.values, self.lattice, pts,
                             valid_cube=self.defined)

    def jacobian_flat(self):
        """d psi^c / d xi^a at in-mask points, shape (P, dim_out, dim_in)."""
        lat = self.lattice
        cols = []
        for c in range(self.dim):
            g = masked_gradient(self.values[..., c], self.spacing, self.dim)
            cols.append(lat.cube_to_flat(g))
        return np.stack(cols, axis=1)

    def c2_distance(self, other):
        """Discrete C^2 distance: sup over commonly defined cells of value,
        first-difference, and second-difference gaps (derivative units)."""
        if self.values.shape != other.values.shape:
            raise LatticeMismatch("grid maps have different shapes")
        diff = self.values - other.values
        both = self.defined & other.defined
        diff = np.where(both[..., None], diff, np.nan)
        h = self.spacing
        d0 = np.nanmax(np.abs(diff), initial=0.0)
        d1 = 0.0
        d2 = 0.0
        for a in range(self.dim):
            g1 = (_shift(diff, a, -1) - _shift(diff, a, 1)) / (2 * h)
            d1 = max(d1, np.nanmax(np.abs(g1), initial=0.0))
            for b in range(a, self.dim):
                if a == b:
                    g2 = (_shift(diff, a, -1) - 2 * diff + _shift(diff, a, 1)) / h ** 2
                else:
                    g2 = (_shift(_shift(diff, a, -1), b, -1)
                          - _shift(_shift(diff, a, -1), b, 1)
                          - _shift(_shift(diff, a, 1), b, -1)
                          + _shift(_shift(diff, a, 1), b, 1)) / (4 * h ** 2)
                d2 = max(d2, np.nanmax(np.abs(g2), initial=0.0))
        return float(d0 + d1 + d2)

    def mask_agrees(self, other):
        return bool(np.array_equal(self.defined, other.defined))
