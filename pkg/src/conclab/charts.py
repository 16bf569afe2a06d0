"""Shared normal-coordinate chart machinery.

A chart at a discretization point carries the lattice image points, the
pullback metric and volume element, and a table of logarithm coordinates
from nearby centers to the chart's points.  Everything here is reused by
the spotlight norms, the gluing construction, and the reconstruction of
concentrations, so contexts are cached per (center, radius, spacing).
"""

from collections import OrderedDict

import numpy as np

from . import geometry
from .bumps import mollifier
from .errors import DomainEscape
from .grids import ball_lattice

_DIFF_STEP = 1e-4


def chart_points(spec, frame, radius, spacing):
    """Images of the ball lattice under the chart map, plus validity mask."""
    lat = ball_lattice(radius, spacing, spec.dim)
    pts, ok = geometry.exp_map_batch(spec, frame.base_point, frame.basis,
                                     lat.points)
    return lat, pts, ok


def chart_differential(spec, frame, radius, spacing, step=_DIFF_STEP):
    """Chart map values and differential on the ball lattice.

    The differential is taken by central finite differences of the chart map
    in one stacked geodesic batch.

    Returns
    -------
    lat, pts (P, N), de (P, N, N), ok (P,)
        ``de[:, :, j]`` is the j-th coordinate derivative of the chart map.
    """
    lat = ball_lattice(radius, spacing, spec.dim)
    n = spec.dim
    p = lat.points.shape[0]
    stack = [lat.points]
    for j in range(n):
        dxi = np.zeros(n)
        dxi[j] = step
        stack.append(lat.points + dxi)
        stack.append(lat.points - dxi)
    stack = np.concatenate(stack, axis=0)
    pts_all, ok_all = geometry.exp_map_batch(spec, frame.base_point,
                                             frame.basis, stack)
    pts = pts_all[:p]
    ok = ok_all[:p]
    de = np.empty((p, n, n))
    for j in range(n):
        plus = pts_all[(1 + 2 * j) * p:(2 + 2 * j) * p]
        minus = pts_all[(2 + 2 * j) * p:(3 + 2 * j) * p]
        de[:, :, j] = (plus - minus) / (2 * step)
        ok &= ok_all[(1 + 2 * j) * p:(2 + 2 * j) * p]
        ok &= ok_all[(2 + 2 * j) * p:(3 + 2 * j) * p]
    return lat, pts, de, ok


def pullback_metric(spec, frame, radius, spacing):
    """Metric pulled back through the chart: G = de^T g(e(xi)) de.

    Returns (lat, pts, G, sqrt_det_G, ok).
    """
    lat, pts, de, ok = chart_differential(spec, frame, radius, spacing)
    g = geometry._metric_batch(spec, pts)
    G = np.einsum('bki,bkl,blj->bij', de, g, de)
    det = np.linalg.det(G)
    sqrtdet = np.sqrt(np.abs(det))
    ok = ok & np.isfinite(det) & (det > 0)
    return lat, pts, G, sqrtdet, ok


class LogTable:
    """Cached logarithm coordinates from centers to a fixed point set."""

    def __init__(self, spec, disc, pts):
        self.spec = spec
        self.disc = disc
        self.pts = np.atleast_2d(pts)
        self._cache = {}

    def get(self, center_idx):
        """(xi, converged, radius) of the log map at the given center."""
        entry = self._cache.get(center_idx)
        if entry is None:
            center = self.disc.points[center_idx]
            frame = geometry.frame_at(self.spec, center)
            xi, conv, radius, _ = geometry.log_map_batch(
                self.spec, frame.base_point, frame.basis, self.pts)
            radius = radius.copy()
            radius[~conv] = np.inf
            entry = (xi, conv, radius)
            self._cache[center_idx] = entry
        return entry

    def set_exact_radii(self, center_idx, xi, radius):
        """Seed the table where coordinates are known exactly (own chart)."""
        conv = np.ones(len(self.pts), dtype=bool)
        self._cache[center_idx] = (xi, conv, radius)


class ChartContext:
    """Everything needed to integrate and evaluate functions on one chart."""

    def __init__(self, spec, disc, center_idx, radius, spacing):
        self.spec = spec
        self.disc = disc
        self.center_idx = int(center_idx)
        self.radius = float(radius)
        self.spacing = float(spacing)
        self.center = disc.points[center_idx]
        self.frame = geometry.frame_at(spec, self.center)
        self._geom = None
        self._logtable = None
        self._chi_norm = {}

    def _ensure_geometry(self):
        if self._geom is None:
            lat, pts, G, sqrtdet, ok = pullback_metric(
                self.spec, self.frame, self.radius, self.spacing)
            if not ok.all():
                raise DomainEscape(
                    f"chart at {self.center!r} leaves the declared domain")
            self._geom = (lat, pts, G, np.linalg.inv(G), sqrtdet)
        return self._geom

    @property
    def lattice(self):
        return self._ensure_geometry()[0]

    @property
    def points(self):
        return self._ensure_geometry()[1]

    @property
    def metric(self):
        return self._ensure_geometry()[2]

    @property
    def metric_inv(self):
        return self._ensure_geometry()[3]

    @property
    def sqrt_det(self):
        return self._ensure_geometry()[4]

    @property
    def logtable(self):
        if self._logtable is None:
            lat = self.lattice
            self._logtable = LogTable(self.spec, self.disc, self.points)
            # Radial exactness: on its own chart, log coordinates are the
            # lattice coordinates themselves.
            self._logtable.set_exact_radii(
                self.center_idx, lat.points.copy(),
                np.linalg.norm(lat.points, axis=1))
        return self._logtable

    def neighbor_centers(self, reach):
        """Indices of discretization points within geodesic ``reach`` of any
        chart point (conservative coordinate prefilter)."""
        ora = self.disc.oracle
        r_coord = (self.radius / ora.sqrt_lambda_min + reach / ora.sqrt_lambda_min)
        idx = self.disc.tree.query_ball_point(self.center, r_coord)
        return sorted(idx)

    def chi_normalizer(self, rho):
        """Pointwise sum of partition bumps over all nearby centers."""
        key = round(rho, 12)
        if key not in self._chi_norm:
            total = np.zeros(len(self.points))
            for z in self.neighbor_centers(rho):
                _, _, radius = self.logtable.get(z)
                total += mollifier(np.where(np.isfinite(radius),
                                            radius / rho, 1.0))
            self._chi_norm[key] = total
        return self._chi_norm[key]


class ChartCache:
    """LRU cache of chart contexts keyed by (center, radius, spacing)."""

    def __init__(self, spec, disc, maxsize=512):
        self.spec = spec
        self.disc = disc
        self.maxsize = maxsize
        self._store = OrderedDict()

    def get(self, center_idx, radius, spacing):
        key = (int(center_idx), round(radius, 12), round(spacing, 12))
        ctx = self._store.get(key)
        if ctx is None:
            ctx = ChartContext(self.spec, self.disc, center_idx, radius, spacing)
            self._store[key] = ctx
            if len(self._store) > self.maxsize:
                self._store.popitem(last=False)
        else:
            self._store.move_to_end(key)
        return ctx
