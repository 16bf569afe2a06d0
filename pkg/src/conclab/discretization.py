"""Separated covering point sets on bounded regions, and trailing systems.

The builder greedily packs points from a fine candidate lattice, accepting a
candidate iff its geodesic distance to every accepted point is >= epsilon;
maximality of the packing then gives covering at radius epsilon.  Distance
tests use cheap two-sided bounds (straight-segment length above, metric
eigenvalue floor below) and fall back to exact Newton shooting only inside
the ambiguous band, so flat regions never integrate a geodesic.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from . import geometry
from .errors import Disconnected, NotInDiscretization, RegionTooFine

_FUZZ = 1e-12  # relative slack for >= / < decisions at exact lattice distances


@dataclass(frozen=True)
class Region:
    """Axis-aligned coordinate box."""
    lo: tuple
    hi: tuple

    @classmethod
    def from_bounds(cls, bounds):
        bounds = np.asarray(bounds, dtype=float)
        return cls(lo=tuple(bounds[:, 0]), hi=tuple(bounds[:, 1]))

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bounds(self):
        return np.stack([np.asarray(self.lo), np.asarray(self.hi)], axis=1)

    def lattice(self, spacing):
        axes = [np.arange(lo, hi + 0.5 * spacing, spacing)
                for lo, hi in zip(self.lo, self.hi)]
        grids = np.meshgrid(*axes, indexing='ij')
        return np.stack(grids, axis=-1).reshape(-1, self.dim)

    def expanded(self, margin):
        return Region(lo=tuple(np.asarray(self.lo) - margin),
                      hi=tuple(np.asarray(self.hi) + margin))

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return ((pts >= np.asarray(self.lo) - 1e-12).all(axis=1)
                & (pts <= np.asarray(self.hi) + 1e-12).all(axis=1))

    def to_json_obj(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}


class _DistanceOracle:
    """Two-sided geodesic distance bounds with exact fallback."""

    def __init__(self, spec, region, probe_margin):
        self.spec = spec
        sample_region = region.expanded(probe_margin)
        probes = sample_region.lattice(
            max((np.asarray(sample_region.hi) - np.asarray(sample_region.lo)).max() / 24,
                1e-6))
        g = geometry._metric_batch(spec, probes)
        ok = np.isfinite(g).reshape(len(probes), -1).all(axis=1)
        w = np.linalg.eigvalsh(g[ok])
        self.sqrt_lambda_min = float(np.sqrt(w[:, 0].min()) * (1 - 1e-9))
        self.sqrt_lambda_max = float(np.sqrt(w[:, -1].max()) * (1 + 1e-9))
        self.flat = (spec.catalog_id == "flat"
                     or (self.sqrt_lambda_max / self.sqrt_lambda_min < 1 + 1e-9))

    def lower(self, a, b):
        return self.sqrt_lambda_min * np.linalg.norm(b - a, axis=-1)

    def upper(self, a, b):
        """g-length of the straight coordinate segment (5-point midpoint)."""
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if self.flat:
            return np.linalg.norm(b - a, axis=-1)
        ts = (np.arange(5) + 0.5) / 5
        d = b - a
        total = np.zeros(a.shape[0])
        for t in ts:
            g = geometry._metric_batch(self.spec, a + t * d)
            total += np.sqrt(np.abs(np.einsum('bi,bij,bj->b', d, g, d)))
        return total / 5

    def exact(self, src, targets):
        """|log_src(target)| by Newton shooting; inf where it fails."""
        frame = geometry.frame_at(self.spec, src)
        _, conv, radius, _ = geometry.log_map_batch(
            self.spec, frame.base_point, frame.basis, np.atleast_2d(targets))
        radius = radius.copy()
        radius[~conv] = np.inf
        return radius

    def resolve(self, src, targets, threshold):
        """Booleans: geodesic distance(src, t) >= threshold, decided exactly
        inside the bound gap only."""
        targets = np.atleast_2d(targets)
        lo = self.lower(src, targets)
        decided_ge = lo >= threshold * (1 - _FUZZ)
        if decided_ge.all():
            return decided_ge
        up = self.upper(src, targets)
        decided_lt = up < threshold * (1 - _FUZZ)
        out = decided_ge.copy()
        ambiguous = ~decided_ge & ~decided_lt
        if ambiguous.any():
            d = self.exact(src, targets[ambiguous])
            out[ambiguous] = d >= threshold * (1 - _FUZZ)
        return out

    def distances(self, src, targets):
        """Geodesic distances from src; exact where bounds disagree."""
        targets = np.atleast_2d(targets)
        lo = self.lower(src, targets)
        up = self.upper(src, targets)
        out = 0.5 * (lo + up)
        tight = (up - lo) <= 1e-12 * np.maximum(1.0, up)
        out[tight] = up[tight]
        if not tight.all():
            d = self.exact(src, targets[~tight])
            out[~tight] = d
        return out


@dataclass
class Discretization:
    """A separated covering point set over a bounded region.

    Attributes
    ----------
    points : ndarray (P, N)
        Accepted points in build order (the stable tie-break order).
    epsilon : float
        Separation radius (also the covering radius of the maximal packing).
    region : Region
    rho : float
        Chart radius rho with rho/2 < epsilon < rho < r(M)/8.
    multiplicity : dict
        Covering multiplicities of {B(y, t eps)} reported at build time.
    covering_ok : bool
    covering_max_gap : float
    """
    spec: object
    points: np.ndarray
    epsilon: float
    region: Region
    rho: float
    multiplicity: dict = field(default_factory=dict)
    covering_ok: bool = True
    covering_max_gap: float = 0.0
    _tree: object = field(default=None, repr=False, compare=False)
    _oracle: object = field(default=None, repr=False, compare=False)
    _graph: object = field(default=None, repr=False, compare=False)

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    @property
    def oracle(self):
        if self._oracle is None:
            self._oracle = _DistanceOracle(self.spec, self.region,
                                           probe_margin=2 * self.epsilon)
        return self._oracle

    def index_of(self, pts):
        """Indices of exact member points; NotInDiscretization otherwise."""
        pts = np.atleast_2d(pts)
        d, idx = self.tree.query(pts)
        if (d > 1e-9).any():
            bad = pts[d > 1e-9][0]
            raise NotInDiscretization(f"point {bad!r} is not a discretization point")
        return idx

    # -- distance graph ----------------------------------------------------

    def _build_graph(self):
        spec = self.spec
        ora = self.oracle
        r_edge = 0.9 * spec.inj_radius
        pairs = self.tree.query_pairs(r_edge / ora.sqrt_lambda_min,
                                      output_type='ndarray')
        if pairs.size == 0:
            self._graph = sparse.csr_matrix((len(self.points),) * 2)
            return
        a = self.points[pairs[:, 0]]
        b = self.points[pairs[:, 1]]
        lo = ora.lower(a, b)
        up = ora.upper(a, b)
        d = 0.5 * (lo + up)
        tight = (up - lo) <= 1e-12 * np.maximum(1.0, up)
        d[tight] = up[tight]
        loose = ~tight
        if loose.any():
            frames = geometry.frames_at(spec, a[loose])
            _, conv, radius, _ = geometry.log_map_batch(
                spec, a[loose], frames, b[loose])
            dd = np.where(conv, radius, np.inf)
            d[loose] = dd
        keep = d <= r_edge
        rows = pairs[keep, 0]
        cols = pairs[keep, 1]
        vals = d[keep]
        n = len(self.points)
        g = sparse.coo_matrix((np.concatenate([vals, vals]),
                               (np.concatenate([rows, cols]),
                                np.concatenate([cols, rows]))), shape=(n, n))
        self._graph = g.tocsr()

    @property
    def graph(self):
        if self._graph is None:
            self._build_graph()
        return self._graph

    def graph_distance(self, spec, x, y):
        """Upper-bound distance through the point graph, straightened by
        shortcutting path nodes that see each other inside the injectivity
        ball.  Raises Disconnected when no path exists."""
        ora = self.oracle
        r_hop = 0.9 * spec.inj_radius
        kq = min(8, len(self.points))
        _, src_idx = self.tree.query(x, k=kq)
        _, dst_idx = self.tree.query(y, k=kq)
        src_idx = np.atleast_1d(src_idx)
        dst_idx = np.atleast_1d(dst_idx)
        d_src = ora.distances(x, self.points[src_idx])
        d_dst = ora.distances(y, self.points[dst_idx])
        dist, pred = csgraph.dijkstra(self.graph, indices=src_idx,
                                      return_predecessors=True)
        totals = d_src[:, None] + dist[:, dst_idx] + d_dst[None, :]
        if not np.isfinite(totals).any():
            raise Disconnected("no discretization-graph path between the points")
        s, t = np.unravel_index(np.argmin(totals), totals.shape)
        # Reconstruct node path and straighten it.
        path = [int(dst_idx[t])]
        while path[-1] != src_idx[s] and pred[s, path[-1]] >= 0:
            path.append(int(pred[s, path[-1]]))
        path.reverse()
        nodes = [np.asarray(x)] + [self.points[i] for i in path] + [np.asarray(y)]
        total = 0.0
        i = 0
        while i < len(nodes) - 1:
            j = len(nodes) - 1
            hop = None
            while j > i + 1:
                gap = np.linalg.norm(nodes[j] - nodes[i])
                if gap <= r_hop / ora.sqrt_lambda_min:
                    d = ora.distances(nodes[i], nodes[j][None, :])[0]
                    if d <= r_hop:
                        hop = (j, d)
                        break
                j -= 1
            if hop is None:
                d = ora.distances(nodes[i], nodes[i + 1][None, :])[0]
                hop = (i + 1, d)
            total += hop[1]
            i = hop[0]
        return float(total)

    def to_json_obj(self):
        return {
            "epsilon": self.epsilon,
            "rho": self.rho,
            "region": self.region.to_json_obj(),
            "points": [list(p) for p in self.points],
        }

    @classmethod
    def from_json_obj(cls, spec, obj):
        return cls(spec=spec,
                   points=np.asarray(obj["points"], dtype=float),
                   epsilon=float(obj["epsilon"]),
                   region=Region(lo=tuple(obj["region"]["lo"]),
                                 hi=tuple(obj["region"]["hi"])),
                   rho=float(obj["rho"]))


@dataclass
class TrailingSystem:
    """Distance orderings of the point set that follow a center sequence.

    ``orderings[j, i]`` is the index into the discretization of the i-th
    nearest point to the j-th core center (ties broken by build order), so
    orderings[j, 0] is the core center itself.
    """
    disc: Discretization
    core_indices: np.ndarray      # (K,)
    orderings: np.ndarray         # (K, I_max + 1)
    distances: np.ndarray         # (K, I_max + 1)
    I_max: int
    k_schedule: tuple

    @property
    def core_sequence(self):
        return self.disc.points[self.core_indices]

    def chart_centers(self, j):
        """Points of the trailing charts at schedule position j."""
        return self.disc.points[self.orderings[j]]


def build_discretization(spec, region, epsilon, rho=None, lattice_spacing=None,
                         covering_spacing=None, multiplicity_ts=(1, 2, 4)):
    """Greedy maximal epsilon-separated subset of a candidate lattice.

    Every candidate not accepted lies within epsilon of an accepted point,
    so the result covers the region at radius epsilon.  Covering is verified
    exhaustively on a finer grid and multiplicities of {B(y, t eps)} are
    reported for t in ``multiplicity_ts``.
    """
    if not 0 < epsilon < spec.inj_radius:
        raise ValueError("epsilon must lie in (0, r(M))")
    if rho is None:
        rho = epsilon / 0.75
    lattice_spacing = lattice_spacing if lattice_spacing is not None else epsilon / 4
    if lattice_spacing > epsilon / 4 + 1e-12:
        raise RegionTooFine(
            f"candidate lattice spacing {lattice_spacing:.4g} is coarser than "
            f"epsilon/4 = {epsilon / 4:.4g}")
    candidates = region.lattice(lattice_spacing)
    ora = _DistanceOracle(spec, region, probe_margin=2 * epsilon)
    r_pre = epsilon / ora.sqrt_lambda_min * (1 + 1e-9)

    accepted = []
    tree = None
    tree_size = 0
    for cand in candidates:
        neigh = []
        if tree is not None:
            neigh = tree.query_ball_point(cand, r_pre)
        recent = [i for i in range(tree_size, len(accepted))
                  if np.linalg.norm(accepted[i] - cand) <= r_pre]
        idx = list(neigh) + recent
        if idx:
            pts = np.asarray([accepted[i] for i in idx])
            if not ora.resolve(cand, pts, epsilon).all():
                continue
        accepted.append(cand)
        if len(accepted) - tree_size >= 512:
            tree = cKDTree(np.asarray(accepted))
            tree_size = len(accepted)

    points = np.asarray(accepted)
    disc = Discretization(spec=spec, points=points, epsilon=epsilon,
                          region=region, rho=rho)
    disc._oracle = ora

    # Exhaustive covering check on a finer grid.
    cov_spacing = covering_spacing if covering_spacing is not None else lattice_spacing
    test_pts = region.lattice(cov_spacing)
    gap = _min_distances(disc, test_pts)
    disc.covering_max_gap = float(gap.max())
    disc.covering_ok = bool((gap <= epsilon * (1 + 1e-9)).all())

    for t in multiplicity_ts:
        disc.multiplicity[t] = covering_multiplicity(disc, t, test_points=test_pts)
    return disc


def _min_distances(disc, test_pts):
    """Distance from each test point to the nearest discretization point."""
    ora = disc.oracle
    d_coord, idx = disc.tree.query(test_pts)
    if ora.flat:
        return d_coord
    out = np.empty(len(test_pts))
    for i, (p, j) in enumerate(zip(test_pts, idx)):
        cand = disc.tree.query_ball_point(p, d_coord[i] * ora.sqrt_lambda_max
                                          / ora.sqrt_lambda_min + 1e-12)
        out[i] = ora.distances(p, disc.points[cand]).min()
    return out


def covering_multiplicity(disc, t, test_points=None):
    """Max over test points of the number of y with d(test, y) < t eps."""
    if t < 1:
        raise ValueError("t must be >= 1")
    ora = disc.oracle
    radius = t * disc.epsilon
    if test_points is None:
        test_points = disc.region.lattice(disc.epsilon / 4)
    if ora.flat:
        counts = disc.tree.query_ball_point(test_points,
                                            radius * (1 - _FUZZ),
                                            return_length=True)
        return int(np.max(counts))
    best = 0
    for p in test_points:
        cand = disc.tree.query_ball_point(p, radius / ora.sqrt_lambda_min)
        if not cand:
            continue
        ge = ora.resolve(p, disc.points[cand], radius)
        best = max(best, int((~ge).sum()))
    return best


def trailing_system(disc, core_sequence, I_max, k_schedule):
    """Orderings of the discretization by distance from each core center.

    Distance ties are broken by the stable build order of the point set, so
    identical inputs give identical orderings.
    """
    core_idx = disc.index_of(np.atleast_2d(core_sequence))
    if len(core_idx) != len(k_schedule):
        raise ValueError("core_sequence and k_schedule lengths differ")
    take = min(I_max + 1, len(disc.points))
    orderings = np.empty((len(core_idx), take), dtype=np.int64)
    dists = np.empty((len(core_idx), take))
    for j, ci in enumerate(core_idx):
        d = _distances_for_ordering(disc, ci, take)
        order = np.lexsort((np.arange(len(d)), d))[:take]
        orderings[j] = order
        dists[j] = d[order]
    return TrailingSystem(disc=disc, core_indices=core_idx,
                          orderings=orderings, distances=dists,
                          I_max=take - 1, k_schedule=tuple(k_schedule))


def _distances_for_ordering(disc, center_idx, take):
    """Distances from one center to every point, exact out to the take-th
    neighbor and graph-based beyond the injectivity ball."""
    spec = disc.spec
    ora = disc.oracle
    src = disc.points[center_idx]
    n = len(disc.points)
    d = np.full(n, np.inf)
    # Generous coordinate prefilter: enough candidates that the take-th
    # geodesic neighbor is certainly among them.
    kq = min(n, max(4 * take, take + 8))
    dq, idx = disc.tree.query(src, k=kq)
    idx = np.atleast_1d(idx)
    exact = ora.distances(src, disc.points[idx])
    d[idx] = exact
    kth = np.partition(exact, take - 1)[take - 1]
    # Certainty: any point outside the prefilter has coordinate distance
    # >= max(dq), hence geodesic distance >= sqrt_lambda_min * max(dq).
    if (kq < n and ora.sqrt_lambda_min * np.max(dq) < kth) or kth >= 0.9 * spec.inj_radius:
        dist = csgraph.dijkstra(disc.graph, indices=[center_idx])[0]
        far = ~np.isfinite(d) | (d >= 0.9 * spec.inj_radius)
        d[far] = dist[far]
    return d
