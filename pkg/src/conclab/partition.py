"""Smooth partition of unity subordinate to the discretization balls.

Each center carries the fixed mollifier bump b(d(x, y) / rho); pointwise
normalization by the sum over covering neighbors makes the family sum to one
wherever at least one ball reaches.  Covering at radius epsilon < rho
guarantees a positive sum on the whole region.
"""

import numpy as np

from . import charts, geometry
from .bumps import mollifier
from .errors import CoveringGap


class PartitionOfUnity:
    """Normalized mollifier bumps at the discretization points."""

    def __init__(self, disc, rho=None):
        self.disc = disc
        self.rho = float(rho if rho is not None else disc.rho)
        self.grad_bound = None

    def bump_of_radius(self, radius):
        """Unnormalized bump value from a distance array."""
        return mollifier(np.where(np.isfinite(radius), radius / self.rho, 1.0))

    def chi_on_context(self, ctx, y_index):
        """chi_y at the points of a chart context (cached log tables)."""
        _, _, radius = ctx.logtable.get(int(y_index))
        total = ctx.chi_normalizer(self.rho)
        b = self.bump_of_radius(radius)
        out = np.zeros_like(b)
        pos = total > 0
        out[pos] = b[pos] / total[pos]
        return out

    def _tables_for(self, spec, points):
        table = charts.LogTable(spec, self.disc, points)
        ora = self.disc.oracle
        idx = set()
        for lst in self.disc.tree.query_ball_point(
                np.atleast_2d(points), self.rho / ora.sqrt_lambda_min * (1 + 1e-9)):
            idx.update(lst)
        return table, sorted(idx)

    def chi_at(self, spec, points, y_index):
        """chi_y at arbitrary manifold points."""
        points = np.atleast_2d(points)
        table, centers = self._tables_for(spec, points)
        total = np.zeros(len(points))
        for z in centers:
            _, _, radius = table.get(z)
            total += self.bump_of_radius(radius)
        if int(y_index) in centers:
            _, _, radius = table.get(int(y_index))
            b = self.bump_of_radius(radius)
        else:
            b = np.zeros(len(points))
        out = np.zeros_like(b)
        pos = total > 0
        out[pos] = b[pos] / total[pos]
        return out

    def sum_at(self, spec, points):
        """Total weight sum (1 on the covered region, 0 outside all balls)."""
        points = np.atleast_2d(points)
        table, centers = self._tables_for(spec, points)
        total = np.zeros(len(points))
        for z in centers:
            _, _, radius = table.get(z)
            total += self.bump_of_radius(radius)
        return np.where(total > 0, 1.0, 0.0), total

    def estimate_gradient_bound(self, spec, sample_points, delta=1e-4):
        """Numerical sup of |grad chi_y| over samples and nearby centers."""
        pts = np.atleast_2d(sample_points)
        n = pts.shape[1]
        stack = [pts]
        for a in range(n):
            dx = np.zeros(n)
            dx[a] = delta
            stack.append(pts + dx)
            stack.append(pts - dx)
        stack = np.concatenate(stack, axis=0)
        table, centers = self._tables_for(spec, stack)
        total = np.zeros(len(stack))
        bump_by_center = {}
        for z in centers:
            _, _, radius = table.get(z)
            b = self.bump_of_radius(radius)
            bump_by_center[z] = b
            total += b
        best = 0.0
        p = len(pts)
        for z in centers:
            b = bump_by_center[z]
            chi = np.where(total > 0, b / np.maximum(total, 1e-300), 0.0)
            for a in range(n):
                plus = chi[(1 + 2 * a) * p:(2 + 2 * a) * p]
                minus = chi[(2 + 2 * a) * p:(3 + 2 * a) * p]
                best = max(best, float(np.abs((plus - minus) / (2 * delta)).max()))
        self.grad_bound = best
        return best


def build_partition(disc, rho=None, check_spacing=None):
    """Partition of unity on the discretization's covering.

    Verifies that every test point of the region receives positive total
    weight (the covering at epsilon < rho guarantees it); raises CoveringGap
    otherwise.
    """
    chi = PartitionOfUnity(disc, rho=rho)
    if not disc.epsilon < chi.rho:
        raise CoveringGap(
            f"bump support rho={chi.rho:.4g} does not exceed the covering "
            f"radius epsilon={disc.epsilon:.4g}")
    if not disc.covering_ok:
        raise CoveringGap("discretization does not cover its region")
    spacing = check_spacing if check_spacing is not None else 2 * disc.epsilon
    test = disc.region.lattice(spacing)
    if len(test) > 4000:
        test = test[:: len(test) // 4000 + 1]
    _, total = chi.sum_at(disc.spec, test)
    if (total <= 0).any():
        bad = test[total <= 0][0]
        raise CoveringGap(f"zero partition weight at test point {bad!r}")
    return chi
