"""Chart pullbacks, weak-limit detection, Sobolev/L^p norms, and the
vanishing-equivalence harness.

Weak convergence over the schedule is detected against a finite bank of
mollifier test bumps: pairings Cauchy across the last three samples mean a
limit, pairings collectively small mean the zero limit, anything else is
undetermined.  Norms over the manifold are chart sums weighted by the
partition of unity with the pullback volume element.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional

import numpy as np

from . import charts, geometry
from .bumps import mollifier
from .errors import DomainEscape, UnsupportedExponent
from .grids import GridFunction, _shift, ball_lattice

DEFAULT_TOL_W = 1e-3
SMOOTH_CELLS = 2


def critical_exponent(dim):
    """Upper Sobolev exponent 2N/(N-2); infinite for dim 2."""
    if dim <= 2:
        return np.inf
    return 2.0 * dim / (dim - 2.0)


def default_exponent(dim):
    """Representative exponent inside (2, 2N/(N-2)); 4 when that interval
    is half-infinite (dim 2)."""
    two_star = critical_exponent(dim)
    if not np.isfinite(two_star):
        return 4.0
    return 0.5 * (2.0 + two_star)


@dataclass
class SequenceFamily:
    """A bounded sequence in H^{1,2}(M) given analytically.

    Attributes
    ----------
    generator : callable
        (k, points (P, N)) -> values (P,).
    h12_bound : float
        Declared uniform H^{1,2}(M) bound.
    support_hint : callable, optional
        k -> (center, radius) coordinate ball containing the support at k.
    """
    generator: Callable
    h12_bound: float
    support_hint: Optional[Callable] = None
    label: str = ""

    def at(self, k):
        return lambda pts: self.generator(k, pts)

    def hint(self, k):
        return None if self.support_hint is None else self.support_hint(k)


def pullback(u, spec, frame, radius, spacing):
    """Sample u(exp(frame, xi)) on the ball lattice of Omega_radius."""
    lat, pts, ok = charts.chart_points(spec, frame, radius, spacing)
    from .errors import DomainEscape
    if not ok.all():
        raise DomainEscape("pullback chart leaves the declared domain")
    vals = np.asarray(u(pts), dtype=float)
    return GridFunction(radius, spacing, lat.flat_to_cube(vals))


@dataclass
class TestElement:
    """One bank element: values grid, gradient samples, and its H^1 norm."""
    values: GridFunction
    grad: np.ndarray
    h12_norm: float
    scale: float
    center: np.ndarray


class TestBank:
    """Mollifier bumps at several scales and centers, strictly inside the
    ball, with precomputed gradients and norms."""

    def __init__(self, radius, spacing, dim, scale_fractions=(0.5, 0.25, 0.125)):
        self.radius = float(radius)
        self.spacing = float(spacing)
        self.dim = int(dim)
        lat = ball_lattice(radius, spacing, dim)
        vals = []
        grads = []
        meta = []
        for frac in scale_fractions:
            s = frac * radius
            reach = radius - 1.05 * s
            if reach < 0:
                continue
            steps = int(np.floor(reach / s))
            offsets = np.arange(-steps, steps + 1) * s
            for c in product(offsets, repeat=dim):
                c = np.asarray(c)
                if np.linalg.norm(c) > reach + 1e-12:
                    continue
                g = GridFunction.from_callable(
                    radius, spacing, dim,
                    lambda pts, c=c, s=s: mollifier(
                        np.linalg.norm(pts - c, axis=1) / s))
                vals.append(g.flat)
                grads.append(g.gradient_flat())
                meta.append((s, c))
        self._values = np.asarray(vals)
        self._grads = np.asarray(grads)
        self._meta = meta
        self._lat = lat
        w = lat.flat_weights
        v2 = np.einsum('tp,p,tp->t', self._values, w, self._values)
        g2 = np.einsum('tpa,p,tpa->t', np.nan_to_num(self._grads), w,
                       np.nan_to_num(self._grads))
        self.h12_norms = np.sqrt(v2 + g2)
        if (self.h12_norms <= 0).any():
            raise ValueError("test bank contains a degenerate element")

    def __len__(self):
        return len(self._meta)

    def element(self, i):
        s, c = self._meta[i]
        return TestElement(
            values=GridFunction(self.radius, self.spacing,
                                self._lat.flat_to_cube(self._values[i])),
            grad=self._grads[i],
            h12_norm=float(self.h12_norms[i]),
            scale=s, center=c)

    def pair_many(self, f, sqrt_det=None):
        """H^1-type pairings of f against every bank element at once."""
        w = self._lat.flat_weights if sqrt_det is None \
            else self._lat.flat_weights * sqrt_det
        fv = np.nan_to_num(f.flat)
        fg = np.nan_to_num(f.gradient_flat())
        return (self._values @ (w * fv)
                + np.einsum('tpa,pa->t', np.nan_to_num(self._grads),
                            w[:, None] * fg))

    def duality_constant(self, p):
        """max_t || t - lap t ||_{p'}, the constant in
        |<f, t>_{H^1}| <= ||f||_p * C for compactly supported t."""
        pprime = p / (p - 1.0)
        lat = self._lat
        best = 0.0
        h = self.spacing
        for i in range(len(self)):
            cube = lat.flat_to_cube(self._values[i])
            cube0 = np.nan_to_num(cube)
            lap = np.zeros_like(cube0)
            from .grids import _shift
            for a in range(self.dim):
                lap += (np.nan_to_num(_shift(cube0, a, -1))
                        - 2 * cube0 + np.nan_to_num(_shift(cube0, a, 1))) / h ** 2
            integ = np.abs(cube0 - lap) ** pprime
            val = float((lat.cube_to_flat(integ) * lat.flat_weights).sum())
            best = max(best, val ** (1.0 / pprime))
        return best


def weak_pairing(f, element, sqrt_det=None):
    """Quadrature of f t + grad f . grad t with optional volume weights."""
    f.require_same_lattice(element.values)
    lat = f.lattice
    w = lat.flat_weights if sqrt_det is None else lat.flat_weights * sqrt_det
    fv = np.nan_to_num(f.flat)
    fg = np.nan_to_num(f.gradient_flat())
    tv = np.nan_to_num(element.values.flat)
    tg = np.nan_to_num(element.grad)
    return float((tv * w * fv).sum() + (tg * w[:, None] * fg).sum())


def weak_limit(samples, bank, tol_w=DEFAULT_TOL_W):
    """Detect the weak limit of a schedule of pullbacks against the bank.

    Returns (limit GridFunction, status) with status one of ``converged``
    (pairings Cauchy over the last three samples, limit = smoothed final
    sample), ``zero`` (all pairings small at the final sample), or
    ``undetermined``.
    """
    if len(samples) < 4:
        raise ValueError("weak_limit needs at least 4 schedule samples")
    pair = np.asarray([bank.pair_many(f) for f in samples[-3:]])
    thr = tol_w * bank.h12_norms
    small = (np.abs(pair[-1]) <= thr).all()
    cauchy = ((np.abs(pair[-1] - pair[-2]) <= thr).all()
              and (np.abs(pair[-2] - pair[-3]) <= thr).all())
    final = samples[-1]
    if small:
        zeros = GridFunction(final.radius, final.spacing,
                             np.where(np.isfinite(final.values), 0.0, np.nan))
        return zeros, "zero"
    if cauchy:
        return final.smoothed(SMOOTH_CELLS), "converged"
    return final.smoothed(SMOOTH_CELLS), "undetermined"


# ---------------------------------------------------------------------------
# norms over the manifold


def _check_exponent(p, dim, lower_open=False):
    two_star = critical_exponent(dim)
    if lower_open and not p > 2:
        raise UnsupportedExponent(f"p={p} must be > 2")
    if not lower_open and not p >= 2:
        raise UnsupportedExponent(f"p={p} must be >= 2")
    if np.isfinite(two_star) and not p < two_star:
        raise UnsupportedExponent(f"p={p} must be < 2N/(N-2) = {two_star:.4g}")


def active_chart_indices(u, spec, disc, rho, support_hint=None):
    """Charts whose partition ball can meet the support of u.

    With a support hint this is a coordinate ball query; otherwise the
    support is probed by evaluating u on a lattice of the region.  Charts
    outside the result pair to zero and are skipped.
    """
    ora = disc.oracle
    if support_hint is not None:
        center, radius = support_hint
        r = (radius + rho) / ora.sqrt_lambda_min + disc.epsilon
        return sorted(disc.tree.query_ball_point(np.asarray(center, float), r))
    probe = getattr(disc, "_probe_lattice", None)
    if probe is None:
        probe = disc.region.lattice(disc.epsilon / 2)
        disc._probe_lattice = probe
    vals = np.abs(np.asarray(u(probe), dtype=float))
    vmax = vals.max() if vals.size else 0.0
    if vmax <= 0:
        return []
    hot = probe[vals > 1e-12 * vmax]
    r = (rho + disc.epsilon) / ora.sqrt_lambda_min
    idx = set()
    for lst in disc.tree.query_ball_point(hot, r):
        idx.update(lst)
    return sorted(idx)


def _chart_cache(disc, spec, cache):
    if cache is not None:
        return cache
    cc = getattr(disc, "_chart_cache", None)
    if cc is None or cc.spec is not spec:
        cc = charts.ChartCache(spec, disc)
        disc._chart_cache = cc
    return cc


def lp_norm_M(u, spec, disc, chi, p, spacing=None, support_hint=None, cache=None):
    """L^p norm over the manifold by partition-weighted chart quadrature."""
    _check_exponent(p, spec.dim)
    rho = disc.rho
    spacing = spacing if spacing is not None else rho / 24
    cache = _chart_cache(disc, spec, cache)
    total = 0.0
    for y in active_chart_indices(u, spec, disc, rho, support_hint):
        ctx = cache.get(y, rho, spacing)
        f = np.asarray(u(ctx.points), dtype=float)
        chi_vals = chi.chi_on_context(ctx, y)
        w = ctx.lattice.flat_weights
        total += float((w * chi_vals * np.abs(f) ** p * ctx.sqrt_det).sum())
    return total ** (1.0 / p)


def h12_norm_M(u, spec, disc, chi, spacing=None, support_hint=None, cache=None):
    """H^{1,2} norm over the manifold: chart quadrature of
    |u|^2 + g^{-1}(du, du) with the pullback volume element."""
    rho = disc.rho
    spacing = spacing if spacing is not None else rho / 24
    cache = _chart_cache(disc, spec, cache)
    total = 0.0
    for y in active_chart_indices(u, spec, disc, rho, support_hint):
        ctx = cache.get(y, rho, spacing)
        f = np.asarray(u(ctx.points), dtype=float)
        gf = GridFunction(rho, spacing, ctx.lattice.flat_to_cube(f))
        grad = np.nan_to_num(gf.gradient_flat())
        chi_vals = chi.chi_on_context(ctx, y)
        w = ctx.lattice.flat_weights
        quad = f ** 2 + np.einsum('pa,pab,pb->p', grad, ctx.metric_inv, grad)
        total += float((w * chi_vals * quad * ctx.sqrt_det).sum())
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# vanishing-equivalence harness


@dataclass
class SpotlightReport:
    """Per-schedule L^p norms and best chart pairings, with the consistency
    verdict between norm decay and pairing decay."""
    k_schedule: tuple
    lp_curve: np.ndarray
    pairing_curve: np.ndarray
    pairing_center: np.ndarray
    duality_constant: float
    lp_decays: bool
    pairings_vanish: bool
    consistent: bool


def spotlight_test(family, spec, disc, chi, p, tol, k_schedule,
                   spacing=None, bank=None, cache=None):
    """Check the two vanishing indicators against each other.

    (i) the L^p(M) norms along the schedule, (ii) the maximum over charts of
    test-bank pairings of the pullbacks.  Consistent means they decay (below
    ``tol`` relative to their initial value) together or persist together.
    """
    _check_exponent(p, spec.dim, lower_open=True)
    rho = disc.rho
    spacing = spacing if spacing is not None else rho / 24
    cache = _chart_cache(disc, spec, cache)
    if bank is None:
        bank = TestBank(rho, spacing, spec.dim)
    lp_curve = []
    pairing_curve = []
    pairing_center = []
    for k in k_schedule:
        u = family.at(k)
        hint = family.hint(k)
        lp_curve.append(lp_norm_M(u, spec, disc, chi, p, spacing=spacing,
                                  support_hint=hint, cache=cache))
        best = 0.0
        best_y = -1
        for y in active_chart_indices(u, spec, disc, rho, hint):
            ctx = cache.get(y, rho, spacing)
            f = GridFunction(rho, spacing,
                             ctx.lattice.flat_to_cube(
                                 np.asarray(u(ctx.points), dtype=float)))
            val = float(np.abs(bank.pair_many(f)).max())
            if val > best:
                best = val
                best_y = y
        pairing_curve.append(best)
        pairing_center.append(best_y)
    lp_curve = np.asarray(lp_curve)
    pairing_curve = np.asarray(pairing_curve)
    tiny = 1e-300
    lp_decays = bool(lp_curve[-1] <= tol * max(lp_curve[0], tiny))
    vanish = bool(pairing_curve[-1] <= tol * max(pairing_curve[0], tiny))
    return SpotlightReport(
        k_schedule=tuple(k_schedule),
        lp_curve=lp_curve,
        pairing_curve=pairing_curve,
        pairing_center=np.asarray(pairing_center),
        duality_constant=float(bank.duality_constant(p)),
        lp_decays=lp_decays,
        pairings_vanish=vanish,
        consistent=lp_decays == vanish,
    )
