"""Analytic manifolds of bounded geometry and their geodesic calculus.

A manifold is described by a metric field in one global coordinate system,
plus declared bounds (injectivity radius, optional curvature sup-norms).
On top of that this module provides Christoffel symbols, geodesic
integration (exponential map), Newton shooting for the logarithm map,
distances, orthonormal frames, curvature validation, and a small catalog of
test manifolds: flat space, the hyperbolic plane, and compactly perturbed
flat metrics.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _integrate
from .bumps import mollifier as _mollifier
from .errors import (DomainEscape, Disconnected, NoConvergence, NotSPD,
                     OutsideInjectivity)

# Finite-difference steps: first derivatives of the metric, and the coarser
# step used for curvature (second-derivative) stencils.
H_FD = 1e-4
H_CURV = 1e-3

LOG_TOL = 1e-9
MAX_NEWTON = 50


@dataclass(frozen=True)
class ManifoldSpec:
    """An analytic Riemannian manifold in one global coordinate system.

    Attributes
    ----------
    dim : int
        Coordinate dimension N >= 2.
    metric : callable
        Maps points of shape (..., N) to SPD matrices of shape (..., N, N).
        Point-wise (non-vectorized) callables are accepted and looped over.
    inj_radius : float
        Declared lower bound on the injectivity radius (not computed).
    metric_grad : callable, optional
        Analytic partials, (..., N) -> (..., N, N, N) with axes [k, i, j] =
        d_k g_ij.  When absent, central finite differences with step H_FD.
    curvature_bounds : tuple, optional
        Declared sup-norms (|R|, |grad R|) used by validate_bounded_geometry.
    catalog_id : str, optional
        Name of the built-in manifold this spec came from.
    domain_lo, domain_hi : tuple, optional
        Open coordinate box on which the metric is valid; geodesics leaving
        it are flagged as escaped.  None means all of R^N.
    """
    dim: int
    metric: Callable
    inj_radius: float
    metric_grad: Optional[Callable] = None
    curvature_bounds: Optional[tuple] = None
    catalog_id: Optional[str] = None
    domain_lo: Optional[tuple] = None
    domain_hi: Optional[tuple] = None

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("manifold dimension must be >= 2")
        if not self.inj_radius > 0:
            raise ValueError("inj_radius must be positive")

    @property
    def chart_radius(self):
        """Radius a = (3/4) r(M) on which normal-coordinate charts are used."""
        return 0.75 * self.inj_radius

    def in_domain(self, pts):
        """Boolean mask of points inside the declared coordinate domain."""
        pts = np.atleast_2d(pts)
        ok = np.ones(pts.shape[0], dtype=bool)
        if self.domain_lo is not None:
            ok &= (pts > np.asarray(self.domain_lo)).all(axis=1)
        if self.domain_hi is not None:
            ok &= (pts < np.asarray(self.domain_hi)).all(axis=1)
        return ok


@dataclass(frozen=True)
class Frame:
    """Orthonormal basis of the tangent space at a point.

    ``basis`` columns are tangent vectors with basis^T g_x basis = identity.
    """
    base_point: np.ndarray
    basis: np.ndarray


@dataclass
class BoundedGeometryReport:
    """Finite-difference curvature estimates at a set of sample points."""
    riemann_sup: float
    nabla_riemann_sup: Optional[float]
    sectional_min: float
    sectional_max: float
    samples: int
    bounds_violated: bool
    notes: str = ""


# ---------------------------------------------------------------------------
# metric evaluation


def _metric_batch(spec, pts):
    """Evaluate the metric at (B, N) points, tolerating point-wise callables."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    b, n = pts.shape
    try:
        g = np.asarray(spec.metric(pts), dtype=float)
        if g.shape == (b, n, n):
            return g
    except Exception:
        pass
    g = np.empty((b, n, n))
    for i in range(b):
        g[i] = spec.metric(pts[i])
    return g


def _metric_grad_batch(spec, pts):
    """d_k g_ij at (B, N) points; analytic when declared, else central FD."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    b, n = pts.shape
    if spec.metric_grad is not None:
        try:
            grad = np.asarray(spec.metric_grad(pts), dtype=float)
            if grad.shape == (b, n, n, n):
                return grad
        except Exception:
            pass
        grad = np.empty((b, n, n, n))
        for i in range(b):
            grad[i] = spec.metric_grad(pts[i])
        return grad
    grad = np.empty((b, n, n, n))
    for k in range(n):
        dx = np.zeros(n)
        dx[k] = H_FD
        grad[:, k] = (_metric_batch(spec, pts + dx)
                      - _metric_batch(spec, pts - dx)) / (2 * H_FD)
    return grad


def metric_at(spec, x):
    """Metric matrix g_x, validated symmetric positive definite.

    Raises NotSPD when an eigenvalue is <= 0 (bad manifold definition or a
    breach of the declared coordinate domain).
    """
    g = _metric_batch(spec, x)[0]
    if not np.isfinite(g).all():
        raise NotSPD(f"metric not finite at {np.asarray(x)!r}")
    if not np.allclose(g, g.T, atol=1e-12, rtol=1e-10):
        raise NotSPD(f"metric not symmetric at {np.asarray(x)!r}")
    w = np.linalg.eigvalsh(0.5 * (g + g.T))
    if w[0] <= 0:
        raise NotSPD(f"metric has eigenvalue {w[0]:.3e} <= 0 at {np.asarray(x)!r}")
    return g


def christoffel_batch(spec, pts):
    """Gamma^l_ij at (B, N) points, shape (B, N, N, N) indexed [l, i, j].

    Rows where the metric is non-finite or numerically singular come back
    as NaN so the integrator can freeze those trajectories.
    """
    pts = np.atleast_2d(pts)
    b, n = pts.shape
    g = _metric_batch(spec, pts)
    grad = _metric_grad_batch(spec, pts)
    bad = (~np.isfinite(g).reshape(b, -1).all(axis=1)
           | ~np.isfinite(grad).reshape(b, -1).all(axis=1))
    det = np.where(bad, 1.0, np.linalg.det(np.where(bad[:, None, None], np.eye(n), g)))
    bad |= np.abs(det) < 1e-300
    if bad.any():
        g = np.where(bad[:, None, None], np.eye(n), g)
    ginv = np.linalg.inv(g)
    gam = 0.5 * (np.einsum('blm,bimj->blij', ginv, grad)
                 + np.einsum('blm,bjmi->blij', ginv, grad)
                 - np.einsum('blm,bmij->blij', ginv, grad))
    if bad.any():
        gam[bad] = np.nan
    return gam


def christoffel(spec, x):
    """Christoffel symbols Gamma^k_ij at a single point, shape (N, N, N)."""
    gam = christoffel_batch(spec, np.atleast_2d(x))[0]
    if not np.isfinite(gam).all():
        raise NotSPD(f"metric degenerate at {np.asarray(x)!r}")
    return gam


# ---------------------------------------------------------------------------
# frames


def frames_at(spec, pts):
    """Deterministic orthonormal frames at (B, N) points.

    Orthonormalizes the coordinate basis in index order (equivalently, the
    inverse transpose Cholesky factor of g), so identical inputs always give
    identical frames.
    """
    g = _metric_batch(spec, pts)
    L = np.linalg.cholesky(g)
    basis = np.transpose(np.linalg.inv(L), (0, 2, 1))
    return basis


def frame_at(spec, x):
    """Orthonormal Frame at a single point."""
    x = np.asarray(x, dtype=float)
    g = metric_at(spec, x)
    L = np.linalg.cholesky(g)
    basis = np.linalg.inv(L).T
    return Frame(base_point=x.copy(), basis=basis)


# ---------------------------------------------------------------------------
# exponential map


def _geodesic_rhs(spec):
    n = spec.dim

    def rhs(y):
        x = y[:, :n]
        v = y[:, n:]
        gam = christoffel_batch(spec, x)
        acc = -np.einsum('bkij,bi,bj->bk', gam, v, v)
        return np.concatenate([v, acc], axis=1)

    return rhs


def exp_map_batch(spec, base, basis, xi, atol=None, rtol=None):
    """Endpoints of unit-time geodesics from (possibly per-row) frames.

    Parameters
    ----------
    base : ndarray (N,) or (B, N)
    basis : ndarray (N, N) or (B, N, N)
    xi : ndarray (B, N)
        Tangent coordinates in the frame.

    Returns
    -------
    pts : ndarray (B, N), ok : ndarray (B,) of bool
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    b, n = xi.shape
    base = np.asarray(base, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if base.ndim == 1:
        base = np.broadcast_to(base, (b, n))
    if basis.ndim == 2:
        v0 = xi @ basis.T
    else:
        v0 = np.einsum('bij,bj->bi', basis, xi)
    kwargs = {}
    if atol is not None:
        kwargs['atol'] = atol
    if rtol is not None:
        kwargs['rtol'] = rtol
    x, _, ok = _integrate.integrate_geodesics(
        _geodesic_rhs(spec), spec.in_domain, base, v0, **kwargs)
    return x, ok


def exp_map(spec, frame, xi):
    """Exponential-map endpoint exp_x(basis @ xi) with |xi| < a = (3/4) r(M).

    exp_map(frame, 0) returns the base point exactly.
    """
    xi = np.asarray(xi, dtype=float)
    if np.all(xi == 0.0):
        return frame.base_point.copy()
    if np.linalg.norm(xi) >= spec.chart_radius:
        raise ValueError(
            f"|xi|={np.linalg.norm(xi):.4g} must be < a={spec.chart_radius:.4g}")
    pts, ok = exp_map_batch(spec, frame.base_point, frame.basis, xi[None, :])
    if not ok[0]:
        raise DomainEscape("geodesic left the declared coordinate domain")
    return pts[0]


def geodesic_energy_drift(spec, frame, xi):
    """Relative change of g(v, v) along the geodesic to xi (diagnostic)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    v0 = xi @ frame.basis.T
    x0 = np.broadcast_to(frame.base_point, xi.shape)
    x, v, ok = _integrate.integrate_geodesics(
        _geodesic_rhs(spec), spec.in_domain, x0, v0)
    g0 = _metric_batch(spec, x0)
    g1 = _metric_batch(spec, x)
    e0 = np.einsum('bi,bij,bj->b', v0, g0, v0)
    e1 = np.einsum('bi,bij,bj->b', v, g1, v)
    drift = np.abs(e1 - e0) / np.maximum(e0, 1e-300)
    drift[~ok] = np.inf
    return drift


# ---------------------------------------------------------------------------
# logarithm map (Newton/Gauss-Newton shooting)


def _residual_norm(F, g_t):
    return np.sqrt(np.abs(np.einsum('bi,bij,bj->b', F, g_t, F)))


def log_map_batch(spec, base, basis, targets, tol=LOG_TOL, max_newton=MAX_NEWTON):
    """Shoot geodesics to invert exp at (possibly per-row) frames.

    Initialized from the flat-space guess basis^{-1}(y - x), with step
    halving on residual increase.

    Returns
    -------
    xi : ndarray (B, N)
        Tangent coordinates (meaningful where converged).
    converged : ndarray (B,) of bool
    radius : ndarray (B,)
        |xi| (geodesic length, since the frame is orthonormal).
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    b, n = targets.shape
    base = np.asarray(base, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if base.ndim == 1:
        base = np.broadcast_to(base, (b, n)).copy()
    if basis.ndim == 2:
        basis = np.broadcast_to(basis, (b, n, n)).copy()

    xi = np.linalg.solve(basis, (targets - base)[..., None])[..., 0]
    g_t = _metric_batch(spec, targets)
    gt_bad = ~np.isfinite(g_t).reshape(b, -1).all(axis=1)
    if gt_bad.any():
        g_t = np.where(gt_bad[:, None, None], np.eye(n), g_t)

    converged = np.zeros(b, dtype=bool)
    failed = gt_bad.copy()
    res = np.full(b, np.inf)

    for _ in range(max_newton):
        act = ~(converged | failed)
        if not act.any():
            break
        ia = np.flatnonzero(act)
        a = ia.size
        xi_a = xi[ia]
        delta = 1e-6 * (1.0 + np.linalg.norm(xi_a, axis=1))

        # Stacked evaluation: base point plus N forward stencil shifts.
        stack = np.empty(((n + 1) * a, n))
        stack[:a] = xi_a
        for j in range(n):
            stack[(j + 1) * a:(j + 2) * a] = xi_a
            stack[(j + 1) * a:(j + 2) * a, j] += delta
        rep = np.tile(np.arange(a), n + 1)
        pts, ok = exp_map_batch(spec, base[ia][rep], basis[ia][rep], stack)

        ok0 = ok[:a]
        F = pts[:a] - targets[ia]
        rn = _residual_norm(F, g_t[ia])
        rn[~ok0] = np.inf

        newly = rn < tol * (1.0 + np.linalg.norm(xi_a, axis=1))
        converged[ia[newly]] = True
        res[ia] = rn
        ok_st = ok[a:].reshape(n, a).all(axis=0)
        sub = ~newly & ok0 & ok_st
        esc = ~newly & ~(ok0 & ok_st)
        if esc.any():
            # Escaped guesses (or stencils): shrink toward the base point.
            xi[ia[esc]] *= 0.5
        if not sub.any():
            continue

        J = np.empty((a, n, n))
        for j in range(n):
            J[:, :, j] = (pts[(j + 1) * a:(j + 2) * a] - pts[:a]) / delta[:, None]
        Js = J[sub]
        # Regularize near-singular Jacobians rather than aborting the batch.
        dets = np.abs(np.linalg.det(Js))
        if (dets < 1e-14).any():
            Js = Js + 1e-10 * np.eye(n)
        dxi = np.linalg.solve(Js, -F[sub][..., None])[..., 0]

        isub = ia[sub]
        alpha = np.ones(isub.size)
        best = res[isub].copy()
        cur = xi[isub].copy()
        pending = np.ones(isub.size, dtype=bool)
        for _half in range(8):
            if not pending.any():
                break
            ip = np.flatnonzero(pending)
            trial = cur[ip] + alpha[ip, None] * dxi[ip]
            tpts, tok = exp_map_batch(spec, base[isub[ip]], basis[isub[ip]], trial)
            tF = tpts - targets[isub[ip]]
            trn = _residual_norm(tF, g_t[isub[ip]])
            trn[~tok] = np.inf
            good = trn < best[ip]
            gi = ip[good]
            xi[isub[gi]] = trial[good]
            res[isub[gi]] = trn[good]
            pending[gi] = False
            alpha[ip[~good]] *= 0.5
        # Rows exhausting the line search keep their previous xi and retry;
        # they either converge later or run out the iteration budget.

    escaped = failed
    return xi, converged, np.linalg.norm(xi, axis=1), escaped


def log_map(spec, frame, y, tol=LOG_TOL, max_newton=MAX_NEWTON):
    """Tangent coordinates xi with exp_map(frame, xi) = y.

    Raises OutsideInjectivity when the recovered geodesic length reaches the
    declared injectivity radius, NoConvergence when Newton shooting fails.
    """
    xi, conv, radius, _ = log_map_batch(
        spec, frame.base_point, frame.basis, np.asarray(y, dtype=float)[None, :],
        tol=tol, max_newton=max_newton)
    if not conv[0]:
        raise NoConvergence(f"log map did not converge after {max_newton} iterations")
    if radius[0] >= spec.inj_radius:
        raise OutsideInjectivity(
            f"distance estimate {radius[0]:.4g} >= inj_radius {spec.inj_radius:.4g}")
    return xi[0]


def geodesic_distance(spec, x, y, disc=None):
    """Geodesic distance: |log_x y| inside the injectivity ball, otherwise a
    relaxed shortest-path estimate on the discretization graph.

    Raises Disconnected when the direct map fails and no discretization with
    a connecting path is available.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return 0.0
    frame = frame_at(spec, x)
    xi, conv, radius, _ = log_map_batch(spec, frame.base_point, frame.basis,
                                        y[None, :])
    if conv[0] and radius[0] < spec.inj_radius:
        return float(radius[0])
    if disc is None:
        raise Disconnected(
            "target outside the injectivity ball and no discretization given "
            "for the graph fallback")
    return disc.graph_distance(spec, x, y)


# ---------------------------------------------------------------------------
# curvature validation


def _riemann_lowered(spec, pts, h=H_CURV):
    """R_{lkij} at (B, N) points by central differences of the symbols."""
    pts = np.atleast_2d(pts)
    b, n = pts.shape
    gam0 = christoffel_batch(spec, pts)
    dgam = np.empty((b, n, n, n, n))
    for m in range(n):
        dx = np.zeros(n)
        dx[m] = h
        dgam[:, m] = (christoffel_batch(spec, pts + dx)
                      - christoffel_batch(spec, pts - dx)) / (2 * h)
    # R^l_{kij} = d_i Gam^l_{jk} - d_j Gam^l_{ik}
    #             + Gam^l_{im} Gam^m_{jk} - Gam^l_{jm} Gam^m_{ik}
    r = (np.einsum('biljk->blkij', dgam)
         - np.einsum('bjlik->blkij', dgam)
         + np.einsum('blim,bmjk->blkij', gam0, gam0)
         - np.einsum('bljm,bmik->blkij', gam0, gam0))
    g = _metric_batch(spec, pts)
    return np.einsum('blm,bmkij->blkij', g, r)


def validate_bounded_geometry(spec, sample_points, k_max=1):
    """Finite-difference curvature report at the given sample points.

    Estimates the frame-normalized sup of the curvature tensor, coordinate-
    plane sectional curvatures, and (for k_max >= 1) the first covariant
    derivative of the curvature.  Flags declared curvature_bounds violated by
    more than 10%.  Report-only: never raises on large curvature.
    """
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    b, n = pts.shape
    rlow = _riemann_lowered(spec, pts)
    frames = frames_at(spec, pts)
    rf = np.einsum('blkij,bla,bkc,bid,bje->bacde', rlow, frames, frames,
                   frames, frames)
    riemann_sup = float(np.abs(rf).max())
    sect = np.array([[rf[s, a, c, a, c] for a in range(n) for c in range(a + 1, n)]
                     for s in range(b)])
    nabla_sup = None
    if k_max >= 1:
        gam0 = christoffel_batch(spec, pts)
        drlow = np.empty((b, n, n, n, n, n))
        for m in range(n):
            dx = np.zeros(n)
            dx[m] = H_CURV
            drlow[:, m] = (_riemann_lowered(spec, pts + dx)
                           - _riemann_lowered(spec, pts - dx)) / (2 * H_CURV)
        corr = (np.einsum('bnml,bnkij->bmlkij', gam0, rlow)
                + np.einsum('bnmk,blnij->bmlkij', gam0, rlow)
                + np.einsum('bnmi,blknj->bmlkij', gam0, rlow)
                + np.einsum('bnmj,blkin->bmlkij', gam0, rlow))
        nabla = drlow - corr
        nf = np.einsum('bmlkij,bmf,bla,bkc,bid,bje->bfacde', nabla, frames,
                       frames, frames, frames, frames)
        nabla_sup = float(np.abs(nf).max())

    violated = False
    notes = []
    if spec.curvature_bounds is not None:
        r_decl = spec.curvature_bounds[0]
        if riemann_sup > 1.1 * r_decl:
            violated = True
            notes.append(f"|R| estimate {riemann_sup:.3e} exceeds declared "
                         f"{r_decl:.3e} by more than 10%")
        if k_max >= 1 and len(spec.curvature_bounds) > 1 and nabla_sup is not None:
            n_decl = spec.curvature_bounds[1]
            if nabla_sup > 1.1 * n_decl:
                violated = True
                notes.append(f"|grad R| estimate {nabla_sup:.3e} exceeds "
                             f"declared {n_decl:.3e} by more than 10%")
    return BoundedGeometryReport(
        riemann_sup=riemann_sup,
        nabla_riemann_sup=nabla_sup,
        sectional_min=float(sect.min()),
        sectional_max=float(sect.max()),
        samples=b,
        bounds_violated=violated,
        notes="; ".join(notes),
    )


# ---------------------------------------------------------------------------
# catalog


def catalog(catalog_id, dim=2, **params):
    """Built-in manifolds selected by string id.

    ``"flat"``            Euclidean R^N (params: inj_radius).
    ``"hyperbolic"``      dim 2: polar-type model g = diag(1, sinh^2 t) on
                          t > 0; dim >= 3: upper half-space g = Id / x_N^2
                          (params: inj_radius).
    ``"perturbed_flat"``  g = (1 + beta * bump(|x - center| / radius)) * Id
                          (params: beta, radius, center, inj_radius).
    """
    if catalog_id == "flat":
        inj = float(params.pop("inj_radius", 8.0))
        if params:
            raise ValueError(f"unknown flat parameters: {sorted(params)}")
        eye = np.eye(dim)

        def metric(pts):
            pts = np.asarray(pts, dtype=float)
            return np.broadcast_to(eye, pts.shape[:-1] + (dim, dim)).copy()

        def metric_grad(pts):
            pts = np.asarray(pts, dtype=float)
            return np.zeros(pts.shape[:-1] + (dim, dim, dim))

        return ManifoldSpec(dim=dim, metric=metric, metric_grad=metric_grad,
                            inj_radius=inj, curvature_bounds=(0.0, 0.0),
                            catalog_id="flat")

    if catalog_id == "hyperbolic":
        inj = float(params.pop("inj_radius", 2.4))
        if params:
            raise ValueError(f"unknown hyperbolic parameters: {sorted(params)}")
        if dim == 2:
            def metric(pts):
                pts = np.atleast_2d(np.asarray(pts, dtype=float))
                t = pts[:, 0]
                g = np.zeros(pts.shape[:-1] + (2, 2))
                g[:, 0, 0] = 1.0
                g[:, 1, 1] = np.sinh(t) ** 2
                return g

            def metric_grad(pts):
                pts = np.atleast_2d(np.asarray(pts, dtype=float))
                t = pts[:, 0]
                grad = np.zeros(pts.shape[:-1] + (2, 2, 2))
                grad[:, 0, 1, 1] = 2.0 * np.sinh(t) * np.cosh(t)
                return grad

            return ManifoldSpec(dim=2, metric=metric, metric_grad=metric_grad,
                                inj_radius=inj, curvature_bounds=(1.0, 0.0),
                                catalog_id="hyperbolic",
                                domain_lo=(1e-3, -np.inf))

        def metric(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            h = pts[:, -1]
            g = np.zeros(pts.shape[:-1] + (dim, dim))
            idx = np.arange(dim)
            g[:, idx, idx] = (1.0 / h ** 2)[:, None]
            return g

        def metric_grad(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            h = pts[:, -1]
            grad = np.zeros(pts.shape[:-1] + (dim, dim, dim))
            idx = np.arange(dim)
            grad[:, dim - 1, idx, idx] = (-2.0 / h ** 3)[:, None]
            return grad

        lo = [-np.inf] * dim
        lo[-1] = 1e-6
        return ManifoldSpec(dim=dim, metric=metric, metric_grad=metric_grad,
                            inj_radius=inj, curvature_bounds=(1.0, 0.0),
                            catalog_id="hyperbolic", domain_lo=tuple(lo))

    if catalog_id == "perturbed_flat":
        beta = float(params.pop("beta", 0.2))
        radius = float(params.pop("radius", 2.0))
        center = np.asarray(params.pop("center", np.zeros(dim)), dtype=float)
        inj = float(params.pop("inj_radius", 6.0))
        if params:
            raise ValueError(f"unknown perturbed_flat parameters: {sorted(params)}")
        eye = np.eye(dim)

        def metric(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            u = np.linalg.norm(pts - center, axis=-1) / radius
            phi = 1.0 + beta * _mollifier(u)
            return phi[:, None, None] * eye

        def metric_grad(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            d = pts - center
            u = np.linalg.norm(d, axis=-1) / radius
            # b'(u)/u = -2 b(u) / (1 - u^2)^2, finite at u = 0.
            fac = np.zeros_like(u)
            inside = u < 1.0
            fac[inside] = (-2.0 * _mollifier(u[inside])
                           / (1.0 - u[inside] ** 2) ** 2)
            dphi = beta * fac[:, None] * d / radius ** 2
            return np.einsum('bk,ij->bkij', dphi, eye)

        return ManifoldSpec(dim=dim, metric=metric, metric_grad=metric_grad,
                            inj_radius=inj, catalog_id="perturbed_flat")

    raise ValueError(f"unknown catalog manifold: {catalog_id!r}")
