"""Batched adaptive Dormand-Prince 5(4) integration of the geodesic ODE.

All geometry kernels (chart pullbacks, transition maps, Newton shooting)
integrate thousands of geodesics at once, so the stepper advances a whole
batch with a shared step size controlled by the worst per-trajectory error.
Trajectories that leave the declared coordinate domain, or whose right-hand
side stops being finite, are frozen and flagged instead of poisoning the rest
of the batch.
"""

import numpy as np

from .errors import IntegrationFailure

# Dormand-Prince 5(4) tableau.  B5 propagates, B5 - B4 estimates the error.
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_ERR = _B5 - _B4
_STAGES = 7

DEFAULT_ATOL = 1e-10
DEFAULT_RTOL = 1e-10
MAX_STEPS = 5000


def integrate_geodesics(rhs, in_domain, x0, v0, t_end=1.0,
                        atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL,
                        max_steps=MAX_STEPS):
    """Advance the batch of geodesics (x0, v0) to arc time ``t_end``.

    Parameters
    ----------
    rhs : callable
        Maps state ``y`` of shape (B, 2N) to its derivative (velocity and
        geodesic acceleration).  May return non-finite rows outside the
        metric's validity region; those rows are frozen.
    in_domain : callable
        Maps positions (B, N) to a boolean mask of rows inside the declared
        coordinate domain.
    x0, v0 : ndarray (B, N)
        Initial positions and velocities.

    Returns
    -------
    x, v : ndarray (B, N)
        Final states (last valid state for frozen rows).
    ok : ndarray (B,) of bool
        False where the trajectory escaped the domain or hit a non-finite
        right-hand side.

    Raises
    ------
    IntegrationFailure
        If the shared step controller cannot finish within ``max_steps``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    batch, n = x0.shape
    y = np.concatenate([x0, v0], axis=1)
    ok = in_domain(x0).copy()
    active = ok.copy()
    if not active.any():
        return y[:, :n].copy(), y[:, n:].copy(), ok

    t = 0.0
    h = min(0.25, t_end)
    steps = 0
    k = np.empty((_STAGES, batch, 2 * n))

    while t < t_end - 1e-14:
        if steps >= max_steps:
            raise IntegrationFailure(
                f"geodesic integration exceeded {max_steps} steps at t={t:.3g}")
        steps += 1
        h = min(h, t_end - t)

        ya = y[active]
        f0 = rhs(ya)
        bad0 = ~np.isfinite(f0).all(axis=1)
        if bad0.any():
            idx = np.flatnonzero(active)[bad0]
            ok[idx] = False
            active[idx] = False
            if not active.any():
                break
            continue

        while True:
            ka = np.empty((_STAGES, ya.shape[0], 2 * n))
            ka[0] = f0
            reject_nan = False
            for s in range(1, _STAGES):
                incr = sum(a * ka[j] for j, a in enumerate(_A[s]) if a != 0.0)
                ys = ya + h * incr
                fs = rhs(ys)
                if not np.isfinite(fs).all():
                    # A stage probed outside the metric's validity region:
                    # shrink the step; rows still stuck get frozen below.
                    reject_nan = True
                    break
                ka[s] = fs
            if reject_nan:
                h *= 0.25
                if h < 1e-14:
                    # Whole remaining batch is stuck at a domain boundary.
                    idx = np.flatnonzero(active)
                    ok[idx] = False
                    active[idx] = False
                    break
                continue

            y_new = ya + h * np.tensordot(_B5, ka, axes=1)
            err_vec = h * np.tensordot(_ERR, ka, axes=1)
            scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
            err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
            err_max = err.max() if err.size else 0.0
            if not np.isfinite(err_max):
                h *= 0.25
                if h < 1e-14:
                    idx = np.flatnonzero(active)
                    ok[idx] = False
                    active[idx] = False
                    break
                continue
            if err_max <= 1.0:
                break
            h *= min(0.9, max(0.2, 0.9 * err_max ** -0.2))
            if h < 1e-14:
                raise IntegrationFailure("step size underflow in geodesic integration")

        if not active.any():
            break

        y[active] = y_new
        t += h
        if err_max > 0:
            h *= min(5.0, max(0.2, 0.9 * err_max ** -0.2))
        else:
            h *= 5.0

        inside = in_domain(y[active][:, :n])
        if not inside.all():
            idx = np.flatnonzero(active)[~inside]
            ok[idx] = False
            active[idx] = False
            if not active.any():
                break

    return y[:, :n].copy(), y[:, n:].copy(), ok
