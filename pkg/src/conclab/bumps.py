"""The canonical smooth compactly supported bump and its derivative."""

import numpy as np


def mollifier(r):
    """exp(1 - 1/(1 - r^2)) for |r| < 1, zero outside; peak value 1 at 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    q = r[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - q))
    return out


def mollifier_prime(r):
    """Derivative of the mollifier; zero outside the open unit interval."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    ri = r[inside]
    out[inside] = mollifier(ri) * (-2.0 * ri / (1.0 - ri ** 2) ** 2)
    return out
