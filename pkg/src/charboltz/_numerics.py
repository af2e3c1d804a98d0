"""Small numerical helpers shared across modules."""

import numpy as np


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, all derivatives flat at both ends."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, 1e-300, 1 - 1e-16)
    a = np.exp(-1.0 / xc)
    b = np.exp(-1.0 / (1.0 - xc))
    out = a / (a + b)
    return np.where(x <= 0, 0.0, np.where(x >= 1, 1.0, out))


def radial_taper(r, r1, r2):
    """1 inside r1, 0 outside r2, smooth in between."""
    return 1.0 - smooth_step((np.asarray(r, dtype=float) - r1) / (r2 - r1))


def trapezoid_weights(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w

