"""Toscani distances, M^alpha norms and moments recovered from phi."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from ._numerics import radial_taper
from .measures import ConfigurationError

# M^alpha quadrature is tapered smoothly from TAPER_INNER * R to R
TAPER_INNER = 0.5


@dataclass
class MetricReport:
    alpha: float
    value: float
    argmax_node: tuple = None


def _check_alpha(alpha, closed_right):
    ok = 0 < alpha <= 2 if closed_right else 0 < alpha < 2
    if not ok:
        rng = "(0, 2]" if closed_right else "(0, 2)"
        raise ValueError(f"alpha must lie in {rng}, got {alpha}")


def toscani_distance(phi, psi, alpha):
    """sup over xi != 0 of |phi - psi| / |xi|^alpha."""
    _check_alpha(alpha, True)
    if phi.lattice != psi.lattice:
        raise ConfigurationError("toscani_distance needs a common lattice")
    r = phi.lattice.radius()
    q = np.abs(np.asarray(phi.values) - np.asarray(psi.values))
    with np.errstate(divide="ignore", invalid="ignore"):
        q = q / r ** alpha
    q[phi.lattice.center] = 0.0
    k = int(np.argmax(q))
    return MetricReport(alpha, float(q.reshape(-1)[k]), np.unravel_index(k, q.shape))


def _richardson(values, steps):
    # fit D(s) = E + a s^2 + b s^4 + ... through the given step sizes
    s = np.asarray(steps, dtype=float)
    v = np.vander(s ** 2, len(s), increasing=True)
    return np.linalg.solve(v, np.asarray(values, dtype=float))[0]


def _axis_samples(phi, k):
    lat = phi.lattice
    c = lat.m
    vals = np.asarray(phi.values)
    plus = np.array([vals[c + k, c, c], vals[c, c + k, c], vals[c, c, c + k]])
    minus = np.array([vals[c - k, c, c], vals[c, c - k, c], vals[c, c, c - k]])
    return plus, minus


def second_moment(phi, spec=None, levels=4):
    """-Laplacian of Re phi at 0 by Richardson-extrapolated central differences.

    With an analytic `spec` the steps are h, h/2, h/4; on a bare lattice
    they are h, 2h, 3h so every sample stays on-grid.
    """
    h = phi.lattice.h
    est, steps = [], []
    if spec is not None:
        for j in range(levels):
            s = h / 2 ** j
            e = s * np.eye(3)
            lap = (spec.evaluate(e).real + spec.evaluate(-e).real - 2.0).sum() / s ** 2
            est.append(-lap)
            steps.append(s)
    else:
        for k in range(1, min(levels, phi.lattice.m) + 1):
            p, m = _axis_samples(phi, k)
            est.append(-(p.real + m.real - 2.0).sum() / (k * h) ** 2)
            steps.append(k * h)
    return float(_richardson(est, steps))


def momentum(phi, levels=3):
    """Mean velocity from the gradient of phi at 0, i.e. -Im grad phi(0)."""
    h = phi.lattice.h
    est, steps = [], []
    for k in range(1, min(levels, phi.lattice.m) + 1):
        p, m = _axis_samples(phi, k)
        est.append(-(p.imag - m.imag) / (2 * k * h))
        steps.append(k * h)
    est = np.array(est)
    return np.array([_richardson(est[:, i], steps) for i in range(3)])


@lru_cache(maxsize=None)
def _c_alpha(alpha):
    # 2 int sin^2(z.s/2)|z|^{-3-a} dz = 4 pi int_0^inf (1 - sin r / r) r^{-1-a} dr
    # the r^2/6 start of 1 - sin r / r is integrated exactly near 0
    head = integrate.quad(lambda r: (1.0 - np.sinc(r / np.pi) - r * r / 6.0) * r ** (-1 - alpha), 0, 1,
                          limit=200)[0] + 1.0 / (6.0 * (2.0 - alpha))
    far = 1.0 / alpha - integrate.quad(lambda r: r ** (-2 - alpha), 1, np.inf, weight="sin", wvar=1.0, limit=400)[0]
    return 4 * np.pi * (head + far)


def c_alpha(alpha, sigma=None):
    """Constant in the moment identity; direction independent."""
    if not 0 < alpha < 2:
        raise ValueError(f"c_alpha needs 0 < alpha < 2, got {alpha}")
    if sigma is not None and not np.isclose(np.linalg.norm(sigma), 1.0):
        raise ValueError("sigma must be a unit vector")
    return _c_alpha(float(alpha))


@lru_cache(maxsize=None)
def _taper_integrals(alpha, r1, r2):
    chi = lambda r: radial_taper(r, r1, r2)
    inner = 4 * np.pi * integrate.quad(lambda r: chi(r) * r ** (1 - alpha), 0, r2, points=[r1], limit=200)[0]
    outer = 4 * np.pi * (integrate.quad(lambda r: (1 - chi(r)) * r ** (-1 - alpha), r1, r2, limit=200)[0]
                         + r2 ** (-alpha) / alpha)
    return inner, outer


@lru_cache(maxsize=4096)
def _tail_cos(alpha, r1, r2, speed):
    # int (1 - chi)|xi|^{-3-a} cos(v.xi) dxi for |v| = speed
    if speed == 0.0:
        return _taper_integrals(alpha, r1, r2)[1]
    chi = lambda r: radial_taper(r, r1, r2)
    near = integrate.quad(lambda r: (1 - chi(r)) * np.sinc(r * speed / np.pi) * r ** (-1 - alpha), r1, r2, limit=400)[0]
    far = integrate.quad(lambda r: r ** (-2 - alpha) / speed, r2, np.inf, weight="sin", wvar=speed, limit=400)[0]
    return 4 * np.pi * (near + far)


@dataclass
class MalphaResult:
    alpha: float
    full: float
    real: float
    tail_bound: float
    energy: float


def malpha_norm(phi, alpha):
    """Lattice quadrature of int |phi - 1| / |xi|^{3+alpha} (and of |Re phi - 1|).

    The weight is tapered smoothly to zero between R/2 and R.  Near the
    origin the quadratic part E|xi|^2/6 (E from second_moment) is removed
    and integrated exactly; the tapered-off exterior is added analytically
    assuming phi averages to zero there, except for tracked atoms whose
    exterior oscillation is known in closed form.  `tail_bound` is the
    worst case of that exterior from |phi - 1| <= 2.
    """
    _check_alpha(alpha, False)
    lat = phi.lattice
    r2 = lat.extent
    r1 = TAPER_INNER * r2
    r = lat.radius()
    energy = second_moment(phi)
    vals = np.asarray(phi.values)
    chi = radial_taper(r, r1, r2)
    inner, outer = _taper_integrals(float(alpha), r1, r2)
    quad = energy * r ** 2 / 6.0
    out = []
    for d in (np.abs(1.0 - vals), np.abs(1.0 - vals.real)):
        with np.errstate(divide="ignore", invalid="ignore"):
            g = chi * (d - quad) / r ** (3 + alpha)
        g[lat.center] = 0.0
        out.append(lat.h ** 3 * g.sum() + energy * inner / 6.0)
    tail_real = outer
    if phi.atoms is not None:
        for v, c in zip(phi.atoms.locations, phi.atoms.weights):
            tail_real -= c * _tail_cos(float(alpha), r1, r2, float(np.linalg.norm(v)))
    return MalphaResult(alpha, float(out[0] + outer), float(out[1] + tail_real), 2.0 * outer, energy)


def moment_from_charfun(phi, alpha):
    """int |v|^alpha dF through the identity int |1 - Re phi|/|xi|^{3+a} = c_a int |v|^a dF."""
    return malpha_norm(phi, alpha).real / c_alpha(alpha)


def malpha_refinement(spec, alpha, lattices, grow=2.0):
    """Real-part M^alpha values of `spec` over successively finer lattices.

    Flags divergence when a refinement grows the value by more than `grow`.
    """
    from .measures import charfun_of_spec

    vals = [malpha_norm(charfun_of_spec(spec, lat), alpha).real for lat in lattices]
    divergent = any(b > grow * a for a, b in zip(vals, vals[1:]))
    return vals, divergent

