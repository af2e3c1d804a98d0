"""Povzner-type moment machinery: collision-energy geometry and convexity splittings."""

from dataclasses import dataclass

import numpy as np

from .bobylev import Quadrature
from .kernels import angular_rule, b_eval, b_scale
from .measures import CharFunGrid, ConfigurationError, Lattice, reconstruct_density
from .metrics import c_alpha, malpha_norm, second_moment


def psi_kappa(kappa):
    """Psi(x) = (1 + x)^(1 + kappa/2) with its first two derivatives."""
    p = 1.0 + 0.5 * kappa

    def f(x, d=0):
        x = np.asarray(x, dtype=float)
        if d == 0:
            return (1.0 + x) ** p
        if d == 1:
            return p * (1.0 + x) ** (p - 1.0)
        return p * (p - 1.0) * (1.0 + x) ** (p - 2.0)

    return f


def psi_log(x, d=0):
    """Psi(x) = x rho(x) with the concave rho(x) = log(e + x)."""
    x = np.asarray(x, dtype=float)
    if d == 0:
        return x * np.log(np.e + x)
    if d == 1:
        return np.log(np.e + x) + x / (np.e + x)
    return 1.0 / (np.e + x) + np.e / (np.e + x) ** 2


def rho_log(x, d=0):
    x = np.asarray(x, dtype=float)
    return np.log(np.e + x) if d == 0 else 1.0 / (np.e + x)


@dataclass
class PovznerSample:
    v: np.ndarray
    v_star: np.ndarray
    theta: float
    Y: float
    Y_pi: float
    Z: float
    kappa: float = 0.0

    @classmethod
    def build(cls, v, v_star, theta, kappa=0.0):
        Y, Yp, Z = yz_decompose(v, v_star, theta)
        return cls(np.asarray(v, float), np.asarray(v_star, float), float(theta), Y, Yp, Z, kappa)

    def z_bound(self):
        """|v - v*| |v*| sin(theta), which dominates |Z|."""
        return float(np.linalg.norm(self.v - self.v_star) * np.linalg.norm(self.v_star) * np.sin(self.theta))


def collision_frame(v, v_star):
    """Orthonormal (k, h, i) with k along v - v*, i along v x v*.

    For parallel velocities any i perpendicular to k is used; Z vanishes
    there so the choice does not matter.
    """
    v, w = np.asarray(v, float), np.asarray(v_star, float)
    u = v - w
    k = u / np.linalg.norm(u)
    c = np.cross(v, w)
    if np.linalg.norm(c) <= 1e-14 * max(np.linalg.norm(v) * np.linalg.norm(w), 1e-300):
        a = np.eye(3)[int(np.argmin(np.abs(k)))]
        c = np.cross(k, a)
    i = c / np.linalg.norm(c)
    return k, np.cross(i, k), i


def yz_decompose(v, v_star, theta):
    """(Y(theta), Y(pi - theta), Z(theta)) with |v'|^2 = Y + Z cos(phi)."""
    v, w = np.asarray(v, float), np.asarray(v_star, float)
    c2, s2 = np.cos(0.5 * theta) ** 2, np.sin(0.5 * theta) ** 2
    a, b = v @ v, w @ w
    z = np.linalg.norm(np.cross(v, w)) * np.sin(theta)
    return a * c2 + b * s2, b * c2 + a * s2, z


def post_velocities(v, v_star, theta, phi):
    """v' and v*' for sigma = k cos(theta) + sin(theta)(h cos(phi) + i sin(phi))."""
    v, w = np.asarray(v, float), np.asarray(v_star, float)
    k, h, i = collision_frame(v, w)
    sigma = k * np.cos(theta) + np.sin(theta) * (h * np.cos(phi) + i * np.sin(phi))
    mid, r = 0.5 * (v + w), 0.5 * np.linalg.norm(v - w)
    return mid + r * sigma, mid - r * sigma


def _phi_rule(n):
    # midpoints of a full period folded onto [0, pi]; spectrally accurate here
    phi = (np.arange(n) + 0.5) * np.pi / n
    return phi, np.full(n, np.pi / n)


def _theta_rule(k, q):
    th, wt = angular_rule(k, per_panel=q.n_theta)
    return th, wt * b_scale(k) * b_eval(np.cos(th), k) * np.sin(th)


def kn_split(v, v_star, k, kappa, q=Quadrature(n_theta=16, n_phi=32), psi=None):
    """(K_n, H_n, G_n) with K_n = G_n - H_n.

    K_n integrates the Psi-differences directly over (theta, phi); H_n is the
    theta-only convexity deficit. `psi` overrides Psi_kappa.
    """
    v, w = np.asarray(v, float), np.asarray(v_star, float)
    psi = psi or psi_kappa(kappa)
    if np.allclose(v, w):
        return 0.0, 0.0, 0.0
    th, bw = _theta_rule(k, q)
    ph, pw = _phi_rule(q.n_phi)
    a, b = v @ v, w @ w
    Y, Yp, Z = yz_decompose(v, w, th)
    cp = np.cos(ph)
    vp = Y[:, None] + Z[:, None] * cp
    vs = Yp[:, None] - Z[:, None] * cp
    inner = (psi(vp) + psi(vs) - psi(a) - psi(b)) @ pw
    K = 2.0 * float(bw @ inner)
    c2, s2 = np.cos(0.5 * th) ** 2, np.sin(0.5 * th) ** 2
    deficit = (psi(Y) - c2 * psi(a) - s2 * psi(b)) + (psi(Yp) - c2 * psi(b) - s2 * psi(a))
    H = -2.0 * np.pi * float(bw @ deficit)
    return K, H, K + H


def phi_average_excess(Y, Z, psi, n=64):
    """(1/pi) int_0^pi Psi(Y + Z cos phi) dphi - Psi(Y)."""
    ph, pw = _phi_rule(n)
    return float(psi(Y + Z * np.cos(ph)) @ pw / np.pi - psi(Y))


def phi_average_remainder(Y, Z, psi, n=64):
    """Twice-integrated-by-parts form of phi_average_excess.

    (Z^2/pi) int_0^{pi/2} (sin phi - phi cos phi) sin phi
    [Psi''(Y + Z cos phi) + Psi''(Y - Z cos phi)] dphi.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    ph, pw = 0.25 * np.pi * (x + 1.0), 0.25 * np.pi * w
    c = np.cos(ph)
    g = (np.sin(ph) - ph * c) * np.sin(ph) * (psi(Y + Z * c, 2) + psi(Y - Z * c, 2))
    return float(Z * Z * (g @ pw) / np.pi)


def concavity_bound(Y, Z, rho=rho_log, n=64):
    """(lhs, rhs) of int_0^pi Psi(Y + Z cos phi) dphi <= pi Psi(Y) + (pi/2) Z^2 rho'(Y).

    Psi(x) = x rho(x); requires |Z| <= Y.
    """
    ph, pw = _phi_rule(n)
    x = Y + Z * np.cos(ph)
    lhs = float((x * rho(x)) @ pw)
    rhs = float(np.pi * Y * rho(Y) + 0.5 * np.pi * Z * Z * rho(Y, 1))
    return lhs, rhs


@dataclass
class AngularWindow:
    theta1: float
    theta2: float
    c0: float


def angular_window(k, theta1=np.pi / 8, theta2=3 * np.pi / 8, n=257):
    """c0 = min of b_n sin(theta) over [theta1, theta2], measured from the kernel."""
    th = np.linspace(theta1, theta2, n)
    c0 = float((b_scale(k) * b_eval(np.cos(th), k) * np.sin(th)).min())
    if c0 <= 0:
        raise ConfigurationError("b_n sin(theta) vanishes inside the window")
    return AngularWindow(theta1, theta2, c0)


def hn_intermediate(v, v_star, kappa, win, psi=None):
    """2 pi c0 (theta2 - theta1)[Psi(a) + Psi(b) - Psi(Y(theta1)) - Psi(Y(pi - theta1))]."""
    psi = psi or psi_kappa(kappa)
    v, w = np.asarray(v, float), np.asarray(v_star, float)
    Y, Yp, _ = yz_decompose(v, w, win.theta1)
    return 2 * np.pi * win.c0 * (win.theta2 - win.theta1) * float(
        psi(v @ v) + psi(w @ w) - psi(Y) - psi(Yp))


def hn_rhs(v, v_star, kappa):
    """<v>^{2+k} 1{<v>/2 >= <v*>} + <v*>^{2+k} 1{<v*>/2 >= <v>}."""
    a = np.sqrt(1.0 + np.dot(v, v))
    b = np.sqrt(1.0 + np.dot(v_star, v_star))
    return float(a ** (2 + kappa) * (a / 2 >= b) + b ** (2 + kappa) * (b / 2 >= a))


def calibrate_c2(k, kappa, batch, win=None):
    """Largest C2 with hn_intermediate >= C2 * hn_rhs over a reference batch."""
    win = win or angular_window(k)
    ratios = [hn_intermediate(v, w, kappa, win) / r for v, w in batch
              if (r := hn_rhs(v, w, kappa)) > 0]
    if not ratios:
        raise ConfigurationError("reference batch has no separated pair")
    return float(min(ratios))


@dataclass
class HnCheck:
    passed: bool
    H: float
    intermediate: float
    bound: float


def hn_lower_bound_check(v, v_star, k, kappa, c2, q=Quadrature(n_theta=16, n_phi=32), win=None):
    """H_n >= intermediate bound >= C2 (<v>^{2+k} 1{..} + <v*>^{2+k} 1{..})."""
    win = win or angular_window(k)
    _, H, _ = kn_split(v, v_star, k, kappa, q)
    mid = hn_intermediate(v, v_star, kappa, win)
    bound = c2 * hn_rhs(v, v_star, kappa)
    slack = 1e-12 * max(abs(H), 1.0)
    return HnCheck(bool(H >= mid - slack and mid >= bound - slack), H, mid, bound)


def g_ratio(v, v_star, k, kappa, q=Quadrature(n_theta=16, n_phi=32)):
    """G_n / (|v|^2 |v*|^2)."""
    den = float(np.dot(v, v) * np.dot(v_star, v_star))
    if den == 0:
        return 0.0
    return kn_split(v, v_star, k, kappa, q)[2] / den


# moments along a trajectory

@dataclass
class MomentSeries:
    order: float
    times: np.ndarray
    values: np.ndarray
    errors: np.ndarray


def _split_snapshot(phi):
    if phi.atoms is None or len(phi.atoms.weights) == 0:
        return np.zeros((0, 3)), np.zeros(0), np.asarray(phi.values)
    return phi.atoms.locations, phi.atoms.weights, phi.remainder()


def _fractional(lat, vals, mass, order):
    if mass <= 1e-14:
        return 0.0
    return mass * malpha_norm(CharFunGrid(lat, vals / mass), order).real / c_alpha(order)


def _energy_weighted(lat, vals):
    # |v|^2 dF_r reconstructed on the v-lattice and transformed back
    d = reconstruct_density(CharFunGrid(lat, vals))
    ax = d.axis
    v2 = ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    return np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(d.values * v2))) * d.dv ** 3


def _remainder_moment(lat, rem, order):
    mass = float(rem[lat.center].real)
    if mass <= 1e-14:
        return 0.0
    if order == 2:
        return mass * second_moment(CharFunGrid(lat, rem / mass))
    if order < 2:
        return _fractional(lat, rem, mass, order)
    g = _energy_weighted(lat, rem)
    return _fractional(lat, g, float(g[lat.center].real), order - 2)


def _coarse(lat, rem):
    if lat.m % 2:
        return None
    return Lattice(lat.extent, lat.m + 1), rem[::2, ::2, ::2]


def moment_value(phi, order):
    """(int |v|^order dF, error bar) for one snapshot, 0 < order < 4.

    Atoms contribute exactly. The error bar is the change of the remainder
    part when the lattice step is doubled (zero if it cannot be).
    """
    if not 0 < order < 4:
        raise ConfigurationError(f"moment order {order} unsupported (grid reconstruction dominates at >= 4)")
    lat = phi.lattice
    loc, w, rem = _split_snapshot(phi)
    atoms = float(np.sum(w * np.linalg.norm(loc, axis=1) ** order)) if len(w) else 0.0
    val = _remainder_moment(lat, rem, order)
    coarse = _coarse(lat, rem)
    err = abs(val - _remainder_moment(*coarse, order)) if coarse else 0.0
    return atoms + val, err


def moment_trajectory(traj, order):
    """Per-snapshot moment of order `order` with quadrature error bars."""
    out = [moment_value(s, order) for s in traj.snapshots]
    return MomentSeries(float(order), np.array([s.time for s in traj.snapshots]),
                        np.array([o[0] for o in out]), np.array([o[1] for o in out]))
