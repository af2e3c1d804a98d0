"""Fourier-side collision operators G1, G2 and a physical-space weak-form oracle.

Convention: phi(xi) = int exp(-i v.xi) dF(v), so a convolution in v becomes
(2 pi)^-3 times a convolution in xi.  With xi+- = (xi +- |xi| sigma)/2,

    G1(phi)(xi) = int b (2 pi)^-3 int Phi_hat(zeta) phi(xi- + zeta) phi(xi+ - zeta)
    G2(phi)(xi) = A phi(xi) - |b| (2 pi)^-3 int Phi_hat(zeta) phi(zeta) phi(xi - zeta)

and d phi/dt = G1 + G2 - A phi.  On the lattice the zeta sum is shifted so
that both phi factors land on nodes; a tracked atomic part of phi is handled
in closed form (its self-interaction through exact pair sums).
"""

import time
from dataclasses import dataclass, replace
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import ndimage, special

from .kernels import (KernelConfig, a_constant, angular_rule, b_eval, b_mass, phi_cutoff_eval,
                      phi_hat_table, radial_transform)
from .measures import AtomicPart, CharFunGrid, ConfigurationError, MeasureSpec, hermitian_mirror
from .metrics import toscani_distance

TWO_PI3 = (2 * np.pi) ** 3


def xi_pm(xi, sigma):
    """(xi+, xi-) = ((xi + |xi| sigma)/2, (xi - |xi| sigma)/2)."""
    xi = np.asarray(xi, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not np.allclose(np.linalg.norm(sigma, axis=-1), 1.0, atol=1e-12):
        raise ValueError("sigma must be a unit vector")
    r = np.linalg.norm(xi, axis=-1, keepdims=True)
    return 0.5 * (xi + r * sigma), 0.5 * (xi - r * sigma)


def total_rate(cfg):
    """A = sup Phi_c times int b dsigma."""
    return a_constant(cfg) * b_mass(cfg)


# interpolation order on the spline (Phi == 1) route
SPLINE_ORDER = 5


@dataclass(frozen=True)
class Quadrature:
    """Sphere and zeta quadrature parameters.

    Sphere: `n_theta` Gauss-Legendre nodes per theta panel (panels refine
    geometrically toward theta = 0), and max(n_phi, phi_density |xi|)
    trapezoid nodes in the azimuth.  `window`, `window_order` and
    `zeta_step` control the off-lattice route used by the consistency check.
    """

    n_theta: int = 4
    n_phi: int = 12
    phi_density: float = 3.0
    window: float = 8.0
    window_order: int = 4
    zeta_step: float = 1.0

    def __post_init__(self):
        if self.n_theta < 1 or self.n_phi < 1:
            raise ConfigurationError("sphere node counts must be positive")

    def refine(self):
        """One doubling of the sphere rule with a wider, higher-order zeta window."""
        return replace(self, n_theta=2 * self.n_theta, n_phi=2 * self.n_phi, phi_density=2 * self.phi_density,
                       window=self.window * 4.0 / 3.0, window_order=self.window_order + 1)

    def azimuths(self, radius=0.0):
        n = max(self.n_phi, int(np.ceil(self.phi_density * radius)))
        return (np.arange(n) + 0.5) * 2 * np.pi / n, 2 * np.pi / n

    def sphere_area(self, cfg):
        """int sin theta dtheta dphi over the hemisphere by this rule (2 pi exactly)."""
        th, wt = angular_rule(cfg, per_panel=self.n_theta)
        ph, wp = self.azimuths()
        return float((wt * np.sin(th)).sum() * wp * ph.size)


def _frame(u):
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    a = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, a)
    e1 /= np.linalg.norm(e1)
    return u, e1, np.cross(u, e1)


def sphere_rule(axis, cfg, q, radius=0.0):
    """Unit vectors sigma on the hemisphere around `axis` and weights b(cos theta) dsigma.

    Weights are normalised so they sum to int b dsigma exactly.
    """
    th, wt = angular_rule(cfg, per_panel=q.n_theta)
    ph, wp = q.azimuths(radius)
    u, e1, e2 = _frame(axis)
    bw = wt * np.sin(th) * b_eval(np.cos(th), cfg)
    bw *= b_mass(cfg) / (bw.sum() * wp * ph.size)
    ct, st = np.cos(th)[:, None, None], np.sin(th)[:, None, None]
    sig = ct * u + st * (np.cos(ph)[None, :, None] * e1 + np.sin(ph)[None, :, None] * e2)
    w = np.repeat(bw * wp, ph.size)
    return sig.reshape(-1, 3), w


def _check_cut(cfg):
    if not np.isfinite(cfg.b_cut):
        raise ConfigurationError("uncut angular kernel; use the b_n sweep for non-cutoff runs")


# -- numba kernels ----------------------------------------------------------

@nb.njit(cache=True)
def _herm(tv, td, dk, k):
    x = k / dk
    i = int(x)
    if i >= tv.size - 1:
        return 0.0
    t = x - i
    t2 = t * t
    t3 = t2 * t
    return ((2 * t3 - 3 * t2 + 1) * tv[i] + (t3 - 2 * t2 + t) * dk * td[i]
            + (-2 * t3 + 3 * t2) * tv[i + 1] + (t3 - t2) * dk * td[i + 1])


@nb.njit(cache=True)
def _gain_tables(starts, xm, xp, ws, m, h, tv, td, dk, kp, km):
    n = 2 * m + 1
    for w in range(starts.size - 1):
        for a in range(n):
            z0 = (a - m) * h
            for b in range(n):
                z1 = (b - m) * h
                for c in range(n):
                    z2 = (c - m) * h
                    sp = 0.0
                    sm = 0.0
                    for s in range(starts[w], starts[w + 1]):
                        d0 = z0 - xm[s, 0]
                        d1 = z1 - xm[s, 1]
                        d2 = z2 - xm[s, 2]
                        sp += ws[s] * _herm(tv, td, dk, np.sqrt(d0 * d0 + d1 * d1 + d2 * d2))
                        d0 = z0 - xp[s, 0]
                        d1 = z1 - xp[s, 1]
                        d2 = z2 - xp[s, 2]
                        sm += ws[s] * _herm(tv, td, dk, np.sqrt(d0 * d0 + d1 * d1 + d2 * d2))
                    kp[w, a, b, c] = sp
                    km[w, a, b, c] = sm


@nb.njit(cache=True)
def _lattice_sums(m, phir, phia, phat, kp, km, wid, perm, sgn, nz, targets, g1, loss):
    # only the listed xi nodes; the caller fills the rest by symmetry
    n = 2 * m + 1
    zz = np.empty(3, dtype=np.int64)
    for it in range(targets.size):
        flat = targets[it]
        x0 = flat // (n * n) - m
        x1 = (flat // n) % n - m
        x2 = flat % n - m
        w = wid[x0 + m, x1 + m, x2 + m]
        p0 = perm[x0 + m, x1 + m, x2 + m, 0]
        p1 = perm[x0 + m, x1 + m, x2 + m, 1]
        p2 = perm[x0 + m, x1 + m, x2 + m, 2]
        s0 = sgn[x0 + m, x1 + m, x2 + m, 0]
        s1 = sgn[x0 + m, x1 + m, x2 + m, 1]
        s2 = sgn[x0 + m, x1 + m, x2 + m, 2]
        g = 0j
        lo = 0j
        for t in range(nz.shape[0]):
            zz[0] = nz[t, 0]
            zz[1] = nz[t, 1]
            zz[2] = nz[t, 2]
            fr = phir[zz[0] + m, zz[1] + m, zz[2] + m]
            d0 = x0 - zz[0]
            d1 = x1 - zz[1]
            d2 = x2 - zz[2]
            fa = phia[d0 + 2 * m, d1 + 2 * m, d2 + 2 * m]
            f = fa
            if -m <= d0 <= m and -m <= d1 <= m and -m <= d2 <= m:
                f = fa + phir[d0 + m, d1 + m, d2 + m]
            u0 = s0 * zz[p0] + m
            u1 = s1 * zz[p1] + m
            u2 = s2 * zz[p2] + m
            g += fr * (kp[w, u0, u1, u2] * f + km[w, u0, u1, u2] * fa)
            lo += fr * phat[d0 + 2 * m, d1 + 2 * m, d2 + 2 * m] * f
        g1[flat] = g
        loss[flat] = lo


@nb.njit(cache=True)
def _window_point(xi, h, rad, tv, td, dk, sig, ws, atoms, wts):
    # gain and loss at one off-lattice xi for an atomic phi, zeta on a lattice
    r = np.sqrt(xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2)
    a = 0.5 * r
    mm = int((rad + a) / h) + 2
    g1 = 0j
    lo = 0j
    for i in range(-mm, mm + 1):
        for j in range(-mm, mm + 1):
            for k in range(-mm, mm + 1):
                y0 = i * h
                y1 = j * h
                y2 = k * h
                e0 = y0 - 0.5 * xi[0]
                e1 = y1 - 0.5 * xi[1]
                e2 = y2 - 0.5 * xi[2]
                if np.sqrt(e0 * e0 + e1 * e1 + e2 * e2) > rad + a:
                    continue
                p1 = 0j
                p2 = 0j
                for q in range(wts.size):
                    p1 += wts[q] * np.exp(-1j * (atoms[q, 0] * y0 + atoms[q, 1] * y1 + atoms[q, 2] * y2))
                    p2 += wts[q] * np.exp(-1j * (atoms[q, 0] * (xi[0] - y0) + atoms[q, 1] * (xi[1] - y1)
                                                 + atoms[q, 2] * (xi[2] - y2)))
                kw = 0.0
                for s in range(ws.size):
                    c0 = e0 + a * sig[s, 0]
                    c1 = e1 + a * sig[s, 1]
                    c2 = e2 + a * sig[s, 2]
                    kw += ws[s] * _herm(tv, td, dk, np.sqrt(c0 * c0 + c1 * c1 + c2 * c2))
                kl = _herm(tv, td, dk, np.sqrt(y0 * y0 + y1 * y1 + y2 * y2))
                g1 += kw * p1 * p2
                lo += kl * p1 * p2
    c = h ** 3 / TWO_PI3
    return g1 * c, lo * c


# -- lattice plan -----------------------------------------------------------

def _wedge_maps(m):
    """Cubic-symmetry reduction of lattice offsets.

    For each node x, a signed permutation T (u_w[k] = sgn[k] * u[perm[k]])
    maps x into the wedge 0 <= x0 <= x1 <= x2.
    """
    n = 2 * m + 1
    ax = np.arange(-m, m + 1)
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    perm = np.argsort(np.abs(pts), axis=1, kind="stable")
    sgn = np.where(np.take_along_axis(pts, perm, 1) < 0, -1, 1)
    y = np.abs(np.take_along_axis(pts, perm, 1))
    wedge, wid = np.unique(y, axis=0, return_inverse=True)
    return (wedge, wid.reshape(n, n, n).astype(np.int64), perm.reshape(n, n, n, 3).astype(np.int64),
            sgn.reshape(n, n, n, 3).astype(np.int64))


def _signed_perms():
    out = []
    for p in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        for s in np.ndindex(2, 2, 2):
            out.append((np.array(p), 1 - 2 * np.array(s)))
    return out


def _act(T, u):
    p, s = T
    return s * u[..., p]


def symmetry_group(locations, weights, tol=1e-12):
    """Signed axis permutations mapping the weighted atom set onto itself."""
    loc = np.asarray(locations, float).reshape(-1, 3)
    w = np.asarray(weights, float)
    keep = []
    for T in _signed_perms():
        img = _act(T, loc)
        ok = True
        for v, c in zip(img, w):
            d = np.linalg.norm(loc - v, axis=1)
            j = int(np.argmin(d)) if len(d) else -1
            if j < 0 or d[j] > tol or abs(w[j] - c) > tol:
                ok = False
                break
        if ok:
            keep.append(T)
    return keep


class BobylevPlan:
    """Precomputed quadrature for G1, G2 on one lattice, kernel and atom set.

    Everything that does not depend on the current phi (gain kernels per
    symmetry class of xi, Phi_hat on lattice offsets, atom pair transforms)
    is built once here.
    """

    def __init__(self, lattice, cfg, q=None, atom_locations=None):
        _check_cut(cfg)
        self.lattice = lattice
        self.cfg = cfg
        self.q = q or Quadrature()
        self.A = total_rate(cfg)
        self.bnorm = b_mass(cfg)
        loc = np.zeros((0, 3)) if atom_locations is None else np.asarray(atom_locations, float).reshape(-1, 3)
        self.locations = loc
        self.spline = cfg.cutoff == "AngularOnly"
        # symmetries of the atom locations, with the induced atom permutation
        self.group = []
        for T in symmetry_group(loc, np.ones(len(loc))) if len(loc) else _signed_perms():
            img = _act(T, loc)
            perm = [int(np.argmin(np.linalg.norm(loc - v, axis=1))) for v in img]
            self.group.append((T, np.array(perm, dtype=int)))
        self._orbit_cache = {}
        pts = lattice.points()
        self._atom_waves = np.array([np.exp(-1j * (pts @ v)) for v in loc]).reshape(len(loc), *lattice.shape)
        t0 = time.perf_counter()
        if self.spline:
            self._build_spline()
        else:
            self._build_lattice()
        self.build_seconds = time.perf_counter() - t0

    # the atoms' self-interaction: exact pair sums over the sphere
    def _build_pairs(self, fine):
        loc, pts = self.locations, self.lattice.points()
        self.pairs, waves = [], []
        for j, v in enumerate(loc):
            for k, w in enumerate(loc):
                r = np.linalg.norm(v - w)
                if r == 0.0:
                    continue
                phi = float(phi_cutoff_eval(r, self.cfg))
                if phi == 0.0:
                    continue
                sig, ws = sphere_rule(v - w, self.cfg, fine, radius=r * self.lattice.extent)
                vp = 0.5 * (v + w) + 0.5 * r * sig
                e = np.zeros(self.lattice.shape, dtype=complex)
                for c0 in range(0, len(ws), 64):
                    e += np.einsum("s,s...->...", ws[c0:c0 + 64],
                                   np.exp(-1j * np.einsum("sk,...k->s...", vp[c0:c0 + 64], pts)))
                self.pairs.append((j, k, phi))
                waves.append(e)
        self.pair_waves = np.array(waves).reshape(len(waves), *self.lattice.shape)
        self.phi_pairs = np.array([[float(phi_cutoff_eval(np.linalg.norm(v - w), self.cfg)) for w in loc]
                                   for v in loc]).reshape(len(loc), len(loc))

    def _build_lattice(self):
        lat, cfg, q = self.lattice, self.cfg, self.q
        m, h = lat.m, lat.h
        table = phi_hat_table(cfg)
        tv, td, dk = table.uniform()
        self._tv, self._td, self._dk = tv, td, dk
        wedge, self.wid, self.perm, self.sgn = _wedge_maps(m)
        starts, xm, xp, ws = [0], [], [], []
        for y in wedge:
            xi = y * h
            r = np.linalg.norm(xi)
            if r == 0.0:
                sig, w = np.array([[0.0, 0.0, 1.0]]), np.array([self.bnorm])
            else:
                sig, w = sphere_rule(xi, cfg, q, radius=0.5 * r)
            p, mi = xi_pm(xi, sig)
            xm.append(mi)
            xp.append(p)
            ws.append(w)
            starts.append(starts[-1] + len(w))
        n = lat.n
        self.kp = np.empty((len(wedge), n, n, n))
        self.km = np.empty_like(self.kp)
        _gain_tables(np.array(starts), np.concatenate(xm), np.concatenate(xp), np.concatenate(ws),
                     m, h, tv, td, dk, self.kp, self.km)
        ext = np.arange(-2 * m, 2 * m + 1) * h
        ex = np.stack(np.meshgrid(ext, ext, ext, indexing="ij"), -1)
        self.phat_ext = table(np.linalg.norm(ex, axis=-1))
        self.phat_lat = table(lat.radius())
        self._ext_waves = np.array([np.exp(-1j * (ex @ v)) for v in self.locations])
        self._build_pairs(replace(q, n_theta=max(16, 2 * q.n_theta), n_phi=64, phi_density=8.0))

    def _build_spline(self):
        lat, cfg, q = self.lattice, self.cfg, self.q
        pts = lat.points().reshape(-1, 3)
        half = pts.shape[0] // 2 + 1
        owner, plus, minus, wts = [], [], [], []
        for i in range(half):
            xi = pts[i]
            r = np.linalg.norm(xi)
            if r == 0.0:
                continue
            sig, w = sphere_rule(xi, cfg, q, radius=0.5 * r)
            p, mi = xi_pm(xi, sig)
            owner.append(np.full(len(w), i))
            plus.append(p)
            minus.append(mi)
            wts.append(w)
        self._owner = np.concatenate(owner)
        self._plus = np.concatenate(plus)
        self._minus = np.concatenate(minus)
        self._wts = np.concatenate(wts)
        self._half = half
        self.pairs, self.pair_waves = [], np.zeros((0,) + lat.shape, complex)
        self.phi_pairs = np.ones((len(self.locations),) * 2)

    # -- evaluation --------------------------------------------------------

    def _orbits(self, phir, weights):
        """Orbit representatives (lower half only) and a fill map for the
        subgroup of self.group that leaves the state invariant."""
        lat = self.lattice
        m, n = lat.m, lat.n
        ax = np.arange(-m, m + 1)
        idx = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
        scale = np.abs(phir).max()
        flat_r = phir.reshape(-1)
        members = []
        for T, ap in self.group:
            if len(weights) and np.abs(weights[ap] - weights).max() > 1e-12:
                continue
            j = _act(T, idx) + m
            img = np.ravel_multi_index(j.T, (n, n, n))
            if np.abs(flat_r[img] - flat_r).max() <= 1e-10 * scale:
                members.append(img)
        key = tuple(hash(a.tobytes()) for a in members)
        if key not in self._orbit_cache:
            rep = np.min(np.array(members), axis=0)
            c = lat.n ** 3 // 2
            targets = np.unique(rep[rep <= c])
            self._orbit_cache[key] = (targets.astype(np.int64), rep)
        return self._orbit_cache[key]

    def atom_field(self, weights):
        if len(self.locations) == 0:
            return np.zeros(self.lattice.shape, complex)
        return np.tensordot(np.asarray(weights, float), self._atom_waves, axes=1)

    def _interp(self, field, x):
        idx = (x / self.lattice.h + self.lattice.m).T
        re = ndimage.map_coordinates(field.real, idx, order=SPLINE_ORDER, mode="constant", cval=0.0, prefilter=False)
        im = ndimage.map_coordinates(field.imag, idx, order=SPLINE_ORDER, mode="constant", cval=0.0, prefilter=False)
        return re + 1j * im

    def _eval_atoms(self, weights, x):
        out = np.zeros(x.shape[0], complex)
        for v, c in zip(self.locations, weights):
            out += c * np.exp(-1j * (x @ v))
        return out

    def terms(self, phir, weights):
        """(gain, loss, rho) for phi = phi_r + atoms with the given weights.

        rho_j is the loss rate of atom j divided by |b|; the atomic part of
        the loss is sum_j c_j |b| rho_j exp(-i v_j.xi) and is included in `loss`.
        """
        phir = np.asarray(phir, complex)
        weights = np.asarray(weights, float)
        if self.spline:
            return self._terms_spline(phir, weights)
        lat = self.lattice
        m = lat.m
        scale = lat.h ** 3 / TWO_PI3
        phia_ext = (np.tensordot(weights, self._ext_waves, axes=1) if len(weights)
                    else np.zeros((4 * m + 1,) * 3, complex))
        nz = np.argwhere(phir != 0) - m
        size = phir.size
        g1 = np.zeros(size, complex)
        lo = np.zeros(size, complex)
        if len(nz):
            reps, fill = self._orbits(phir, weights)
            _lattice_sums(m, phir, phia_ext, self.phat_ext, self.kp, self.km, self.wid, self.perm, self.sgn,
                          nz.astype(np.int64), reps, g1, lo)
            g1, lo = g1[fill], lo[fill]
        gain = hermitian_mirror(g1.reshape(lat.shape) * scale)
        loss = hermitian_mirror(lo.reshape(lat.shape) * scale * self.bnorm)
        rho = np.zeros(len(weights))
        for j in range(len(weights)):
            rho[j] = (self.phi_pairs[j] @ weights
                      + scale * np.sum(self.phat_lat * np.conj(self._atom_waves[j]) * phir).real)
        for (j, k, phi), e in zip(self.pairs, self.pair_waves):
            gain = gain + weights[j] * weights[k] * phi * e
        for j in range(len(weights)):
            loss = loss + weights[j] * self.bnorm * rho[j] * self._atom_waves[j]
        return gain, loss, rho

    def _terms_spline(self, phir, weights):
        lat = self.lattice
        re = ndimage.spline_filter(phir.real, order=SPLINE_ORDER, mode="constant")
        im = ndimage.spline_filter(phir.imag, order=SPLINE_ORDER, mode="constant")
        field = re + 1j * im
        fp = self._interp(field, self._plus) + self._eval_atoms(weights, self._plus)
        fm = self._interp(field, self._minus) + self._eval_atoms(weights, self._minus)
        prod = self._wts * fp * fm
        g = (np.bincount(self._owner, prod.real, self._half)
             + 1j * np.bincount(self._owner, prod.imag, self._half))
        flat = np.zeros(phir.size, complex)
        flat[:self._half] = g
        phi = phir + self.atom_field(weights)
        mass = phi[lat.center].real
        flat = flat.reshape(lat.shape)
        flat[lat.center] = self.bnorm * mass * mass
        gain = hermitian_mirror(flat)
        loss = self.bnorm * mass * phi
        return gain, loss, np.full(len(weights), mass)

    def rhs(self, phir, weights):
        """G1 + G2 on the lattice, split into remainder field and atom-weight rates.

        Returns (F, F_r, a) with F = G1 + G2 = F_r + sum_j a_j exp(-i v_j.xi).
        """
        gain, loss, rho = self.terms(phir, weights)
        phi = phir + self.atom_field(weights)
        F = gain + self.A * phi - loss
        a = (self.A - self.bnorm * rho) * weights
        return F, F - self.atom_field(a), a


@lru_cache(maxsize=8)
def _plan_cached(lattice, cfg, q, loc_key):
    loc = np.array(loc_key).reshape(-1, 3) if loc_key else None
    return BobylevPlan(lattice, cfg, q, loc)


def plan_for(phi, cfg, q=None):
    """Memoised plan matching phi's lattice and atom locations."""
    loc = () if phi.atoms is None else tuple(map(float, phi.atoms.locations.reshape(-1)))
    return _plan_cached(phi.lattice, cfg, q or Quadrature(), loc)


def _split(phi):
    if phi.atoms is None:
        return np.asarray(phi.values), np.zeros(0)
    return np.asarray(phi.remainder()), phi.atoms.weights


def g1_apply(phi, cfg, q=None, plan=None):
    """Gain operator G1 on phi's lattice."""
    plan = plan or plan_for(phi, cfg, q)
    gain, _, _ = plan.terms(*_split(phi))
    return gain


def g2_apply(phi, cfg, q=None, plan=None):
    """G2 = A phi - loss on phi's lattice."""
    plan = plan or plan_for(phi, cfg, q)
    _, loss, _ = plan.terms(*_split(phi))
    return plan.A * np.asarray(phi.values) - loss


def collision_operator(phi, cfg, q=None, plan=None):
    """Q_hat = G1 + G2 - A phi."""
    plan = plan or plan_for(phi, cfg, q)
    gain, loss, _ = plan.terms(*_split(phi))
    return gain - loss


# -- physical-space oracle --------------------------------------------------

def _require_atoms(spec):
    if spec.kind != "DiracMixture":
        raise ConfigurationError("the weak-form oracle supports Dirac mixtures only")
    return spec.atomic_part()


def q_weak_physical(spec, psi, cfg, q=None):
    """1/2 sum_jk c_j c_k Phi(|v_j - v_k|) int b (psi'_* + psi' - psi_* - psi) dsigma."""
    _check_cut(cfg)
    q = q or Quadrature(n_theta=24, n_phi=64)
    atoms = _require_atoms(spec)
    loc, c = atoms.locations, atoms.weights
    total = 0.0
    for j, v in enumerate(loc):
        for k, w in enumerate(loc):
            r = np.linalg.norm(v - w)
            if r == 0.0:
                continue
            phi = float(phi_cutoff_eval(r, cfg))
            if phi == 0.0:
                continue
            sig, ws = sphere_rule(v - w, cfg, q)
            vp = 0.5 * (v + w) + 0.5 * r * sig
            vs = 0.5 * (v + w) - 0.5 * r * sig
            diff = psi(vs) + psi(vp) - psi(w[None, :]) - psi(v[None, :])
            total = total + 0.5 * c[j] * c[k] * phi * np.sum(ws * diff)
    return total


def plane_wave(xi):
    xi = np.asarray(xi, dtype=float)
    return lambda v: np.exp(-1j * (np.asarray(v) @ xi))


def window(k, L, order, gamma):
    """Gauss-Laguerre window exp(-x)(sum_{j<p} x^j/j! + c x^p), x = k^2/(2L^2).

    Equal to 1 - O(x^p) near 0.  For gamma in (0, 2) the constant c makes
    int (window - 1) k^{-1-gamma} dk vanish, which cancels the leading
    error from the |z|^gamma kink of Phi at the origin.
    """
    x = np.asarray(k, dtype=float) ** 2 / (2 * L * L)
    S = sum(x ** j / special.factorial(j) for j in range(order))
    c = 0.0
    a = 0.5 * gamma
    if 0 < gamma < 2:
        c = -sum(special.gamma(j - a) / special.factorial(j) for j in range(order)) / special.gamma(order - a)
    return np.exp(-x) * (S + c * x ** order)


@lru_cache(maxsize=16)
def _windowed_table(cfg, L, order, dk=0.005):
    kmax = L * (8.0 + 2.0 * order)
    k = np.arange(0.0, kmax, dk)
    v, d1, _ = radial_transform(k, cfg, derivatives=True, kmax=kmax)
    w = window(k, L, order, cfg.gamma)
    wd = np.gradient(w, k)
    tv, td = v * w, d1 * w + v * wd
    big = np.nonzero(np.abs(tv) > 1e-12 * abs(tv[0]))[0]
    return tv, td, dk, float(k[big[-1]])


def fourier_side(spec, xi, cfg, q=None):
    """(G1 + G2 - A phi)(xi) at an arbitrary xi for a Dirac mixture, phi analytic.

    The zeta integral is a lattice sum of step `q.zeta_step` against a
    windowed Phi_hat (see `window`); no interpolation is involved.
    """
    _check_cut(cfg)
    q = q or Quadrature()
    atoms = _require_atoms(spec)
    xi = np.asarray(xi, dtype=float)
    tv, td, dk, rad = _windowed_table(cfg, float(q.window), int(q.window_order))
    r = np.linalg.norm(xi)
    if r == 0.0:
        return 0j
    sig, ws = sphere_rule(xi, cfg, q)
    g1, lo = _window_point(xi, q.zeta_step, rad, tv, td, dk, sig, ws, atoms.locations, atoms.weights)
    return g1 - b_mass(cfg) * lo


@dataclass
class ConsistencyReport:
    max_discrepancy: float
    fourier: np.ndarray
    physical: np.ndarray
    xis: np.ndarray
    seconds: float

    @property
    def discrepancies(self):
        return np.abs(self.fourier - self.physical)


def sample_xis(count, radius=4.0, seed=0):
    """`count` points uniform in the ball of the given radius."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        x = rng.uniform(-radius, radius, 3)
        if np.linalg.norm(x) <= radius:
            out.append(x)
    return np.array(out)


def bobylev_consistency(spec, cfg, q=None, xis=None, oracle_q=None):
    """Max |Fourier-side Q_hat - weak-form Q with psi = exp(-i v.xi)| over a xi sample."""
    q = q or Quadrature()
    xis = sample_xis(10) if xis is None else np.asarray(xis, dtype=float).reshape(-1, 3)
    oracle_q = oracle_q or Quadrature(n_theta=24, n_phi=64)
    t0 = time.perf_counter()
    four = np.array([fourier_side(spec, x, cfg, q) for x in xis])
    phys = np.array([q_weak_physical(spec, plane_wave(x), cfg, oracle_q) for x in xis])
    dt = time.perf_counter() - t0
    return ConsistencyReport(float(np.max(np.abs(four - phys))), four, phys, xis, dt)


# -- Lipschitz estimate ------------------------------------------------------

def lipschitz_estimate(phi, cfg, alpha, q=None, plan=None, probes=2, eps=1e-2, seed=0):
    """max ||F(phi) - F(psi)||_alpha / ||phi - psi||_alpha over random psi near phi, F = G1 + G2.

    psi mixes phi with a centred Gaussian of random variance; the result
    is an empirical A + C.
    """
    plan = plan or plan_for(phi, cfg, q)
    rng = np.random.default_rng(seed)
    phir, w = _split(phi)
    F0, _, _ = plan.rhs(phir, w)
    lat = phi.lattice
    r2 = lat.radius() ** 2
    best = 0.0
    for _ in range(probes):
        var = rng.uniform(0.3, 2.0)
        g = np.exp(-0.5 * var * r2)
        psir = (1 - eps) * phir + eps * g
        F1, _, _ = plan.rhs(psir, (1 - eps) * w)
        a = CharFunGrid(lat, hermitian_mirror(F0))
        b = CharFunGrid(lat, hermitian_mirror(F1))
        p0 = CharFunGrid(lat, np.asarray(phi.values))
        p1 = CharFunGrid(lat, hermitian_mirror(psir + plan.atom_field((1 - eps) * w)))
        den = toscani_distance(p0, p1, alpha).value
        if den > 0:
            best = max(best, toscani_distance(a, b, alpha).value / den)
    return best
