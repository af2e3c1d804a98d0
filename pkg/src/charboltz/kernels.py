"""Cross sections B = Phi * b, their cutoffs, and the radial transform of Phi."""

import struct
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, optimize, special
from scipy.interpolate import CubicHermiteSpline

from .measures import TABLE_MAGIC, FORMAT_VERSION, ConfigurationError, ValidationError

CUTOFFS = ("AngularOnly", "HardKinetic", "SoftKinetic")


class KernelBuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Kinetic exponent gamma, angular singularity s and strength K, plus cutoffs.

    `n` is the kinetic index for HardKinetic and the angular index for
    AngularOnly; `r` is the soft annulus parameter.  `b_cut` is the level
    of b_n = min(b, b_cut) (defaults to n).  `b_scale` multiplies b_n; None
    means "normalise so that int b_n dsigma = 1".
    """

    gamma: float = 1.0
    s: float = 0.25
    K: float = 1.0
    cutoff: str = "HardKinetic"
    n: int = 1
    r: float = 2.0
    b_cut: float = None
    b_scale: float = None
    soft_order: int = 4

    def __post_init__(self):
        if self.cutoff not in CUTOFFS:
            raise ConfigurationError(f"cutoff must be one of {CUTOFFS}, got {self.cutoff!r}")
        if not -2 <= self.gamma <= 2:
            raise ConfigurationError(f"gamma must lie in [-2, 2], got {self.gamma}")
        if not 0 < self.s < 1:
            raise ConfigurationError(f"s must lie in (0, 1), got {self.s}")
        if not self.K > 0:
            raise ConfigurationError("K must be positive")
        if self.gamma > 0 and self.cutoff != "HardKinetic":
            raise ConfigurationError("gamma > 0 pairs with the HardKinetic cutoff")
        if self.gamma < 0 and self.cutoff != "SoftKinetic":
            raise ConfigurationError("gamma < 0 pairs with the SoftKinetic cutoff")
        if self.gamma == 0 and self.cutoff != "AngularOnly":
            raise ConfigurationError("gamma = 0 uses the AngularOnly cutoff")
        if self.cutoff == "SoftKinetic" and self.r < 2:
            raise ConfigurationError("SoftKinetic needs r >= 2")
        if self.n < 1:
            raise ConfigurationError("cutoff index n must be >= 1")
        if self.b_cut is None:
            if self.cutoff == "SoftKinetic":
                raise ConfigurationError("SoftKinetic needs an explicit angular cutoff b_cut")
            object.__setattr__(self, "b_cut", float(self.n))
        if not self.b_cut > 0:
            raise ConfigurationError("b_cut must be positive")

    @property
    def kinetic_support(self):
        """Radius beyond which Phi vanishes."""
        if self.cutoff == "HardKinetic":
            return 2.0 * self.n
        if self.cutoff == "SoftKinetic":
            return 2.0 * self.r
        return np.inf

    def with_scale(self, scale):
        return replace(self, b_scale=float(scale))


def bump(r):
    """1 on [0, 1], exp(1 - 1/(1 - (r-1)^2)) on (1, 2), 0 beyond."""
    r = np.asarray(r, dtype=float)
    x = np.clip(r - 1.0, 0.0, 1.0 - 1e-16)
    inner = np.exp(1.0 - 1.0 / (1.0 - x * x))
    return np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, inner))


def soft_window(z, r):
    """psi_r: 0 below 1/(2r), 1 on [1/r, r], 0 above 2r."""
    z = np.asarray(z, dtype=float)
    return (1.0 - bump(2.0 * r * z)) * bump(z / r)


def phi_cutoff_eval(z, cfg):
    """Kinetic factor Phi_c(|z|)."""
    z = np.abs(np.asarray(z, dtype=float))
    g = cfg.gamma
    if cfg.cutoff == "AngularOnly":
        return np.ones_like(z)
    if cfg.cutoff == "HardKinetic":
        win = bump(z / cfg.n)
    else:
        win = soft_window(z, cfg.r)
    # the power is only formed where the window is live (z**g overflows near 0 for g < 0)
    live = (z > 0) & (win > 0)
    pw = np.zeros_like(z)
    np.power(z, g, out=pw, where=live)
    return pw * win


def b_raw(theta, cfg):
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        return cfg.K * theta ** (-2.0 - 2.0 * cfg.s) * np.cos(theta / 2.0)


def b_eval(cos_theta, cfg, cut=True):
    """b(cos theta) = K theta^(-2-2s) cos(theta/2) on (0, pi/2], cut at b_cut."""
    c = np.asarray(cos_theta, dtype=float)
    if np.any(c < -1e-15) or np.any(c > 1 + 1e-15):
        raise ValueError("theta outside [0, pi/2]; symmetrize first")
    b = b_raw(np.arccos(np.clip(c, 0.0, 1.0)), cfg)
    return np.minimum(b, cfg.b_cut) if cut else b


def theta_cut(cfg):
    """Angle below which b saturates at b_cut (pi/2 if it never does)."""
    if b_raw(np.pi / 2, cfg) >= cfg.b_cut:
        return np.pi / 2
    return optimize.brentq(lambda t: b_raw(t, cfg) - cfg.b_cut, 1e-14, np.pi / 2, xtol=1e-15, rtol=1e-15)


def angular_rule(cfg, per_panel=16, ratio=2.0):
    """Gauss-Legendre nodes on [0, pi/2] for integrands carrying b_n(theta).

    Panels break at the saturation angle and grow geometrically from there,
    which resolves the theta^(-2-2s) profile. Weights are plain d theta weights.
    """
    tc = theta_cut(cfg)
    edges = [0.0]
    if tc < np.pi / 2:
        # the flat part is smooth; split it once
        edges += [0.5 * tc, tc]
        e = tc
        while e * ratio < np.pi / 2:
            e *= ratio
            edges.append(e)
    edges.append(np.pi / 2)
    x, w = leggauss(per_panel)
    th, wt = [], []
    for a, c in zip(edges[:-1], edges[1:]):
        th.append(0.5 * (c - a) * x + 0.5 * (c + a))
        wt.append(0.5 * (c - a) * w)
    return np.concatenate(th), np.concatenate(wt)


@lru_cache(maxsize=256)
def _b_mass(cfg_key):
    cfg = KernelConfig(*cfg_key)
    tc = theta_cut(cfg)
    flat = 2 * np.pi * cfg.b_cut * (1.0 - np.cos(tc))
    tail = 2 * np.pi * integrate.quad(lambda t: b_raw(t, cfg) * np.sin(t), tc, np.pi / 2,
                                      epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return flat + tail


def _key(cfg):
    return (cfg.gamma, cfg.s, cfg.K, cfg.cutoff, cfg.n, cfg.r, cfg.b_cut, None, cfg.soft_order)


def b_mass_raw(cfg):
    """int min(b, b_cut) dsigma over the hemisphere, before scaling."""
    return _b_mass(_key(cfg))


def b_scale(cfg):
    return cfg.b_scale if cfg.b_scale is not None else 1.0 / b_mass_raw(cfg)


def b_mass(cfg):
    """int b_used dsigma with b_used = b_scale * b_n (1 when normalised)."""
    if cfg.b_scale is None:
        return 1.0
    return cfg.b_scale * b_mass_raw(cfg)


def effective_K(cfg):
    """K after the normalising rescale."""
    return cfg.K * b_scale(cfg)


def b_integrability_report(cfg, eps, depths=range(2, 10)):
    """int_0^{pi/2} b sin^{3-2 eps} theta d theta, or "divergent".

    The integral is cut at theta = 10^-k for increasing k; it is divergent
    when the increments stop shrinking geometrically.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    f = lambda t: b_raw(t, cfg) * np.sin(t) ** (3 - 2 * eps)
    vals = []
    prev = np.pi / 2
    acc = 0.0
    for k in depths:
        lo = 10.0 ** (-k)
        acc += integrate.quad(f, lo, prev, limit=200, epsrel=1e-12)[0]
        prev = lo
        vals.append(acc)
    inc = np.diff(vals)
    if inc[-1] > 0.9 * inc[-2]:
        return "divergent"
    # geometric tail below the last cut
    q = inc[-1] / inc[-2]
    return float(vals[-1] + inc[-1] * q / (1 - q))


def _sup_on(f, a, b, n_scan=257):
    # golden-section refinement of the best scan point on a smooth piece
    x = np.linspace(a, b, n_scan)
    y = f(x)
    i = int(np.argmax(y))
    lo, hi = x[max(i - 1, 0)], x[min(i + 1, n_scan - 1)]
    if hi <= lo:
        return float(y[i])
    res = optimize.minimize_scalar(lambda t: -f(t), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-13})
    return float(max(y.max(), -res.fun, f(a), f(b)))


def a_constant(cfg):
    """A = sup_z Phi_c(|z|)."""
    if cfg.cutoff == "AngularOnly":
        return 1.0
    g = cfg.gamma
    if cfg.cutoff == "HardKinetic":
        # Phi_n(z) = n^g Phi_1(z/n), so A(n) = n^g A(1)
        unit = replace(cfg, n=1, b_cut=cfg.b_cut)
        f = lambda z: phi_cutoff_eval(z, unit)
        a1 = max(_sup_on(f, 0.0, 1.0), _sup_on(f, 1.0, 2.0))
        return float(cfg.n ** g * a1)
    r = cfg.r
    f = lambda z: phi_cutoff_eval(z, cfg)
    pieces = [(0.5 / r, 1.0 / r), (1.0 / r, r), (r, 2 * r)]
    return max(_sup_on(f, a, b) for a, b in pieces)


def c_gamma_s(gamma, s):
    """Moment threshold for infinite-energy soft-potential data."""
    if gamma >= 0 or gamma < -2:
        raise ValueError("c_gamma_s is defined for -2 <= gamma < 0")
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if s < 0.5:
        return max(gamma / (2 * s) + 1.0, 0.0)
    if gamma + 2 * s < 1:
        return max(gamma + 2 * s, 0.0)
    return gamma / (2 * s - 1) + 2.0


def _radial_nodes(cfg, kmax, per_panel=24, span=6.0):
    # composite Gauss-Legendre on the support of Phi, panel length ~ span/kmax
    if cfg.cutoff == "HardKinetic":
        breaks = [0.0, float(cfg.n), 2.0 * cfg.n]
    else:
        r = cfg.r
        breaks = [0.5 / r, 1.0 / r, r, 2.0 * r]
    x, w = leggauss(per_panel)
    rr, ww = [], []
    hmax = span / max(kmax, 1.0)
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = max(2, int(np.ceil((b - a) / hmax)))
        e = np.linspace(a, b, m + 1)
        if cfg.cutoff == "HardKinetic" and a == 0.0 and cfg.gamma % 1 != 0:
            # grade toward r = 0 where r^gamma is not smooth
            e = np.concatenate([a + (e[1] - a) * 2.0 ** -np.arange(30, 0, -1), e[1:]])
            e = np.concatenate([[a], e])
        for lo, hi in zip(e[:-1], e[1:]):
            rr.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            ww.append(0.5 * (hi - lo) * w)
    return np.concatenate(rr), np.concatenate(ww)


def radial_transform(k, cfg, derivatives=False, kmax=None):
    """Phi_hat(k) = 4 pi int r^2 Phi(r) j0(k r) dr (and two k-derivatives)."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    r, w = _radial_nodes(cfg, kmax if kmax is not None else max(k.max(), 1.0))
    f = 4 * np.pi * w * r ** 2 * phi_cutoff_eval(r, cfg)
    out = [np.empty_like(k) for _ in range(3 if derivatives else 1)]
    for i0 in range(0, k.size, 512):
        x = k[i0:i0 + 512, None] * r[None, :]
        out[0][i0:i0 + 512] = special.spherical_jn(0, x) @ f
        if derivatives:
            out[1][i0:i0 + 512] = (-special.spherical_jn(1, x) * r) @ f
            out[2][i0:i0 + 512] = (-special.spherical_jn(1, x, derivative=True) * r * r) @ f
    return out if derivatives else out[0]


def radial_transform_adaptive(k, cfg):
    """Same transform by adaptive oscillatory quadrature (used as a check)."""
    if cfg.cutoff == "HardKinetic":
        breaks = [0.0, float(cfg.n), 2.0 * cfg.n]
    else:
        breaks = [0.5 / cfg.r, 1.0 / cfg.r, cfg.r, 2.0 * cfg.r]
    f = lambda r: r * phi_cutoff_eval(r, cfg)
    if k == 0:
        return 4 * np.pi * sum(integrate.quad(lambda r: r * f(r), a, b, limit=200, epsabs=1e-14)[0]
                               for a, b in zip(breaks[:-1], breaks[1:]))
    tot = sum(integrate.quad(f, a, b, weight="sin", wvar=k, limit=400, epsabs=1e-15)[0]
              for a, b in zip(breaks[:-1], breaks[1:]))
    return 4 * np.pi * tot / k


@dataclass
class PhiHatTable:
    """Radial table of Phi_hat and two derivatives.

    A uniform segment [0, k_split] serves fast lookups; a log-spaced segment
    continues to k_max for the decay contract.  Interpolation is cubic Hermite.
    """

    k: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    n_uniform: int
    dk: float
    decay_exponent: float
    decay_constant: float
    interp_error: float

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.k, self.values, self.d1, extrapolate=False)

    def __call__(self, k):
        k = np.abs(np.asarray(k, dtype=float))
        out = self._spline(np.minimum(k, self.k[-1]))
        return np.where(k > self.k[-1], 0.0, out)

    @property
    def k_split(self):
        return self.k[self.n_uniform - 1]

    def uniform(self):
        return self.values[:self.n_uniform], self.d1[:self.n_uniform], self.dk

    def decay_ratio(self):
        p = self.decay_exponent
        return np.abs(self.values) * (1.0 + self.k ** 2) ** (p / 2)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(TABLE_MAGIC + struct.pack("<II", FORMAT_VERSION, 0))
            fh.write(struct.pack("<ddddddd", self.k.size, self.n_uniform, self.dk, self.decay_exponent,
                                 self.decay_constant, self.interp_error, 0.0))
            for a in (self.k, self.values, self.d1, self.d2):
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            head = fh.read(16)
            if head[:8] != TABLE_MAGIC:
                raise ValidationError(f"{path}: not a Phi_hat table")
            size, nu, dk, p, c, err, _ = struct.unpack("<ddddddd", fh.read(56))
            size = int(size)
            arr = np.frombuffer(fh.read(), dtype="<f8").reshape(4, size)
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy(), arr[3].copy(), int(nu), dk, p, c, err)


def decay_exponent(cfg):
    """Contract exponent p in |Phi_hat| <= C <k>^-p.

    The pinned bump is only C^1 where it leaves its plateau, which caps the
    decay of any window built from it at k^-4.
    """
    if cfg.cutoff == "HardKinetic":
        return min(3.0 + cfg.gamma, 4.0)
    return min(2.0 * cfg.soft_order, 4.0)


def phi_hat_build(cfg, k_split=48.0, k_max=200.0, points_per_period=48, n_log=1200, probes=24):
    """Tabulate Phi_hat_c and check its decay contract.

    Raises KernelBuildError when the interpolant misses direct adaptive
    quadrature by more than 1e-6 of Phi_hat(0) at off-node probes, or when
    |Phi_hat| <k>^p in the far half of the table exceeds twice its maximum
    over the near half.
    """
    if cfg.cutoff == "AngularOnly":
        raise KernelBuildError("Phi = 1 has a distributional transform; no table")
    period = 2 * np.pi / cfg.kinetic_support
    dk = period / points_per_period
    nu = int(np.ceil(k_split / dk)) + 1
    ku = np.arange(nu) * dk
    kl = ku[-1] * np.exp(np.linspace(0, np.log(k_max / ku[-1]), n_log + 1)[1:])
    k = np.concatenate([ku, kl])
    v, d1, d2 = radial_transform(k, cfg, derivatives=True, kmax=k_max)
    p = decay_exponent(cfg)
    table = PhiHatTable(k, v, d1, d2, nu, dk, p, 0.0, 0.0)

    # off-node probes against adaptive quadrature
    rng = np.random.default_rng(12345)
    idx = rng.integers(0, k.size - 1, probes)
    kp = k[idx] + rng.uniform(0.2, 0.8, probes) * (k[idx + 1] - k[idx])
    direct = np.array([radial_transform_adaptive(x, cfg) for x in kp])
    err = float(np.max(np.abs(table(kp) - direct)) / abs(v[0]))
    table.interp_error = err
    if err > 1e-6:
        raise KernelBuildError(f"Phi_hat interpolation error {err:.2e} exceeds 1e-6 relative")

    ratio = table.decay_ratio()
    table.decay_constant = float(ratio.max())
    half = k > 0.5 * k[-1]
    if ratio[half].max() > 2.0 * ratio[~half].max():
        raise KernelBuildError("Phi_hat decay contract violated; radial quadrature unresolved")
    return table


@lru_cache(maxsize=32)
def _cached_table(cfg_key, k_split):
    return phi_hat_build(KernelConfig(*cfg_key), k_split=k_split)


def phi_hat_table(cfg, k_split=48.0):
    """Memoised phi_hat_build (the table does not depend on b)."""
    key = (cfg.gamma, cfg.s, cfg.K, cfg.cutoff, cfg.n, cfg.r, 1.0, None, cfg.soft_order)
    return _cached_table(key, float(k_split))
