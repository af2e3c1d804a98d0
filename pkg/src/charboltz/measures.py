"""Probability measures, sampled characteristic functions and snapshot IO.

Fourier convention: phi(xi) = int exp(-i v.xi) dF(v), inverse carries (2 pi)^-3.
"""

import struct
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class InterpolationDisallowed(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    """Cartesian xi-lattice, symmetric about 0, N (odd) points per axis."""

    extent: float = 8.0
    n: int = 33

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3 or self.n % 2 == 0:
            raise ConfigurationError(f"lattice needs odd N >= 3 so xi=0 is a node, got {self.n}")
        if not self.extent > 0:
            raise ConfigurationError("lattice extent must be positive")

    @property
    def h(self):
        return 2.0 * self.extent / (self.n - 1)

    @property
    def m(self):
        # nodes are h*i with i in [-m, m]
        return (self.n - 1) // 2

    @property
    def axis(self):
        return self.h * np.arange(-self.m, self.m + 1)

    @property
    def shape(self):
        return (self.n,) * 3

    @property
    def center(self):
        return (self.m,) * 3

    def points(self):
        a = self.axis
        return np.stack(np.meshgrid(a, a, a, indexing="ij"), axis=-1)

    def radius(self):
        return np.linalg.norm(self.points(), axis=-1)


def hermitian_mirror(values):
    """Overwrite the upper half (row-major) with conjugates of the lower half.

    On a symmetric lattice the node -xi has the reversed flat index, so this
    makes phi(-xi) = conj(phi(xi)) hold bit for bit.
    """
    v = np.array(values, dtype=complex, copy=True)
    flat = v.reshape(-1)
    c = flat.size // 2
    flat[c + 1:] = np.conj(flat[:c][::-1])
    flat[c] = flat[c].real
    return v


@dataclass(frozen=True)
class AtomicPart:
    """Explicitly tracked Dirac component sum_j c_j exp(-i v_j.xi)."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(loc) != len(w):
            raise ValidationError("atom locations and weights differ in length")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @property
    def mass(self):
        return float(self.weights.sum())

    def evaluate(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1], dtype=complex)
        for v, c in zip(self.locations, self.weights):
            out += c * np.exp(-1j * (xi @ v))
        return out

    def with_weights(self, w):
        return AtomicPart(self.locations, np.asarray(w, dtype=float))


@dataclass(frozen=True)
class CharFunGrid:
    lattice: Lattice
    values: np.ndarray
    time: float = 0.0
    # tracked singular part, if any; values always hold the full phi
    atoms: AtomicPart = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.lattice.shape:
            raise ConfigurationError(f"values shape {v.shape} does not match lattice {self.lattice.shape}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def at_origin(self):
        return self.values[self.lattice.center]

    def violations(self, tol_pd=0.0):
        """Invariant violations as a list of strings (empty if all hold)."""
        out = []
        if self.at_origin() != 1.0:
            out.append(f"phi(0) = {self.at_origin()!r} != 1")
        mx = float(np.abs(self.values).max())
        if mx > 1.0 + tol_pd:
            out.append(f"max|phi| = {mx:.3e} exceeds 1 + {tol_pd:g}")
        flat = self.values.reshape(-1)
        if not np.array_equal(flat, np.conj(flat[::-1])):
            out.append("Hermitian symmetry broken")
        return out

    def remainder(self):
        """phi minus its tracked atomic part."""
        if self.atoms is None or len(self.atoms.weights) == 0:
            return np.asarray(self.values)
        return self.values - self.atoms.evaluate(self.lattice.points())


@dataclass(frozen=True)
class MeasureSpec:
    """Dirac or Gaussian mixture with closed-form characteristic function.

    Dirac atoms are (location, weight); Gaussian components are
    (mean, variance, weight) with isotropic per-component variance.
    """

    kind: str
    atoms: tuple = ()
    components: tuple = ()
    centered_required: bool = False

    def __post_init__(self):
        if self.kind not in ("DiracMixture", "GaussianMixture"):
            raise ValidationError(f"unknown measure kind {self.kind!r}")
        if self.kind == "DiracMixture":
            items = tuple((tuple(float(x) for x in loc), float(w)) for loc, w in self.atoms)
            object.__setattr__(self, "atoms", items)
            w = np.array([a[1] for a in items])
        else:
            items = tuple((tuple(float(x) for x in m), float(var), float(w)) for m, var, w in self.components)
            object.__setattr__(self, "components", items)
            w = np.array([c[2] for c in items])
            if any(c[1] <= 0 for c in items):
                raise ValidationError("Gaussian variances must be positive")
        if w.size == 0:
            raise ValidationError("empty mixture")
        if np.any(w < 0):
            raise ValidationError("negative mixture weight")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        if any(len(p[0]) != 3 for p in (items)):
            raise ValidationError("locations and means must be 3-vectors")
        if self.centered_required and np.linalg.norm(self.mean()) > 1e-12:
            raise ValidationError("measure with alpha > 1 moments must have zero mean; call centered()")

    @classmethod
    def dirac(cls, locations, weights=None, **kw):
        loc = np.atleast_2d(np.asarray(locations, dtype=float))
        if weights is None:
            weights = np.full(len(loc), 1.0 / len(loc))
        return cls("DiracMixture", atoms=tuple(zip(map(tuple, loc), weights)), **kw)

    @classmethod
    def gaussian(cls, means, variances, weights=None, **kw):
        m = np.atleast_2d(np.asarray(means, dtype=float))
        var = np.broadcast_to(np.asarray(variances, dtype=float), (len(m),))
        if weights is None:
            weights = np.full(len(m), 1.0 / len(m))
        return cls("GaussianMixture", components=tuple(zip(map(tuple, m), var, weights)), **kw)

    def _parts(self):
        if self.kind == "DiracMixture":
            return [(np.array(l), 0.0, w) for l, w in self.atoms]
        return [(np.array(m), var, w) for m, var, w in self.components]

    def mean(self):
        return sum(w * m for m, _, w in self._parts())

    def second_moment(self):
        """Exact int |v|^2 dF."""
        return float(sum(w * (m @ m + 3.0 * var) for m, var, w in self._parts()))

    def centered(self):
        """Translate so the mixture mean is zero."""
        mu = self.mean()
        if self.kind == "DiracMixture":
            atoms = tuple((tuple(np.array(l) - mu), w) for l, w in self.atoms)
            return MeasureSpec("DiracMixture", atoms=atoms, centered_required=self.centered_required)
        comps = tuple((tuple(np.array(m) - mu), var, w) for m, var, w in self.components)
        return MeasureSpec("GaussianMixture", components=comps, centered_required=self.centered_required)

    def evaluate(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape[:-1], dtype=complex)
        r2 = np.einsum("...i,...i->...", xi, xi)
        for m, var, w in self._parts():
            out += w * np.exp(-1j * (xi @ m) - 0.5 * var * r2)
        return out

    def atomic_part(self):
        if self.kind != "DiracMixture":
            return None
        loc = np.array([a[0] for a in self.atoms])
        return AtomicPart(loc, np.array([a[1] for a in self.atoms]))


def charfun_of_spec(spec, lattice=None, track_atoms=True):
    """Exact characteristic function of `spec` sampled on `lattice`."""
    lattice = lattice or Lattice()
    vals = hermitian_mirror(spec.evaluate(lattice.points()))
    vals[lattice.center] = 1.0
    atoms = spec.atomic_part() if track_atoms else None
    return CharFunGrid(lattice, vals, 0.0, atoms)


@dataclass
class BochnerReport:
    passed: bool
    min_eig: float
    max_abs: float
    m: int
    reason: str = ""


def bochner_nodes(lattice, m, stride=None):
    """Integer offsets of m sub-lattice nodes whose differences stay on-grid."""
    if m < 2:
        raise ValueError("need m >= 2")
    q = max(2, int(np.ceil(m ** (1.0 / 3.0) - 1e-9)))
    s = stride or max(1, lattice.m // (q - 1))
    if (q - 1) * s > lattice.m:
        raise InterpolationDisallowed("sub-lattice differences leave the grid")
    base = np.array(np.meshgrid(*(np.arange(q),) * 3, indexing="ij")).reshape(3, -1).T
    # keep the m nodes nearest the sub-lattice corner, deterministic order
    order = np.lexsort((base[:, 2], base[:, 1], base[:, 0], (base ** 2).sum(1)))
    return base[order[:m]] * s


def bochner_check(phi, m=27, tol_pd=1e-8, nodes=None, stride=None):
    """Minimum eigenvalue of [phi(xi_j - xi_k)] on a sub-lattice."""
    lat = phi.lattice
    mx = float(np.abs(phi.values).max())
    if nodes is None:
        nodes = bochner_nodes(lat, m, stride)
    nodes = np.asarray(nodes, dtype=int)
    d = nodes[:, None, :] - nodes[None, :, :]
    if np.abs(d).max() > lat.m:
        raise InterpolationDisallowed("pairwise differences leave the lattice")
    if mx > 1.0 + tol_pd:
        return BochnerReport(False, float("nan"), mx, len(nodes), "max|phi| exceeds 1 + tol")
    idx = d + lat.m
    mat = phi.values[idx[..., 0], idx[..., 1], idx[..., 2]]
    mat = 0.5 * (mat + mat.conj().T)
    lam = float(np.linalg.eigvalsh(mat)[0])
    ok = lam >= -tol_pd
    return BochnerReport(ok, lam, mx, len(nodes), "" if ok else "negative eigenvalue")


@dataclass
class DensityGrid:
    axis: np.ndarray
    values: np.ndarray
    negative_mass: float
    min_value: float

    @property
    def dv(self):
        return float(self.axis[1] - self.axis[0])

    def mass(self):
        return float(self.values.sum() * self.dv ** 3)


def reconstruct_density(phi):
    """Discrete inverse transform of phi onto the reciprocal v-lattice."""
    lat = phi.lattice
    n, h = lat.n, lat.h
    # sum_xi exp(+i v.xi) phi(xi) with both lattices centred on index m
    g = np.fft.ifftshift(np.asarray(phi.values))
    f = np.fft.fftshift(np.fft.ifftn(g)).real * n ** 3
    f *= (h / (2 * np.pi)) ** 3
    dv = 2 * np.pi / (n * h)
    axis = dv * np.arange(-lat.m, lat.m + 1)
    neg = float(-f[f < 0].sum() * dv ** 3)
    return DensityGrid(axis, f, neg, float(f.min()))


MAGIC = b"CHFGRID\x00"
TABLE_MAGIC = b"PHIHATT\x00"
FORMAT_VERSION = 1


def write_snapshot(phi, path):
    v = np.ascontiguousarray(phi.values, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", FORMAT_VERSION, 0))
        fh.write(struct.pack("<ddd", phi.lattice.extent, float(phi.lattice.n), phi.time))
        fh.write(v.tobytes(order="C"))


def read_snapshot(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:8] != MAGIC:
            raise ValidationError(f"{path}: not a characteristic-function snapshot")
        ver, _ = struct.unpack("<II", head[8:])
        if ver != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported snapshot version {ver}")
        extent, n, t = struct.unpack("<ddd", fh.read(24))
        lat = Lattice(extent, int(n))
        raw = np.frombuffer(fh.read(), dtype="<c16")
    if raw.size != lat.n ** 3:
        raise ValidationError(f"{path}: truncated snapshot")
    return CharFunGrid(lat, raw.reshape(lat.shape), t)
