"""Regularity indicators: Fourier tails, mollified L2 norms and support growth."""

from dataclasses import dataclass

import numpy as np

from .measures import CharFunGrid, ConfigurationError, reconstruct_density


@dataclass(frozen=True)
class MollifierParams:
    lam: float
    delta: float = 0.0
    N0: float = 0.0

    def __post_init__(self):
        if self.delta < 0 or self.N0 < 0:
            raise ConfigurationError("delta and N0 must be nonnegative")


def mollifier_weight(xi, p):
    """<xi>^lam / (1 + delta <xi>)^N0 with <xi> = sqrt(1 + |xi|^2)."""
    xi = np.asarray(xi, dtype=float)
    br = np.sqrt(1.0 + np.sum(xi * xi, axis=-1))
    return br ** p.lam / (1.0 + p.delta * br) ** p.N0


def fourier_tail(phi, R):
    """sup |phi| over lattice nodes with |xi| >= R."""
    shell = phi.lattice.radius() >= R
    if not shell.any():
        raise ConfigurationError(f"no lattice node has |xi| >= {R}")
    return float(np.abs(phi.values)[shell].max())


@dataclass
class WeightedNorm:
    value: float
    inner: float
    divergent: bool


def weighted_l2_norm(phi, p):
    """(2 pi)^-3 sum (M |phi|)^2 h^3 over the lattice.

    The same sum over the half-extent box is kept; if doubling the box more
    than doubles the sum the parameters are flagged divergent.
    """
    lat = phi.lattice
    w = mollifier_weight(lat.points(), p)
    dens = (w * np.abs(phi.values)) ** 2 * lat.h ** 3 / (2 * np.pi) ** 3
    half = np.all(np.abs(lat.points()) <= 0.5 * lat.extent + 1e-12, axis=-1)
    full, inner = float(dens.sum()), float(dens[half].sum())
    return WeightedNorm(full, inner, full > 2.0 * inner)


@dataclass
class SupportReport:
    times: np.ndarray
    masses: np.ndarray
    noise_floor: float
    first_time: float
    total_mass: np.ndarray


def _ball_mass(phi, center, radius):
    d = reconstruct_density(phi)
    ax = d.axis
    V = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1)
    inside = np.linalg.norm(V - np.asarray(center, float), axis=-1) <= radius
    dv3 = d.dv ** 3
    neg = float(-np.minimum(d.values, 0.0)[inside].sum() * dv3)
    return float(d.values[inside].sum() * dv3), neg, d.mass()


def support_probe(traj, center, radius):
    """Mass of the reconstructed density in a velocity ball, per snapshot.

    Tracked atoms enter exactly (they are either in the ball or not); only
    the remainder is reconstructed on the reciprocal lattice.  The noise
    floor is 3x the largest negative mass the reconstruction shows inside
    the ball over the run.
    """
    center = np.asarray(center, dtype=float)
    lat = traj.snapshots[0].lattice
    vmax = np.pi / lat.h
    if np.any(np.abs(center) + radius > vmax):
        raise ConfigurationError("ball leaves the reconstruction lattice")
    times, masses, negs, totals = [], [], [], []
    for phi in traj.snapshots:
        rem = CharFunGrid(lat, phi.remainder(), phi.time)
        mass, neg, _ = _ball_mass(rem, center, radius)
        if phi.atoms is not None:
            for v, c in zip(phi.atoms.locations, phi.atoms.weights):
                if np.linalg.norm(v - center) <= radius:
                    mass += c
        times.append(phi.time)
        masses.append(mass)
        negs.append(neg)
        totals.append(_ball_mass(phi, np.zeros(3), np.inf)[2])
    floor = 3.0 * max(negs)
    masses = np.array(masses)
    above = np.nonzero(masses > floor)[0]
    first = float(times[above[0]]) if len(above) else float("inf")
    return SupportReport(np.array(times), masses, floor, first, np.array(totals))
