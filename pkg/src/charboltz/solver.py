"""Picard time stepping of phi' = G1(phi) + G2(phi) - A phi in integral form."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bobylev import Quadrature, lipschitz_estimate, plan_for, total_rate
from .kernels import KernelConfig, b_mass_raw
from .measures import (CharFunGrid, ConfigurationError, Lattice, MeasureSpec, bochner_check, charfun_of_spec,
                       hermitian_mirror)
from .metrics import moment_from_charfun, momentum, second_moment, toscani_distance


class StepFailure(RuntimeError):
    """Picard iteration did not converge; carries the ratio and the trajectory so far."""

    def __init__(self, msg, ratio=None, trajectory=None):
        super().__init__(msg)
        self.ratio = ratio
        self.trajectory = trajectory


class PositivityAlarm(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping controls.

    dt = eta / (A + C_est), with C_est the measured Lipschitz excess over A,
    refreshed every `refresh` steps.  The step count per unit time is
    rounded up to a multiple of `time_grid` so that t_final / time_grid
    multiples are hit exactly.
    """

    kernel: KernelConfig
    eta: float = 0.5
    fixed_point_tol: float = 1e-8
    max_picard_iters: int = 60
    t_final: float = 1.0
    snapshot_stride: int = 1
    lattice: Lattice = Lattice(5.0, 21)
    quadrature: Quadrature = field(default_factory=Quadrature)
    tau_nodes: int = 2
    predictor: bool = True
    refresh: int = 16
    time_grid: int = 4
    tol_pd: float = 1e-6
    lipschitz_alpha: float = None
    moment_alphas: tuple = (0.5, 1.0)
    tail_radius: float = 4.0

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ConfigurationError("eta must lie in (0, 1)")
        if not self.fixed_point_tol > 0:
            raise ConfigurationError("fixed_point_tol must be positive")
        if self.tau_nodes not in (1, 2):
            raise ConfigurationError("tau_nodes is 1 or 2")
        if self.max_picard_iters < 1 or self.snapshot_stride < 1:
            raise ConfigurationError("iteration and stride counts must be positive")

    @property
    def alpha(self):
        if self.lipschitz_alpha is not None:
            return self.lipschitz_alpha
        g = self.kernel.gamma
        return 0.5 * min(g, 1.0) if g > 0 else 1.0

    def iteration_bound(self):
        return math.ceil(math.log(self.fixed_point_tol) / math.log(self.eta)) + 1


def exp_weights(A, dt, nodes=2):
    """Weights (w0, w1) of int_0^dt exp(-A(dt - tau)) g(tau) d tau for linear g."""
    x = A * dt
    e = math.exp(-x)
    # (1 - e^-x)/x without cancellation
    f = -math.expm1(-x) / x if x > 0 else 1.0
    if nodes == 1:
        return 0.0, dt * f
    w1 = dt * (1.0 - f) / x if x > 1e-8 else 0.5 * dt
    w0 = dt * f - w1
    return w0, w1


@dataclass
class State:
    """phi split as remainder field plus tracked atom weights."""

    phir: np.ndarray
    weights: np.ndarray
    time: float


@dataclass
class StepInfo:
    iterations: int
    ratio: float
    distances: list
    F_end: tuple


def _full(plan, st):
    return st.phir + plan.atom_field(st.weights)


def _pin(plan, phir, weights):
    c = plan.lattice.center
    phir = np.array(phir, dtype=complex)
    phir[c] = 1.0 - weights.sum()
    return phir


def picard_step(state, dt, plan, cfg, F0=None):
    """One step of phi(t + dt) = e^{-A dt} phi(t) + int e^{-A(dt - tau)} [G1 + G2] d tau.

    F0 = (Fr, a) at the start of the step may be passed in; it is the
    remainder/atom split of G1 + G2 returned by `BobylevPlan.rhs`.
    """
    A = plan.A
    e = math.exp(-A * dt)
    w0, w1 = exp_weights(A, dt, cfg.tau_nodes)
    if F0 is None:
        _, Fr0, a0 = plan.rhs(state.phir, state.weights)
    else:
        Fr0, a0 = F0
    if cfg.predictor:
        g = -math.expm1(-A * dt) / A
        phir, c = e * state.phir + g * Fr0, e * state.weights + g * a0
    else:
        phir, c = state.phir.copy(), state.weights.copy()
    phir = _pin(plan, phir, c)
    cur = phir + plan.atom_field(c)
    dists, ratio = [], 0.0
    for it in range(1, cfg.max_picard_iters + 1):
        _, Fr1, a1 = plan.rhs(phir, c)
        nr = e * state.phir + w0 * Fr0 + w1 * Fr1
        nc = e * state.weights + w0 * a0 + w1 * a1
        nr = _pin(plan, nr, nc)
        new = nr + plan.atom_field(nc)
        d = float(np.abs(new - cur).max())
        dists.append(d)
        if len(dists) > 1 and dists[-2] > 1e-13:
            ratio = max(ratio, d / dists[-2])
        phir, c, cur = nr, nc, new
        if d < cfg.fixed_point_tol:
            break
    else:
        raise StepFailure(f"Picard iteration did not converge in {cfg.max_picard_iters} steps "
                          f"(contraction ratio {ratio:.3f})", ratio)
    # F at the last evaluated iterate; it differs from F(phi) by O(tol)
    return State(phir, c, state.time + dt), StepInfo(it, ratio, dists, (Fr1, a1))


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    config: SolverConfig = None

    @property
    def times(self):
        return np.array([s.time for s in self.snapshots])

    def at(self, t, atol=1e-12):
        for s in self.snapshots:
            if abs(s.time - t) <= atol:
                return s
        raise KeyError(f"no snapshot at t = {t}")

    def column(self, name):
        return np.array([d[name] for d in self.diagnostics])


def snapshot(plan, st):
    vals = hermitian_mirror(_full(plan, st))
    vals[plan.lattice.center] = 1.0
    atoms = None
    if len(plan.locations):
        from .measures import AtomicPart
        atoms = AtomicPart(plan.locations, st.weights.copy())
    return CharFunGrid(plan.lattice, vals, st.time, atoms)


def diagnostics_row(phi, cfg, step=0, info=None, dt=0.0, energy0=None):
    from .smoothing import fourier_tail

    e = second_moment(phi)
    bc = bochner_check(phi, tol_pd=cfg.tol_pd)
    row = {
        "step": step,
        "time": phi.time,
        "dt": dt,
        "energy": e,
        "energy_drift": 0.0 if energy0 is None else abs(e - energy0) / (energy0 if energy0 > 1e-12 else 1.0),
        "momentum": float(np.linalg.norm(momentum(phi))),
        "max_abs": float(np.abs(phi.values).max()),
        "bochner_min_eig": bc.min_eig,
        "bochner_ok": bool(bc.passed),
        "fourier_tail": fourier_tail(phi, cfg.tail_radius),
        "picard_iters": 0 if info is None else info.iterations,
        "contraction": 0.0 if info is None else info.ratio,
    }
    for a in cfg.moment_alphas:
        row[f"moment_{a:g}"] = moment_from_charfun(phi, a)
    return row


def check_admissible(initial, kernel, alpha=None):
    """gamma < 0 needs a finite alpha-moment with alpha above c_{gamma,s}."""
    from .kernels import c_gamma_s

    if kernel.gamma < 0:
        thr = c_gamma_s(kernel.gamma, kernel.s)
        a = 2.0 if alpha is None else alpha
        if a <= thr:
            raise ConfigurationError(f"initial datum needs a moment of order > {thr:g} "
                                     "for soft potentials (moment threshold c_gamma_s)")


def _step_count(T, dt_raw, grid):
    k = max(1, math.ceil(T / dt_raw - 1e-9))
    return grid * math.ceil(k / grid)


def solve(initial, cfg, phi0=None, plan=None, log=None):
    """Integrate from `initial` (a MeasureSpec) or a given CharFunGrid `phi0` to t_final."""
    if phi0 is None:
        check_admissible(initial, cfg.kernel)
        phi0 = charfun_of_spec(initial, cfg.lattice)
    plan = plan or plan_for(phi0, cfg.kernel, cfg.quadrature)
    A = plan.A
    traj = Trajectory(config=cfg)
    weights = phi0.atoms.weights.copy() if phi0.atoms is not None else np.zeros(0)
    st = State(np.array(phi0.remainder()), weights, 0.0)
    traj.snapshots.append(phi0)
    e0 = second_moment(phi0)
    traj.diagnostics.append(diagnostics_row(phi0, cfg, energy0=e0))

    def dt_for(phi):
        L = lipschitz_estimate(phi, cfg.kernel, cfg.alpha, plan=plan)
        c_est = max(L - A, 0.0)
        return cfg.eta / (A + c_est), c_est

    dt_raw, c_est = dt_for(phi0)
    traj.diagnostics[0]["c_est"] = c_est
    nsteps = _step_count(cfg.t_final, dt_raw, cfg.time_grid)
    dt = cfg.t_final / nsteps
    F0 = None
    step = 0
    while st.time < cfg.t_final - 1e-12:
        if step and step % cfg.refresh == 0:
            raw, c_est = dt_for(traj.snapshots[-1])
            while dt > raw * (1 + 1e-12):
                dt *= 0.5
        dt_step = min(dt, cfg.t_final - st.time)
        try:
            st, info = picard_step(st, dt_step, plan, cfg, F0)
        except StepFailure as exc:
            exc.trajectory = traj
            raise
        F0 = info.F_end
        step += 1
        phi = snapshot(plan, st)
        if float(np.abs(phi.values).max()) > 1.0 + 10 * cfg.tol_pd:
            raise PositivityAlarm(f"|phi| exceeds 1 + 10 tol_pd at t = {st.time:.4f}; quadrature too coarse")
        # snap the clock onto the grid to keep output times exact
        k = round(st.time / dt)
        if abs(k * dt - st.time) < 1e-9:
            st.time = k * dt
            phi = CharFunGrid(phi.lattice, phi.values, st.time, phi.atoms)
        if step % cfg.snapshot_stride == 0 or st.time >= cfg.t_final - 1e-12:
            traj.snapshots.append(phi)
            row = diagnostics_row(phi, cfg, step, info, dt_step, e0)
            row["c_est"] = c_est
            traj.diagnostics.append(row)
            if log:
                log(row)
    return traj


# -- non-cutoff sweep -------------------------------------------------------

def kinetic_cap(lattice, spread):
    """Largest kinetic index n whose support 2n stays clear of the lattice's alias images.

    A zeta-lattice of step h periodises in v with period 2 pi / h; a
    velocity spread `spread` (max |v - w|) plus the support of Phi must fit.
    """
    return max(1, int((2 * np.pi / lattice.h - spread) // 2))


def sweep_kernel(base, n, n0, cap=None):
    """Kernel (b_n, Phi_n) of the sweep, b scaled as at the smallest index n0."""
    scale = 1.0 / b_mass_raw(replace(base, b_cut=float(n0), b_scale=None))
    k = replace(base, b_cut=float(n), b_scale=scale)
    if base.cutoff == "HardKinetic":
        k = replace(k, n=n if cap is None else min(n, cap))
    elif base.cutoff == "AngularOnly":
        k = replace(k, n=n)
    return k


@dataclass
class SweepReport:
    n_list: list
    gaps: list
    times: tuple
    monotone: bool
    trajectories: dict
    kernels: dict
    aborted: str = ""


def box_mask(lattice, radius):
    return lattice.radius() <= radius + 1e-12


def noncutoff_sweep(initial, cfg, n_list, times=(0.25, 0.5, 1.0), box_radius=4.0, spread=None, log=None):
    """Solve with (b_n, Phi_n) for each n and report sup gaps between consecutive n."""
    n_list = list(n_list)
    if len(n_list) < 3:
        raise ConfigurationError("noncutoff_sweep needs at least three indices")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ConfigurationError("n_list must be increasing")
    if spread is None:
        loc = initial.atomic_part().locations if initial.kind == "DiracMixture" else np.zeros((1, 3))
        spread = 2.0 * math.sqrt(2.0 * max(initial.second_moment(), 1e-12)) if len(loc) else 0.0
    cap = kinetic_cap(cfg.lattice, spread)
    trajs, kernels, gaps = {}, {}, []
    mask = box_mask(cfg.lattice, box_radius)
    aborted = ""
    cost = []
    for n in n_list:
        k = sweep_kernel(cfg.kernel, n, n_list[0], cap)
        kernels[n] = k
        c = replace(cfg, kernel=k, t_final=max(times))
        trajs[n] = solve(initial, c, log=log)
        cost.append(len(trajs[n].snapshots))
        if len(cost) >= 3 and cost[-1] > 4 * cost[-2] > 16 * cost[-3]:
            aborted = f"step count grows too fast at n = {n}"
            break
    done = [n for n in n_list if n in trajs]
    for a, b in zip(done, done[1:]):
        g = 0.0
        for t in times:
            pa, pb = trajs[a].at(t), trajs[b].at(t)
            g = max(g, float(np.abs(pa.values - pb.values)[mask].max()))
        gaps.append(g)
    mono = all(y < x for x, y in zip(gaps, gaps[1:]))
    return SweepReport(done, gaps, tuple(times), mono, trajs, kernels, aborted)


# -- equicontinuity ---------------------------------------------------------

@dataclass
class EquicontinuityReport:
    alpha: float
    samples: int
    violations: list
    max_ratio: float


def equicontinuity_probe(traj, alpha=2.0, samples=100, seed=0, slack=1e-12):
    """Check |phi(xi) - phi(xi + eta)| <= ||1 - phi||_alpha (2|xi|^{a/2}|eta|^{a/2} + |eta|^a)."""
    if not traj.snapshots:
        raise ConfigurationError("empty trajectory")
    rng = np.random.default_rng(seed)
    lat = traj.snapshots[0].lattice
    m, h = lat.m, lat.h
    one = CharFunGrid(lat, np.ones(lat.shape))
    viol, worst = [], 0.0
    for _ in range(samples):
        phi = traj.snapshots[rng.integers(len(traj.snapshots))]
        i = rng.integers(-m, m + 1, 3)
        j = rng.integers(-m, m + 1, 3)
        e = j - i
        xi, eta = i * h, e * h
        lhs = abs(phi.values[tuple(i + m)] - phi.values[tuple(j + m)])
        norm = toscani_distance(phi, one, alpha).value
        a = alpha
        rhs = norm * (2 * np.linalg.norm(xi) ** (a / 2) * np.linalg.norm(eta) ** (a / 2) + np.linalg.norm(eta) ** a)
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if lhs > rhs + slack:
            viol.append((phi.time, tuple(xi), tuple(eta), lhs, rhs))
    return EquicontinuityReport(alpha, samples, viol, worst)


# -- BKW closed form (Maxwell molecules, Phi = 1) ------------------------------

def bkw_rate(kernel):
    """lambda = int b sin^2(theta)/4 dsigma, the decay rate of 1 - K for Phi = 1."""
    from scipy import integrate

    from .kernels import b_eval, b_scale, theta_cut

    f = lambda t: b_eval(np.cos(t), kernel) * np.sin(t) ** 3 / 4.0
    tc = theta_cut(kernel)
    val = integrate.quad(f, 0.0, tc, limit=200)[0] + integrate.quad(f, tc, np.pi / 2, limit=200)[0]
    return 2 * np.pi * b_scale(kernel) * val


def bkw_charfun(xi_sq, K):
    """(1 - (1 - K)|xi|^2/2) exp(-K |xi|^2/2); energy 3, nonnegative density for K >= 3/5."""
    return (1.0 - 0.5 * (1.0 - K) * xi_sq) * np.exp(-0.5 * K * xi_sq)


def bkw_K(t, K0, lam):
    return 1.0 - (1.0 - K0) * np.exp(-lam * t)


def bkw_grid(lattice, K, time=0.0):
    vals = hermitian_mirror(bkw_charfun(lattice.radius() ** 2, K) + 0j)
    vals[lattice.center] = 1.0
    return CharFunGrid(lattice, vals, time)
