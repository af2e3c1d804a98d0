"""Scenario documents: TOML in, validated dataclasses out.

Layout (every section optional except [kernel]; unknown keys are errors)::

    seed = 0
    output_dir = "out"
    workers = 0                      # 0 = all available cores

    [initial]                        # kind = "dirac" | "gaussian" | "bkw"
    kind = "dirac"
    locations = [[1.0, 0, 0], [-1.0, 0, 0]]
    weights = [0.5, 0.5]             # default uniform
    # means / variances for "gaussian"; K0 for "bkw"
    alpha = 2.0                      # moment order the datum is known to carry

    [kernel]                         # KernelConfig fields
    [grid]                           # extent, n
    [quadrature]                     # Quadrature fields
    [solver]                         # SolverConfig scalar fields
    [diagnostics]                    # moment_alphas, tail_radii, support_balls, mollifier
    [sweep]                          # n_list, times, box_radius
"""

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bobylev import Quadrature
from .kernels import KernelConfig
from .measures import ConfigurationError, Lattice, MeasureSpec, ValidationError, charfun_of_spec
from .smoothing import MollifierParams
from .solver import SolverConfig, bkw_grid, check_admissible


class ScenarioError(ValueError):
    """Invalid scenario document; `path` names the offending field."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


SOLVER_KEYS = ("eta", "fixed_point_tol", "max_picard_iters", "t_final", "snapshot_stride", "tau_nodes",
               "predictor", "refresh", "time_grid", "tol_pd", "lipschitz_alpha", "tail_radius")
TOP_KEYS = ("seed", "output_dir", "workers", "initial", "kernel", "grid", "quadrature", "solver",
            "diagnostics", "sweep")


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "dirac"
    locations: tuple = ((0.0, 0.0, 0.0),)
    weights: tuple = None
    means: tuple = ()
    variances: tuple = ()
    K0: float = 0.6
    alpha: float = 2.0

    def measure(self):
        if self.kind == "dirac":
            return MeasureSpec.dirac(self.locations, self.weights)
        if self.kind == "gaussian":
            return MeasureSpec.gaussian(self.means, self.variances, self.weights)
        return None

    def charfun(self, lattice):
        if self.kind == "bkw":
            return bkw_grid(lattice, self.K0)
        return charfun_of_spec(self.measure(), lattice)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float


@dataclass(frozen=True)
class Diagnostics:
    moment_alphas: tuple = (0.5, 1.0)
    tail_radii: tuple = (4.0,)
    support_balls: tuple = ()
    mollifier: MollifierParams = None


@dataclass(frozen=True)
class SweepSpec:
    n_list: tuple
    times: tuple = (0.25, 0.5, 1.0)
    box_radius: float = 4.0


@dataclass(frozen=True)
class ScenarioConfig:
    initial: InitialSpec
    kernel: KernelConfig
    grid: Lattice
    solver: SolverConfig
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    sweep: SweepSpec = None
    output_dir: str = "out"
    seed: int = 0
    workers: int = 0

    def to_dict(self):
        """Fully resolved scenario as plain data (for the manifest)."""
        def plain(x):
            if dataclasses.is_dataclass(x):
                return {f.name: plain(getattr(x, f.name)) for f in dataclasses.fields(x)}
            if isinstance(x, (tuple, list)):
                return [plain(y) for y in x]
            return x
        d = plain(self)
        d["solver"].pop("kernel")
        return d


def _check_keys(table, allowed, path):
    if not isinstance(table, dict):
        raise ScenarioError(path, "expected a table")
    for k in table:
        if k not in allowed:
            raise ScenarioError(f"{path}.{k}" if path else k, "unknown key")


def _build(path, fn, **kw):
    try:
        return fn(**kw)
    except (ConfigurationError, ValidationError, TypeError, ValueError) as exc:
        raise ScenarioError(path, str(exc)) from None


def _fields(cls):
    return tuple(f.name for f in dataclasses.fields(cls))


def _initial(t):
    _check_keys(t, _fields(InitialSpec), "initial")
    t = dict(t)
    kind = t.get("kind", "dirac")
    if kind not in ("dirac", "gaussian", "bkw"):
        raise ScenarioError("initial.kind", f"unknown kind {kind!r}")
    for key in ("locations", "means"):
        if key in t:
            t[key] = tuple(tuple(float(x) for x in row) for row in t[key])
    for key in ("weights", "variances"):
        if t.get(key) is not None:
            t[key] = tuple(float(x) for x in t[key])
    spec = InitialSpec(**t)
    if kind == "bkw" and not 0 < spec.K0 <= 1:
        raise ScenarioError("initial.K0", "BKW needs 0 < K0 <= 1")
    if kind != "bkw":
        _build("initial", spec.measure)
    return spec


def _diagnostics(t):
    _check_keys(t, _fields(Diagnostics), "diagnostics")
    kw = {}
    if "moment_alphas" in t:
        kw["moment_alphas"] = tuple(float(a) for a in t["moment_alphas"])
        for a in kw["moment_alphas"]:
            if not 0 < a < 2:
                raise ScenarioError("diagnostics.moment_alphas", f"order {a} outside (0, 2)")
    if "tail_radii" in t:
        kw["tail_radii"] = tuple(float(r) for r in t["tail_radii"])
    if "support_balls" in t:
        balls = []
        for i, b in enumerate(t["support_balls"]):
            _check_keys(b, ("center", "radius"), f"diagnostics.support_balls[{i}]")
            if len(b.get("center", ())) != 3 or not b.get("radius", 0) > 0:
                raise ScenarioError(f"diagnostics.support_balls[{i}]", "needs a 3-vector center and radius > 0")
            balls.append(Ball(tuple(float(x) for x in b["center"]), float(b["radius"])))
        kw["support_balls"] = tuple(balls)
    if "mollifier" in t:
        _check_keys(t["mollifier"], _fields(MollifierParams), "diagnostics.mollifier")
        kw["mollifier"] = _build("diagnostics.mollifier", MollifierParams, **t["mollifier"])
    return Diagnostics(**kw)


def _sweep(t):
    _check_keys(t, _fields(SweepSpec), "sweep")
    if "n_list" not in t:
        raise ScenarioError("sweep.n_list", "required")
    n = tuple(int(x) for x in t["n_list"])
    if len(n) < 3 or any(b <= a for a, b in zip(n, n[1:])):
        raise ScenarioError("sweep.n_list", "needs at least three increasing indices")
    times = tuple(float(x) for x in t.get("times", (0.25, 0.5, 1.0)))
    return SweepSpec(n, times, float(t.get("box_radius", 4.0)))


def scenario_from_dict(doc):
    _check_keys(doc, TOP_KEYS, "")
    if "kernel" not in doc:
        raise ScenarioError("kernel", "required section missing")
    initial = _initial(doc.get("initial", {}))
    _check_keys(doc["kernel"], _fields(KernelConfig), "kernel")
    kernel = _build("kernel", KernelConfig, **doc["kernel"])
    g = doc.get("grid", {})
    _check_keys(g, ("extent", "n"), "grid")
    grid = _build("grid", Lattice, **g)
    qt = doc.get("quadrature", {})
    _check_keys(qt, _fields(Quadrature), "quadrature")
    quad = _build("quadrature", Quadrature, **qt)
    diag = _diagnostics(doc.get("diagnostics", {}))
    st = doc.get("solver", {})
    _check_keys(st, SOLVER_KEYS, "solver")
    solver = _build("solver", SolverConfig, kernel=kernel, lattice=grid, quadrature=quad,
                    moment_alphas=diag.moment_alphas, **st)
    try:
        check_admissible(initial.measure(), kernel, initial.alpha)
    except ConfigurationError as exc:
        raise ScenarioError("initial.alpha", str(exc)) from None
    sweep = _sweep(doc["sweep"]) if "sweep" in doc else None
    workers = doc.get("workers", 0)
    if not isinstance(workers, int) or workers < 0:
        raise ScenarioError("workers", "must be a nonnegative integer")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError("seed", "must be an integer")
    return ScenarioConfig(initial, kernel, grid, solver, diag, sweep, str(doc.get("output_dir", "out")), seed, workers)


def load_scenario(path):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(str(path), f"malformed TOML: {exc}") from None
    return scenario_from_dict(doc)
