import sys
import warnings
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

warnings.filterwarnings("ignore", message=".*TBB.*")


@pytest.fixture(scope="session")
def configs():
    return CONFIGS


def _scenario(name):
    from charboltz.config import load_scenario
    return load_scenario(CONFIGS / f"{name}.toml")


@pytest.fixture(scope="session")
def hard_scenario():
    return _scenario("reference_hard")


@pytest.fixture(scope="session")
def soft_scenario():
    return _scenario("reference_soft")


@pytest.fixture(scope="session")
def hard_run(hard_scenario):
    from charboltz.solver import solve
    return solve(hard_scenario.initial.measure(), hard_scenario.solver)


@pytest.fixture(scope="session")
def soft_run(soft_scenario):
    from charboltz.solver import solve
    return solve(soft_scenario.initial.measure(), soft_scenario.solver)


@pytest.fixture(scope="session")
def bkw_run():
    from charboltz.solver import bkw_grid, solve
    scn = _scenario("bkw")
    return scn, solve(None, scn.solver, phi0=bkw_grid(scn.grid, scn.initial.K0))


@pytest.fixture(scope="session")
def sweep_report():
    from charboltz.solver import noncutoff_sweep
    scn = _scenario("sweep_hard")
    sw = scn.sweep
    return noncutoff_sweep(scn.initial.measure(), scn.solver, sw.n_list, sw.times, sw.box_radius)


@pytest.fixture(scope="session")
def single_dirac_run():
    """Single atom at rest on the sweep's top kernel: the negative control."""
    from dataclasses import replace

    from charboltz.measures import MeasureSpec
    from charboltz.solver import solve
    scn = _scenario("sweep_hard")
    from charboltz.solver import kinetic_cap, sweep_kernel
    k = sweep_kernel(scn.kernel, 16, scn.sweep.n_list[0], kinetic_cap(scn.grid, 2 * 2 ** 0.5))
    cfg = replace(scn.solver, kernel=k, t_final=0.5)
    return solve(MeasureSpec.dirac([[0.0, 0.0, 0.0]]), cfg)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
