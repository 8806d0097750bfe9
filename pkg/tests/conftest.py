from pathlib import Path

import pytest

from cipherloop.design import PlantSpec, integerize, solve_regulator

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def bench_spec() -> PlantSpec:
    """The two-state benchmark system used across the suite."""
    return PlantSpec(
        A=[["0", "0"], ["0", "1/2"]],
        B=[["1", "-1"], ["0", "2"]],
        C=[["1/10", "1"], ["0", "1/10"]],
        S=[["3/2", "2"], ["0", "1"]],
        K=[["0", "-1/2"], ["0", "0"]],
        L=[["0", "5"], ["0", "0"]],
        c_xp0="2",
        c_vp0="2",
    )


def deadbeat_spec() -> PlantSpec:
    """Scalar system with both loops deadbeat; the analytic bound applies."""
    return PlantSpec(
        A=[["1"]], B=[["1"]], C=[["1"]], S=[["3/2"]],
        K=[["-1"]], L=[["1"]], c_xp0="1", c_vp0="1",
    )


BENCH_ICS = dict(x_p0=["1", "1"], v_p0=["1", "0"], xhat0=["0", "0"], vhat0=["0", "0"])


@pytest.fixture(scope="session")
def bench():
    spec = bench_spec()
    reg = solve_regulator(spec)
    artifacts = integerize(spec, reg, "1/2", "1/2", l0="1")
    return spec, reg, artifacts


@pytest.fixture(scope="session")
def deadbeat():
    spec = deadbeat_spec()
    reg = solve_regulator(spec)
    artifacts = integerize(spec, reg, "1/2", "1/2", l0="1")
    return spec, reg, artifacts


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIGS
