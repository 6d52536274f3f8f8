import numpy as np
import pytest

from qplab import DesignParams, ScenarioConfig, builtin_plants


@pytest.fixture(scope="session")
def catalog():
    return builtin_plants()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def ledger_design(**overrides) -> DesignParams:
    """The worked design used throughout: lam=8, eps=nu=0.1, delta=0.05,
    M=10, Delta=5e-5, mu0=1, tau=1."""
    params = dict(lam=8.0, eps=0.1, nu=0.1, delta=0.05,
                  M=10.0, Delta=5e-5, mu0=1.0, tau=1.0)
    params.update(overrides)
    return DesignParams(**params)


def ledger_scenario(mode: str, **overrides) -> ScenarioConfig:
    """State/input-quantized scenario built around the worked design."""
    params = dict(plant="linear", design=ledger_design(), grid_n=100,
                  t_end=216.0, x0=[0.9], u0=0.5, mode=mode,
                  snapshot_stride=10, diag_stride=0)
    params.update(overrides)
    return ScenarioConfig(**params)
