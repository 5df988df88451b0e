import os
from typing import AsyncGenerator

import numpy as np
import pytest

os.environ["ENV"] = "test"

from spdecontrol.config import RunConfig, apply_overrides
from spdecontrol.database.db_connection import Base, get_engine, get_session_factory
from spdecontrol.lab import models  # noqa: F401  registers the record tables
from spdecontrol.numerics.paths import sample_path
from spdecontrol.numerics.sde import HeatModel
from spdecontrol.numerics.spectral import ControlRegion, SpectralGrid
from spdecontrol.numerics.weights import WeightParams

SEED = 20240917
HORIZON = 1.0
DT = HORIZON / 256


@pytest.fixture(scope="session")
def grid() -> SpectralGrid:
    return SpectralGrid(1.0, 16, 64)


@pytest.fixture(scope="session")
def region() -> ControlRegion:
    return ControlRegion(0.3, 0.8, 1.0)


@pytest.fixture(scope="session")
def model(grid, region) -> HeatModel:
    return HeatModel(grid, region, a=0.5)


@pytest.fixture(scope="session")
def deterministic_model(grid, region) -> HeatModel:
    return HeatModel(grid, region, a=0.0)


@pytest.fixture(scope="session")
def path():
    return sample_path(SEED, DT, HORIZON, 0)


@pytest.fixture(scope="session")
def weight_params() -> WeightParams:
    return WeightParams(s=2.0, Q=1.2, P=3.0, zeta=2.9, M_cost=5.0, T=HORIZON)


@pytest.fixture
def y0(grid) -> np.ndarray:
    coefficients = np.zeros(grid.n_modes)
    coefficients[:4] = [1.0, -0.5, 0.25, 0.125]
    return coefficients


@pytest.fixture
def small_config() -> RunConfig:
    """Smoke-scale configuration: 16 modes, 256 steps, a handful of paths."""
    config = apply_overrides(RunConfig(), seed=SEED, paths=4, modes=16, dt=DT)
    data = config.model_dump()
    data["lr"].update(cost_paths=2, obs_cutoffs=6)
    data["ensemble"].update(calibration_paths=4, workers=2)
    return RunConfig.model_validate(data)


@pytest.fixture(scope="function")
async def test_engine(tmp_path):
    engine = get_engine(f"sqlite+aiosqlite:///{tmp_path / 'test.db'}", echo=False)
    yield engine
    await engine.dispose()


@pytest.fixture(scope="function")
async def db(test_engine) -> AsyncGenerator:
    async with test_engine.begin() as conn:
        await conn.run_sync(Base.metadata.create_all)
    yield
    async with test_engine.begin() as conn:
        await conn.run_sync(Base.metadata.drop_all)


@pytest.fixture(scope="function")
async def db_session(db, test_engine) -> AsyncGenerator:
    async with get_session_factory(test_engine)() as session:
        yield session
        await session.rollback()
