from types import SimpleNamespace

import pytest
from sqlalchemy import func, select

from spdecontrol.exceptions import LabError
from spdecontrol.lab import services
from spdecontrol.lab.models import EnsembleRun, PathRecordRow
from spdecontrol.numerics.semilinear import TruncationParams
from spdecontrol.numerics.statlab import EnsembleConfig, PathRecord

from tests.conftest import SEED

RUN_HASH = "f" * 64


@pytest.fixture
def calls(monkeypatch):
    """Replace the path solver by a recorder; path 2 fails."""
    seen = []

    def fake_run_path(problem, config, index):
        seen.append(index)
        if index == 2:
            return PathRecord(path_id=index, seed=config.seed, y0_h1=config.delta, error="DivergenceError: stalled")
        return PathRecord(
            path_id=index,
            seed=config.seed,
            y0_h1=config.delta,
            x_norm_T=0.1 * index,
            terminal_norm=1e-9,
            cost=1.0,
            iterations=2,
            truncation_active=False,
            contraction_max=0.25,
        )

    monkeypatch.setattr(services, "run_path", fake_run_path)
    return seen


@pytest.fixture
def problem():
    return SimpleNamespace(trunc=TruncationParams(1.0))


async def test_stored_run_records_every_path(db_session, calls, problem):
    """
    Test of a stored ensemble run
    """
    ensemble = EnsembleConfig(n_paths=5, seed=SEED, delta=0.01, workers=2)
    progress = []
    records = await services.run_ensemble_stored(problem, ensemble, db_session, RUN_HASH, progress.append)

    assert [r.path_id for r in records] == [0, 1, 2, 3, 4]
    assert sorted(calls) == [0, 1, 2, 3, 4]
    assert len(progress) == 5
    assert records[2].failed
    assert records[3].x_norm_T == pytest.approx(0.3)
    assert all(r.seed == SEED for r in records)

    count = await db_session.execute(select(func.count()).select_from(PathRecordRow))
    assert count.scalar() == 5


async def test_stored_run_resumes_missing_paths(db_session, calls, problem):
    """
    Test of resuming a stored run from its missing paths
    """
    ensemble = EnsembleConfig(n_paths=3, seed=SEED, delta=0.01)
    await services.run_ensemble_stored(problem, ensemble, db_session, RUN_HASH)
    calls.clear()

    larger = ensemble.model_copy(update={"n_paths": 6})
    records = await services.run_ensemble_stored(problem, larger, db_session, RUN_HASH)
    assert sorted(calls) == [3, 4, 5]
    assert [r.path_id for r in records] == list(range(6))

    calls.clear()
    again = await services.run_ensemble_stored(problem, larger, db_session, RUN_HASH)
    assert calls == []
    assert again == records


async def test_stored_run_rejects_other_radius(db_session, calls, problem):
    """
    Test of reusing a stored run with another radius
    """
    ensemble = EnsembleConfig(n_paths=1, seed=SEED, delta=0.01)
    await services.run_ensemble_stored(problem, ensemble, db_session, RUN_HASH)
    with pytest.raises(LabError):
        await services.run_ensemble_stored(
            SimpleNamespace(trunc=TruncationParams(2.0)), ensemble, db_session, RUN_HASH
        )
    with pytest.raises(LabError):
        await services.run_ensemble_stored(
            problem, ensemble.model_copy(update={"delta": 0.02}), db_session, RUN_HASH
        )


async def test_large_seed_is_stored_as_text(db_session, calls, problem):
    """
    Test of storing a seed above 2^63
    """
    ensemble = EnsembleConfig(n_paths=1, seed=2**64 - 1, delta=0.01)
    records = await services.run_ensemble_stored(problem, ensemble, db_session, RUN_HASH)
    assert records[0].seed == 2**64 - 1
    run = (await db_session.execute(select(EnsembleRun))).scalars().one()
    assert run.base_seed == str(2**64 - 1)
    assert run.R == 1.0


async def test_ensemble_run(db_session, small_config):
    """
    Test of the ensemble service on the record store
    """
    output = await services.ensemble_run(small_config, db_session)
    header, rows = output.tables["records.csv"]
    assert header[:2] == ["path_id", "seed"]
    assert len(rows) == 4
    report = output.documents["ensemble.json"]
    assert report.summary.n_paths == 4
    assert report.summary.failures == 0
    assert report.calibration_paths == 4
    assert report.terminal_max <= 1e-6
    assert 0 <= report.summary.ci_low <= report.summary.p_hat <= report.summary.ci_high <= 1
