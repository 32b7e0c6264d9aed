import numpy as np
import pytest

from mfe_predict.envelope.dynamics import GenericTransport
from mfe_predict.envelope.sweep import GridSpec, build_database, enumerate_jobs

MINI_GRID = GridSpec(v_step=5.0, psidot_step=1.0)


@pytest.fixture(scope="session")
def surrogate():
    return GenericTransport()


@pytest.fixture(scope="session")
def mini_database(surrogate):
    """The 4-altitude, 11-gamma, 28-case surrogate database on the coarse grid,
    with every envelope retained."""
    return build_database(surrogate, enumerate_jobs(), MINI_GRID, keep_envelopes=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mini_csv(mini_database, tmp_path_factory):
    path = tmp_path_factory.mktemp("db") / "mini.csv"
    mini_database.write(path, path.with_suffix(".meta.json"))
    return path


_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the line is echoed in the terminal summary."""

    def record(number: int, ok, detail: str) -> None:
        verdict = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        _ACCEPTANCE[number] = f"criterion {number:2d}: {verdict}  {detail}"
        print(_ACCEPTANCE[number])
        if ok is None:
            pytest.skip(detail)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
