import os
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(autouse=True, scope="session")
def _isolated_cache(tmp_path_factory):
    """Keep effective tables out of the user's cache directory."""
    old = os.environ.get("HOMOG_RD_CACHE")
    os.environ["HOMOG_RD_CACHE"] = str(tmp_path_factory.mktemp("homog_rd_cache"))
    yield
    if old is None:
        os.environ.pop("HOMOG_RD_CACHE", None)
    else:
        os.environ["HOMOG_RD_CACHE"] = old


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS
