import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

os.environ.setdefault("FAIRLANE_LOG_FILE", str(ROOT / "logs" / "test.log"))

from models.data_models import VehicleParams  # noqa: E402


@pytest.fixture
def params() -> VehicleParams:
    """Default vehicle parameters"""
    return VehicleParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory) -> Path:
    """Trajectory cache shared by every test that needs planned routes"""
    return tmp_path_factory.mktemp("trajectory_cache")


@pytest.fixture(scope="session")
def route_set(cache_dir):
    """Routes for the default geometry, planned once per session"""
    from models.scenario_config import ScenarioConfig
    from services.route_library import build_route_set

    return build_route_set(ScenarioConfig(), cache_dir=cache_dir)
