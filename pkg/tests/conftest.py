import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fieldsvae.fielddata.episodes import generate_from_scenario
from fieldsvae.fielddata.scenario import ScenarioConfig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = ScenarioConfig(episodes_normal=3, episodes_collision=3, episodes_untraversable=3, episodes_traversable=3)


@pytest.fixture(scope="session")
def small_dataset():
    """12 short runs, three per class."""
    return generate_from_scenario(SMALL, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
