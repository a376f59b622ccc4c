import warnings
from pathlib import Path

import pytest

from ambusim.scenario import (ArrivalProfile, HospitalSpec, Scenario,
                              ServiceModel, TravelModel, load_scenario)

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"
DATA = REPO / "data"


@pytest.fixture(autouse=True)
def _quiet_overload_warnings():
    # Several tests intentionally run overloaded systems; keep the output clean.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


@pytest.fixture
def line2():
    return load_scenario(SCENARIOS / "line2.yaml")


@pytest.fixture
def triangle():
    return load_scenario(SCENARIOS / "triangle.yaml")


@pytest.fixture
def city10():
    return load_scenario(SCENARIOS / "city10.yaml")


@pytest.fixture
def mm1_scenario():
    """Single hospital, patients at the door (zero travel): an M/M/1 queue."""
    def make(arrival_rate=1.0, service_rate=2.0, horizon=1e4, servers=1,
             queue_buffer=None, warmup=None):
        return Scenario(
            hospitals=(HospitalSpec(id=0, location=0.0, servers=servers,
                                    queue_buffer=queue_buffer,
                                    service=ServiceModel(kind="exponential",
                                                         rate=service_rate)),),
            arrivals=ArrivalProfile(base_rate=arrival_rate),
            travel=TravelModel(kind="line", velocity_kmh=1e9, length=1.0),
            horizon=horizon,
            warmup=warmup,
        )
    return make
