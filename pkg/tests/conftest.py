import time

import pytest

from fescycle.analysis import certify
from fescycle.config import packaged_config
from fescycle.simulator import simulate


@pytest.fixture(scope="session")
def default_rc():
    return packaged_config("default")


@pytest.fixture(scope="session")
def certified_rc():
    return packaged_config("certified")


@pytest.fixture(scope="session")
def geometry(default_rc):
    return default_rc.scenario.geometry


@pytest.fixture(scope="session")
def params(default_rc):
    return default_rc.scenario.dynamics


@pytest.fixture(scope="session")
def certified_cert(certified_rc):
    cert = certify(certified_rc.scenario, certified_rc.analysis)
    assert cert.certified, cert.report()
    return cert


@pytest.fixture(scope="session")
def certified_trace(certified_rc):
    # every accepted step recorded, so the audit sees the whole trajectory
    start = time.perf_counter()
    trace = simulate(certified_rc.scenario.with_(record_stride=1))
    trace.wall_time = time.perf_counter() - start
    return trace


@pytest.fixture(scope="session")
def default_trace(default_rc):
    return simulate(default_rc.scenario)
