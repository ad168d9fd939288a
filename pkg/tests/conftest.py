import numpy as np
import pytest
from hypothesis import settings

from irs_crb.checks import random_instance
from irs_crb.scenario import Scene, ScenarioConfig

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_scene():
    return Scene.build(ScenarioConfig())


@pytest.fixture
def small_instance(rng):
    return random_instance(rng)


def tiny_config(**kw):
    """Two small IRSs, cheap enough for end-to-end runs."""
    base = dict(M=4, N_h=2, N_v=2)
    base.update(kw)
    return ScenarioConfig(**base)


_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(name, passed, detail=""):
        line = f"{name}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        _CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
