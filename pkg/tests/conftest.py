import pytest

from spikereset.flow import FlowContext
from spikereset.model import make_builtin_model


@pytest.fixture(scope="session")
def linear():
    return make_builtin_model("linear", (1.0, -1.0, 1.0))


@pytest.fixture(scope="session")
def ctx2(linear):
    return FlowContext(linear, 1e-2)


@pytest.fixture(scope="session")
def ctx3(linear):
    return FlowContext(linear, 1e-3)


@pytest.fixture(scope="session")
def ctx4(linear):
    return FlowContext(linear, 1e-4)
