import pytest

from canet.tensor import set_finite_checks


@pytest.fixture(autouse=True, scope="session")
def finite_checks():
    """Assert finiteness after every op while the suite runs."""
    previous = set_finite_checks(True)
    yield
    set_finite_checks(previous)
