import pytest

from pirhc.instances import make_instance


@pytest.fixture(scope="session")
def lq_scalar():
    """Scalar benchmark: drift 0, gain 1, noise 1, q=1, q_T=0.5, R=1,
    horizon 1 (gamma = 1)."""
    return make_instance("lq_scalar")


@pytest.fixture(scope="session")
def lq_2d():
    return make_instance("lq_2d")


@pytest.fixture(scope="session")
def cubic():
    return make_instance("cubic_drift_1d")
