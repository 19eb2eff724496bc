import numpy as np
import pytest

from pirhc.errors import ConfigError
from pirhc.instances import make_instance


def test_lq_scalar_defaults(lq_scalar):
    assert lq_scalar.gamma.gamma == pytest.approx(1.0)
    assert lq_scalar.gamma.satisfied
    assert lq_scalar.has_oracle
    assert lq_scalar.oracle.P0[0, 0] == pytest.approx(0.91367, abs=1e-4)


def test_lq_scalar_gamma_scaling():
    inst = make_instance("lq_scalar", {"sigma": 2.0}, {"r_control": 3.0})
    assert inst.gamma.gamma == pytest.approx(12.0)  # r * sigma^2 / b^2


def test_lq_2d_instance(lq_2d):
    assert lq_2d.model.state_dim == 2
    assert lq_2d.gamma.satisfied
    assert lq_2d.gamma.gamma == pytest.approx(0.25)  # sigma = 0.5 I, R = I
    # Riccati residual gate passed inside solve_riccati
    assert lq_2d.oracle.P0.shape == (2, 2)
    lam = np.linalg.eigvalsh(lq_2d.oracle.P0)
    assert lam[0] > 0


def test_cubic_instance(cubic):
    assert not cubic.has_oracle
    assert cubic.gamma.gamma == pytest.approx(1.0)
    x = np.array([[0.5], [-2.0]])
    assert np.allclose(cubic.model.drift(x), -x ** 3)


def test_unknown_names_rejected():
    with pytest.raises(ConfigError):
        make_instance("pendulum")
    with pytest.raises(ConfigError):
        make_instance("lq_scalar", {"mass": 1.0})
    with pytest.raises(ConfigError):
        make_instance("lq_scalar", None, {"qq": 1.0})
