import numpy as np
import pytest

from droopstab import converter
from droopstab.converter import MmcParams, arm_quantities, mmc_derivative, mmc_linearize, mmc_steady_guess


@pytest.fixture(scope="module")
def unit(ref_config):
    spec = ref_config.converters[0]
    return spec, MmcParams.from_spec(spec)


@pytest.fixture(scope="module")
def point(unit, rng_module):
    spec, p = unit
    x, u = mmc_steady_guess(-135e6, 10e6, 500e3, spec.pcc_voltage_dq, p)
    x = x + rng_module.normal(scale=1.0, size=10) * np.array([1, 10, 10, 5, 5, 1e3, 1e3, 1e3, 1e3, 1e3])
    return x, u


@pytest.fixture(scope="module")
def rng_module():
    return np.random.default_rng(7)


def test_jacobian_matches_finite_differences(unit, point):
    spec, p = unit
    x, u = point
    lin = mmc_linearize(x, u, spec.pcc_voltage_dq, p)
    f = lambda xx, uu: mmc_derivative(xx, uu, spec.pcc_voltage_dq, p)
    # the model is bilinear in (x, u), so central differences are exact up to
    # rounding and large steps keep the rounding small
    hx = 1e-2 * np.maximum(np.abs(x), 1.0)
    hu = np.full(3, 10.0)
    A = np.column_stack([(f(x + h * e, u) - f(x - h * e, u)) / (2 * h) for h, e in zip(hx, np.eye(10))])
    B = np.column_stack([(f(x, u + h * e) - f(x, u - h * e)) / (2 * h) for h, e in zip(hu, np.eye(3))])
    np.testing.assert_allclose(lin.A1, A, rtol=1e-6, atol=1e-8 * np.abs(A).max())
    np.testing.assert_allclose(lin.B1, B, rtol=1e-6, atol=1e-8 * np.abs(B).max())


def test_derivative_broadcasts(ref_config):
    specs = ref_config.converters[:3]
    P = MmcParams.stack(specs)
    xs, us = [], []
    for s in specs:
        x, u = mmc_steady_guess(s.p_set, s.q_set, 500e3, s.pcc_voltage_dq, MmcParams.from_spec(s))
        xs.append(x)
        us.append(u)
    X, U = np.array(xs).T, np.array(us).T
    pcc = tuple(np.array([s.pcc_voltage_dq[i] for s in specs]) for i in range(2))
    stacked = mmc_derivative(X, U, pcc, P)
    for i, s in enumerate(specs):
        one = mmc_derivative(xs[i], us[i], s.pcc_voltage_dq, P.unit(i))
        np.testing.assert_allclose(stacked[:, i], one)


def test_steady_guess_power_balance(unit):
    spec, p = unit
    x, u = mmc_steady_guess(-135e6, 20e6, 500e3, spec.pcc_voltage_dq, p)
    vd, vq = spec.pcc_voltage_dq
    assert 1.5 * (vd * x[1] + vq * x[2]) == pytest.approx(-135e6)
    assert 1.5 * (vq * x[1] - vd * x[2]) == pytest.approx(20e6)
    assert x[5] == pytest.approx(1000e3)


def test_arm_quantities_consistency(unit, point):
    spec, p = unit
    x, u = point
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    arms = arm_quantities(x, u, p, th)
    np.testing.assert_allclose(arms["s_p"] + arms["s_n"], 1.0)
    np.testing.assert_allclose(arms["i_p"] - arms["i_n"], arms["i"])
    # phase currents of a balanced set sum to zero; arm sums carry I/3 each
    np.testing.assert_allclose(arms["i"].sum(axis=0), 0.0, atol=1e-9 * np.abs(arms["i"]).max())
    np.testing.assert_allclose((arms["i_p"] + arms["i_n"]).sum(axis=0).mean(), 2 * x[0], rtol=1e-12)


def test_switching_components():
    s0, md, mq = converter.switching_components(250e3, -100e3, 1000e3)
    assert (s0, md, mq) == (0.5, 0.25, -0.1)
