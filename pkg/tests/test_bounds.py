import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contactproc import bounds
from contactproc.bounds import (
    QMatrix,
    bracket_coefficients,
    eps_of_gamma,
    eps_params,
    f_eps,
    gamma_of_eps,
    phi_eps,
    phi_of_gamma,
    quadratic_bound_check,
    submartingale_check,
)
from contactproc.errors import UsageError
from contactproc.lattice import InfectionKernel, Torus


def test_phi_eps_values():
    assert phi_eps(0.7, 0.0) == 0.0
    assert phi_eps(1.0, 1.0) == pytest.approx(math.exp(-1), rel=1e-14)
    # series oracle eps z^2/2 - eps^2 z^3/6
    z = 1e-9
    v = phi_eps(1.0, z)
    assert v > 0
    assert v == pytest.approx(z * z / 2 - z ** 3 / 6, rel=1e-12)


@pytest.mark.parametrize("eps", [1e-3, 0.1, 0.5, 1.0, 1.9])
def test_phi_eps_relative_accuracy(eps):
    import mpmath

    mpmath.mp.dps = 40
    for z in [-3.0, -1.0, -0.2, -1e-4, -1e-7, 1e-12, 1e-6, 0.05, 0.099, 0.1, 0.3, 2.0]:
        ref = (mpmath.exp(-mpmath.mpf(eps) * z) - 1 + mpmath.mpf(eps) * z) / eps
        assert phi_eps(eps, z) == pytest.approx(float(ref), rel=1e-12)


def test_phi_eps_rejects_nonpositive_eps():
    with pytest.raises(UsageError):
        phi_eps(0.0, 1.0)
    with pytest.raises(UsageError):
        f_eps(-1.0, 1.0)


def test_phi_eps_convexity_and_second_derivative():
    eps = 0.8
    z = np.linspace(-1, 1, 2001)
    step = 1e-3
    second = (phi_eps(eps, z + step) - 2 * phi_eps(eps, z) + phi_eps(eps, z - step)) / step ** 2
    assert (second >= 0).all()
    np.testing.assert_allclose(second, eps * np.exp(-eps * z), rtol=1e-6)
    first = (phi_eps(eps, step) - phi_eps(eps, -step)) / (2 * step)
    assert abs(first) < 1e-6


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-6, 5.0), st.floats(-50.0, 50.0))
def test_phi_eps_nonnegative(eps, z):
    assert phi_eps(eps, z) >= 0.0


def test_f_eps_values():
    assert f_eps(1.3, 0.0) == 0.0
    assert f_eps(1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    assert f_eps(1.0, 1e3) == pytest.approx(1.0, abs=1e-12)
    h = np.linspace(-3, 10, 500)
    assert (np.diff(f_eps(0.6, h)) > 0).all()
    assert (f_eps(0.6, h) < 1 / 0.6).all()


def test_eps_params_at_one():
    p = eps_params(1.0)
    e = math.e
    assert p.eps1 == pytest.approx(1.0, rel=1e-15)
    assert p.eps2 == pytest.approx((e / 2) / (1 + e / 2), rel=1e-14)
    assert p.eps2 == pytest.approx(0.576117, abs=1e-6)
    assert p.gamma == pytest.approx((1 + e) / (2 + e), rel=1e-14)
    assert p.gamma == pytest.approx(0.788060, abs=2e-6)
    assert (1 - p.eps2) / (1 + p.eps1) == pytest.approx(1 - p.gamma, abs=1e-12)


@pytest.mark.parametrize("eps", np.linspace(0.001, 1.999, 37))
def test_eps_params_identities(eps):
    p = eps_params(eps)
    assert p.eps1 / (1 + p.eps1) == pytest.approx(eps / 2, abs=1e-12)
    assert p.eps2 / (1 - p.eps2) == pytest.approx(eps / 2 * math.exp(eps), abs=1e-12)
    assert abs((1 - p.eps2) / (1 + p.eps1) - (1 - p.gamma)) <= 1e-12
    assert 0 < p.gamma < 1
    c1, c2 = bracket_coefficients(eps, p.eps1, p.eps2)
    assert abs(c1) <= 1e-12 and abs(c2) <= 1e-12


def test_eps_params_limits_and_domain():
    p = eps_params(1e-12)
    assert max(p.eps1, p.eps2, p.gamma) < 1e-11
    assert eps_params(2 - 1e-9).gamma == pytest.approx(1.0, abs=1e-9)
    for bad in (0.0, 2.0, -1.0, 3.0):
        with pytest.raises(UsageError):
            eps_params(bad)


def test_gamma_strictly_increasing():
    eps = np.linspace(1e-4, 2 - 1e-4, 1000)
    g = np.array([gamma_of_eps(e) for e in eps])
    assert (np.diff(g) > 0).all()


def test_phi_of_gamma_examples():
    assert phi_of_gamma(0.788060) == pytest.approx(0.632121, abs=2e-6)
    assert phi_of_gamma(gamma_of_eps(1.0)) == pytest.approx(1 - math.exp(-1), abs=1e-13)
    assert phi_of_gamma(0.01) == pytest.approx(0.01 - 0.00005, abs=2e-6)
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(UsageError):
            phi_of_gamma(bad)


def test_gamma_round_trip():
    rng = np.random.default_rng(5)
    for gamma in rng.uniform(1e-6, 1 - 1e-6, size=100):
        assert gamma_of_eps(eps_of_gamma(gamma)) == pytest.approx(gamma, abs=1e-12)


def test_phi_of_gamma_monotone_and_below_gamma():
    gammas = np.linspace(0.001, 0.999, 999)
    phis = np.array([phi_of_gamma(g) for g in gammas])
    assert (np.diff(phis) > 0).all()
    assert (phis < gammas).all()


def test_taylor_remainder():
    gammas = np.geomspace(1e-3, 0.1, 200)
    ratio = [abs(phi_of_gamma(g) - g + g * g / 2) / g ** 3 for g in gammas]
    assert max(ratio) <= 2


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0, 1.9])
def test_quadratic_bounds(eps):
    assert quadratic_bound_check(eps) <= 1e-15


def test_quadratic_bound_at_one():
    assert phi_eps(1.0, 1.0) <= 0.5
    assert phi_eps(1.0, 0.0) == 0.0


def test_qmatrix_validation():
    with pytest.raises(UsageError):
        QMatrix([[0, 1], [0, 0]])
    with pytest.raises(UsageError):
        QMatrix([[1, -1], [0, 0]])
    with pytest.raises(UsageError):
        QMatrix([[0, 0, 0]])
    q = QMatrix.from_rates([[5, 1], [2, 9]])
    np.testing.assert_array_equal(q.matrix, [[-1, 1], [2, -2]])


def test_submartingale_constant_h():
    q = QMatrix.from_rates(np.ones((4, 4)))
    rep = submartingale_check(q, np.full(4, 0.7), 1.2)
    np.testing.assert_array_equal(rep.g_f, 0)
    np.testing.assert_array_equal(rep.drift, 0)
    np.testing.assert_array_equal(rep.weighted_drift, 0)


def test_submartingale_two_state_by_hand():
    q = QMatrix([[-1, 1], [1, -1]])
    rep = submartingale_check(q, [0.0, 1.0], 1.0)
    e1 = math.exp(-1)
    np.testing.assert_allclose(rep.g_f, [1 - e1, e1 - 1], rtol=1e-14)
    # x=0: Gh = 1, H h = phi_1(1) = e^-1; x=1: Gh = -1, H h = phi_1(-1) = e - 2
    np.testing.assert_allclose(rep.drift, [1 - e1, 1 - math.e], rtol=1e-14)
    np.testing.assert_allclose(rep.weighted_drift, [1 - e1, e1 * (1 - math.e)], rtol=1e-14)
    assert rep.identity_holds


def test_submartingale_dimension_mismatch():
    with pytest.raises(UsageError):
        submartingale_check(QMatrix([[-1, 1], [1, -1]]), [1.0, 2.0, 3.0], 0.5)


def test_submartingale_fuzz_identity_and_sign_equivalence():
    reports = list(bounds.fuzz_submartingale(1000, seed=2024))
    assert all(rep.identity_holds for _, rep in reports)
    band = 1e-9
    for _, rep in reports:
        weighted = rep.weighted_drift
        if (np.abs(rep.g_f) < band).any():
            continue
        assert (rep.g_f >= 0).all() == (weighted >= 0).all() == (rep.drift >= 0).all()
    # both outcomes of the sign test occur
    assert {rep.f_subharmonic for _, rep in reports} == {True, False}


def test_drift_certificate_torus():
    t = Torus(4, 1)
    k = InfectionKernel.nearest_neighbor(t, 1.0)
    rep = bounds.drift_certificate(t, k, 1.0, 0.5)
    assert rep.identity_holds and rep.identity_max_rel_error <= 1e-10
    assert abs(rep.coefficients[0]) <= 1e-12 and abs(rep.coefficients[1]) <= 1e-12
    assert rep.max_increment <= 1 + 1e-9
    assert rep.min_chain_slack >= -1e-9
    assert rep.r < 0


def test_drift_certificate_larger_eps1_gives_positive_coefficient():
    t = Torus(3, 1)
    k = InfectionKernel.from_pairs(t, [[1, 2.0], [-1, 1.0]])
    p = eps_params(0.8)
    rep = bounds.drift_certificate(t, k, 0.9, 0.8, eps1=p.eps1 * 1.5)
    assert rep.coefficients[0] > 0
    assert abs(rep.coefficients[1]) <= 1e-12
    assert rep.min_chain_slack >= -1e-9
    assert rep.identity_holds
