import math

import numpy as np
import pytest

from toruskit import avg, models
from toruskit.errors import AllAveragesVanish, InsufficientSamples, NDFails
from toruskit.nshopf import hopf_detect_equilibrium

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def linear():
    A = np.array([[0.3, -1.0], [0.7, -0.2]])
    B = np.array([[0.0, 0.5], [-0.25, 0.1]])
    return A, B, models.linear_periodic_family(A, B)


def test_closed_forms_of_constant_linear_family(linear):
    A, B, vf = linear
    z, mu = np.array([0.4, -1.1]), 0.2
    Am = A + mu * np.eye(2)
    assert np.allclose(avg.closed_form(vf, 1)(z, mu), TWO_PI * Am @ z, rtol=1e-12)
    g2 = TWO_PI * B @ z + 0.5 * TWO_PI ** 2 * Am @ Am @ z
    assert np.allclose(avg.closed_form(vf, 2)(z, mu), g2, rtol=1e-11)


def test_numeric_extraction_matches_closed_forms(rng):
    vf = models.forced_normal_form()
    Z = rng.uniform(-0.8, 0.8, size=(4, 2))
    num = avg.extract_gi_numeric(vf, Z, 0.05)
    for i in (1, 2):
        ref = np.array([avg.closed_form(vf, i)(z, 0.05) for z in Z])
        assert np.max(np.abs(num.orders[i] - ref)) <= 1e-5 * np.max(np.abs(ref))
    assert num.condition < avg.VANDERMONDE_CAP


def test_pure_forcing_averages_out_to_second_order():
    # F1 = sin(t) (x2, x1) has zero mean
    vf = models.forced_normal_form(a=0.0, forcing=1.0, c2=0.0, omega=0.0)
    z = np.array([0.3, 0.2])
    g1 = avg.averaged_g1(vf, z, 0.0)
    g2 = avg.averaged_g2(vf, z, 0.0)
    assert np.allclose(g1, 0.0, atol=1e-13)
    # y1 = (1 - cos t)(z2, z1); DF1 y1 = sin t (1 - cos t) (z1, z2); mean of sin t (1 - cos t) is 0
    assert np.allclose(g2, 0.0, atol=1e-12)


def test_first_nonvanishing_index():
    grid = np.array([[x, y] for x in (-1, 0, 1) for y in (-1, 0, 1)], float)
    assert avg.first_nonvanishing_index(models.forced_normal_form(), grid) == 1
    assert avg.first_nonvanishing_index(models.zero_mean_family(), grid) == 2
    with pytest.raises(AllAveragesVanish) as info:
        avg.first_nonvanishing_index(models.all_vanishing_family(), grid)
    assert info.value.exit_code == 4


def test_ell1_expansion_picks_first_resolved_order():
    eps = np.array([0.04, 0.03, 0.02, 0.015, 0.01])
    vals = -3.0 * eps ** 2 + 5.0 * eps ** 3 + 40.0 * eps ** 4
    fit = avg.ell1_expansion(eps, vals, 1, 2)
    assert fit.j_star == 2
    assert fit.coeffs[2] == pytest.approx(-3.0, rel=1e-3)
    assert abs(fit.coeffs[1]) < 1e-4


def test_ell1_expansion_leading_order():
    eps = np.array([0.1, 0.075, 0.05, 0.0375, 0.025])
    fit = avg.ell1_expansion(eps, -4 * math.pi * eps + 0.3 * eps ** 2, 1, 2)
    assert fit.j_star == 1
    assert fit.coeffs[1] == pytest.approx(-4 * math.pi, rel=1e-8)


def test_ell1_expansion_nd_fails():
    eps = np.array([0.04, 0.03, 0.02, 0.01])
    with pytest.raises(NDFails):
        avg.ell1_expansion(eps, np.zeros(4), 1, 2)
    noisy = 1e-9 * np.array([1.0, -1.0, 1.0, -1.0])
    with pytest.raises(NDFails):
        avg.ell1_expansion(eps, noisy, 1, 2)


def test_ell1_expansion_sample_count():
    with pytest.raises(InsufficientSamples):
        avg.ell1_expansion([0.01], [1e-4], 1, 2)


def test_torus_side_sign():
    assert avg.ell1_sign_torus_side(1.0, -2.0) == 1
    assert avg.ell1_sign_torus_side(-1.0, -2.0) == -1
    assert avg.ell1_sign_torus_side(1.0, 2.0) == -1


@pytest.fixture(scope="module")
def forced_hopf():
    vf = models.forced_normal_form()
    return vf, hopf_detect_equilibrium(avg.g_evaluator(vf, 1), [0.0, 0.0])


def test_guiding_hopf_of_forced_family(forced_hopf):
    _, hopf = forced_hopf
    assert np.allclose(hopf.x0, 0.0, atol=1e-12)
    assert hopf.omega0 == pytest.approx(TWO_PI, rel=1e-8)
    assert hopf.alpha_prime_0 == pytest.approx(TWO_PI, rel=1e-6)


@pytest.mark.parametrize("eps", [0.05, 0.1])
def test_mu_epsilon_of_forced_family(forced_hopf, eps):
    vf, hopf = forced_hopf
    mu_eps, cert, curve = avg.locate_mu_epsilon(vf, eps, hopf)
    assert mu_eps == pytest.approx(-0.25 * eps, abs=1e-9)
    assert cert.ell1 < 0
    assert cert.predicted["torus_side"] == 1
    assert curve.family.eps == eps


def test_report_serialises(forced_hopf):
    vf, hopf = forced_hopf
    rep = avg.AveragingReport(l=1, g_closed={1: avg.closed_form(vf, 1)},
                              g_numeric=lambda z, mu: avg.extract_gi_numeric(vf, z, mu).orders,
                              hopf=hopf, ell1_coeffs={1: -12.5, 2: 0.1}, j_star=1,
                              mu_of_eps=[(0.05, -0.0125)])
    d = rep.to_dict()
    assert d["j_star"] == 1 and d["ell1_coeffs"]["1"] == -12.5
    assert len(d["g_numeric"]["2"]) == 2
