import math

import numpy as np
import pytest

from toruskit import models
from toruskit.errors import (Degenerate, HypothesisSViolated, HypothesisViolated, NoCrossing,
                             NoHopfPoint, ResonantEigenvalue, TransversalityFails)
from toruskit.nshopf import (certify_ns, critical_eigenvectors, hopf_detect_equilibrium,
                             locate_ns_parameter, lyapunov_coefficient_map, predict, transversality)
from toruskit.section import FunctionMapFamily, continue_fixed_points
from toruskit.spectral import eigenvalues, tracked_pair


@pytest.fixture(scope="module")
def logistic_cert(logistic, logistic_curve):
    return certify_ns(logistic, logistic_curve, (1.9, 2.1), 1e-6, 1e-4)


def test_logistic_ns_point(logistic_cert):
    c = logistic_cert
    assert c.mu_star == pytest.approx(2.0, abs=1e-10)
    assert c.theta0 == pytest.approx(math.pi / 3, abs=1e-10)
    assert c.d_mod == pytest.approx(0.5, abs=1e-8)
    assert c.ell1 < 0
    assert all(c.resonance.values())
    assert (c.n_s, c.n_u) == (0, 0)
    assert c.predicted["torus_side"] == 1
    assert c.predicted["torus_stability"] == "attracting"


def test_certificate_serialises(logistic_cert):
    d = logistic_cert.to_dict()
    assert set(d) >= {"mu_star", "critical_pair", "theta0", "d_re", "d_mod", "ell1", "predicted"}
    assert all(isinstance(v, float) for pair in d["critical_pair"] for v in pair)


def test_locate_needs_crossing(logistic_curve):
    with pytest.raises(NoCrossing):
        locate_ns_parameter(logistic_curve, (1.9, 1.95))


@pytest.mark.parametrize("a", [-1.0, -0.3, 0.5])
def test_normal_form_ell1(a):
    fam = models.ns_normal_form(a=a, d=1.0, omega=1.0)
    ell1 = lyapunov_coefficient_map(fam.at(0.0), np.zeros(2), np.exp(1j))
    assert ell1 == pytest.approx(2 * a, rel=1e-6)


def test_ell1_invariant_under_rotation_and_scaling():
    base = models.ns_normal_form(a=-1.0, d=1.0, omega=1.0)
    c, s = math.cos(0.4), math.sin(0.4)
    conj = models.conjugated(base, np.array([[2.0 * c, -s], [s, 0.5 * c]]))
    ell1 = lyapunov_coefficient_map(conj.at(0.0), np.zeros(2), np.exp(1j))
    assert ell1 < 0


def test_resonant_multiplier_rejected():
    fam = models.ns_normal_form(a=-1.0, d=1.0, omega=math.pi / 2)
    with pytest.raises(ResonantEigenvalue):
        lyapunov_coefficient_map(fam.at(0.0), np.zeros(2), 1j)


def test_resonant_ns_point_names_hypothesis():
    fam = models.ns_normal_form(a=-1.0, d=1.0, omega=2 * math.pi / 3)
    curve = continue_fixed_points(fam, np.zeros(2), (-0.1, 0.1), 0.05)
    with pytest.raises(HypothesisSViolated) as info:
        certify_ns(fam, curve, (-0.1, 0.1))
    assert info.value.hypothesis == "S3"
    assert info.value.exit_code == 4


def test_transversality_values(logistic_curve):
    d_re, d_mod = transversality(logistic_curve, 2.0)
    assert d_mod == pytest.approx(0.5, abs=1e-8)
    assert d_re == pytest.approx(0.0, abs=1e-8)  # lambda^2 - lambda + mu - 1 = 0


def test_degenerate_crossing():
    # |lambda| = 1 + mu^3 crosses with zero speed
    def f(p, mu):
        r = 1 + mu ** 3
        c, s = math.cos(1.0) * r, math.sin(1.0) * r
        return np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1]], axis=-1)

    def jac(p, mu):
        r = 1 + mu ** 3
        R = r * np.array([[math.cos(1.0), -math.sin(1.0)], [math.sin(1.0), math.cos(1.0)]])
        return np.broadcast_to(R, np.shape(p) + (2,))
    fam = FunctionMapFamily(f, jac, 2)
    curve = continue_fixed_points(fam, np.zeros(2), (-0.1, 0.1), 0.05)
    with pytest.raises(Degenerate):
        transversality(curve, 0.0)


def test_nondegeneracy_required():
    fam = models.ns_normal_form(a=0.0, d=1.0, omega=1.0)
    curve = continue_fixed_points(fam, np.zeros(2), (-0.1, 0.1), 0.05)
    with pytest.raises(HypothesisViolated) as info:
        certify_ns(fam, curve, (-0.1, 0.1))
    assert info.value.hypothesis == "ND"


def test_critical_eigenvectors_normalised():
    A = np.array([[0.5, -0.9, 0.1], [0.9, 0.5, 0.0], [0.0, 0.2, 0.3]])
    lam = tracked_pair(eigenvalues(A))
    q, p = critical_eigenvectors(A, lam)
    assert np.linalg.norm(q) == pytest.approx(1.0)
    k = int(np.argmax(np.abs(q)))
    assert abs(q[k].imag) < 1e-14 and q[k].real > 0
    assert np.vdot(p, q) == pytest.approx(1.0)
    assert np.allclose(A @ q, lam * q)
    assert np.allclose(A.T @ p, np.conj(lam) * p)


def test_predict_case_table():
    assert predict(-1.0, 0.5, 1) == {"torus_side": 1, "torus_stability": "attracting",
                                     "cycle_stable_multipliers": 1, "stable_directions": 2}
    assert predict(1.0, 0.5, 1) == {"torus_side": -1, "torus_stability": "repelling",
                                    "cycle_stable_multipliers": 3, "stable_directions": 1}


def _hopf_field(mu_coeff=1.0, omega=1.0):
    def g(z, mu):
        x, y = z
        r2 = x * x + y * y
        return np.array([mu_coeff * mu * x - omega * y - x * r2, omega * x + mu_coeff * mu * y - y * r2])
    return g


def test_hopf_detection():
    rep = hopf_detect_equilibrium(_hopf_field(), [0.1, -0.1])
    assert np.allclose(rep.x0, 0.0, atol=1e-12)
    assert rep.omega0 == pytest.approx(1.0)
    assert rep.alpha_prime_0 == pytest.approx(1.0, rel=1e-8)
    assert np.allclose(rep.xi_at(0.0005), 0.0, atol=1e-12)
    assert rep.to_dict()["l"] == 1


def test_hopf_needs_complex_pair():
    def g(z, mu):
        return np.array([z[0] - z[1] ** 2, -z[1]])
    with pytest.raises(NoHopfPoint):
        hopf_detect_equilibrium(g, [0.0, 0.0])


def test_hopf_transversality():
    with pytest.raises(TransversalityFails) as info:
        hopf_detect_equilibrium(_hopf_field(mu_coeff=0.0), [0.0, 0.0])
    assert info.value.hypothesis == "T"
