import csv
import math

import numpy as np
import pytest

from toruskit import models, torus
from toruskit.nshopf import lyapunov_coefficient_map
from toruskit.errors import NoInvariantCircle, TangentialDrift, WeakGap
from toruskit.section import ReturnMapFamily, make_affine_section


@pytest.mark.parametrize("mu", [1e-3, 4e-3, 1.6e-2])
def test_normal_form_circle_radius(normal_form, mu):
    handle = normal_form.at(mu)
    c = torus.invariant_circle(handle, [0.0, 0.0], math.sqrt(mu), inverse=handle.inverse())
    r = c.radius(np.linspace(0, 2 * np.pi, 50))
    assert np.allclose(r, math.sqrt(mu), rtol=1e-9)
    assert c.residual <= 1e-9
    assert c.rotation_estimate == pytest.approx(1 / (2 * np.pi), rel=1e-6)


def test_circle_from_a_poor_seed(normal_form):
    handle = normal_form.at(1e-2)
    c = torus.invariant_circle(handle, [0.0, 0.0], 0.08, inverse=handle.inverse())
    assert c.to_dict()["mean_radius"] == pytest.approx(0.1, rel=1e-8)


def test_circle_of_conjugated_map_is_an_ellipse(normal_form):
    M = np.array([[2.0, 0.3], [0.0, 0.5]])
    family = models.conjugated(normal_form, M)
    ell1 = lyapunov_coefficient_map(family.at(0.0), [0.0, 0.0], np.exp(1j))
    r0 = torus.predicted_radius(1.0, ell1, 1e-2, 0.0)
    c = torus.invariant_circle(family.at(1e-2), [0.0, 0.0], r0)
    pts = c.points(np.linspace(0, 2 * np.pi, 40))
    back = pts @ np.linalg.inv(M).T
    assert np.allclose(np.linalg.norm(back, axis=1), 0.1, rtol=1e-8)


def test_no_circle_on_the_stable_side(logistic):
    handle = logistic.at(1.9)
    p = models.delayed_logistic_fixed_point(1.9)
    with pytest.raises(NoInvariantCircle):
        torus.invariant_circle(handle, p, 0.05, inverse=handle.inverse())


def test_predicted_radius():
    # normal form: d = 1, ell1 = 2a = -2, so r = sqrt(mu)
    assert torus.predicted_radius(1.0, -2.0, 0.04, 0.0) == pytest.approx(0.2)


def test_bump_weights():
    w = torus.bump_weights(1000)
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= 0) and np.allclose(w, w[::-1])
    # smooth weights kill the O(1/N) bias of a plain mean of a periodic signal
    x = np.cos(2 * np.pi * 0.38196601125 * np.arange(1000))
    assert abs(w @ x) < 1e-10 < abs(x.mean())


@pytest.mark.parametrize("mu", [1e-2, 4e-2])
def test_nh_exponents_of_normal_form(normal_form, mu):
    handle = normal_form.at(mu)
    c = torus.invariant_circle(handle, [0.0, 0.0], math.sqrt(mu), inverse=handle.inverse())
    nh = torus.nh_certificate(c, handle, iterations=4000)
    assert nh.normal_exponents[0] == pytest.approx(math.log(1 - 2 * mu), abs=1e-6)
    assert abs(nh.tangential_exponent) <= 1e-8
    assert nh.attracting and nh.stable_count == 1
    assert nh.gap == pytest.approx(-math.log(1 - 2 * mu), abs=1e-6)
    # exponents sum to the orbit average of log |det D Pi|
    assert nh.tangential_exponent + sum(nh.normal_exponents) == pytest.approx(nh.log_det_average, abs=1e-6)


def test_nh_gap_and_drift_thresholds(normal_form):
    handle = normal_form.at(1e-2)
    c = torus.invariant_circle(handle, [0.0, 0.0], 0.1, inverse=handle.inverse())
    with pytest.raises(WeakGap):
        torus.nh_certificate(c, handle, iterations=500, gap_tol=0.1)
    with pytest.raises(TangentialDrift):
        torus.nh_certificate(c, handle, iterations=500, tang_tol=-1.0)


@pytest.fixture(scope="module")
def cylinder():
    vf = models.cylinder_hopf()
    sec = make_affine_section(vf, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    family = ReturnMapFamily(vf, sec, tol=1e-11)
    mu = 0.01
    handle = family.at(mu)
    circle = torus.invariant_circle(handle, [0.0, 0.0], 0.1, inverse=handle.inverse())
    return vf, sec, mu, circle


def test_cylinder_circle(cylinder):
    _, sec, _, circle = cylinder
    X = sec.to_ambient(circle.points(np.linspace(0, 2 * np.pi, 32)))
    u = np.hypot(X[:, 0], X[:, 1]) - 1
    assert np.allclose(np.hypot(u, X[:, 2]), 0.1, atol=1e-8)
    assert np.allclose(X[:, 1], 0.0, atol=1e-14)


def test_cylinder_fenichel(cylinder):
    vf, sec, mu, circle = cylinder
    fen = torus.fenichel_checks(circle, vf, sec, mu)
    assert fen.forward_returns == fen.backward_returns == torus.FRESH_SAMPLES
    assert fen.tau_modulus <= 1e-6
    assert fen.max_return_time == pytest.approx(2 * np.pi, rel=1e-8)
    assert fen.min_transversality_angle > 1.0


def test_cylinder_saturation_and_csv(cylinder, tmp_path):
    vf, sec, mu, circle = cylinder
    mesh, residual, extended = torus.saturate_torus(circle, vf, sec, mu, grid=(16, 4))
    assert mesh.shape == (16, 5, 3) and not extended
    assert residual <= 1e-8
    u = np.hypot(mesh[..., 0], mesh[..., 1]) - 1
    assert np.allclose(np.hypot(u, mesh[..., 2]), 0.1, atol=1e-8)
    path = tmp_path / "mesh.csv"
    torus.write_mesh_csv(path, mesh, extended)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["theta_index", "s_index", "x1", "x2", "x3"]
    assert len(rows) == 1 + 16 * 5
    cpath = tmp_path / "circle.csv"
    torus.write_circle_csv(cpath, circle, sec, samples=10)
    rows = list(csv.reader(open(cpath)))
    assert rows[0] == ["theta", "x1", "x2", "x3"] and len(rows) == 11


def test_stroboscopic_mesh_carries_time():
    from toruskit.section import StroboscopicFamily, StroboscopicSection
    vf = models.forced_normal_form(forcing=0.0, c2=0.0)
    eps, mu = 0.05, 0.02
    family = StroboscopicFamily(vf, eps, tol=1e-12)
    handle = family.at(mu)
    # averaged radius sqrt(mu) up to O(eps)
    circle = torus.invariant_circle(handle, [0.0, 0.0], math.sqrt(mu), inverse=handle.inverse())
    sec = StroboscopicSection(vf.period)
    mesh, residual, extended = torus.saturate_torus(circle, vf, sec, mu, eps, grid=(16, 4))
    assert extended and mesh.shape == (16, 5, 3)
    assert np.allclose(mesh[:, -1, 2], 2 * np.pi) and np.allclose(mesh[:, 0, 2], 0.0)
    assert residual <= 1e-8
