"""The bundled Rossler system against direct integration of the three-dimensional flow."""

import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from toruskit import avg
from toruskit.exprvf import system_from_dict
from toruskit.nshopf import hopf_detect_equilibrium
from toruskit.section import stroboscopic_map

DATA = Path(avg.__file__).parent / "data"
# columns map the transformed coordinates (u, v, w) to (x, y, z)
P = np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 1.0], [-1.0, 0.0, -1.0]])


def rossler_system(b1, c1):
    spec = json.loads((DATA / "rossler_system.json").read_text())
    spec["constants"] = {"b1": b1, "c1": c1}
    return system_from_dict(spec)


def first_return_3d(r0, w0, b1, c1, mu, eps):
    a = -1 + eps * (c1 - b1 + mu)
    b, c = 1 + eps * b1, -1 + eps * c1
    Pi = np.linalg.inv(P)

    def f(t, X):
        x, y, z = X
        return [-y - z, x + a * y, b * x - c * z - eps * x * z]

    def crossing(t, X):
        return (Pi @ X)[1] if t > 1 else 1.0
    crossing.direction = 1
    sol = solve_ivp(f, (0, 50), P @ [r0, 0.0, w0], events=crossing, rtol=1e-12, atol=1e-12)
    u, _, w = Pi @ sol.y_events[0][0]
    return np.array([u, w])


@pytest.mark.parametrize("point", [(1.3, 0.6), (1.0, -0.8)])
def test_stroboscopic_map_equals_rossler_return(point):
    b1, c1, mu, eps = 0.7, -0.3, 0.05, 0.03
    vf = rossler_system(b1, c1)
    image = stroboscopic_map(vf, np.array(point), mu, eps, 1e-12).image
    assert np.allclose(image, first_return_3d(*point, b1, c1, mu, eps), atol=1e-8)


def test_guiding_hopf_point():
    vf = rossler_system(1.0, 0.0)
    grid = np.array([[math.sqrt(2) + dx, -1 + dy] for dx in (-0.5, 0, 0.5) for dy in (-0.5, 0, 0.5)])
    assert avg.first_nonvanishing_index(vf, grid) == 1
    hopf = hopf_detect_equilibrium(avg.g_evaluator(vf, 1), [1.4, -1.0])
    assert np.allclose(hopf.x0, [math.sqrt(2), -1.0], atol=1e-10)
    assert hopf.omega0 > 0
    assert hopf.alpha_prime_0 == pytest.approx(math.pi, rel=1e-6)
