"""Neimark-Sacker bifurcation of the delayed logistic map (x, y) -> (mu x (1 - y), x).

Certifies the crossing at mu = 2, then computes the invariant circle just past it
and its Lyapunov exponents.
"""

import math

import numpy as np

from toruskit import models, torus
from toruskit.nshopf import certify_ns
from toruskit.section import continue_fixed_points


def main(mu=2.05):
    family = models.delayed_logistic()
    curve = continue_fixed_points(family, models.delayed_logistic_fixed_point(1.9), (1.9, 2.1), 0.05)
    cert = certify_ns(family, curve, (1.9, 2.1))
    print(f"mu* = {cert.mu_star:.10f}  theta0 / (pi/3) = {cert.theta0 / (math.pi / 3):.10f}")
    print(f"d_mod = {cert.d_mod:.6f}  ell1 = {cert.ell1:.6f}  -> {cert.predicted['torus_stability']} curve "
          f"for mu {'>' if cert.predicted['torus_side'] > 0 else '<'} mu*")

    handle = family.at(mu)
    r0 = torus.predicted_radius(cert.d_mod, cert.ell1, mu, cert.mu_star)
    circle = torus.invariant_circle(handle, curve.solve_at(mu).point, r0, inverse=handle.inverse())
    r = circle.radius(np.linspace(0, 2 * np.pi, 256, endpoint=False))
    print(f"mu = {mu}: circle with M = {circle.M}, residual {circle.residual:.1e}, "
          f"radius {r.min():.4f}..{r.max():.4f} (normal-form estimate {r0:.4f})")
    print(f"rotation number ~ {circle.rotation_estimate:.6f}")

    nh = torus.nh_certificate(circle, handle, iterations=5000)
    print(f"tangential exponent {nh.tangential_exponent:.2e}, normal {nh.normal_exponents[0]:.5f}, "
          f"gap {nh.gap:.5f}, {'attracting' if nh.attracting else 'repelling'}")


if __name__ == "__main__":
    main()
