"""Reference families with known bifurcation data, used by the demos and tests."""

from __future__ import annotations

import math

import numpy as np

from .exprvf import system_from_dict
from .section import FunctionMapFamily


# -- maps ------------------------------------------------------------------------------

def delayed_logistic() -> FunctionMapFamily:
    """(x, y) -> (mu x (1 - y), x); NS point at mu = 2 with theta0 = pi/3."""
    def f(p, mu):
        p = np.asarray(p, dtype=float)
        return np.stack([mu * p[..., 0] * (1 - p[..., 1]), p[..., 0]], axis=-1)

    def jac(p, mu):
        p = np.asarray(p, dtype=float)
        J = np.zeros(p.shape + (2,))
        J[..., 0, 0] = mu * (1 - p[..., 1])
        J[..., 0, 1] = -mu * p[..., 0]
        J[..., 1, 0] = 1.0
        return J

    def inv(q, mu):
        q = np.asarray(q, dtype=float)
        x = q[..., 1]
        return np.stack([x, 1 - q[..., 0] / (mu * x)], axis=-1)

    def inv_jac(q, mu):
        q = np.asarray(q, dtype=float)
        x = q[..., 1]
        J = np.zeros(q.shape + (2,))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -1 / (mu * x)
        J[..., 1, 1] = q[..., 0] / (mu * x * x)
        return J

    return FunctionMapFamily(f, jac, 2, inv, inv_jac)


def delayed_logistic_fixed_point(mu):
    v = 1 - 1 / mu
    return np.array([v, v])


def conjugated(family: FunctionMapFamily, M) -> FunctionMapFamily:
    """The family q -> M Pi(M^-1 q) for an invertible matrix M."""
    M = np.asarray(M, dtype=float)
    Mi = np.linalg.inv(M)

    def f(q, mu):
        return family.f(np.asarray(q) @ Mi.T, mu) @ M.T

    def jac(q, mu):
        return M @ family.jac(np.asarray(q) @ Mi.T, mu) @ Mi

    return FunctionMapFamily(f, jac, family.dimension)


def ns_normal_form(a=-1.0, d=1.0, omega=1.0) -> FunctionMapFamily:
    """z -> e^{i omega} z (1 + d mu + a |z|^2) in Cartesian form.

    The radial part is r -> (1 + d mu) r + a r^3, so for d mu / a < 0 the circle
    r^2 = -d mu / a is invariant with normal multiplier 1 - 2 d mu.
    """
    c, s = math.cos(omega), math.sin(omega)
    R = np.array([[c, -s], [s, c]])

    def f(p, mu):
        p = np.asarray(p, dtype=float)
        g = 1 + d * mu + a * np.sum(p * p, axis=-1)
        return g[..., None] * (p @ R.T)

    def jac(p, mu):
        p = np.asarray(p, dtype=float)
        g = 1 + d * mu + a * np.sum(p * p, axis=-1)
        inner = g[..., None, None] * np.eye(2) + 2 * a * p[..., :, None] * p[..., None, :]
        return R @ inner

    def inv(q, mu):
        # radial inverse by Newton on (1 + d mu) r + a r^3 = rho
        q = np.asarray(q, dtype=float)
        rho = np.linalg.norm(q, axis=-1)
        r = rho / (1 + d * mu)
        for _ in range(60):
            step = ((1 + d * mu) * r + a * r ** 3 - rho) / ((1 + d * mu) + 3 * a * r * r)
            r = r - step
            if np.all(np.abs(step) < 1e-16 * (1 + np.abs(r))):
                break
        g = 1 + d * mu + a * r * r
        return (q @ R) / g[..., None]

    def inv_jac(q, mu):
        return np.linalg.inv(jac(inv(q, mu), mu))

    return FunctionMapFamily(f, jac, 2, inv, inv_jac)


# -- vector fields -------------------------------------------------------------------------

def _system(**spec):
    return system_from_dict(spec)


def linear_rotation_family(omega=1.0):
    """x' = eps A(mu) x, A(mu) = [[mu, -omega], [omega, mu]] (no nonlinearity)."""
    return _system(dimension=2, kind="periodic", period=2 * math.pi, order_k=2,
                   constants={"w": omega},
                   fields=[["mu*x1 - w*x2", "w*x1 + mu*x2"], ["0", "0"]])


def linear_periodic_family(A, B=None, period=2 * math.pi):
    """x' = eps (A + mu I) x + eps^2 B x with constant matrices."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    B = np.zeros_like(A) if B is None else np.asarray(B, dtype=float)

    def row(M, i, extra=""):
        terms = [f"({float(M[i, j])!r})*x{j + 1}" for j in range(n)]
        return " + ".join(terms) + extra

    f1 = [row(A, i, f" + mu*x{i + 1}") for i in range(n)]
    f2 = [row(B, i) for i in range(n)]
    return _system(dimension=n, kind="periodic", period=period, order_k=2, fields=[f1, f2])


def forced_normal_form(a=-1.0, forcing=0.5, c2=0.25, omega=1.0):
    """Periodically forced cubic Hopf normal form, T = 2 pi, k = 2.

    F_1 = (mu x1 - w x2 + a x1 r^2, w x1 + mu x2 + a x2 r^2) + s sin(t) (x2, x1),
    F_2 = c2 (x1, x2). The guiding system 2 pi F_1-average has a Hopf point at
    x = 0, mu = 0 with alpha'(0) = 2 pi and a supercritical sign for a < 0.
    """
    r2 = "(x1^2 + x2^2)"
    f1 = [f"mu*x1 - w*x2 + a*x1*{r2} + s*sin(t)*x2",
          f"w*x1 + mu*x2 + a*x2*{r2} + s*sin(t)*x1"]
    f2 = ["c2*x1", "c2*x2"]
    return _system(dimension=2, kind="periodic", period=2 * math.pi, order_k=2,
                   constants={"a": a, "s": forcing, "c2": c2, "w": omega}, fields=[f1, f2])


def zero_mean_family(c=(1.0, 0.5), B=((0.0, -1.0), (1.0, 0.0))):
    """F_1 = sin(t) c has zero average and no x-dependence, F_2 = B x: first nonzero g is g_2."""
    f1 = [f"({c[0]!r})*sin(t)", f"({c[1]!r})*sin(t)"]
    f2 = [f"({B[0][0]!r})*x1 + ({B[0][1]!r})*x2", f"({B[1][0]!r})*x1 + ({B[1][1]!r})*x2"]
    return _system(dimension=2, kind="periodic", period=2 * math.pi, order_k=2, fields=[f1, f2])


def all_vanishing_family():
    """Pure zero-mean forcing independent of x at both orders."""
    return _system(dimension=2, kind="periodic", period=2 * math.pi, order_k=2,
                   fields=[["sin(t)", "cos(t)"], ["sin(2*t)", "0"]])


def cylinder_hopf(a=-1.0, omega=0.3):
    """Autonomous 3D field whose periodic orbit on the unit circle undergoes a secondary Hopf.

    Writing (x1, x2) = R (cos phi, sin phi), u = R - 1, z = x3:
    phi' = 1, (u, z)' = Hopf normal form with linear part [[mu, -w], [w, mu]]
    and cubic coefficient a. Every return to {x2 = 0, x1 > 0} takes exactly 2 pi,
    and the return map is the time-2 pi flow of the normal form, so for a < 0 and
    mu > 0 the invariant circle u^2 + z^2 = -mu/a saturates to an attracting torus.
    """
    R = "sqrt(x1^2 + x2^2)"
    u = f"({R} - 1)"
    rad = f"(mu*{u} - w*x3 + a*{u}*({u}^2 + x3^2))"
    f = [f"-x2 + x1*{rad}/{R}",
         f"x1 + x2*{rad}/{R}",
         f"w*{u} + mu*x3 + a*x3*({u}^2 + x3^2)"]
    return _system(dimension=3, kind="autonomous", constants={"a": a, "w": omega}, fields=[f])


def linear_autonomous():
    """Planar linear focus family; its Poincare map has no nonlinear terms."""
    return _system(dimension=2, kind="autonomous", fields=[["mu*x1 - x2", "x1 + mu*x2"]])
