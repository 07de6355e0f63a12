"""Poincare maps (stroboscopic and affine-section return maps), Newton fixed
points and natural-parameter continuation of fixed-point curves.

A *map handle* is any callable ``p -> MapEval`` accepting points of shape (m,)
or a batch (N, m). A *map family* is a callable ``(p, mu) -> MapEval`` with an
``at(mu)`` method returning the handle at fixed ``mu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import (BranchLost, FoldDetected, NoConvergence, NoReturn, SingularJacobian,
                     TangentialCrossing)
from .flow import DP54, pack_variational, solve, unpack_variational, variational_rhs

log = logging.getLogger(__name__)


@dataclass
class MapEval:
    image: np.ndarray
    jacobian: np.ndarray
    return_time: np.ndarray | float


# -- sections -------------------------------------------------------------------

@dataclass(frozen=True)
class StroboscopicSection:
    """The fixed-phase section {t = t0} of the extended phase space."""

    period: float
    t0: float = 0.0
    kind: str = "stroboscopic"


@dataclass(frozen=True, eq=False)
class AffineSection:
    """Hyperplane through ``anchor`` with unit ``normal``; crossings count only
    when sign<F, normal> equals ``orientation``."""

    anchor: np.ndarray
    normal: np.ndarray
    orientation: int = 1
    basis: np.ndarray = field(init=False)
    kind: str = "affine"

    def __post_init__(self):
        anchor = np.asarray(self.anchor, dtype=float)
        normal = np.asarray(self.normal, dtype=float)
        nrm = np.linalg.norm(normal)
        if nrm == 0:
            raise ValueError("section normal must be non-zero")
        normal = normal / nrm
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "orientation", 1 if self.orientation >= 0 else -1)
        object.__setattr__(self, "basis", _tangent_basis(normal))

    @property
    def dimension(self):
        return len(self.anchor) - 1

    def to_ambient(self, p):
        return self.anchor + np.asarray(p, dtype=float) @ self.basis.T

    def to_section(self, x):
        return (np.asarray(x, dtype=float) - self.anchor) @ self.basis

    def check_transversal(self, vf, mu, eps=0.0, point=None):
        x = self.anchor if point is None else self.to_ambient(point)
        (f,) = vf.rhs(0.0, x, mu, eps)
        if abs(f @ self.normal) <= 1e-6 * np.linalg.norm(f):
            raise TangentialCrossing("field is tangent to the section at the anchor")


def make_affine_section(vf, anchor, normal, orientation=1, mu=0.0):
    sec = AffineSection(np.asarray(anchor, float), np.asarray(normal, float), orientation)
    sec.check_transversal(vf, mu)
    return sec


def _tangent_basis(normal):
    """Orthonormal basis of the normal's complement, Gram-Schmidt on coordinate axes."""
    n = len(normal)
    vecs = [normal]
    # skip the axis most aligned with the normal; the rest span the complement
    drop = int(np.argmax(np.abs(normal)))
    for i in range(n):
        if i == drop:
            continue
        v = np.zeros(n)
        v[i] = 1.0
        for u in vecs:
            v = v - (u @ v) * u
        vecs.append(v / np.linalg.norm(v))
    return np.column_stack(vecs[1:])


# -- stroboscopic map -------------------------------------------------------------

def stroboscopic_map(vf, x, mu, eps, tol=1e-10, t0=0.0, backward=False) -> MapEval:
    """x -> phi_eps(t0 + T, x) for a T-periodic family, with its Jacobian."""
    if not vf.is_periodic:
        raise ValueError("stroboscopic maps need a periodic vector field")
    x = np.asarray(x, dtype=float)
    T = vf.period
    t1 = t0 - T if backward else t0 + T
    fun = variational_rhs(vf, mu, eps, x.shape)
    y, _ = solve(fun, t0, pack_variational(x), t1, tol)
    img, Y, _ = unpack_variational(y, x.shape)
    return MapEval(img, Y, T)


class StroboscopicFamily:
    """Stroboscopic maps of a periodic family at fixed ``eps``, as a map family in mu."""

    def __init__(self, vf, eps, tol=1e-10, t0=0.0):
        self.vf, self.eps, self.tol, self.t0 = vf, eps, tol, t0
        self.dimension = vf.dimension

    def __call__(self, p, mu, backward=False):
        return stroboscopic_map(self.vf, p, mu, self.eps, self.tol, self.t0, backward)

    def at(self, mu, backward=False):
        return _Fixed(self, mu, backward)


# -- return maps ---------------------------------------------------------------------

ROOT_TOL = 1e-12


def _crossing_value(sec, x):
    return (x - sec.anchor) @ sec.normal


def return_map(vf, sec: AffineSection, p, mu, tol=1e-10, t_max=1000.0,
               backward=False) -> MapEval:
    """First oriented return of the flow from section point(s) ``p``.

    The Jacobian is the section-projected monodromy
    B^T (I - F nu^T / <F, nu>) M B evaluated at the return point. With
    ``backward`` the flow runs in negative time (inverse return map); the
    reported return time is then the positive duration.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    P = np.atleast_2d(p)
    N, m = P.shape
    n = m + 1
    X0 = sec.to_ambient(P)
    direction = -1.0 if backward else 1.0
    shape = (N, n)
    fun = variational_rhs(vf, mu, 0.0, shape)
    stepper = DP54(fun, 0.0, pack_variational(X0), direction * t_max, tol)

    g_prev = np.zeros(N)  # all start on the section
    found = np.zeros(N, dtype=bool)
    t_cross = np.zeros(N)
    starts = [None] * N  # (t_old, y_old flat for this trajectory)
    nx = N * n
    while not found.all():
        if stepper.done:
            raise NoReturn(f"no return to the section within t_max = {t_max}")
        t_old, y_old = stepper.t, stepper.y
        stepper.step()
        x_new = stepper.y[:nx].reshape(shape)
        g_new = _crossing_value(sec, x_new)
        s = direction * sec.orientation
        hit = (~found) & (s * g_prev < 0) & (s * g_new >= 0)
        for j in np.flatnonzero(hit):
            gj = lambda t, j=j: _crossing_value(sec, stepper.dense(t)[:nx].reshape(shape)[j])
            a, b = stepper.t_old, stepper.t
            t_cross[j] = brentq(gj, min(a, b), max(a, b), xtol=1e-15, rtol=4 * np.finfo(float).eps) \
                if gj(a) * gj(b) < 0 else b
            starts[j] = (t_old, _slice_traj(y_old, j, N, n))
            found[j] = True
        g_prev = np.where(found, g_prev, g_new)

    images = np.empty((N, m))
    jacs = np.empty((N, m, m))
    taus = np.empty(N)
    for j in range(N):
        x_c, Y_c, t_c = _refine_crossing(vf, sec, mu, tol, starts[j], t_cross[j])
        (f,) = vf.rhs(t_c, x_c, mu, 0.0)
        fn = f @ sec.normal
        if abs(fn) < 1e-6 * np.linalg.norm(f):
            raise TangentialCrossing(f"numerically tangent crossing at t = {t_c:.6g}")
        proj = np.eye(n) - np.outer(f, sec.normal) / fn
        images[j] = sec.to_section(x_c)
        jacs[j] = sec.basis.T @ proj @ Y_c @ sec.basis
        taus[j] = abs(t_c)
    if single:
        return MapEval(images[0], jacs[0], float(taus[0]))
    return MapEval(images, jacs, taus)


def _slice_traj(y, j, N, n):
    nx = N * n
    x = y[:nx].reshape(N, n)[j]
    Y = y[nx:nx + nx * n].reshape(N, n, n)[j]
    return x.copy(), Y.copy()


def _refine_crossing(vf, sec, mu, tol, start, t_guess):
    """Re-integrate one trajectory from the step start to the crossing and
    polish the crossing time with Newton steps on <x(t) - anchor, nu>."""
    t_old, (x_old, Y_old) = start
    shape = (len(x_old),)
    fun = variational_rhs(vf, mu, 0.0, shape)
    t_c = t_guess
    for _ in range(8):
        if t_c == t_old:
            x_c, Y_c = x_old, Y_old
        else:
            y, _ = solve(fun, t_old, pack_variational(x_old, Y_old), t_c, tol)
            x_c, Y_c, _ = unpack_variational(y, shape)
        g = _crossing_value(sec, x_c)
        if abs(g) <= ROOT_TOL:
            break
        (f,) = vf.rhs(t_c, x_c, mu, 0.0)
        t_c = t_c - g / (f @ sec.normal)
    return x_c, Y_c, t_c


class ReturnMapFamily:
    """Return maps of an autonomous family on an affine section."""

    def __init__(self, vf, sec, tol=1e-10, t_max=1000.0):
        self.vf, self.sec, self.tol, self.t_max = vf, sec, tol, t_max
        self.dimension = sec.dimension

    def __call__(self, p, mu, backward=False):
        return return_map(self.vf, self.sec, p, mu, self.tol, self.t_max, backward)

    def at(self, mu, backward=False):
        return _Fixed(self, mu, backward)


class FunctionMapFamily:
    """Map family from plain functions ``f(p, mu) -> image`` and ``jac(p, mu)``.

    Both must accept a trailing state axis with arbitrary batch axes in front.
    ``inverse``/``inverse_jac`` optionally give the inverse map.
    """

    def __init__(self, f, jac, dimension, inverse=None, inverse_jac=None):
        self.f, self.jac, self.dimension = f, jac, dimension
        self.inverse, self.inverse_jac = inverse, inverse_jac

    def __call__(self, p, mu, backward=False):
        p = np.asarray(p, dtype=float)
        if backward:
            if self.inverse is None:
                raise NotImplementedError("no inverse map supplied")
            return MapEval(self.inverse(p, mu), self.inverse_jac(p, mu), 1.0)
        return MapEval(self.f(p, mu), self.jac(p, mu), 1.0)

    def at(self, mu, backward=False):
        return _Fixed(self, mu, backward)

    @property
    def has_inverse(self):
        return self.inverse is not None


class _Fixed:
    """A map family frozen at one parameter value."""

    def __init__(self, family, mu, backward=False):
        self.family, self.mu, self.backward = family, mu, backward
        self.dimension = family.dimension

    def __call__(self, p):
        return self.family(p, self.mu, self.backward)

    def inverse(self):
        if isinstance(self.family, FunctionMapFamily) and not self.family.has_inverse:
            return None
        return _Fixed(self.family, self.mu, not self.backward)


# -- fixed points -----------------------------------------------------------------

def newton_fixed_point(map_handle: Callable, p0, newton_tol=1e-11, max_iter=40,
                       cond_tol=1e-12):
    """Newton iteration on Pi(p) - p. Returns (p_star, residual)."""
    p = np.array(p0, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    for _ in range(max_iter):
        ev = map_handle(p)
        r = np.atleast_1d(ev.image) - p
        res = float(np.linalg.norm(r))
        if res <= newton_tol:
            return (p[0] if scalar else p), res
        A = np.atleast_2d(ev.jacobian) - np.eye(len(p))
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= cond_tol * max(sv[0], 1.0):
            raise SingularJacobian("D Pi - I is singular at the iterate")
        step = np.linalg.solve(A, -r)
        p = p + step
        if not np.all(np.isfinite(p)):
            raise NoConvergence("Newton iterate became non-finite")
    ev = map_handle(p)
    res = float(np.linalg.norm(np.atleast_1d(ev.image) - p))
    if res <= newton_tol:
        return (p[0] if scalar else p), res
    raise NoConvergence(f"Newton did not converge in {max_iter} iterations (residual {res:.3g})")


@dataclass
class FixedPointSample:
    mu: float
    point: np.ndarray
    eigenvalues: np.ndarray
    jacobian: np.ndarray


@dataclass
class FixedPointCurve:
    """Samples (mu, p*(mu), spectrum) along a branch of fixed points."""

    samples: list
    family: object = None
    newton_tol: float = 1e-11
    arclength: bool = False

    @property
    def mus(self):
        return np.array([s.mu for s in self.samples])

    def guess(self, mu):
        mus = self.mus
        pts = np.array([s.point for s in self.samples])
        if len(mus) == 1:
            return pts[0]
        order = np.argsort(mus)
        return np.array([np.interp(mu, mus[order], pts[order, i]) for i in range(pts.shape[1])])

    def solve_at(self, mu) -> FixedPointSample:
        """Fixed point and spectrum at any mu along the branch."""
        handle = self.family.at(mu)
        p, _ = newton_fixed_point(handle, self.guess(mu), self.newton_tol)
        ev = handle(p)
        J = np.atleast_2d(ev.jacobian)
        from .spectral import eigenvalues
        return FixedPointSample(mu, np.atleast_1d(p), eigenvalues(J), J)


def continue_fixed_points(family, p0, mu_range, step, newton_tol=1e-11, min_step=None,
                          fold_tol=1e-2, max_iter=40) -> FixedPointCurve:
    """Natural-parameter continuation of p*(mu) from mu_range[0] to mu_range[1].

    Step halving on Newton failure; if the step underflows near a point where
    D Pi - I is nearly singular the branch is reported as a fold.
    """
    from .spectral import eigenvalues

    mu0, mu1 = float(mu_range[0]), float(mu_range[1])
    direction = 1.0 if mu1 >= mu0 else -1.0
    step = abs(step)
    min_step = min_step if min_step is not None else 1e-6 * max(abs(mu1 - mu0), 1e-12)
    p, _ = newton_fixed_point(family.at(mu0), p0, newton_tol, max_iter)
    p = np.atleast_1d(p)

    def sample(mu, p):
        ev = family.at(mu)(p)
        J = np.atleast_2d(ev.jacobian)
        return FixedPointSample(mu, p.copy(), eigenvalues(J), J)

    def sigma_min(s):
        return np.linalg.svd(s.jacobian - np.eye(len(s.point)), compute_uv=False)[-1]

    def det_sign(s):
        return np.sign(np.linalg.det(s.jacobian - np.eye(len(s.point))))

    samples = [sample(mu0, p)]
    mu = mu0
    h = step
    while direction * (mu1 - mu) > 1e-14 * max(1.0, abs(mu1)):
        h_try = min(h, abs(mu1 - mu))
        mu_new = mu + direction * h_try
        if len(samples) >= 2:
            a, b = samples[-2], samples[-1]
            guess = b.point + (b.point - a.point) * (mu_new - b.mu) / (b.mu - a.mu)
        else:
            guess = samples[-1].point
        try:
            p_new, _ = newton_fixed_point(family.at(mu_new), guess, newton_tol, max_iter)
            new = sample(mu_new, np.atleast_1d(p_new))
        except (NoConvergence, SingularJacobian) as exc:
            h = h_try / 2
            if h < min_step:
                last = samples[-1]
                if sigma_min(last) < fold_tol:
                    raise FoldDetected(f"fold near mu = {last.mu:.6g}: D Pi - I nearly singular",
                                       mu=last.mu) from exc
                raise BranchLost(f"continuation step underflow at mu = {last.mu:.6g}") from exc
            continue
        if det_sign(new) != det_sign(samples[-1]) and det_sign(new) != 0:
            raise FoldDetected(f"det(D Pi - I) changes sign between mu = {samples[-1].mu:.6g} "
                               f"and {mu_new:.6g}", mu=mu_new)
        samples.append(new)
        mu = mu_new
        h = min(step, 2 * h_try)
    return FixedPointCurve(samples, family, newton_tol)
