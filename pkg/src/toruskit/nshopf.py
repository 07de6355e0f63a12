"""Neimark-Sacker points of Poincare maps and Hopf points of planar guiding fields.

The first Lyapunov coefficient of a map at a fixed point with critical
multipliers exp(+-i theta0) is

    ell1 = 1/2 Re( e^{-i theta0} [ <p, C(q,q,qbar)>
                                   + 2 <p, B(q, (I - A)^{-1} B(q,qbar))>
                                   + <p, B(qbar, (e^{2 i theta0} I - A)^{-1} B(q,q))> ] )

with A q = e^{i theta0} q, A^T p = e^{-i theta0} p, <p, q> = conj(p) . q = 1.
B and C are the second and third derivatives of the map, obtained here by
central differences of the map's Jacobian.
"""

from __future__ import annotations

import cmath
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import (AmbiguousCritical, Degenerate, HypothesisSViolated, HypothesisViolated,
                     IllConditionedSolve, NoConvergence, NoCrossing, NoEquilibrium, NoHopfPoint,
                     PairLost, ResonantEigenvalue, SingularJacobian, TransversalityFails)
from .section import FixedPointCurve, FixedPointSample, MapEval, newton_fixed_point
from .spectral import (RESONANCE_TOL, UNIT_BAND, classify_multipliers, eigenvalues,
                       resonance_check, residual_vector, tracked_pair)

log = logging.getLogger(__name__)

H_TOL = 1e-10


def _pair_at(curve: FixedPointCurve, mu):
    s = curve.solve_at(mu)
    lam = tracked_pair(s.eigenvalues)
    if lam is None:
        raise PairLost(f"no complex multiplier pair at mu = {mu:.8g}")
    return lam, s


def locate_ns_parameter(curve: FixedPointCurve, bracket) -> float:
    """mu* in ``bracket`` where the tracked pair has modulus one."""
    lo, hi = sorted(float(b) for b in bracket)
    known = {s.mu: s for s in curve.samples if lo <= s.mu <= hi}
    grid = sorted(set([lo, hi]) | set(known))

    def h(mu):
        return abs(_pair_at(curve, mu)[0]) - 1.0

    def h_grid(mu):
        if mu in known:
            lam = tracked_pair(known[mu].eigenvalues)
            if lam is None:
                raise PairLost(f"no complex multiplier pair at mu = {mu:.8g}")
            return abs(lam) - 1.0
        return h(mu)

    values = [h_grid(m) for m in grid]
    a = b = None
    for m0, m1, v0, v1 in zip(grid, grid[1:], values, values[1:]):
        if v0 == 0:
            return m0
        if v0 * v1 < 0:
            a, b = m0, m1
            break
    if values[-1] == 0:
        return grid[-1]
    if a is None:
        raise NoCrossing(f"|lambda| - 1 does not change sign on [{lo:.6g}, {hi:.6g}]")
    mu_star = brentq(h, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(h(mu_star)) > H_TOL:
        raise NoConvergence(f"|lambda(mu*)| - 1 = {h(mu_star):.3g} exceeds {H_TOL}")
    return float(mu_star)


def transversality(curve: FixedPointCurve, mu_star, h=1e-3, degenerate_tol=1e-6):
    """(d Re lambda/d mu, d|lambda|/d mu) at mu*, Richardson-extrapolated central differences."""
    def central(f, step):
        return (f(mu_star + step) - f(mu_star - step)) / (2 * step)

    def both(mu):
        lam = _pair_at(curve, mu)[0]
        return np.array([lam.real, abs(lam)])

    d1 = central(both, h)
    d2 = central(both, h / 2)
    d = (4 * d2 - d1) / 3
    d_re, d_mod = float(d[0]), float(d[1])
    if abs(d_mod) < degenerate_tol:
        raise Degenerate(f"d|lambda|/dmu = {d_mod:.3g} at mu* = {mu_star:.8g}")
    return d_re, d_mod


# -- multilinear forms ----------------------------------------------------------------

class _Derivatives:
    """Second/third map derivatives from central differences of Jacobians.

    Each directional difference and its half-step Richardson partner go through
    one batched map evaluation; results are cached per direction.
    """

    def __init__(self, map_handle, p_star, tol):
        self.map = map_handle
        self.p = np.asarray(p_star, dtype=float)
        scale = 1.0 + np.linalg.norm(self.p)
        self.h2 = tol ** (1 / 3) * scale
        self.h3 = tol ** (1 / 4) * scale
        self._cache = {}

    def _jacs(self, points):
        return np.asarray(self.map(np.asarray(points)).jacobian)

    def d2_real(self, u):
        """D(DPi)[u] for real u, one Richardson level."""
        key = ("2", u.tobytes())
        if key not in self._cache:
            h = self.h2
            J = self._jacs([self.p + h * u, self.p - h * u, self.p + h / 2 * u, self.p - h / 2 * u])
            coarse = (J[0] - J[1]) / (2 * h)
            fine = (J[2] - J[3]) / h
            self._cache[key] = (4 * fine - coarse) / 3
        return self._cache[key]

    def d3_real(self, u, v):
        """D^2(DPi)[u, v] for real u, v, one Richardson level."""
        key = ("3",) + tuple(sorted((u.tobytes(), v.tobytes())))
        if key not in self._cache:
            pts = []
            for h in (self.h3, self.h3 / 2):
                pts += [self.p + h * (u + v), self.p + h * (u - v),
                        self.p - h * (u - v), self.p - h * (u + v)]
            J = self._jacs(pts)
            out = [(J[i] - J[i + 1] - J[i + 2] + J[i + 3]) / (4 * h * h)
                   for i, h in ((0, self.h3), (4, self.h3 / 2))]
            self._cache[key] = (4 * out[1] - out[0]) / 3
        return self._cache[key]

    def B(self, u, v):
        u = np.asarray(u, dtype=complex)
        D = self.d2_real(u.real) + 1j * self.d2_real(u.imag)
        return D @ np.asarray(v, dtype=complex)

    def C(self, u, v, w):
        u = np.asarray(u, dtype=complex)
        v = np.asarray(v, dtype=complex)
        D = (self.d3_real(u.real, v.real) - self.d3_real(u.imag, v.imag)
             + 1j * (self.d3_real(u.real, v.imag) + self.d3_real(u.imag, v.real)))
        return D @ np.asarray(w, dtype=complex)


def critical_eigenvectors(A, lambda1):
    """Right q (||q|| = 1, largest entry real positive) and left p with <p, q> = 1."""
    q, _ = residual_vector(A, lambda1)
    k = int(np.argmax(np.abs(q)))
    q = q * (abs(q[k]) / q[k])
    q = q / np.linalg.norm(q)
    p, _ = residual_vector(np.asarray(A).T, np.conj(lambda1))
    p = p / np.conj(np.vdot(p, q))
    return q, p


def lyapunov_coefficient_map(map_handle, p_star, lambda1, tol=1e-10,
                             resonance_tol=RESONANCE_TOL, cond_cap=1e12) -> float:
    """First Lyapunov coefficient of the map at fixed point ``p_star``.

    Negative means supercritical (attracting invariant curve), positive subcritical.
    """
    p_star = np.asarray(p_star, dtype=float)
    A = np.atleast_2d(map_handle(p_star).jacobian)
    ev = eigenvalues(A)
    lam = complex(ev[np.argmin(np.abs(ev - complex(lambda1)))])
    if lam.imag < 0:
        lam = lam.conjugate()
    if min(abs(lam ** q - 1) for q in range(1, 5)) < resonance_tol:
        raise ResonantEigenvalue(f"multiplier {lam:.6g} is (near) strongly resonant")
    theta = cmath.phase(lam)
    rot = cmath.exp(1j * theta)
    q, p = critical_eigenvectors(A, lam)
    n = len(p_star)
    d = _Derivatives(map_handle, p_star, tol)

    M1 = np.eye(n) - A
    M2 = cmath.exp(2j * theta) * np.eye(n) - A
    for M in (M1, M2):
        if np.linalg.cond(M) > cond_cap:
            raise IllConditionedSolve("bordered solve is ill conditioned")
    b_qqbar = d.B(q, q.conj())
    b_qq = d.B(q, q)
    t1 = np.vdot(p, d.C(q, q, q.conj()))
    t2 = 2 * np.vdot(p, d.B(q, np.linalg.solve(M1, b_qqbar)))
    t3 = np.vdot(p, d.B(q.conj(), np.linalg.solve(M2, b_qq)))
    c = (t1 + t2 + t3) / rot
    return float(0.5 * c.real)


# -- certificate -----------------------------------------------------------------------

@dataclass
class NSCertificate:
    mu_star: float
    fixed_point: np.ndarray
    critical_pair: tuple
    theta0: float
    d_re: float
    d_mod: float
    ell1: float
    n_s: int
    n_u: int
    resonance: dict
    predicted: dict

    def to_dict(self):
        return {
            "mu_star": self.mu_star,
            "fixed_point": [float(v) for v in self.fixed_point],
            "critical_pair": [[float(z.real), float(z.imag)] for z in self.critical_pair],
            "theta0": self.theta0,
            "d_re": self.d_re,
            "d_mod": self.d_mod,
            "ell1": self.ell1,
            "n_s": self.n_s,
            "n_u": self.n_u,
            "resonance": {str(q): ok for q, ok in self.resonance.items()},
            "predicted": dict(self.predicted),
        }


def predict(ell1, d_mod, n_s):
    """Case table of the Neimark-Sacker theorem.

    ``torus_side`` is the sign of mu - mu* on which the invariant curve (and the
    torus of the flow) exists.
    """
    if ell1 == 0 or d_mod == 0:
        return {"torus_side": 0, "torus_stability": "degenerate",
                "cycle_stable_multipliers": None, "stable_directions": None}
    if ell1 < 0:
        return {"torus_side": int(np.sign(d_mod)), "torus_stability": "attracting",
                "cycle_stable_multipliers": n_s, "stable_directions": n_s + 1}
    return {"torus_side": -int(np.sign(d_mod)), "torus_stability": "repelling",
            "cycle_stable_multipliers": n_s + 2, "stable_directions": n_s}


def certify_ns(family, curve: FixedPointCurve, bracket, unit_band=UNIT_BAND,
               resonance_tol=RESONANCE_TOL, tol=1e-10, h_mu=1e-3, lyap_tol=1e-9,
               require_nondegenerate=True, mu_star=None) -> NSCertificate:
    """Check every item of the Neimark-Sacker hypothesis at the crossing in ``bracket``."""
    if mu_star is None:
        mu_star = locate_ns_parameter(curve, bracket)
    s = curve.solve_at(mu_star)
    try:
        spec = classify_multipliers(s.eigenvalues, unit_band)
    except AmbiguousCritical as exc:
        raise HypothesisSViolated(2, str(exc)) from exc
    if spec.critical_pair is None:
        raise HypothesisSViolated(1, "no conjugate pair on the unit circle")
    if spec.n_c != 2:
        raise HypothesisSViolated(2, f"{spec.n_c} multipliers on the unit band")
    lam = spec.critical_pair[0]
    res = resonance_check(lam, 4, resonance_tol)
    failing = [q for q, ok in res.items() if not ok]
    if failing:
        raise HypothesisSViolated(3, f"lambda^q = 1 for q = {failing}")
    try:
        d_re, d_mod = transversality(curve, mu_star, h_mu)
    except Degenerate as exc:
        raise HypothesisSViolated(4, str(exc)) from exc
    handle = family.at(mu_star)
    ell1 = lyapunov_coefficient_map(handle, s.point, lam, tol, resonance_tol)
    if require_nondegenerate and abs(ell1) < lyap_tol:
        raise HypothesisViolated("ND", f"first Lyapunov coefficient {ell1:.3g} vanishes")
    return NSCertificate(
        mu_star=float(mu_star), fixed_point=np.asarray(s.point, float), critical_pair=(lam, lam.conjugate()),
        theta0=float(cmath.phase(lam)), d_re=d_re, d_mod=d_mod, ell1=ell1,
        n_s=spec.n_s, n_u=spec.n_u, resonance=res, predicted=predict(ell1, d_mod, spec.n_s))


# -- Hopf points of planar fields ---------------------------------------------------------

class _ZeroFamily:
    """Zeros of g(., mu) as fixed points of p -> p + g(p, mu)."""

    def __init__(self, g, jac):
        self.g, self.jac = g, jac

    def at(self, mu):
        def handle(p):
            p = np.asarray(p, dtype=float)
            return MapEval(p + self.g(p, mu), np.eye(len(p)) + self.jac(p, mu), 0.0)
        return handle


def fd_jacobian(g, step=1e-6):
    """Central-difference Jacobian of g(z, mu) in z."""
    def jac(z, mu):
        z = np.asarray(z, dtype=float)
        h = step * (1.0 + np.abs(z))
        cols = []
        for i in range(len(z)):
            e = np.zeros_like(z)
            e[i] = h[i]
            cols.append((np.asarray(g(z + e, mu)) - np.asarray(g(z - e, mu))) / (2 * h[i]))
        return np.column_stack(cols)
    return jac


@dataclass
class GuidingHopfReport:
    l: int
    x0: np.ndarray
    omega0: float
    xi: FixedPointCurve
    mu_samples: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha_prime_0: float

    def xi_at(self, mu):
        return self.xi.solve_at(mu).point

    def to_dict(self):
        return {
            "l": self.l,
            "x0": [float(v) for v in self.x0],
            "omega0": self.omega0,
            "xi": [{"mu": float(s.mu), "point": [float(v) for v in s.point]} for s in self.xi.samples],
            "mu_samples": [float(m) for m in self.mu_samples],
            "alpha": [float(a) for a in self.alpha],
            "beta": [float(b) for b in self.beta],
            "alpha_prime_0": self.alpha_prime_0,
        }


def hopf_detect_equilibrium(g, x_guess, jac=None, h=1e-3, newton_tol=1e-12,
                            imag_tol=1e-6, transversality_tol=1e-8, l=1) -> GuidingHopfReport:
    """Hopf point of the planar field g(z, mu) at mu = 0 and its transversality."""
    jac = jac or fd_jacobian(g)
    fam = _ZeroFamily(g, jac)
    try:
        x0, _ = newton_fixed_point(fam.at(0.0), x_guess, newton_tol)
    except (NoConvergence, SingularJacobian) as exc:
        raise NoEquilibrium(f"no equilibrium of the guiding field near {list(x_guess)}: {exc}") from exc
    J0 = jac(x0, 0.0)
    ev = eigenvalues(J0)
    lam = tracked_pair(ev)
    if lam is None or lam.imag <= 0:
        raise NoHopfPoint(f"guiding-field eigenvalues {ev} are real")
    scale = max(1.0, float(np.max(np.abs(J0))))
    if abs(lam.real) > imag_tol * scale:
        raise NoHopfPoint(f"eigenvalues {lam:.6g} are not purely imaginary")
    omega0 = float(lam.imag)

    mus = np.array([-h, -h / 2, 0.0, h / 2, h])
    samples, alpha, beta = [], [], []
    for mu in mus:
        try:
            z, _ = newton_fixed_point(fam.at(mu), x0, newton_tol)
        except (NoConvergence, SingularJacobian) as exc:
            raise NoEquilibrium(f"equilibrium branch lost at mu = {mu}: {exc}") from exc
        Jm = jac(z, mu)
        e = eigenvalues(Jm)
        pair = tracked_pair(e)
        if pair is None:
            raise NoHopfPoint(f"eigenvalues become real at mu = {mu}")
        samples.append(FixedPointSample(float(mu), np.asarray(z), e, Jm))
        alpha.append(pair.real)
        beta.append(pair.imag)
    alpha = np.array(alpha)
    d1 = (alpha[4] - alpha[0]) / (2 * h)
    d2 = (alpha[3] - alpha[1]) / h
    alpha_prime = float((4 * d2 - d1) / 3)
    if abs(alpha_prime) < transversality_tol:
        raise TransversalityFails(f"alpha'(0) = {alpha_prime:.3g}")
    xi = FixedPointCurve(samples, fam, newton_tol)
    return GuidingHopfReport(l=l, x0=np.asarray(x0), omega0=omega0, xi=xi, mu_samples=mus,
                             alpha=alpha, beta=np.array(beta), alpha_prime_0=alpha_prime)
