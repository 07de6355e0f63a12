"""Averaged functions of periodically perturbed systems.

For x' = sum_i eps^i F_i(t, x, mu) + eps^(k+1) F~ with period T, the
stroboscopic map expands as

    Pi_eps(z) = z + eps g_1(z) + eps^2 g_2(z) + ... + eps^k g_k(z) + O(eps^(k+1)),

with g_1 = int_0^T F_1 and g_2 = int_0^T [F_2 + D_x F_1 . y_1], y_1(t) = int_0^t F_1.
Orders one and two are computed by quadrature; every order is also available
from a polynomial fit of Pi_eps(z) - z in eps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

from .errors import (AllAveragesVanish, ConfigError, IllConditionedFit,
                     InsufficientSamples, NDFails, NoCrossing, QuadratureFail)
from .flow import integrate
from .nshopf import GuidingHopfReport, certify_ns
from .section import StroboscopicFamily, continue_fixed_points

log = logging.getLogger(__name__)

GL_ORDER = 16
MAX_PANELS = 1024
EPS_MAX = 1e-2
VANDERMONDE_CAP = 1e12
ND_TOL = 1e-6
VANISH_REL = 1e-8

_X, _W = legendre.leggauss(GL_ORDER)


def _integration_matrix():
    """S[j, m] = int_{-1}^{x_j} L_m(s) ds for the Lagrange basis on the GL nodes."""
    V = legendre.legvander(_X, GL_ORDER - 1)
    W = np.empty_like(V)
    for m in range(GL_ORDER):
        c = np.zeros(GL_ORDER)
        c[m] = 1.0
        W[:, m] = legendre.legval(_X, legendre.legint(c, lbnd=-1))
    return W @ np.linalg.inv(V)


_S = _integration_matrix()


def _nodes(T, panels):
    edges = np.linspace(0.0, T, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * _X[None, :]).reshape(-1)
    w = (half[:, None] * _W[None, :]).reshape(-1)
    return t, w, half


def _adaptive(value_fn, T, quad_tol):
    """Double the panel count until successive composite rules agree."""
    panels = 1
    prev = value_fn(*_nodes(T, panels))
    while panels < MAX_PANELS:
        panels *= 2
        cur = value_fn(*_nodes(T, panels))
        floor = 100 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(cur))))
        if float(np.max(np.abs(cur - prev))) <= max(quad_tol, floor):
            return cur
        prev = cur
    raise QuadratureFail(f"quadrature did not reach {quad_tol:.1e} with {MAX_PANELS} panels")


def _check_periodic(vf):
    if not vf.is_periodic:
        raise ConfigError("averaging needs a periodic vector field")


def _broadcast(z, t):
    z = np.asarray(z, dtype=float)
    return np.broadcast_to(z, t.shape + z.shape)


def averaged_g1(vf, z, mu, quad_tol=1e-12) -> np.ndarray:
    """g_1(z, mu) = int_0^T F_1(t, z, mu) dt."""
    _check_periodic(vf)

    def value(t, w, half):
        (f,) = vf.term(1, t, _broadcast(z, t), mu)
        return np.tensordot(w, np.broadcast_to(f, t.shape + (vf.dimension,)), axes=(0, 0))

    return _adaptive(value, vf.period, quad_tol)


def averaged_g2(vf, z, mu, quad_tol=1e-12) -> np.ndarray:
    """g_2(z, mu) = int_0^T [F_2 + D_x F_1 . y_1] dt with y_1 the running integral of F_1."""
    _check_periodic(vf)
    n = vf.dimension

    def value(t, w, half):
        x = _broadcast(z, t)
        f1, J1 = vf.term(1, t, x, mu, want="fj")
        f1 = np.broadcast_to(f1, t.shape + (n,)).reshape(-1, GL_ORDER, n)
        # panel-local spectral integration, then carry the panel totals
        local = np.einsum("jm,pmi->pji", _S, f1) * half[:, None, None]
        totals = np.einsum("m,pmi->pi", _W, f1) * half[:, None]
        offset = np.concatenate([np.zeros((1, n)), np.cumsum(totals, axis=0)[:-1]])
        y1 = (local + offset[:, None, :]).reshape(-1, n)
        integrand = np.einsum("tij,tj->ti", np.broadcast_to(J1, t.shape + (n, n)), y1)
        if vf.order_k >= 2:
            (f2,) = vf.term(2, t, x, mu)
            integrand = integrand + f2
        return np.tensordot(w, integrand, axes=(0, 0))

    return _adaptive(value, vf.period, quad_tol)


def default_eps_samples(k, eps_max=EPS_MAX):
    """Mirrored geometric samples +-eps_max 2^-j, j = 0..k+2."""
    base = eps_max * 2.0 ** -np.arange(k + 3)
    return np.concatenate([base, -base])


@dataclass
class NumericAverages:
    orders: dict
    residual: float
    condition: float


def extract_gi_numeric(vf, z, mu, k=None, eps_samples=None, eps_max=EPS_MAX,
                       tol=1e-13, extra_orders=4) -> NumericAverages:
    """Numeric g_1..g_k from a least-squares fit of Pi_eps(z) - z in powers of eps.

    ``z`` may be a single point or a batch (N, n). The fit carries ``extra_orders``
    powers beyond k to absorb the remainder; only orders 1..k are returned.
    """
    _check_periodic(vf)
    k = vf.order_k if k is None else int(k)
    eps = default_eps_samples(k, eps_max) if eps_samples is None else np.asarray(eps_samples, float)
    eps = np.unique(eps)
    if len(eps) < k + 2:
        raise InsufficientSamples(f"{len(eps)} distinct eps samples, need at least {k + 2}")
    if np.any(eps == 0):
        eps = eps[eps != 0]
    degree = min(k + extra_orders, len(eps) - 1)
    scale = float(np.max(np.abs(eps)))
    s = eps / scale
    V = np.stack([s ** i for i in range(1, degree + 1)], axis=1)
    cond = float(np.linalg.cond(V))
    if cond > VANDERMONDE_CAP:
        raise IllConditionedFit(f"Vandermonde condition {cond:.3g} exceeds {VANDERMONDE_CAP:.0e}")
    z = np.asarray(z, dtype=float)
    diffs = []
    for e in eps:
        res = integrate(vf, z, 0.0, vf.period, mu=mu, eps=float(e), tol=tol)
        diffs.append((res.endpoint - z).reshape(-1))
    Y = np.array(diffs)
    coef, _, _, _ = np.linalg.lstsq(V, Y, rcond=None)
    resid = float(np.max(np.abs(V @ coef - Y))) if len(eps) > degree else 0.0
    orders = {i: (coef[i - 1] / scale ** i).reshape(z.shape) for i in range(1, k + 1)}
    return NumericAverages(orders, resid, cond)


def closed_form(vf, order, quad_tol=1e-12):
    """Evaluator z, mu -> g_order for order 1 or 2."""
    if order == 1:
        return lambda z, mu: averaged_g1(vf, z, mu, quad_tol)
    if order == 2:
        return lambda z, mu: averaged_g2(vf, z, mu, quad_tol)
    raise ValueError("closed forms exist for orders 1 and 2 only")


def g_evaluator(vf, order, eps_max=EPS_MAX, quad_tol=1e-12) -> Callable:
    """Closed form when available, numeric extraction otherwise."""
    if order <= 2:
        return closed_form(vf, order, quad_tol)
    return lambda z, mu: extract_gi_numeric(vf, z, mu, eps_max=eps_max).orders[order]


def field_scale(vf, grid, mu=0.0, samples=64):
    """max_i sup over grid and t of T |F_i|, the reference size for vanishing tests."""
    t = np.linspace(0.0, vf.period, samples, endpoint=False)
    scale = 0.0
    for z in np.atleast_2d(grid):
        x = _broadcast(z, t)
        for i in range(1, vf.order_k + 1):
            (f,) = vf.term(i, t, x, mu)
            scale = max(scale, float(np.max(np.abs(f))) * vf.period)
    return scale


def first_nonvanishing_index(vf, grid, mu=0.0, vanish_rel=VANISH_REL, eps_max=EPS_MAX,
                             quad_tol=1e-12) -> int:
    """Smallest i with max over grid of |g_i| above vanish_rel times the field scale."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty sample grid")
    tol = vanish_rel * max(field_scale(vf, grid, mu), 1e-300)
    numeric = None
    for i in range(1, vf.order_k + 1):
        if i <= 2:
            g = np.array([closed_form(vf, i, quad_tol)(z, mu) for z in grid])
        else:
            if numeric is None:
                numeric = extract_gi_numeric(vf, grid, mu, eps_max=eps_max)
            g = numeric.orders[i]
        size = float(np.max(np.abs(g)))
        log.debug("order %d: max |g| = %.3e (tol %.1e)", i, size, tol)
        if size > tol:
            return i
    raise AllAveragesVanish(f"g_1..g_{vf.order_k} vanish on the sample grid")


@dataclass
class Ell1Fit:
    coeffs: dict
    j_star: int
    stderr: dict
    residual: float


def _ell1_lstsq(eps, vals, powers):
    scale = float(np.max(np.abs(eps)))
    V = np.stack([(eps / scale) ** j for j in powers], axis=1)
    if np.linalg.cond(V) > VANDERMONDE_CAP:
        raise IllConditionedFit("ell1 fit is ill conditioned")
    coef, _, _, _ = np.linalg.lstsq(V, vals, rcond=None)
    resid = V @ coef - vals
    dof = len(eps) - len(powers)
    if dof > 0:
        cov = float(resid @ resid) / dof * np.linalg.inv(V.T @ V)
        err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    else:
        err = np.zeros(len(powers))
    scales = np.array([scale ** j for j in powers])
    return coef / scales, err / scales, float(np.max(np.abs(resid)))


def ell1_expansion(eps_samples, ell1_values, l, k, nd_tol=ND_TOL, extra_orders=1) -> Ell1Fit:
    """Fit ell1(eps) = sum_{j=l}^{k} eps^j ell_{1,j} (+ higher) and locate j*.

    The fit is repeated with one more trailing power when the samples allow it; the
    change of each coefficient between the two fits is added to its standard error as
    a truncation estimate. j* is the first coefficient above ``nd_tol`` and above
    three times that uncertainty.
    """
    eps = np.asarray(eps_samples, dtype=float)
    vals = np.asarray(ell1_values, dtype=float)
    if len(eps) < k - l + 1:
        raise InsufficientSamples(f"{len(eps)} samples for {k - l + 1} coefficients")
    n = min(k - l + 1 + extra_orders, len(eps))
    coef, err, residual = _ell1_lstsq(eps, vals, list(range(l, l + n)))
    unc = err.copy()
    if len(eps) > n + 1:
        richer, err2, residual = _ell1_lstsq(eps, vals, list(range(l, l + n + 1)))
        unc = np.hypot(err2[:n], richer[:n] - coef)
        coef = richer[:n]
    coeffs, stderr = {}, {}
    for idx in range(min(n, k - l + 1)):
        coeffs[l + idx] = float(coef[idx])
        stderr[l + idx] = float(unc[idx])
    j_star = None
    for j in sorted(coeffs):
        if abs(coeffs[j]) > nd_tol and abs(coeffs[j]) > 3 * stderr[j]:
            j_star = j
            break
    if j_star is None:
        raise NDFails(f"no ell_1 coefficient resolved above {nd_tol:.1e}: "
                      f"{coeffs} +- {stderr}")
    return Ell1Fit(coeffs, j_star, stderr, residual)


def locate_mu_epsilon(vf, eps, hopf: GuidingHopfReport, bracket_factor=2.0, tol=1e-11,
                      steps=8, **certify_kw):
    """mu_eps and the NS certificate of the stroboscopic map at ``eps``.

    The search bracket is +-bracket_factor * |eps| around 0; it is widened four-fold
    once if |lambda| - 1 does not change sign.
    """
    family = StroboscopicFamily(vf, eps, tol)
    width = bracket_factor * abs(eps)
    p0 = hopf.xi_at(0.0)
    for attempt in range(2):
        bracket = (-width, width)
        curve = continue_fixed_points(family, p0, bracket, 2 * width / steps)
        try:
            cert = certify_ns(family, curve, bracket, tol=tol, require_nondegenerate=False,
                              **certify_kw)
            return cert.mu_star, cert, curve
        except NoCrossing:
            if attempt:
                raise
            log.info("no NS crossing in %s, widening", bracket)
            width *= 4
    raise NoCrossing("unreachable")


@dataclass
class AveragingReport:
    l: int
    g_closed: dict
    g_numeric: Callable
    hopf: GuidingHopfReport
    ell1_coeffs: dict
    j_star: int
    mu_of_eps: list
    ell1_samples: list = field(default_factory=list)
    ell1_stderr: dict = field(default_factory=dict)
    fit_residual: float = 0.0

    def to_dict(self):
        x0 = self.hopf.x0
        return {
            "l": self.l,
            "g_closed": {str(i): [float(v) for v in g(x0, 0.0)] for i, g in self.g_closed.items()},
            "g_numeric": {str(i): [float(v) for v in g] for i, g in self.g_numeric(x0, 0.0).items()},
            "hopf": self.hopf.to_dict(),
            "ell1_coeffs": {str(j): c for j, c in self.ell1_coeffs.items()},
            "j_star": self.j_star,
            "ell1_stderr": {str(j): c for j, c in self.ell1_stderr.items()},
            "ell1_samples": [[float(e), float(v)] for e, v in self.ell1_samples],
            "mu_of_eps": [[float(e), float(m)] for e, m in self.mu_of_eps],
            "fit_residual": self.fit_residual,
        }


def ell1_sign_torus_side(alpha_prime, ell1_j):
    """Sign of mu - mu_eps on which the torus exists: alpha'(0) ell_{1,j*} (mu - mu_eps) < 0."""
    return -int(np.sign(alpha_prime * ell1_j))

