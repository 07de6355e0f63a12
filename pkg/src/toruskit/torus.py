"""Invariant circles of Poincare maps, their normal hyperbolicity, and the saturated torus.

The circle is a polar graph around the fixed point p* in the frame
E = [e1, e2, e3, ...] whose first two columns are sqrt(2) (Re q, -Im q) for the
critical eigenvector q, so the linearised invariant ellipse is round:

    gamma(theta) = p* + E [rho(theta) cos theta, rho(theta) sin theta, w(theta)],

with rho and the slaved offsets w stored as real Fourier series of degree M.
Invariance means Pi(gamma(theta)) = gamma(theta') where theta' is the polar
angle of the image; the residual of that identity is driven to zero by
Gauss-Newton with Jacobians assembled from the map derivative.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DivergedIteration, FourierUnderresolved, MeshSelfIntersection, NoConvergence,
                     NoInvariantCircle, NoReturn, ResidualExceeded, TangentialDrift, TauDiscontinuity,
                     ToruskitError, TransversalityFails, WeakGap)
from .flow import DP54
from .section import AffineSection, StroboscopicSection, return_map
from .spectral import residual_vector, tracked_pair, eigenvalues

log = logging.getLogger(__name__)

M_DEFAULT = 16
M_MAX = 256
GAP_TOL = 1e-4
TANG_TOL = 1e-5
ANGLE_FLOOR = 0.1
LYAP_ITERATIONS = 10_000
FRESH_SAMPLES = 64


# -- real Fourier helpers ---------------------------------------------------------------

def _basis(theta, M):
    """[1, cos k theta, sin k theta] for k = 1..M, shape (N, 2M+1)."""
    theta = np.asarray(theta, dtype=float)[:, None]
    k = np.arange(1, M + 1)[None, :]
    return np.concatenate([np.ones_like(theta), np.cos(k * theta), np.sin(k * theta)], axis=1)


def _basis_d(theta, M):
    theta = np.asarray(theta, dtype=float)[:, None]
    k = np.arange(1, M + 1)[None, :]
    return np.concatenate([np.zeros_like(theta), -k * np.sin(k * theta), k * np.cos(k * theta)], axis=1)


def _resize(C, M_new):
    """Pad or truncate coefficient rows laid out as [a0, a_1..a_M, b_1..b_M]."""
    M_old = (C.shape[1] - 1) // 2
    m = min(M_old, M_new)
    out = np.zeros((C.shape[0], 2 * M_new + 1))
    out[:, 0] = C[:, 0]
    out[:, 1:1 + m] = C[:, 1:1 + m]
    out[:, 1 + M_new:1 + M_new + m] = C[:, 1 + M_old:1 + M_old + m]
    return out


def _grid(N, offset=0.0):
    return 2 * np.pi * (np.arange(N) + offset) / N


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


# -- invariant circle ----------------------------------------------------------------

@dataclass
class InvariantCircle:
    center: np.ndarray
    frame: np.ndarray
    coeffs: np.ndarray          # rows: rho, w_1, ..., each [a0, a_k, b_k]
    fourier: np.ndarray         # complex c_{-(M+1)}..c_{M+1} per section coordinate
    residual: float
    rotation_estimate: float
    M: int
    iterations: int = 0

    @property
    def dimension(self):
        return len(self.center)

    def radius(self, theta):
        return _basis(np.atleast_1d(theta), self.M) @ self.coeffs[0]

    def coords(self, X):
        """Frame coordinates of ambient section points."""
        return _coords(X, self.center, self.frame)

    def points(self, theta):
        return _embed(self.coeffs, self.frame, self.center, np.atleast_1d(theta), self.M)

    def tangent(self, theta):
        """d gamma / d theta."""
        theta = np.atleast_1d(theta)
        vals = _basis(theta, self.M) @ self.coeffs.T
        dvals = _basis_d(theta, self.M) @ self.coeffs.T
        c, s = np.cos(theta), np.sin(theta)
        local = np.column_stack([dvals[:, 0] * c - vals[:, 0] * s,
                                 dvals[:, 0] * s + vals[:, 0] * c, dvals[:, 1:]])
        return local @ self.frame.T

    def to_dict(self):
        r = self.radius(_grid(64))
        return {"center": [float(v) for v in self.center], "M": self.M,
                "residual": self.residual, "rotation_estimate": self.rotation_estimate,
                "mean_radius": float(np.mean(r)), "min_radius": float(np.min(r)),
                "max_radius": float(np.max(r))}


def _embed(C, E, center, theta, M):
    vals = _basis(theta, M) @ C.T
    rho = vals[:, 0]
    local = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), vals[:, 1:]])
    return center + local @ E.T


def _coords(X, center, E):
    return np.linalg.solve(E, (np.asarray(X) - center).T).T


def critical_frame(A, lam=None):
    """Frame whose first two columns make the linear map a rotation on the critical plane.

    The eigenvector phase is chosen so the two columns are orthogonal (principal
    axes of the linear ellipse); further columns complete an orthonormal basis.
    """
    A = np.atleast_2d(A)
    if lam is None:
        lam = tracked_pair(eigenvalues(A))
        if lam is None:
            raise NoInvariantCircle("fixed point has no complex multiplier pair")
    if lam.imag < 0:
        lam = lam.conjugate()
    q, _ = residual_vector(A, lam)
    q = q * np.exp(-0.5j * np.angle(np.sum(q * q)))
    e1, e2 = math.sqrt(2) * q.real, -math.sqrt(2) * q.imag
    n = A.shape[0]
    Q, _ = np.linalg.qr(np.column_stack([e1, e2, np.eye(n)]))
    return np.column_stack([e1, e2, Q[:, 2:n]])


def predicted_radius(d_mod, ell1, mu, mu_star):
    """Radius sqrt(2 |d (mu - mu*) / ell1|) of the normal-form circle in frame units."""
    return math.sqrt(2 * abs(d_mod * (mu - mu_star) / ell1))


class _Problem:
    """Invariance residual of a polar graph and its Gauss-Newton Jacobian."""

    def __init__(self, handle, center, E):
        self.handle, self.center, self.E = handle, center, E
        self.n = len(center)

    def images(self, C, theta, M):
        P = _embed(C, self.E, self.center, theta, M)
        ev = self.handle(P)
        y = _coords(ev.image, self.center, self.E)
        return P, ev, y

    def residual(self, C, theta, M, jac=False):
        _, ev, y = self.images(C, theta, M)
        if not np.all(np.isfinite(y)):
            raise DivergedIteration("map images are not finite")
        y12 = np.hypot(y[:, 0], y[:, 1])
        th2 = np.arctan2(y[:, 1], y[:, 0])
        phi2 = _basis(th2, M)
        vals2 = phi2 @ C.T
        R = np.column_stack([y12 - vals2[:, 0], y[:, 2:] - vals2[:, 1:]])
        if not jac:
            return R, th2
        n, N, K = self.n, len(theta), 2 * M + 1
        phi = _basis(theta, M)
        dvals2 = _basis_d(th2, M) @ C.T
        G = np.einsum("ia,nab->nib", np.linalg.inv(self.E), np.asarray(ev.jacobian))  # E^-1 DPi
        # d gamma / d(block j, mode k) = direction_j(theta) * phi_k(theta)
        dirs = [np.outer(np.cos(theta), self.E[:, 0]) + np.outer(np.sin(theta), self.E[:, 1])]
        dirs += [np.broadcast_to(self.E[:, 1 + j], (N, n)) for j in range(1, n - 1)]
        blocks = len(dirs)
        dY = np.empty((N, n, blocks, K))
        for b, d in enumerate(dirs):
            dY[:, :, b, :] = np.einsum("nib,nb->ni", G, d)[:, :, None] * phi[:, None, :]
        dY = dY.reshape(N, n, blocks * K)
        u = np.column_stack([y[:, 0], y[:, 1]]) / y12[:, None]
        dy12 = u[:, 0, None] * dY[:, 0] + u[:, 1, None] * dY[:, 1]
        dth = (-y[:, 1, None] * dY[:, 0] + y[:, 0, None] * dY[:, 1]) / (y12 ** 2)[:, None]
        J = np.empty((N, blocks, blocks * K))
        J[:, 0] = dy12 - dvals2[:, 0, None] * dth
        for j in range(1, blocks):
            J[:, j] = dY[:, 1 + j] - dvals2[:, j, None] * dth
        for b in range(blocks):
            J[:, b, b * K:(b + 1) * K] -= phi2
        return R, th2, J.reshape(N * blocks, blocks * K)


def _seed(A, lam, E, r0, M, n):
    """Polar coefficients of the linear ellipse r0 sqrt(2) Re(q e^{i phi}), ||q|| = 1."""
    C = np.zeros((n - 1, 2 * M + 1))
    if lam is None:
        C[0, 0] = r0
        return C
    q, _ = residual_vector(A, lam)
    phi = _grid(8 * M)
    pts = math.sqrt(2) * r0 * (np.outer(np.cos(phi), q.real) - np.outer(np.sin(phi), q.imag))
    y = np.linalg.solve(E, pts.T).T
    th = np.arctan2(y[:, 1], y[:, 0])
    target = np.column_stack([np.hypot(y[:, 0], y[:, 1]), y[:, 2:]])
    coef, *_ = np.linalg.lstsq(_basis(th, M), target, rcond=None)
    return coef.T


def _gauss_newton(prob, C, M, circle_tol, collapse_tol, max_iter=30):
    N = 8 * M
    theta = _grid(N)
    fine = _grid(4 * N, 0.5)
    for it in range(1, max_iter + 1):
        R, _, J = prob.residual(C, theta, M, jac=True)
        delta, *_ = np.linalg.lstsq(J, R.reshape(-1), rcond=None)
        delta = delta.reshape(C.shape)
        if not np.all(np.isfinite(delta)):
            raise DivergedIteration("Gauss-Newton step is not finite")
        step = 1.0
        for _ in range(10):
            C_new = C - step * delta
            if np.min(_basis(fine, M) @ C_new[0]) > 0:
                break
            step /= 2
        else:
            raise NoConvergence("Gauss-Newton cannot keep the radius positive")
        C = C_new
        if np.max(_basis(fine, M) @ C[0]) < collapse_tol:
            raise NoInvariantCircle("iteration collapses onto the fixed point")
        change = step * float(np.max(np.abs(delta)))
        log.debug("GN M=%d it=%d change=%.3e |R|=%.3e", M, it, change, float(np.max(np.abs(R))))
        if change <= 0.1 * circle_tol:
            return C, it
    return C, max_iter


def _plain_iteration(prob, C, M, circle_tol, collapse_tol, diverge_radius, max_iter):
    """Graph transform: push the curve through the map and refit it on the image angles."""
    N = 8 * M
    theta = _grid(N)
    for it in range(1, max_iter + 1):
        _, _, y = prob.images(C, theta, M)
        if not np.all(np.isfinite(y)):
            raise DivergedIteration("map images are not finite")
        th2 = np.arctan2(y[:, 1], y[:, 0])
        target = np.column_stack([np.hypot(y[:, 0], y[:, 1]), y[:, 2:]])
        C_new, *_ = np.linalg.lstsq(_basis(th2, M), target, rcond=None)
        C_new = C_new.T
        r = _basis(theta, M) @ C_new[0]
        if np.max(r) < collapse_tol:
            raise NoInvariantCircle("graph transform collapses onto the fixed point")
        if np.max(r) > diverge_radius or not np.all(np.isfinite(r)):
            raise DivergedIteration("graph transform leaves the search region")
        change = float(np.max(np.abs(C_new - C)))
        C = C_new
        if change <= 0.1 * circle_tol:
            return C, it
    raise NoConvergence(f"graph transform did not settle in {max_iter} iterations")


def circle_residual(prob, C, M, samples=FRESH_SAMPLES):
    """sup over fresh angles of the distance from Pi(gamma) to the curve at the image angle."""
    theta = _grid(samples, 0.37)
    R, th2 = prob.residual(C, theta, M)
    rot = float(np.mean(_wrap(th2 - theta)))
    return float(np.max(np.linalg.norm(R, axis=1))), rot


def invariant_circle(map_handle, p_star, r0, M=M_DEFAULT, circle_tol=1e-9, inverse=None,
                     frame=None, M_max=M_MAX, collapse_rel=1e-4, diverge_rel=20.0,
                     max_plain=2000, plain_direction=None) -> InvariantCircle:
    """Invariant closed curve of ``map_handle`` surrounding the fixed point ``p_star``.

    ``r0`` seeds a round curve in the critical plane. Gauss-Newton is tried first;
    if it fails, the plain graph transform (forward, or with ``inverse`` when the
    fixed point is attracting) decides between collapse and divergence.
    """
    p_star = np.asarray(p_star, dtype=float)
    n = len(p_star)
    if n < 2:
        raise ValueError("invariant circles need a section of dimension >= 2")
    A = np.atleast_2d(map_handle(p_star).jacobian)
    E = critical_frame(A) if frame is None else np.asarray(frame, float)
    lam = tracked_pair(eigenvalues(A))
    collapse_tol = collapse_rel * r0
    C = _seed(A, lam, E, r0, M, n)
    total = 0
    while True:
        prob = _Problem(map_handle, p_star, E)
        try:
            C, its = _gauss_newton(prob, C, M, circle_tol, collapse_tol)
        except (NoConvergence, DivergedIteration, np.linalg.LinAlgError, ToruskitError) as exc:
            if isinstance(exc, NoInvariantCircle):
                raise
            log.info("Gauss-Newton failed (%s); falling back to graph transform", exc)
            forward = plain_direction != "backward"
            if plain_direction is None:
                forward = lam is None or abs(lam) > 1 or inverse is None
            handle = map_handle if forward else inverse
            C0 = _seed(A, lam, E, r0, M, n)
            C, its = _plain_iteration(_Problem(handle, p_star, E), C0, M, circle_tol,
                                      collapse_tol, diverge_rel * r0, max_plain)
            C, more = _gauss_newton(prob, C, M, circle_tol, collapse_tol)
            its += more
        total += its
        res, rot = circle_residual(prob, C, M)
        log.info("circle M=%d residual %.3e after %d iterations", M, res, total)
        if res <= circle_tol:
            break
        if 2 * M > M_max:
            raise FourierUnderresolved(f"residual {res:.3e} > {circle_tol:.1e} with M = {M}")
        M *= 2
        C = _resize(C, M)
    N = 8 * (M + 1)
    pts = _embed(C, E, p_star, _grid(N), M)
    coeffs = np.fft.fft(pts, axis=0) / N
    keep = np.r_[np.arange(-(M + 1), 0), np.arange(0, M + 2)]
    fourier = coeffs[keep % N].T
    return InvariantCircle(center=p_star, frame=E, coeffs=C, fourier=fourier, residual=res,
                           rotation_estimate=rot / (2 * np.pi), M=M, iterations=total)


# -- normal hyperbolicity --------------------------------------------------------------

def _moving_frame(circle, theta):
    """Orthonormal frames [unit tangent, normals] along the curve, shape (N, n, n)."""
    T = circle.tangent(theta)
    T = T / np.linalg.norm(T, axis=1, keepdims=True)
    E = circle.frame
    c, s = np.cos(theta), np.sin(theta)
    radial = np.outer(c, E[:, 0]) + np.outer(s, E[:, 1])
    cols = [T, radial] + [np.broadcast_to(E[:, j], T.shape) for j in range(2, E.shape[1])]
    out = []
    for v in cols:
        v = np.array(v, dtype=float)
        for u in out:
            v = v - np.sum(u * v, axis=1, keepdims=True) * u
        out.append(v / np.linalg.norm(v, axis=1, keepdims=True))
    return np.stack(out, axis=2)


class _TrigInterp:
    """Trigonometric interpolant of periodic samples on a uniform grid."""

    def __init__(self, values):
        values = np.asarray(values)
        self.N = values.shape[0]
        self.shape = values.shape[1:]
        self.c = np.fft.rfft(values.reshape(self.N, -1), axis=0) / self.N
        self.k = np.arange(self.c.shape[0])
        w = np.full(len(self.k), 2.0)
        w[0] = 1.0
        if self.N % 2 == 0:
            w[-1] = 1.0
        self.w = w

    def __call__(self, theta):
        theta = np.atleast_1d(theta)
        e = np.exp(1j * np.outer(theta, self.k)) * self.w
        return (e @ self.c).real.reshape((len(theta),) + self.shape)


@dataclass
class NHResult:
    tangential_exponent: float
    normal_exponents: list
    gap: float
    stable_count: int
    attracting: bool
    interpolation_error: float
    log_det_average: float
    triangularity: float


def bump_weights(N):
    """Normalized weights exp(-1/(t(1-t))) on t = (k+1)/(N+1) for weighted Birkhoff sums."""
    t = np.arange(1, N + 1) / (N + 1.0)
    w = np.exp(-1.0 / (t * (1.0 - t)))
    return w / w.sum()


def nh_certificate(circle: InvariantCircle, map_handle, iterations=LYAP_ITERATIONS, gap_tol=GAP_TOL,
                   tang_tol=TANG_TOL, samples=None) -> NHResult:
    """Lyapunov exponents of the map's derivative cocycle over the circle dynamics.

    In the frame [tangent, normals] the cocycle is block upper triangular; the
    tangential exponent is the orbit average of log|K_tt| and the normal ones come
    from QR iteration on the normal block. Averages use smooth bump weights, which
    converge far faster than plain means on quasi-periodic orbits.
    """
    n = circle.dimension
    N = samples or max(8 * circle.M, 64)
    theta = _grid(N)
    P = circle.points(theta)
    ev = map_handle(P)
    y = circle.coords(ev.image)
    theta2 = np.arctan2(y[:, 1], y[:, 0])
    F0 = _moving_frame(circle, theta)
    F1 = _moving_frame(circle, theta2)
    K = np.einsum("nai,nab,nbj->nij", F1, np.asarray(ev.jacobian), F0)
    shift = _TrigInterp(_wrap(theta2 - theta))
    Kint = _TrigInterp(K)

    # interpolation check against fresh samples
    fresh = _grid(16, 0.5)
    Pf = circle.points(fresh)
    evf = map_handle(Pf)
    yf = circle.coords(evf.image)
    th2f = np.arctan2(yf[:, 1], yf[:, 0])
    Kf = np.einsum("nai,nab,nbj->nij", _moving_frame(circle, th2f), np.asarray(evf.jacobian),
                   _moving_frame(circle, fresh))
    interp_err = float(max(np.max(np.abs(Kint(fresh) - Kf)),
                           np.max(np.abs(_wrap(fresh + shift(fresh) - th2f)))))

    th = 0.0
    log_tt = 0.0
    log_det = 0.0
    Q = np.eye(n - 1)
    sums = np.zeros(n - 1)
    tri = 0.0
    weights = bump_weights(iterations)
    for wk in weights:
        Kk = Kint(th)[0]
        log_tt += wk * math.log(abs(Kk[0, 0]))
        log_det += wk * math.log(abs(np.linalg.det(Kk)))
        tri = max(tri, float(np.max(np.abs(Kk[1:, 0]))))
        if n > 1:
            Q, R = np.linalg.qr(Kk[1:, 1:] @ Q)
            d = np.diag(R)
            sums += wk * np.log(np.abs(d))
            Q = Q * np.sign(d)
        th = float(_wrap(th + shift(th)[0]))
    tang = log_tt
    normal = sorted(sums.tolist(), reverse=True)
    gap = min(abs(v) for v in normal) - abs(tang)
    stable = sum(1 for v in normal if v < 0)
    res = NHResult(tang, normal, gap, stable, all(v < 0 for v in normal), interp_err,
                   log_det, tri)
    if abs(tang) > tang_tol:
        raise TangentialDrift(f"tangential exponent {tang:.3e} exceeds {tang_tol:.1e}", ) from None
    if gap < gap_tol:
        raise WeakGap(f"spectral gap {gap:.3e} below {gap_tol:.1e}")
    return res


# -- saturation -----------------------------------------------------------------------------

@dataclass
class FenichelMargins:
    min_transversality_angle: float
    max_return_time: float
    tau_modulus: float
    forward_returns: int
    backward_returns: int
    max_return_distance: float

    def to_dict(self):
        return {k: (float(v) if isinstance(v, float) else v) for k, v in self.__dict__.items()}


@dataclass
class TorusCertificate:
    mesh: np.ndarray
    tangential_exponent: float
    normal_exponents: list
    gap: float
    stable_count: int
    attracting_or_repelling: str
    fenichel: FenichelMargins | None
    residual: float = float("nan")
    mesh_tol: float = float("nan")
    extended: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mesh_shape": list(self.mesh.shape),
            "extended_phase_space": self.extended,
            "tangential_exponent": self.tangential_exponent,
            "normal_exponents": list(self.normal_exponents),
            "gap": self.gap,
            "stable_count": self.stable_count,
            "attracting_or_repelling": self.attracting_or_repelling,
            "fenichel": None if self.fenichel is None else self.fenichel.to_dict(),
            "residual": self.residual,
            "mesh_tol": self.mesh_tol,
            **self.extra,
        }


def _return_times(circle, vf, sec, mu, eps, tol, theta, t_max):
    if isinstance(sec, StroboscopicSection):
        return np.full(len(theta), float(vf.period)), circle.points(theta)
    ev = return_map(vf, sec, circle.points(theta), mu, tol=tol, t_max=t_max)
    return np.asarray(ev.return_time, dtype=float), np.asarray(ev.image)


def _shifted_rhs(vf, mu, eps, shape, durations, t_start):
    """rhs in s in [0, 1] for trajectories started at time t_start with the given durations."""
    scale = np.asarray(durations, float)
    start = np.broadcast_to(np.asarray(t_start, float), scale.shape)

    def fun(s, y):
        x = y.reshape(shape)
        (f,) = vf.rhs(start + s * scale, x, mu, eps)
        return (f * scale[..., None]).reshape(-1)
    return fun


def _flow_samples(vf, x0, durations, s_values, mu, eps, tol, t0=0.0):
    """Points Phi_{s d_i}(x0_i) for every s in s_values on one shared step sequence."""
    shape = x0.shape
    fun = _shifted_rhs(vf, mu, eps, shape, durations, t0)
    stepper = DP54(fun, 0.0, x0.reshape(-1), 1.0, tol)
    out = np.empty((len(s_values),) + shape)
    k = 0
    if s_values[0] == 0.0:
        out[0] = x0
        k = 1
    while k < len(s_values):
        stepper.step()
        while k < len(s_values) and s_values[k] <= stepper.t + 1e-15:
            out[k] = stepper.dense(s_values[k]).reshape(shape) if s_values[k] < stepper.t \
                else stepper.y.reshape(shape)
            k += 1
    return out


def _row_distance(row, pts, newton_steps=8):
    """Distance from each point to the closed curve through ``row`` (trigonometric patches)."""
    Nth = row.shape[0]
    interp = _TrigInterp(row)
    k = interp.k
    grid = _grid(Nth)
    dists = np.empty(len(pts))
    for m, x in enumerate(pts):
        i = int(np.argmin(np.linalg.norm(row - x, axis=1)))
        th = grid[i]
        for _ in range(newton_steps):
            e = np.exp(1j * th * k) * interp.w
            g = (e @ interp.c).real
            g1 = ((1j * k * e) @ interp.c).real
            g2 = ((-(k ** 2) * e) @ interp.c).real
            r = g - x
            d1 = 2 * r @ g1
            d2 = 2 * (g1 @ g1 + r @ g2)
            if d2 <= 0:
                break
            step = -d1 / d2
            step = max(-np.pi / Nth, min(np.pi / Nth, step))
            th += step
            if abs(step) < 1e-14:
                break
        e = np.exp(1j * th * k) * interp.w
        dists[m] = float(np.linalg.norm((e @ interp.c).real - x))
    return dists


def saturate_torus(circle: InvariantCircle, vf, sec, mu, eps=0.0, grid=(64, 16), tol=1e-11,
                   mesh_tol=None, circle_tol=None, subsample=None, t_max=1000.0):
    """Flow the circle over one return to build the torus mesh and check its invariance.

    Returns (mesh, residual, extended) where the mesh has shape (N_theta, N_s + 1, d);
    for stroboscopic sections d = n + 1 with the last column the time t.
    """
    Nth, Ns = int(grid[0]), int(grid[1])
    if Nth < 3 or Ns < 1:
        raise ValueError("grid needs N_theta >= 3 and N_s >= 1")
    if mesh_tol is None:
        mesh_tol = 10 * (circle_tol if circle_tol is not None else max(circle.residual, 1e-12))
    theta = _grid(Nth)
    tau, _ = _return_times(circle, vf, sec, mu, eps, tol, theta, t_max)
    extended = isinstance(sec, StroboscopicSection)
    if extended:
        x0 = circle.points(theta)
        t0 = sec.t0
    else:
        x0 = sec.to_ambient(circle.points(theta))
        t0 = 0.0
    s_values = np.linspace(0.0, 1.0, Ns + 1)
    traj = _flow_samples(vf, x0, tau, s_values, mu, eps, tol, t0)   # (Ns+1, Nth, n)
    mesh = np.transpose(traj, (1, 0, 2))
    _check_rows(mesh)

    # advance a subsample by one full return: node (i, j) should land on row j
    j_idx = np.arange(Ns + 1) if subsample is None else np.asarray(subsample)
    img_theta = _image_angles(circle, vf, sec, mu, eps, tol, theta, t_max)
    tau_interp = _TrigInterp(tau)
    tau_next = tau_interp(img_theta).reshape(-1)
    worst = 0.0
    for j in j_idx:
        s = s_values[j]
        durations = (1 - s) * tau + s * tau_next
        start = mesh[:, j, :]
        t_start = t0 + s * tau if extended else np.zeros(Nth)
        adv = _advance(vf, start, durations, mu, eps, tol, t_start)
        worst = max(worst, float(np.max(_row_distance(mesh[:, j, :], adv))))
    if extended:
        tcol = t0 + s_values[None, :, None] * tau[:, None, None]
        mesh = np.concatenate([mesh, tcol], axis=2)
    if worst > mesh_tol:
        raise ResidualExceeded(f"torus invariance residual {worst:.3e} exceeds {mesh_tol:.1e}; "
                               f"refine the grid {Nth}x{Ns} or tighten the integrator", residual=worst)
    return mesh, worst, extended


def _advance(vf, x, durations, mu, eps, tol, t_start):
    fun = _shifted_rhs(vf, mu, eps, x.shape, durations, t_start)
    stepper = DP54(fun, 0.0, x.reshape(-1), 1.0, tol)
    while not stepper.done:
        stepper.step()
    return stepper.y.reshape(x.shape)


def _image_angles(circle, vf, sec, mu, eps, tol, theta, t_max):
    if isinstance(sec, StroboscopicSection):
        from .section import stroboscopic_map
        img = stroboscopic_map(vf, circle.points(theta), mu, eps, tol, sec.t0).image
    else:
        img = return_map(vf, sec, circle.points(theta), mu, tol=tol, t_max=t_max).image
    y = circle.coords(img)
    return np.arctan2(y[:, 1], y[:, 0])


def _check_rows(mesh, rel=1e-9):
    scale = max(1.0, float(np.max(np.abs(mesh))))
    Nth = mesh.shape[0]
    if Nth < 4:
        return
    for j in range(mesh.shape[1]):
        row = mesh[:, j, :]
        D = np.linalg.norm(row[:, None, :] - row[None, :, :], axis=2)
        idx = np.arange(Nth)
        gap = np.abs(idx[:, None] - idx[None, :])
        gap = np.minimum(gap, Nth - gap)
        far = D[gap >= 2]
        if far.size and float(np.min(far)) < rel * scale:
            raise MeshSelfIntersection(f"mesh row {j} nearly self-intersects")


def fenichel_checks(circle: InvariantCircle, vf, sec, mu, eps=0.0, t_max=1000.0, samples=FRESH_SAMPLES,
                    angle_floor=ANGLE_FLOOR, tau_jump_tol=None, tube_tol=None, tol=1e-11) -> FenichelMargins:
    """Transversality of the field to the curve, recurrence both ways, continuity of tau."""
    theta = _grid(samples)
    P = circle.points(theta)
    T = circle.tangent(theta)
    if isinstance(sec, StroboscopicSection):
        (f,) = vf.rhs(sec.t0, P, mu, eps)
        Fa = np.column_stack([f, np.ones(samples)])
        Ta = np.column_stack([T, np.zeros(samples)])
    else:
        X = sec.to_ambient(P)
        (Fa,) = vf.rhs(0.0, X, mu, eps)
        Ta = T @ sec.basis.T
    cosang = np.abs(np.sum(Fa * Ta, axis=1)) / (np.linalg.norm(Fa, axis=1) * np.linalg.norm(Ta, axis=1))
    angle = float(np.min(np.arccos(np.clip(cosang, 0.0, 1.0))))
    if angle < angle_floor:
        raise TransversalityFails(f"field makes angle {angle:.3g} rad with the curve "
                                  f"(floor {angle_floor})", hypothesis="T")

    tube = tube_tol if tube_tol is not None else max(100 * circle.residual, 1e-8)
    found = {}
    taus = None
    for backward in (False, True):
        if isinstance(sec, StroboscopicSection):
            from .section import stroboscopic_map
            ev = stroboscopic_map(vf, P, mu, eps, tol, sec.t0, backward=backward)
            tau = np.full(samples, float(vf.period))
        else:
            ev = return_map(vf, sec, P, mu, tol=tol, t_max=t_max, backward=backward)
            tau = np.abs(np.asarray(ev.return_time, dtype=float))
        img = np.asarray(ev.image)
        y = circle.coords(img)
        th2 = np.arctan2(y[:, 1], y[:, 0])
        dist = np.linalg.norm(img - circle.points(th2), axis=1)
        found[backward] = (int(np.sum(dist <= tube)), float(np.max(dist)))
        if not backward:
            taus = tau
    if found[False][0] < samples or found[True][0] < samples:
        raise NoReturn(f"only {found[False][0]} forward and {found[True][0]} backward returns "
                       f"land within {tube:.1e} of the curve")
    modulus = float(np.max(np.abs(np.diff(np.r_[taus, taus[:1]]))))
    jump = tau_jump_tol if tau_jump_tol is not None else 0.1 * float(np.mean(taus))
    if modulus > jump:
        raise TauDiscontinuity(f"return time jumps by {modulus:.3g} between neighbouring samples")
    return FenichelMargins(angle, float(np.max(taus)), modulus, found[False][0], found[True][0],
                           max(found[False][1], found[True][1]))


def certify_torus(circle, nh: NHResult, mesh, residual, mesh_tol, extended, fenichel) -> TorusCertificate:
    return TorusCertificate(
        mesh=mesh, tangential_exponent=nh.tangential_exponent, normal_exponents=nh.normal_exponents,
        gap=nh.gap, stable_count=nh.stable_count,
        attracting_or_repelling="attracting" if nh.attracting else "repelling",
        fenichel=fenichel, residual=residual, mesh_tol=mesh_tol, extended=extended,
        extra={"interpolation_error": nh.interpolation_error, "log_det_average": nh.log_det_average})


# -- export ----------------------------------------------------------------------------------

def write_mesh_csv(path, mesh, extended=False):
    """Rows theta_index,s_index,x1..xn (and t for extended-phase-space meshes)."""
    n = mesh.shape[2] - (1 if extended else 0)
    header = ["theta_index", "s_index"] + [f"x{i + 1}" for i in range(n)] + (["t"] if extended else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(mesh.shape[0]):
            for j in range(mesh.shape[1]):
                w.writerow([i, j] + [repr(float(v)) for v in mesh[i, j]])


def write_circle_csv(path, circle: InvariantCircle, sec=None, samples=256):
    theta = _grid(samples)
    P = circle.points(theta)
    if isinstance(sec, AffineSection):
        P = sec.to_ambient(P)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta"] + [f"x{i + 1}" for i in range(P.shape[1])])
        for th, p in zip(theta, P):
            w.writerow([repr(float(th))] + [repr(float(v)) for v in p])
