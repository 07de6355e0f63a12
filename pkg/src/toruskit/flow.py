"""Dormand-Prince 5(4) integration of vector fields and their variational equations.

States may carry a leading batch axis: ``x0`` of shape (N, n) integrates N
trajectories on a shared step sequence, which is how Poincare maps are
evaluated on whole curves at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeUnderflow

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + s h) = y + h * K^T (P @ [s, s^2, s^3, s^4])
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
MAX_STEPS = 200_000


class DP54:
    """Adaptive Dormand-Prince stepper with PI step-size control.

    ``fun(t, y)`` maps a flat state to its derivative. Call :meth:`step` until
    ``t`` reaches ``t_bound``; after each accepted step :meth:`dense` evaluates
    the continuous extension on [t_old, t].
    """

    def __init__(self, fun, t0, y0, t_bound, tol, first_step=None):
        if not 1e-13 <= tol <= 1e-3:
            raise ValueError(f"tol must lie in [1e-13, 1e-3], got {tol}")
        self.fun = fun
        self.t = float(t0)
        self.y = np.array(y0, dtype=float)
        self.t_bound = float(t_bound)
        self.tol = tol
        self.direction = 1.0 if t_bound >= t0 else -1.0
        span = abs(self.t_bound - self.t)
        self.h_abs = first_step if first_step is not None else 1e-3 * span
        self.h_abs = min(max(self.h_abs, self._h_min(self.t)), span) if span > 0 else 0.0
        self.f = fun(self.t, self.y)
        self.K = np.empty((7,) + self.y.shape)
        self.err_prev = 1e-4
        self.n_accepted = 0
        self.n_rejected = 0
        self.t_old = self.t
        self.y_old = self.y
        self.K_old = None

    @staticmethod
    def _h_min(t):
        return 16 * np.finfo(float).eps * max(abs(t), 1.0)

    @property
    def done(self):
        return self.direction * (self.t - self.t_bound) >= 0

    def step(self):
        t, y = self.t, self.y
        rejected = False
        while True:
            h_min = self._h_min(t)
            if self.h_abs < h_min:
                raise StepSizeUnderflow(f"step size underflow at t = {t:.6g}")
            h_abs = self.h_abs
            t_new = t + self.direction * h_abs
            if self.direction * (t_new - self.t_bound) > 0:
                t_new = self.t_bound
            h = t_new - t
            h_abs = abs(h)

            K = self.K
            K[0] = self.f
            for s in range(1, 7):
                dy = np.tensordot(_A[s], K[:s], axes=(0, 0)) * h
                K[s] = self.fun(t + _C[s] * h, y + dy)
            y_new = y + h * np.tensordot(_B[:6], K[:6], axes=(0, 0))
            f_new = K[6].copy()  # FSAL: last stage is f(t_new, y_new)
            err_vec = h * np.tensordot(_E, K, axes=(0, 0))
            scale = self.tol + self.tol * np.maximum(np.abs(y), np.abs(y_new))
            with np.errstate(invalid="ignore", over="ignore"):
                err = float(np.max(np.abs(err_vec) / scale)) if err_vec.size else 0.0
            if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
                self.h_abs = h_abs * MIN_FACTOR
                self.n_rejected += 1
                rejected = True
                continue
            if err <= 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = SAFETY * err ** -_ALPHA * self.err_prev ** _BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
                if rejected:
                    factor = min(1.0, factor)
                self.h_abs = h_abs * factor
                self.err_prev = max(err, 1e-4)
                break
            self.h_abs = h_abs * max(MIN_FACTOR, SAFETY * err ** -0.2)
            self.n_rejected += 1
            rejected = True

        self.n_accepted += 1
        if self.n_accepted > MAX_STEPS:
            raise StepSizeUnderflow("maximum number of steps exceeded")
        self.t_old, self.y_old = t, y
        self.K_old = K.copy()
        self.t, self.y, self.f = t_new, y_new, f_new
        return t_new, y_new

    def dense(self, t):
        """Continuous extension at time(s) ``t`` within the last step."""
        h = self.t - self.t_old
        s = (np.asarray(t, dtype=float) - self.t_old) / h
        powers = np.stack([s, s ** 2, s ** 3, s ** 4], axis=-1)
        Q = np.tensordot(self.K_old, _P, axes=(0, 0))  # state shape + (4,)
        if np.ndim(t) == 0:
            return self.y_old + h * (Q @ powers)
        return self.y_old + h * np.moveaxis(Q @ powers.T, -1, 0)


def solve(fun, t0, y0, t1, tol):
    """Integrate ``y' = fun(t, y)`` from t0 to t1; returns (y1, stepper)."""
    stepper = DP54(fun, t0, y0, t1, tol)
    while not stepper.done:
        stepper.step()
    return stepper.y, stepper


@dataclass
class FlowResult:
    endpoint: np.ndarray
    steps_accepted: int
    steps_rejected: int
    local_tol: float
    monodromy: np.ndarray | None = None
    # integral of trace(dF/dx) along the trajectory, i.e. log det(monodromy)
    trace_integral: np.ndarray | float | None = None


def field_rhs(vf, mu, eps, shape, time_scale=None, t_origin=0.0):
    """Flat right-hand side for ``integrate``.

    With ``time_scale`` (one factor per trajectory) the independent variable s
    maps to t = t_origin + (s - t_origin) * scale, so trajectories with
    different durations share one step sequence.
    """
    def fun(s, y):
        x = y.reshape(shape)
        if time_scale is None:
            (f,) = vf.rhs(s, x, mu, eps)
            return f.reshape(-1)
        (f,) = vf.rhs(t_origin + (s - t_origin) * time_scale, x, mu, eps)
        return (f * time_scale[..., None]).reshape(-1)
    return fun


def variational_rhs(vf, mu, eps, shape, time_scale=None, t_origin=0.0):
    """Flat rhs for the joint (x, Y, log det) system; ``shape`` is the state shape."""
    n = shape[-1]
    batch = shape[:-1]
    nx = int(np.prod(shape))
    nY = nx * n

    def fun(s, y):
        x = y[:nx].reshape(shape)
        Y = y[nx:nx + nY].reshape(batch + (n, n))
        t = s if time_scale is None else t_origin + (s - t_origin) * time_scale
        f, J = vf.rhs(t, x, mu, eps, want="fj")
        dY = J @ Y
        tr = np.trace(J, axis1=-2, axis2=-1)
        if time_scale is not None:
            f = f * time_scale[..., None]
            dY = dY * time_scale[..., None, None]
            tr = tr * time_scale
        return np.concatenate([f.reshape(-1), dY.reshape(-1), np.broadcast_to(tr, batch).reshape(-1)])

    return fun


def pack_variational(x, Y=None):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    batch = x.shape[:-1]
    if Y is None:
        Y = np.broadcast_to(np.eye(n), batch + (n, n))
    return np.concatenate([x.reshape(-1), np.asarray(Y, float).reshape(-1), np.zeros(int(np.prod(batch)))])


def unpack_variational(y, shape):
    n = shape[-1]
    batch = shape[:-1]
    nx = int(np.prod(shape))
    x = y[:nx].reshape(shape)
    Y = y[nx:nx + nx * n].reshape(batch + (n, n))
    logdet = y[nx + nx * n:].reshape(batch)
    return x, Y, (logdet if batch else float(logdet))


def integrate(vf, x0, t0, t1, mu=0.0, eps=0.0, tol=1e-10) -> FlowResult:
    """Flow of the field from t0 to t1 (t1 < t0 integrates backward)."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != vf.dimension:
        raise ValueError(f"state has length {x0.shape[-1]}, expected {vf.dimension}")
    fun = field_rhs(vf, mu, eps, x0.shape)
    y, st = solve(fun, t0, x0.reshape(-1), t1, tol)
    return FlowResult(y.reshape(x0.shape), st.n_accepted, st.n_rejected, tol)


def integrate_variational(vf, x0, t0, t1, mu=0.0, eps=0.0, tol=1e-10) -> FlowResult:
    """Jointly integrate x' = F, Y' = DF Y with Y(t0) = I."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape[-1] != vf.dimension:
        raise ValueError(f"state has length {x0.shape[-1]}, expected {vf.dimension}")
    fun = variational_rhs(vf, mu, eps, x0.shape)
    y, st = solve(fun, t0, pack_variational(x0), t1, tol)
    x, Y, logdet = unpack_variational(y, x0.shape)
    return FlowResult(x, st.n_accepted, st.n_rejected, tol, monodromy=Y, trace_integral=logdet)
