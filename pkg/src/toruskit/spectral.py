"""Eigenvalues of small real matrices and their position relative to the unit circle."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousCritical, NoConvergence

UNIT_BAND = 1e-6
RESONANCE_TOL = 1e-4
MAX_DIM = 12


def eigenvalues(A) -> np.ndarray:
    """Eigenvalues of a real square matrix, conjugate pairs made exact.

    Dimensions 1 and 2 use the closed form; larger matrices go through
    LAPACK's Hessenberg reduction and shifted QR.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > MAX_DIM:
        raise ValueError(f"dimension {n} exceeds toolkit limit {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise NoConvergence("matrix has non-finite entries")
    if n == 1:
        return np.array([complex(A[0, 0])])
    if n == 2:
        tr = A[0, 0] + A[1, 1]
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        disc = 0.25 * tr * tr - det
        if disc >= 0:
            s = math.sqrt(disc)
            # avoid cancellation in the smaller root
            big = 0.5 * tr + math.copysign(s, tr) if tr != 0 else s
            small = det / big if big != 0 else -s
            return np.array(sorted([complex(big), complex(small)], key=lambda z: -z.real))
        s = math.sqrt(-disc)
        return np.array([complex(0.5 * tr, s), complex(0.5 * tr, -s)])
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    return pair_conjugates(ev)


def pair_conjugates(ev, rel_tol=1e-8) -> np.ndarray:
    """Symmetrise computed pairs so that non-real eigenvalues come as exact conjugates."""
    ev = np.asarray(ev, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(ev)))) if ev.size else 1.0
    out = []
    used = np.zeros(len(ev), dtype=bool)
    for i, z in enumerate(ev):
        if used[i]:
            continue
        used[i] = True
        if abs(z.imag) <= rel_tol * scale:
            out.append(complex(z.real, 0.0))
            continue
        cands = [j for j in range(len(ev)) if not used[j]]
        j = min(cands, key=lambda j: abs(ev[j] - z.conjugate()))
        used[j] = True
        w = 0.5 * (z + ev[j].conjugate())
        w = complex(w.real, abs(w.imag))
        out += [w, w.conjugate()]
    return np.array(out)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    n_s: int
    n_u: int
    n_c: int
    critical_pair: tuple | None = None

    def off_critical(self):
        """Eigenvalues other than the critical pair."""
        if self.critical_pair is None:
            return self.eigenvalues
        lam = self.critical_pair[0]
        keep = [z for z in self.eigenvalues
                if not (abs(z - lam) < 1e-14 or abs(z - lam.conjugate()) < 1e-14)]
        return np.array(keep)


def classify_multipliers(eigs, unit_band=UNIT_BAND) -> Spectrum:
    """Count multipliers inside, outside and on the band |lambda| in [1 - band, 1 + band]."""
    if not 1e-12 <= unit_band <= 1e-2:
        raise ValueError("unit_band must lie in [1e-12, 1e-2]")
    eigs = np.asarray(eigs, dtype=complex)
    mod = np.abs(eigs)
    inside = mod < 1 - unit_band
    outside = mod > 1 + unit_band
    on = ~(inside | outside)
    pairs = [z for z in eigs[on] if z.imag > 0]
    if len(pairs) > 1:
        raise AmbiguousCritical(f"{len(pairs)} conjugate pairs on the unit band")
    critical = None
    if pairs:
        lam = max(pairs, key=lambda z: z.imag)
        critical = (lam, lam.conjugate())
    return Spectrum(eigs, int(inside.sum()), int(outside.sum()), int(on.sum()), critical)


def resonance_check(lambda1, q_max=4, resonance_tol=RESONANCE_TOL) -> dict:
    """{q: passes} where q passes iff |lambda1^q - 1| > resonance_tol."""
    return {q: bool(abs(complex(lambda1) ** q - 1) > resonance_tol) for q in range(1, q_max + 1)}


def tracked_pair(eigs):
    """The complex eigenvalue (Im > 0) closest to the unit circle, or None."""
    eigs = np.asarray(eigs, dtype=complex)
    cands = [z for z in eigs if z.imag > 0]
    if not cands:
        return None
    return min(cands, key=lambda z: abs(abs(z) - 1.0))


def residual_vector(A, lam):
    """Unit vector v minimising ||(A - lam I) v|| and the attained residual."""
    A = np.asarray(A, dtype=float)
    M = A - lam * np.eye(A.shape[0])
    _, s, vh = np.linalg.svd(M)
    return vh[-1].conj(), float(s[-1])


def argument(lam):
    return cmath.phase(lam)
