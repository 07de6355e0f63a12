import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from toruskit.errors import AmbiguousCritical, NoConvergence
from toruskit.spectral import (classify_multipliers, eigenvalues, pair_conjugates,
                               resonance_check, residual_vector, tracked_pair)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (4, 4), elements=st.floats(-5, 5)))
def test_eigenvalues_match_lapack_and_pair_exactly(A):
    ev = eigenvalues(A)
    ref = np.linalg.eigvals(A)
    assert sorted(np.round(ev, 6), key=lambda z: (z.real, z.imag)) == \
        pytest.approx(sorted(np.round(ref, 6), key=lambda z: (z.real, z.imag)), abs=1e-5)
    for z in ev:
        if z.imag != 0:
            assert any(w == z.conjugate() for w in ev)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-100, 100)))
def test_closed_form_2x2(A):
    ev = eigenvalues(A)
    assert np.prod(ev).real == pytest.approx(np.linalg.det(A), abs=1e-8 * (1 + np.abs(A).max() ** 2))
    assert np.sum(ev).real == pytest.approx(np.trace(A), abs=1e-9 * (1 + np.abs(A).max()))


def test_small_root_without_cancellation():
    ev = eigenvalues(np.array([[1e8, 1.0], [0.0, 1e-8]]))
    assert ev[1].real == pytest.approx(1e-8, rel=1e-12)


def test_non_finite_rejected():
    with pytest.raises(NoConvergence):
        eigenvalues(np.array([[np.nan, 0, 0], [0, 1, 0], [0, 0, 1]]))


def test_pair_conjugates_symmetrises():
    ev = pair_conjugates([1 + 2j, 1.0000000001 - 2.0000000001j, 3.0 + 1e-15j])
    assert ev[0] == ev[1].conjugate()
    assert ev[2].imag == 0.0


def test_classification():
    lam = np.exp(1j * 0.9)
    spec = classify_multipliers([lam, lam.conjugate(), 0.5, 2.0, -0.3])
    assert (spec.n_s, spec.n_u, spec.n_c) == (2, 1, 2)
    assert spec.critical_pair[0] == lam
    assert sorted(spec.off_critical().real) == [-0.3, 0.5, 2.0]


def test_two_critical_pairs_ambiguous():
    a, b = np.exp(0.5j), np.exp(1.5j)
    with pytest.raises(AmbiguousCritical):
        classify_multipliers([a, a.conjugate(), b, b.conjugate()])


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_strong_resonances(q):
    lam = np.exp(2j * math.pi / q)
    res = resonance_check(lam)
    assert res[q] is False
    assert resonance_check(np.exp(1j))[q] is True


def test_tracked_pair_and_residual_vector():
    A = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.5]])
    lam = tracked_pair(eigenvalues(A))
    assert lam == pytest.approx(1j)
    v, r = residual_vector(A, lam)
    assert r < 1e-14
    assert np.allclose(A @ v, lam * v)
    assert tracked_pair([0.5, 2.0]) is None
