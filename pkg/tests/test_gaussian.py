import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad

from gbs_herald.gaussian import (
    CovarianceState,
    NotSymplecticError,
    apply_loss_cov,
    apply_symplectic,
    bloch_messiah,
    displace,
    is_symplectic,
    omega,
    passive_symplectic,
    squeeze_layer,
    squeezed_state,
    symplectic_beamsplitter,
    symplectic_error,
    symplectic_interferometer,
    symplectic_squeezer,
    tensor,
    wigner_eval,
)
from gbs_herald.interferometer import random_unitary

angles = st.floats(-2 * np.pi, 2 * np.pi)
squeezes = st.floats(0.0, 1.5)


def random_gate_product(rng, n, k=6):
    S = np.eye(2 * n)
    for _ in range(k):
        if n == 1 or rng.random() < 0.5:
            g = symplectic_squeezer(rng.uniform(0, 1), rng.uniform(0, 2 * np.pi), rng.integers(n), n)
        else:
            i, j = rng.choice(n, 2, replace=False)
            g = symplectic_beamsplitter(rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi), (i, j), n)
        S = g @ S
    return S


def test_squeezer_zero_is_identity():
    for phi in (0.0, 0.3, 2.0):
        assert np.allclose(symplectic_squeezer(0.0, phi, 0, 2), np.eye(4))


def test_squeezer_analytic():
    assert np.allclose(symplectic_squeezer(0.5, 0.0, 0, 1), np.diag([np.exp(-0.5), np.exp(0.5)]))


@given(squeezes, angles, st.integers(1, 3))
def test_squeezer_is_symplectic(r, phi, n):
    S = symplectic_squeezer(r, phi, n - 1, n)
    assert symplectic_error(S) < 1e-12


def test_beamsplitter_identity_and_balanced():
    assert np.allclose(symplectic_beamsplitter(0.0, 0.7, (0, 1), 2), np.eye(4))
    B = symplectic_beamsplitter(np.pi / 4, 0.0, (0, 1), 2)
    h = 1 / np.sqrt(2)
    q = B[:2, :2]
    assert np.allclose(np.abs(q), h)
    assert np.allclose(B[:2, 2:], 0) and np.allclose(B[2:, 2:], q)


@given(angles, angles)
def test_beamsplitter_is_symplectic(theta, phi):
    assert symplectic_error(symplectic_beamsplitter(theta, phi, (0, 2), 3)) < 1e-12


def test_apply_symplectic_examples():
    v = CovarianceState.vacuum(1)
    assert np.allclose(apply_symplectic(v, np.eye(2)).V, v.V)
    out = apply_symplectic(v, symplectic_squeezer(0.5, 0.0, 0, 1))
    assert np.allclose(out.V, np.diag([np.exp(-1), np.exp(1)]))


def test_apply_symplectic_composes():
    rng = np.random.default_rng(1)
    S1, S2 = random_gate_product(rng, 3), random_gate_product(rng, 3)
    v = displace(CovarianceState.vacuum(3), 0.3 - 0.2j, 1)
    a = apply_symplectic(apply_symplectic(v, S1), S2)
    b = apply_symplectic(v, S2 @ S1)
    assert np.allclose(a.V, b.V, atol=1e-12) and np.allclose(a.xi, b.xi, atol=1e-12)


def test_loss_cov_examples():
    s = squeezed_state(0.7)
    assert np.allclose(apply_loss_cov(s, 1.0, 0).V, s.V)
    two = tensor(squeezed_state(0.4, 0.2, 0.5), squeezed_state(0.9))
    out = apply_loss_cov(two, 0.0, 0)
    assert np.allclose(out.reduced((0,)).V, np.eye(2)) and np.allclose(out.reduced((0,)).xi, 0)
    eta, r = 0.8, 0.6
    V = apply_loss_cov(squeezed_state(r), eta, 0).V
    assert np.allclose(np.diag(V), [eta * np.exp(-2 * r) + 1 - eta, eta * np.exp(2 * r) + 1 - eta])


def test_loss_keeps_uncertainty_relation():
    rng = np.random.default_rng(3)
    st_ = apply_symplectic(CovarianceState.vacuum(3), random_gate_product(rng, 3))
    for eta in (0.0, 0.3, 0.9):
        assert apply_loss_cov(st_, eta, 1).uncertainty_margin() > -1e-10


def test_bloch_messiah_single_squeezer():
    O_in, r, O_out = bloch_messiah(symplectic_squeezer(0.8, 1.1, 0, 1))
    assert np.allclose(r, [0.8])
    for O in (O_in, O_out):
        assert np.allclose(O @ O.T, np.eye(2))


def test_bloch_messiah_passive():
    U = random_unitary(3, np.random.default_rng(0))
    _, r, _ = bloch_messiah(passive_symplectic(U))
    assert np.allclose(r, 0, atol=1e-9)


def test_bloch_messiah_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        S = random_gate_product(rng, n)
        O_in, r, O_out = bloch_messiah(S)
        assert np.max(np.abs(O_out @ squeeze_layer(r) @ O_in - S)) < 1e-9
        assert is_symplectic(O_in) and is_symplectic(O_out)


def test_bloch_messiah_rejects_non_symplectic():
    with pytest.raises(NotSymplecticError):
        bloch_messiah(np.diag([2.0, 2.0]))


def test_interferometer_symplectic_matches_passive():
    U = random_unitary(2, np.random.default_rng(5))
    S = symplectic_interferometer(U, (2, 0), 3)
    assert symplectic_error(S) < 1e-12
    assert np.allclose(S @ S.T, np.eye(6))


def test_wigner_vacuum_and_displacement():
    assert np.isclose(wigner_eval(CovarianceState.vacuum(2), np.zeros(4)), (2 * np.pi) ** -2)
    s = squeezed_state(0.3, 0.4, 0.7 + 0.2j)
    peak = wigner_eval(s, s.xi)
    for dx in ([0.1, 0], [0, -0.1], [0.05, 0.05]):
        assert wigner_eval(s, s.xi + np.array(dx)) < peak


def test_wigner_integrates_to_one():
    s = squeezed_state(0.5, 0.3)
    total, _ = dblquad(lambda p, q: wigner_eval(s, np.array([q, p])), -8, 8, -8, 8, epsabs=1e-10)
    assert abs(total - 1) < 1e-6


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_random_products_stay_symplectic(seed):
    S = random_gate_product(np.random.default_rng(seed), 3)
    assert np.allclose(S @ omega(3) @ S.T, omega(3), atol=1e-10)
