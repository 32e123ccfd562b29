import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbs_herald.fock import (
    FockTensor,
    apply_beamsplitter_fock,
    fock_input,
    gaussian_to_fock,
    vacuum,
)
from gbs_herald.gaussian import (
    CovarianceState,
    apply_symplectic,
    symplectic_beamsplitter,
    symplectic_squeezer,
)
from gbs_herald.herald import (
    DensityBlock,
    apply_loss_fock,
    fidelity,
    herald,
    herald_lossy,
    outcome_distribution,
)


def tmsv(r, cutoff):
    S = symplectic_beamsplitter(np.pi / 4, 0.0, (0, 1), 2) @ symplectic_squeezer(r, 0, 0, 2) \
        @ symplectic_squeezer(r, np.pi, 1, 2)
    return gaussian_to_fock(apply_symplectic(CovarianceState.vacuum(2), S), [cutoff, cutoff])


def random_state(rng, n, cutoff):
    amps = rng.normal(size=(cutoff,) * n) + 1j * rng.normal(size=(cutoff,) * n)
    return FockTensor(amps / np.linalg.norm(amps))


def test_tmsv_heralding():
    r = 0.7
    psi = tmsv(r, 20)
    for n in range(5):
        res = herald(psi, (1,), (n,))
        assert abs(res.probability - np.tanh(r) ** (2 * n) / np.cosh(r) ** 2) < 1e-10
        expect = np.zeros(20)
        expect[n] = 1
        assert abs(fidelity(res.state, expect) - 1) < 1e-10


def test_vacuum_heralding():
    res = herald(vacuum(3, [3, 3, 3]), (0, 1), (0, 0))
    assert res.probability == pytest.approx(1)
    assert fidelity(res.state, [1, 0, 0]) == pytest.approx(1)


def test_pattern_sum_with_tail():
    rng = np.random.default_rng(0)
    psi = random_state(rng, 3, 5)
    total = sum(herald(psi, (0, 2), (a, b)).probability for a in range(5) for b in range(5))
    assert abs(total - 1) < 1e-8


def test_zero_probability_pattern():
    res = herald(fock_input([1, 0], [3, 3]), (0,), (2,))
    assert res.empty and res.probability == 0


def test_bad_patterns():
    psi = vacuum(2, [3, 3])
    with pytest.raises(ValueError):
        herald(psi, (0,), (3,))
    with pytest.raises(ValueError):
        herald(psi, (0, 0), (0, 0))
    with pytest.raises(ValueError):
        herald(psi, (0,), (0, 1))


def test_loss_on_single_photon():
    eta = 0.7
    rho = apply_loss_fock(fock_input([1], [3]), eta).rho
    assert np.allclose(rho, np.diag([1 - eta, eta, 0]))


def test_loss_identity_and_trace():
    rng = np.random.default_rng(2)
    psi = random_state(rng, 2, 4)
    out = apply_loss_fock(psi, 1.0, 1)
    assert np.allclose(out.rho, DensityBlock.from_pure(psi).rho)
    for eta in (0.0, 0.35, 0.9):
        assert abs(apply_loss_fock(psi, eta, 0).trace - 1) < 1e-12


@settings(max_examples=20)
@given(st.floats(0, 1), st.integers(0, 1000))
def test_loss_is_trace_preserving(eta, seed):
    psi = random_state(np.random.default_rng(seed), 1, 6)
    out = apply_loss_fock(psi, eta)
    assert abs(out.trace - 1) < 1e-12
    assert out.min_eigenvalue() > -1e-12


def test_lossy_herald_reduces_to_pure():
    rng = np.random.default_rng(3)
    psi = random_state(rng, 3, 4)
    a = herald(psi, (0, 1), (1, 2))
    b = herald_lossy(psi, (0, 1), (1, 2))
    assert b.probability == pytest.approx(a.probability, abs=1e-14)
    assert np.allclose(b.state.rho, DensityBlock.from_pure(a.state).rho)


def test_detector_efficiency():
    eta = 0.6
    psi = fock_input([1, 0], [3, 3])
    assert herald_lossy(psi, (0,), (1,), eta_detect=eta).probability == pytest.approx(eta)
    assert herald_lossy(psi, (0,), (0,), eta_detect=eta).probability == pytest.approx(1 - eta)


def test_lossy_herald_vs_ancilla_purification():
    rng = np.random.default_rng(5)
    c = 5
    S = np.eye(6)
    for _ in range(6):
        if rng.random() < 0.5:
            S = symplectic_squeezer(rng.uniform(0, 0.4), rng.uniform(0, 6), rng.integers(3), 3) @ S
        else:
            i, j = rng.choice(3, 2, replace=False)
            S = symplectic_beamsplitter(rng.uniform(0, 3), rng.uniform(0, 6), (i, j), 3) @ S
    psi = gaussian_to_fock(apply_symplectic(CovarianceState.vacuum(3), S), [c] * 3)
    etas = (0.8, 0.65, 0.9)  # detectors on modes 0, 1 and the output mode 2
    measured, pattern = (0, 1), (1, 2)
    ours = herald_lossy(psi, measured, pattern, eta_detect=etas[:2], eta_out=etas[2])

    big = np.zeros((c,) * 6, dtype=complex)
    big[..., 0, 0, 0] = psi.amps
    full = FockTensor(big)
    for k, eta in enumerate(etas):
        full = apply_beamsplitter_fock(full, np.arccos(np.sqrt(eta)), 0.0, (k, 3 + k))
    sub = full.amps[pattern[0], pattern[1]]  # (mode 2, ancillas 3..5)
    p = float(np.sum(np.abs(sub) ** 2))
    v = sub.reshape(c, -1)
    rho = v @ v.conj().T / p
    assert abs(ours.probability - p) < 1e-8
    assert np.max(np.abs(ours.state.rho - rho)) < 1e-8


def test_fidelity_examples():
    psi = np.array([0.6, 0.8j])
    assert fidelity(FockTensor(psi), psi) == pytest.approx(1)
    assert fidelity(FockTensor(np.array([1.0, 0])), np.array([0, 1.0])) == 0
    rho = apply_loss_fock(fock_input([1], [2]), 0.9)
    assert fidelity(rho, np.array([0, 1.0])) == pytest.approx(0.9)


def test_outcome_distribution():
    r = 0.5
    psi = tmsv(r, 15)
    dist = outcome_distribution(psi, (0,), n_max=6)
    for (n,), p in dist.items():
        assert abs(p - np.tanh(r) ** (2 * n) / np.cosh(r) ** 2) < 1e-12
    assert outcome_distribution(vacuum(2, [3, 3]), (1,))[(0,)] == pytest.approx(1)
    rng = np.random.default_rng(8)
    s3 = random_state(rng, 3, 3)
    dist = outcome_distribution(s3, (2, 0))
    for pat, p in dist.items():
        assert p == pytest.approx(herald(s3, (2, 0), pat).probability, abs=1e-15)
