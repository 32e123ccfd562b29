"""Fock-basis tensors of Gaussian objects from their Bargmann representation.

A Gaussian object (pure state, density matrix or unitary kernel) has a
generating function ``C exp(x^T A x / 2 + b^T x)``.  Its Fock-basis tensor
``G[n] = d^n F(0) / sqrt(n!)`` obeys the three-term recurrence

    G[n + e_k] sqrt(n_k + 1) = b_k G[n] + sum_j A_kj sqrt(n_j) G[n - e_j]

which is evaluated here for any box-shaped index range.  Because the
recurrence only looks downward in every index, truncating the box never
perturbs the entries that are computed: each element is exact.
"""

from __future__ import annotations

import numba
import numpy as np

from .gaussian import CovarianceState, to_bogoliubov


@numba.njit(cache=True)
def _recurrence(A, b, c, shape):
    ndim = shape.shape[0]
    size = 1
    for d in range(ndim):
        size *= shape[d]
    strides = np.empty(ndim, dtype=np.int64)
    acc = 1
    for d in range(ndim - 1, -1, -1):
        strides[d] = acc
        acc *= shape[d]
    top = 1
    for d in range(ndim):
        if shape[d] > top:
            top = shape[d]
    sq = np.sqrt(np.arange(top + 1).astype(np.float64))

    G = np.zeros(size, dtype=np.complex128)
    if size == 0:
        return G
    G[0] = c
    idx = np.zeros(ndim, dtype=np.int64)
    for flat in range(1, size):
        # advance the C-ordered multi-index
        d = ndim - 1
        idx[d] += 1
        while idx[d] == shape[d]:
            idx[d] = 0
            d -= 1
            idx[d] += 1
        k = ndim - 1
        while idx[k] == 0:
            k -= 1
        prev = flat - strides[k]
        val = b[k] * G[prev]
        for j in range(ndim):
            nj = idx[j] - 1 if j == k else idx[j]
            if nj > 0:
                val += A[k, j] * sq[nj] * G[prev - strides[j]]
        G[flat] = val / sq[idx[k]]
    return G


def hermite_tensor(A, b, c, shape) -> np.ndarray:
    """Fock tensor of the Gaussian generating function over index box ``shape``."""
    A = np.ascontiguousarray(A, dtype=np.complex128)
    b = np.ascontiguousarray(b, dtype=np.complex128)
    shape = tuple(int(s) for s in shape)
    if A.shape != (len(shape), len(shape)) or b.shape != (len(shape),):
        raise ValueError("A, b and shape have inconsistent dimensions")
    if min(shape, default=1) < 1:
        raise ValueError("every dimension needs at least one level")
    G = _recurrence(A, b, complex(c), np.array(shape, dtype=np.int64))
    return G.reshape(shape)


def _complex_means(state: CovarianceState) -> np.ndarray:
    n = state.n_modes
    beta = 0.5 * (state.xi[:n] + 1j * state.xi[n:])
    return beta


def _husimi_cov(V: np.ndarray) -> np.ndarray:
    """Covariance of ``(a, a^dag)`` plus identity/2 (vacuum -> identity)."""
    n = V.shape[0] // 2
    eye = np.eye(n)
    R = 0.5 * np.block([[eye, 1j * eye], [eye, -1j * eye]])
    return R @ V @ R.conj().T + 0.5 * np.eye(2 * n)


def mixed_state_bargmann(state: CovarianceState):
    """``(A, b, C)`` of ``rho`` over variables ``(z_ket, w_bra)``.

    The generating function is ``sum rho[m, n] z^m w^n / sqrt(m! n!)``.
    """
    n = state.n_modes
    Q = _husimi_cov(state.V)
    Qinv = np.linalg.inv(Q)
    X = np.block([[np.zeros((n, n)), np.eye(n)], [np.eye(n), np.zeros((n, n))]])
    beta = _complex_means(state)
    d = np.concatenate([beta, beta.conj()])
    A = (np.eye(2 * n) - Qinv) @ X
    A = 0.5 * (A + A.T)
    b = Qinv @ d
    C = np.exp(-0.5 * (d.conj() @ Qinv @ d).real) / np.sqrt(np.linalg.det(Q).real)
    return A, b, C


def pure_state_bargmann(state: CovarianceState, tol: float = 1e-8):
    """``(B, b, C)`` of a pure Gaussian state; ``C`` is taken real positive."""
    if not state.is_pure(tol):
        raise ValueError("state is mixed; use mixed_state_bargmann")
    n = state.n_modes
    A, b, C = mixed_state_bargmann(state)
    return A[:n, :n], b[:n], np.sqrt(C)


def unitary_bargmann(S: np.ndarray, alpha=None):
    """``(A, b, C)`` of the kernel ``<m|D(alpha) U_S|n>`` over ``(z_out, w_in)``.

    The global phase of the kernel is fixed by taking ``<0|U_S|0>`` real and
    positive; passive unitaries therefore have ``C = 1``.
    """
    n = S.shape[0] // 2
    Ep, Fp = to_bogoliubov(np.linalg.inv(S))
    Ep_inv = np.linalg.inv(Ep)
    Azz = -Ep_inv @ Fp
    Azw = Ep_inv
    Aww = Fp.conj() @ Ep_inv
    A = np.block([[Azz, Azw], [Azw.T, Aww]])
    A = 0.5 * (A + A.T)
    C = 1.0 / np.sqrt(abs(np.linalg.det(Ep)))
    if alpha is None:
        return A, np.zeros(2 * n, dtype=complex), C
    beta = np.asarray(alpha, dtype=complex).reshape(n)
    delta = -Ep @ beta - Fp @ beta.conj()
    bz = -Ep_inv @ delta
    bw = delta.conj() + Fp.conj() @ bz
    C = C * np.exp(-0.5 * np.vdot(beta, beta).real + 0.5 * beta.conj() @ Azz @ beta.conj())
    return A, np.concatenate([bz, bw]), C


def state_amplitudes(state: CovarianceState, shape) -> np.ndarray:
    B, b, C = pure_state_bargmann(state)
    return hermite_tensor(B, b, C, shape)


def density_elements(state: CovarianceState, shape) -> np.ndarray:
    """Density tensor ``rho[m_1..m_N, n_1..n_N]`` for ket/bra box ``shape``."""
    A, b, C = mixed_state_bargmann(state)
    shape = tuple(shape)
    return hermite_tensor(A, b, C, shape + shape)


def unitary_kernel(S: np.ndarray, out_shape, in_shape, alpha=None) -> np.ndarray:
    """Kernel tensor ``K[m_1..m_N, n_1..n_N] = <m|D(alpha) U_S|n>``."""
    A, b, C = unitary_bargmann(S, alpha)
    return hermite_tensor(A, b, C, tuple(out_shape) + tuple(in_shape))
