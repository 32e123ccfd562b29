"""Symplectic and covariance-matrix algebra for Gaussian states.

Conventions used throughout the package:

* quadratures are ordered ``q_1..q_N, p_1..p_N`` (not interleaved);
* ``hbar = 2``, so the vacuum covariance matrix is the identity and
  ``a = (q + i p) / 2``;
* a Gaussian unitary acts on quadratures in the Heisenberg picture as
  ``x -> S x``, so covariances update as ``V -> S V S^T``;
* the squeezer ``S(r, phi) = exp((conj(z) a^2 - z a^dag^2) / 2)`` with
  ``z = r e^{i phi}``; at ``phi = 0`` it squeezes ``q`` by ``e^{-r}``, and
  ``phi`` rotates the squeezing axis by ``phi / 2``;
* a passive unitary with matrix ``U`` maps ``a^dag_i -> sum_j U_ji a^dag_j``,
  so a single photon entering mode ``i`` leaves in ``sum_j U_ji |1_j>``.

Every symplectic is also carried in complex (Bogoliubov) form ``(E, F)``:
``U^dag a U = E a + F a^dag``.  The two forms are converted by
:func:`to_bogoliubov` and :func:`from_bogoliubov`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMPLECTIC_TOL = 1e-10


class NotSymplecticError(ValueError):
    """Raised when a matrix fails the ``S Omega S^T = Omega`` test."""


def omega(n: int) -> np.ndarray:
    """Standard symplectic form for ``n`` modes in ``qqpp`` ordering."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def symplectic_error(S: np.ndarray) -> float:
    """Largest absolute entry of ``S Omega S^T - Omega``."""
    n = S.shape[0] // 2
    om = omega(n)
    return float(np.max(np.abs(S @ om @ S.T - om)))


def is_symplectic(S: np.ndarray, tol: float = SYMPLECTIC_TOL) -> bool:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] % 2:
        return False
    return symplectic_error(S) <= tol


def to_bogoliubov(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a real symplectic into the complex pair ``(E, F)``."""
    n = S.shape[0] // 2
    qq, qp = S[:n, :n], S[:n, n:]
    pq, pp = S[n:, :n], S[n:, n:]
    E = 0.5 * (qq + pp + 1j * (pq - qp))
    F = 0.5 * (qq - pp + 1j * (pq + qp))
    return E, F


def from_bogoliubov(E: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_bogoliubov`."""
    n = E.shape[0]
    S = np.empty((2 * n, 2 * n))
    S[:n, :n] = (E + F).real
    S[:n, n:] = (F - E).imag
    S[n:, :n] = (E + F).imag
    S[n:, n:] = (E - F).real
    return S


def passive_symplectic(U: np.ndarray) -> np.ndarray:
    """Orthogonal symplectic matrix of the passive unitary ``U``."""
    U = np.asarray(U, dtype=complex)
    return from_bogoliubov(U, np.zeros_like(U))


def _check_mode(mode: int, n: int) -> None:
    if not 0 <= mode < n:
        raise ValueError(f"mode {mode} out of range for {n} modes")


def _embed(block: np.ndarray, modes: tuple[int, ...], n: int) -> np.ndarray:
    """Embed a ``2k x 2k`` qqpp block acting on ``modes`` into ``2n x 2n``."""
    idx = list(modes) + [m + n for m in modes]
    S = np.eye(2 * n)
    S[np.ix_(idx, idx)] = block
    return S


def squeezer_bogoliubov(r: float, phi: float) -> tuple[complex, complex]:
    return complex(np.cosh(r)), -np.exp(1j * phi) * np.sinh(r)


def symplectic_squeezer(r: float, phi: float, mode: int, n: int) -> np.ndarray:
    """Single-mode squeezer embedded at ``mode`` of an ``n``-mode system."""
    _check_mode(mode, n)
    e, f = squeezer_bogoliubov(r, phi)
    block = from_bogoliubov(np.array([[e]]), np.array([[f]]))
    return _embed(block, (mode,), n)


def symplectic_rotation(phi: float, mode: int, n: int) -> np.ndarray:
    """Phase shift ``exp(i phi a^dag a)`` on one mode."""
    _check_mode(mode, n)
    block = passive_symplectic(np.array([[np.exp(1j * phi)]]))
    return _embed(block, (mode,), n)


def beamsplitter_unitary(theta: float, phi: float) -> np.ndarray:
    """2x2 mode matrix of the beamsplitter; transmission ``cos^2 theta``.

    Column ``i`` is where a photon entering mode ``i`` goes, so a photon in
    the first port leaves as ``cos(theta)|1,0> + e^{i phi} sin(theta)|0,1>``.
    """
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -np.exp(-1j * phi) * s], [np.exp(1j * phi) * s, c]])


def symplectic_beamsplitter(
    theta: float, phi: float, modes: tuple[int, int], n: int
) -> np.ndarray:
    i, j = modes
    _check_mode(i, n)
    _check_mode(j, n)
    if i == j:
        raise ValueError("beamsplitter needs two distinct modes")
    block = passive_symplectic(beamsplitter_unitary(theta, phi))
    return _embed(block, (i, j), n)


def symplectic_interferometer(U: np.ndarray, modes: tuple[int, ...], n: int) -> np.ndarray:
    for m in modes:
        _check_mode(m, n)
    if len(set(modes)) != len(modes):
        raise ValueError("repeated mode in interferometer")
    return _embed(passive_symplectic(U), tuple(modes), n)


def squeeze_layer(r_vec: np.ndarray) -> np.ndarray:
    """``diag(e^{-r}, e^{r})`` for a vector of squeezing magnitudes."""
    r_vec = np.asarray(r_vec, dtype=float)
    return np.diag(np.concatenate([np.exp(-r_vec), np.exp(r_vec)]))


@dataclass(frozen=True, eq=False)
class CovarianceState:
    """Gaussian state: covariance ``V`` and displacement ``xi`` (hbar = 2)."""

    V: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        xi = np.array(self.xi, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] % 2:
            raise ValueError("covariance matrix must be 2N x 2N")
        if xi.shape != (V.shape[0],):
            raise ValueError("displacement must have length 2N")
        V.setflags(write=False)
        xi.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "xi", xi)

    @property
    def n_modes(self) -> int:
        return self.V.shape[0] // 2

    @classmethod
    def vacuum(cls, n: int) -> "CovarianceState":
        return cls(np.eye(2 * n), np.zeros(2 * n))

    def uncertainty_margin(self) -> float:
        """Smallest eigenvalue of ``V + i Omega``; non-negative for physical states."""
        M = self.V + 1j * omega(self.n_modes)
        return float(np.min(np.linalg.eigvalsh(M)))

    def purity(self) -> float:
        return float(1.0 / np.sqrt(np.linalg.det(self.V)))

    def is_pure(self, tol: float = 1e-8) -> bool:
        return abs(np.linalg.det(self.V) - 1.0) <= tol

    def reduced(self, modes: tuple[int, ...]) -> "CovarianceState":
        n = self.n_modes
        idx = list(modes) + [m + n for m in modes]
        return CovarianceState(self.V[np.ix_(idx, idx)], self.xi[idx])


def squeezed_state(r: float, phi: float = 0.0, alpha: complex = 0.0) -> CovarianceState:
    """Single-mode displaced squeezed vacuum ``D(alpha) S(r, phi)|0>``."""
    S = symplectic_squeezer(r, phi, 0, 1)
    return displace(CovarianceState(S @ S.T, np.zeros(2)), alpha, 0)


def tensor(*states: CovarianceState) -> CovarianceState:
    """Direct sum of independent Gaussian states, keeping qqpp ordering."""
    n = sum(s.n_modes for s in states)
    V = np.zeros((2 * n, 2 * n))
    xi = np.zeros(2 * n)
    offset = 0
    for s in states:
        k = s.n_modes
        rows = list(range(offset, offset + k)) + list(range(n + offset, n + offset + k))
        V[np.ix_(rows, rows)] = s.V
        xi[rows] = s.xi
        offset += k
    return CovarianceState(V, xi)


def apply_symplectic(state: CovarianceState, S: np.ndarray) -> CovarianceState:
    S = np.asarray(S, dtype=float)
    if S.shape != state.V.shape:
        raise ValueError(f"symplectic of shape {S.shape} does not match state {state.V.shape}")
    return CovarianceState(S @ state.V @ S.T, S @ state.xi)


def displace(state: CovarianceState, alpha: complex, mode: int) -> CovarianceState:
    n = state.n_modes
    _check_mode(mode, n)
    xi = state.xi.copy()
    xi[mode] += 2 * np.real(alpha)
    xi[mode + n] += 2 * np.imag(alpha)
    return CovarianceState(state.V, xi)


def apply_loss_cov(state: CovarianceState, eta: float, mode: int) -> CovarianceState:
    """Pure-loss channel of transmissivity ``eta`` on one mode."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmissivity {eta} outside [0, 1]")
    n = state.n_modes
    _check_mode(mode, n)
    scale = np.ones(2 * n)
    scale[[mode, mode + n]] = np.sqrt(eta)
    V = state.V * np.outer(scale, scale)
    V[mode, mode] += 1 - eta
    V[mode + n, mode + n] += 1 - eta
    return CovarianceState(V, state.xi * scale)


def _takagi(M: np.ndarray, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Takagi factorisation ``M = U diag(s) U^T`` of a complex symmetric matrix.

    Positive singular values come from the real embedding
    ``[[Re M, Im M], [Im M, -Re M]]``, whose eigenvectors ``(x, y)`` give
    Takagi vectors ``x + i y``.  Vectors for vanishing singular values are
    taken from the conjugated null space of ``M``.
    """
    n = M.shape[0]
    H = np.block([[M.real, M.imag], [M.imag, -M.real]])
    w, v = np.linalg.eigh(H)
    scale = max(1.0, float(np.max(np.abs(w))))
    keep = w > tol * scale
    s = w[keep]
    U = v[:n, keep] + 1j * v[n:, keep]
    k = n - int(keep.sum())
    if k:
        _, _, vh = np.linalg.svd(M)
        # rows of vh are conjugated right singular vectors: vh.T spans conj(ker M)
        U = np.hstack([U, vh[n - k:].T])
        s = np.concatenate([s, np.zeros(k)])
    return U, s


def bloch_messiah(S: np.ndarray, tol: float = 1e-8):
    """Factor ``S = O_out @ squeeze_layer(r) @ O_in``.

    Returns ``(O_in, r, O_out)`` with ``O_in``/``O_out`` orthogonal symplectic
    and ``r`` sorted in non-increasing order (stable, so equal magnitudes
    keep their column order).

    Raises:
        NotSymplecticError: if ``S`` is not symplectic within ``tol``.
    """
    S = np.asarray(S, dtype=float)
    if not is_symplectic(S, tol):
        raise NotSymplecticError("input matrix is not symplectic")
    E, F = to_bogoliubov(S)
    # -E F^T = U_out diag(cosh r sinh r) U_out^T
    U_out, s = _takagi(-E @ F.T)
    order = np.argsort(-s, kind="stable")
    U_out, s = U_out[:, order], s[order]
    r = 0.5 * np.arcsinh(2 * s)
    U_in = np.diag(1 / np.cosh(r)) @ U_out.conj().T @ E
    return passive_symplectic(U_in), r, passive_symplectic(U_out)


def wigner_eval(state: CovarianceState, x: np.ndarray) -> float:
    """Gaussian Wigner function at phase-space point ``x`` (length 2N)."""
    x = np.asarray(x, dtype=float)
    V = state.V
    det = np.linalg.det(V)
    if not np.isfinite(det) or det <= 0:
        raise np.linalg.LinAlgError("covariance matrix is singular")
    d = x - state.xi
    quad = d @ np.linalg.solve(V, d)
    return float(np.exp(-0.5 * quad) / ((2 * np.pi) ** state.n_modes * np.sqrt(det)))
