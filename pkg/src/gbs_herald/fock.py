"""Truncated Fock-space engine for pure multimode states.

Gate matrix elements come from :mod:`gbs_herald.bargmann`, so every element
of a gate is exact; the only approximation is the cutoff of the state the
gate acts on.  Each gate application adds the norm it pushes beyond the
cutoff to ``FockTensor.deficit`` so cutoff starvation stays visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bargmann
from .gaussian import (
    CovarianceState,
    beamsplitter_unitary,
    bloch_messiah,
    passive_symplectic,
    symplectic_squeezer,
    to_bogoliubov,
)
from .interferometer import clements, is_unitary

TRUNC_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class FockTensor:
    """Pure state amplitudes ``amps[n_0, ..., n_{N-1}]``.

    ``deficit`` accumulates the squared norm lost to truncation by the gates
    that produced this tensor.
    """

    amps: np.ndarray
    deficit: float = field(default=0.0)

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex)
        if amps.ndim == 0 or min(amps.shape) < 1:
            raise ValueError("every mode needs a cutoff of at least 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return self.amps.shape

    @property
    def n_modes(self) -> int:
        return self.amps.ndim

    def norm2(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def normalized(self) -> "FockTensor":
        return FockTensor(self.amps / np.sqrt(self.norm2()), self.deficit)

    def padded(self, cutoffs) -> "FockTensor":
        """Zero-pad (or cut) each mode to the requested cutoffs."""
        out = np.zeros(tuple(cutoffs), dtype=complex)
        sl = tuple(slice(0, min(a, b)) for a, b in zip(self.cutoffs, cutoffs))
        out[sl] = self.amps[sl]
        return FockTensor(out, self.deficit)

    def photon_number_support(self, tol: float = 1e-14) -> int:
        """Largest total photon number carrying weight above ``tol``."""
        grids = np.indices(self.cutoffs).sum(axis=0)
        mask = np.abs(self.amps) ** 2 > tol
        return int(grids[mask].max()) if mask.any() else 0

    def to_dict(self) -> dict:
        flat = self.amps.ravel()
        return {
            "n_modes": self.n_modes,
            "cutoffs": list(self.cutoffs),
            "amps_re": flat.real.tolist(),
            "amps_im": flat.imag.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FockTensor":
        amps = np.array(data["amps_re"]) + 1j * np.array(data["amps_im"])
        return cls(amps.reshape(data["cutoffs"]))


def vacuum(n: int, cutoffs) -> FockTensor:
    return fock_input([0] * n, cutoffs)


def fock_input(n_vec, cutoffs) -> FockTensor:
    cutoffs = tuple(int(c) for c in cutoffs)
    n_vec = tuple(int(k) for k in n_vec)
    if len(cutoffs) != len(n_vec):
        raise ValueError("one cutoff per mode is required")
    for k, c in zip(n_vec, cutoffs):
        if not 0 <= k < c:
            raise ValueError(f"occupation {k} does not fit below cutoff {c}")
    amps = np.zeros(cutoffs, dtype=complex)
    amps[n_vec] = 1.0
    return FockTensor(amps)


def apply_kernel(psi: FockTensor, kernel: np.ndarray, modes) -> FockTensor:
    """Contract a ``k``-mode kernel ``K[out..., in...]`` into ``psi`` on ``modes``."""
    modes = tuple(modes)
    k = len(modes)
    if len(set(modes)) != k:
        raise ValueError("modes must be distinct")
    before = psi.norm2()
    out = np.tensordot(kernel, psi.amps, axes=(list(range(k, 2 * k)), list(modes)))
    out = np.moveaxis(out, list(range(k)), list(modes))
    lost = max(before - float(np.vdot(out, out).real), 0.0)
    return FockTensor(out, psi.deficit + lost)


def _single_mode_kernel(S: np.ndarray, c: int, alpha=None) -> np.ndarray:
    return bargmann.unitary_kernel(S, (c,), (c,), alpha)


def apply_squeezer_fock(psi: FockTensor, r: float, phi: float, mode: int) -> FockTensor:
    if not np.isfinite(r):
        raise ValueError("squeezing must be finite")
    c = psi.cutoffs[mode]
    return apply_kernel(psi, _single_mode_kernel(symplectic_squeezer(r, phi, 0, 1), c), (mode,))


def apply_displacement_fock(psi: FockTensor, alpha: complex, mode: int) -> FockTensor:
    c = psi.cutoffs[mode]
    return apply_kernel(psi, _single_mode_kernel(np.eye(2), c, [alpha]), (mode,))


def apply_rotation_fock(psi: FockTensor, phi: float, mode: int) -> FockTensor:
    c = psi.cutoffs[mode]
    shape = [1] * psi.n_modes
    shape[mode] = c
    phase = np.exp(1j * phi * np.arange(c)).reshape(shape)
    return FockTensor(psi.amps * phase, psi.deficit)


def _check_pair(psi: FockTensor, modes) -> tuple[int, int]:
    i, j = modes
    if i == j:
        raise ValueError("beamsplitter needs two distinct modes")
    for m in (i, j):
        if not 0 <= m < psi.n_modes:
            raise ValueError(f"mode {m} out of range")
    return i, j


def apply_beamsplitter_fock(psi: FockTensor, theta: float, phi: float, modes) -> FockTensor:
    i, j = _check_pair(psi, modes)
    ci, cj = psi.cutoffs[i], psi.cutoffs[j]
    S = passive_symplectic(beamsplitter_unitary(theta, phi))
    kernel = bargmann.unitary_kernel(S, (ci, cj), (ci, cj))
    return apply_kernel(psi, kernel, (i, j))


def apply_interferometer(psi: FockTensor, U: np.ndarray, modes=None) -> FockTensor:
    """Apply the passive unitary ``U`` through its rectangular mesh.

    ``modes`` selects the (ordered) modes ``U`` acts on; by default all.
    """
    U = np.asarray(U, dtype=complex)
    if modes is None:
        modes = tuple(range(psi.n_modes))
    modes = tuple(modes)
    if U.shape != (len(modes), len(modes)):
        raise ValueError("interferometer size does not match the mode list")
    if not is_unitary(U):
        raise ValueError("interferometer matrix is not unitary")
    cells, phases = clements(U)
    for cell in cells:
        m, k = cell.modes
        psi = apply_rotation_fock(psi, cell.phi, modes[m])
        psi = apply_beamsplitter_fock(psi, cell.theta, 0.0, (modes[m], modes[k]))
    for m, ph in enumerate(phases):
        psi = apply_rotation_fock(psi, float(np.angle(ph)), modes[m])
    return psi


def apply_passive_direct(psi: FockTensor, U: np.ndarray) -> FockTensor:
    """Single-kernel action of ``U`` on all modes (no mesh); used for cross-checks."""
    S = passive_symplectic(U)
    kernel = bargmann.unitary_kernel(S, psi.cutoffs, psi.cutoffs)
    return apply_kernel(psi, kernel, tuple(range(psi.n_modes)))


def gaussian_to_fock(state: CovarianceState, cutoffs, tol: float = 1e-8) -> FockTensor:
    """Fock amplitudes of a pure Gaussian state (global phase: ``<0|psi>`` >= 0).

    Raises:
        ValueError: if the state is mixed.
    """
    if not state.is_pure(tol):
        raise ValueError("gaussian_to_fock needs a pure state")
    return FockTensor(bargmann.state_amplitudes(state, tuple(cutoffs)))


def gaussian_to_fock_by_gates(state: CovarianceState, cutoffs) -> FockTensor:
    """Gate-path construction of a pure Gaussian state.

    The preparation symplectic ``V^{1/2}`` is split by Bloch-Messiah and its
    factors are applied one gate at a time to the vacuum, followed by the
    displacements.  Independent of :func:`gaussian_to_fock`.
    """
    w, Q = np.linalg.eigh(state.V)
    S = Q @ np.diag(np.sqrt(w)) @ Q.T
    O_in, r, O_out = bloch_messiah(S)
    n = state.n_modes
    psi = vacuum(n, cutoffs)
    U_in, _ = to_bogoliubov(O_in)
    U_out, _ = to_bogoliubov(O_out)
    psi = apply_interferometer(psi, U_in)
    for m in range(n):
        psi = apply_squeezer_fock(psi, float(r[m]), 0.0, m)
    psi = apply_interferometer(psi, U_out)
    beta = 0.5 * (state.xi[:n] + 1j * state.xi[n:])
    for m in range(n):
        if beta[m] != 0:
            psi = apply_displacement_fock(psi, complex(beta[m]), m)
    return psi


def squeezer_matrix(r: float, phi: float, cutoff: int) -> np.ndarray:
    """``<m|S(r, phi)|n>`` for ``m, n < cutoff``."""
    return _single_mode_kernel(symplectic_squeezer(r, phi, 0, 1), cutoff)


def single_mode_state(r: float = 0.0, phi: float = 0.0, alpha: complex = 0.0,
                      cutoff: int = 20) -> np.ndarray:
    """Amplitudes of ``D(alpha) S(r, phi)|0>`` up to ``cutoff``."""
    S = symplectic_squeezer(r, phi, 0, 1)
    K = bargmann.unitary_kernel(S, (cutoff,), (1,), [alpha])
    return K[:, 0]
