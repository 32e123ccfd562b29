"""Rectangular (Clements) meshes of two-mode gates.

The elementary cell on neighbouring modes ``(m, m+1)`` is a phase shift
``phi`` on mode ``m`` followed by the beamsplitter ``B(theta, 0)``::

    T(theta, phi) = B(theta, 0) @ diag(e^{i phi}, 1)
                  = [[e^{i phi} cos, -sin], [e^{i phi} sin, cos]]

``clements`` returns the cells in application order together with the
output phases, so ``U = diag(phases) @ T_K @ ... @ T_1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import beamsplitter_unitary


@dataclass(frozen=True)
class MeshCell:
    modes: tuple[int, int]
    theta: float
    phi: float

    def matrix(self, n: int) -> np.ndarray:
        m, k = self.modes
        T = np.eye(n, dtype=complex)
        cell = beamsplitter_unitary(self.theta, 0.0) @ np.diag([np.exp(1j * self.phi), 1.0])
        T[np.ix_([m, k], [m, k])] = cell
        return T


def is_unitary(U: np.ndarray, tol: float = 1e-10) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return bool(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) <= tol)


def clements(U: np.ndarray, tol: float = 1e-10) -> tuple[list[MeshCell], np.ndarray]:
    """Decompose an ``N x N`` unitary into ``N(N-1)/2`` mesh cells and phases.

    Elements are nulled alternately from the right (columns) and the left
    (rows) in the usual rectangular order; left-hand cells are then pushed
    through the diagonal so every cell ends up in the canonical form.
    """
    U = np.array(U, dtype=complex)
    if not is_unitary(U, tol):
        raise ValueError("matrix is not unitary")
    n = U.shape[0]
    right: list[MeshCell] = []
    left: list[MeshCell] = []
    for i in range(n - 1):
        if i % 2 == 0:
            for j in range(i + 1):
                row, col = n - 1 - j, i - j
                a, b = U[row, col], U[row, col + 1]
                theta = np.arctan2(abs(a), abs(b))
                phi = np.angle(a) - np.angle(b) if abs(a) > 0 else 0.0
                cell = MeshCell((col, col + 1), float(theta), float(phi))
                U = U @ cell.matrix(n).conj().T
                right.append(cell)
        else:
            for j in range(1, i + 2):
                row, col = n + j - i - 2, j - 1
                a, b = U[row - 1, col], U[row, col]
                theta = np.arctan2(abs(b), abs(a))
                phi = np.pi + np.angle(b) - np.angle(a) if abs(b) > 0 else 0.0
                cell = MeshCell((row - 1, row), float(theta), float(phi))
                U = cell.matrix(n) @ U
                left.append(cell)
    phases = np.diag(U).copy()
    # U_orig = L_1^-1 ... L_K^-1 D R_M ... R_1; move each L^-1 through D
    moved: list[MeshCell] = []
    for cell in reversed(left):
        m, k = cell.modes
        dm, dk = phases[m], phases[k]
        new_phi = np.pi + np.angle(dm) - np.angle(dk)
        phases[m] = -np.exp(-1j * cell.phi) * dk
        moved.append(MeshCell(cell.modes, cell.theta, float(new_phi)))
    # application order: R_1 .. R_M, then the moved cells innermost-first
    ordered = right + moved
    return ordered, phases


def mesh_unitary(cells, phases) -> np.ndarray:
    n = len(phases)
    U = np.eye(n, dtype=complex)
    for cell in cells:
        U = cell.matrix(n) @ U
    return np.diag(phases) @ U


def n_mesh_params(n: int) -> int:
    """Real parameters of a full ``n``-mode mesh: two per cell plus ``n`` phases."""
    return n * (n - 1) + n


def mesh_layout(n: int) -> list[tuple[int, int]]:
    """Mode pairs of the rectangular mesh in application order."""
    pairs = []
    for layer in range(n):
        start = layer % 2
        for m in range(start, n - 1, 2):
            pairs.append((m, m + 1))
    return pairs[: n * (n - 1) // 2]


def unitary_from_params(params, n: int) -> np.ndarray:
    """Unitary of a rectangular mesh from ``[theta..., phi..., out_phase...]``."""
    params = np.asarray(params, dtype=float)
    k = n * (n - 1) // 2
    if params.shape != (2 * k + n,):
        raise ValueError(f"expected {2 * k + n} parameters for {n} modes")
    thetas, phis, outs = params[:k], params[k:2 * k], params[2 * k:]
    cells = [MeshCell(p, t, f) for p, t, f in zip(mesh_layout(n), thetas, phis)]
    return mesh_unitary(cells, np.exp(1j * outs))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diag(R)
    return Q * (d / np.abs(d))
