"""Photon-number-resolved heralding, photon loss and fidelities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .fock import FockTensor


@dataclass(frozen=True, eq=False)
class DensityBlock:
    """Density matrix of a few modes, stored as a square matrix.

    ``cutoffs`` gives the per-mode dimensions of the (row-major) flattened
    basis.  The trace may be below one when it represents an unnormalized
    conditional state.
    """

    rho: np.ndarray
    cutoffs: tuple[int, ...]

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        cutoffs = tuple(int(c) for c in self.cutoffs)
        dim = int(np.prod(cutoffs))
        if rho.shape != (dim, dim):
            raise ValueError(f"rho has shape {rho.shape}, expected {(dim, dim)}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "cutoffs", cutoffs)

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho).real)

    @property
    def n_modes(self) -> int:
        return len(self.cutoffs)

    @classmethod
    def from_pure(cls, psi: FockTensor) -> "DensityBlock":
        v = psi.amps.ravel()
        return cls(np.outer(v, v.conj()), psi.cutoffs)

    def normalized(self) -> "DensityBlock":
        return DensityBlock(self.rho / self.trace, self.cutoffs)

    def tensor(self) -> np.ndarray:
        """View as ``rho[m_1..m_N, n_1..n_N]``."""
        return self.rho.reshape(self.cutoffs + self.cutoffs)

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))


@dataclass(frozen=True)
class HeraldResult:
    """Outcome of projecting onto a detection pattern.

    ``state`` is ``None`` for a zero-probability pattern.
    """

    state: FockTensor | DensityBlock | None
    probability: float

    @property
    def empty(self) -> bool:
        return self.state is None


def check_pattern(pattern, measured, cutoffs) -> tuple[int, ...]:
    pattern = tuple(int(n) for n in pattern)
    measured = tuple(measured)
    if len(pattern) != len(measured):
        raise ValueError("one photon count per measured mode is required")
    if len(set(measured)) != len(measured):
        raise ValueError("measured modes must be distinct")
    for n, m in zip(pattern, measured):
        if n < 0:
            raise ValueError("photon counts must be non-negative")
        if n >= cutoffs[m]:
            raise ValueError(f"count {n} on mode {m} exceeds cutoff {cutoffs[m]}")
    return pattern


def _slice(amps: np.ndarray, measured, pattern) -> np.ndarray:
    index = [slice(None)] * amps.ndim
    for m, n in zip(measured, pattern):
        index[m] = n
    return amps[tuple(index)]


def herald(psi: FockTensor, measured, pattern) -> HeraldResult:
    """Project ``measured`` modes onto ``pattern`` and renormalize the rest."""
    pattern = check_pattern(pattern, measured, psi.cutoffs)
    sub = _slice(psi.amps, measured, pattern)
    p = float(np.vdot(sub, sub).real)
    if p == 0.0:
        return HeraldResult(None, 0.0)
    if sub.ndim == 0:
        sub = sub.reshape(1)
    return HeraldResult(FockTensor(sub / np.sqrt(p), psi.deficit), p)


def loss_kraus(eta: float, cutoff: int) -> list[np.ndarray]:
    """Kraus operators ``A_k`` (k lost photons) of the pure-loss channel."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"transmissivity {eta} outside [0, 1]")
    ops = []
    for k in range(cutoff):
        A = np.zeros((cutoff, cutoff))
        for n in range(k, cutoff):
            A[n - k, n] = np.sqrt(comb(n, k) * eta ** (n - k) * (1 - eta) ** k)
        ops.append(A)
    return ops


def apply_loss_fock(state, eta: float, mode: int = 0) -> DensityBlock:
    """Pure-loss channel on one mode of a pure tensor or a density block."""
    if isinstance(state, FockTensor):
        state = DensityBlock.from_pure(state)
    cut = state.cutoffs
    if not 0 <= mode < len(cut):
        raise ValueError(f"mode {mode} out of range")
    t = state.tensor()
    n = len(cut)
    out = np.zeros_like(t)
    for A in loss_kraus(eta, cut[mode]):
        x = np.moveaxis(np.tensordot(A, t, axes=(1, mode)), 0, mode)
        x = np.moveaxis(np.tensordot(A.conj(), x, axes=(1, n + mode)), 0, n + mode)
        out += x
    dim = int(np.prod(cut))
    return DensityBlock(out.reshape(dim, dim), cut)


def detection_weights(eta: float, n: int, lmax: int) -> np.ndarray:
    """``w_l = C(n+l, n) eta^n (1-eta)^l``: weight of ``n+l`` photons read as ``n``."""
    ls = np.arange(lmax + 1)
    return np.array([comb(n + l, n) for l in ls]) * eta ** n * (1 - eta) ** ls


def herald_lossy(psi: FockTensor, measured, pattern, eta_detect=1.0, eta_out=1.0):
    """Herald with lossy detectors and a lossy output.

    Detector loss is folded into the measurement: reading ``n`` photons
    means ``n + l`` photons arrived and ``l`` were lost, for every ``l``
    still inside the cutoff.  The surviving modes come back as an
    unnormalized mixture that is then renormalized; output loss ``eta_out``
    (scalar or one value per remaining mode) is applied to it afterwards.

    Returns:
        HeraldResult: with a :class:`DensityBlock` state, or empty when the
        pattern has zero probability.
    """
    pattern = check_pattern(pattern, measured, psi.cutoffs)
    measured = tuple(measured)
    etas = np.broadcast_to(np.asarray(eta_detect, dtype=float), (len(measured),))
    for e in etas:
        if not 0.0 <= e <= 1.0:
            raise ValueError(f"transmissivity {e} outside [0, 1]")
    rest = [m for m in range(psi.n_modes) if m not in measured]
    rest_cut = tuple(psi.cutoffs[m] for m in rest) or (1,)
    dim = int(np.prod(rest_cut))
    rho = np.zeros((dim, dim), dtype=complex)
    ranges = [range(psi.cutoffs[m] - n) for m, n in zip(measured, pattern)]
    weights = [detection_weights(e, n, psi.cutoffs[m] - n - 1)
               for e, m, n in zip(etas, measured, pattern)]
    for ls in itertools.product(*ranges):
        w = np.prod([weights[i][l] for i, l in enumerate(ls)])
        if w == 0.0:
            continue
        v = _slice(psi.amps, measured, [n + l for n, l in zip(pattern, ls)]).ravel()
        rho += w * np.outer(v, v.conj())
    p = float(np.trace(rho).real)
    if p <= 0.0:
        return HeraldResult(None, 0.0)
    block = DensityBlock(rho / p, rest_cut)
    outs = np.broadcast_to(np.asarray(eta_out, dtype=float), (len(rest),))
    for k, e in enumerate(outs):
        if e != 1.0:
            block = apply_loss_fock(block, float(e), k)
    return HeraldResult(block, p)


def _as_vector(target) -> np.ndarray:
    if isinstance(target, FockTensor):
        return target.amps.ravel()
    return np.asarray(target, dtype=complex).ravel()


def fidelity(state, target) -> float:
    """Fidelity with a pure single-mode target.

    ``|<t|psi>|^2`` for pure states and ``<t|rho|t>`` for density blocks; the
    shorter of the two is zero-padded.  Both are taken as given (callers
    normalize).
    """
    t = _as_vector(target)
    if isinstance(state, DensityBlock):
        rho = state.rho
        c = max(rho.shape[0], t.size)
        R = np.zeros((c, c), dtype=complex)
        R[: rho.shape[0], : rho.shape[0]] = rho
        tt = np.zeros(c, dtype=complex)
        tt[: t.size] = t
        return float(np.clip((tt.conj() @ R @ tt).real, 0.0, 1.0))
    v = _as_vector(state)
    c = max(v.size, t.size)
    vv = np.zeros(c, dtype=complex)
    tt = np.zeros(c, dtype=complex)
    vv[: v.size] = v
    tt[: t.size] = t
    return float(np.clip(abs(np.vdot(tt, vv)) ** 2, 0.0, 1.0))


def outcome_distribution(psi: FockTensor, measured, n_max=None) -> dict[tuple[int, ...], float]:
    """Probabilities of every pattern on ``measured`` with counts ``<= n_max``."""
    measured = tuple(measured)
    tops = [psi.cutoffs[m] - 1 for m in measured]
    if n_max is not None:
        tops = [min(t, n_max) for t in tops]
    probs = np.abs(psi.amps) ** 2
    rest = tuple(m for m in range(psi.n_modes) if m not in measured)
    marg = probs.sum(axis=rest) if rest else probs
    # marg axes follow the sorted order of the measured modes
    order = np.argsort(measured)
    out = {}
    for pattern in itertools.product(*[range(t + 1) for t in tops]):
        idx = tuple(pattern[i] for i in order)
        out[pattern] = float(marg[idx])
    return out


def wigner_fock(state, q, p) -> np.ndarray:
    """Wigner function of a single-mode Fock-basis state on the grid ``q x p``.

    Uses ``hbar = 2`` (vacuum variance 1), matching the covariance code, and
    the three-term recursion for the Wigner functions of ``|m><n|``.

    Returns:
        np.ndarray: ``W[i, j]`` at ``(q[j], p[i])``, normalized to unit integral.
    """
    if isinstance(state, FockTensor):
        state = DensityBlock.from_pure(state)
    if state.n_modes != 1:
        raise ValueError("the Wigner dump needs a single-mode state")
    rho = state.rho
    Q, P = np.meshgrid(np.asarray(q, dtype=float), np.asarray(p, dtype=float))
    a = (Q + 1j * P) / 2
    c = rho.shape[0]
    w = [np.exp(-2 * np.abs(a) ** 2) / np.pi]
    W = rho[0, 0].real * w[0]
    for n in range(1, c):
        w.append(2 * a * w[n - 1] / np.sqrt(n))
        W = W + 2 * (rho[0, n] * w[n]).real
    for m in range(1, c):
        prev_col = w[m].copy()
        w[m] = (2 * np.conj(a) * prev_col - np.sqrt(m) * w[m - 1]) / np.sqrt(m)
        W = W + (rho[m, m] * w[m]).real
        for n in range(m + 1, c):
            nxt = (2 * a * w[n - 1] - np.sqrt(m) * prev_col) / np.sqrt(n)
            prev_col = w[n].copy()
            w[n] = nxt
            W = W + 2 * (rho[m, n] * w[n]).real
    return W / 2
