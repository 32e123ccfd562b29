"""Target states: squeezed cat states, finite-energy GKP states and GKP cores.

GKP conventions (fixed here, configurable through arguments):

* positions are in ``hbar = 1`` units, where the ideal GKP ``|0>`` has peaks
  at ``q = 2 n sqrt(pi)``;
* ``delta_db`` converts to the peak width by ``Delta^2 = 10^(-dB/10)``;
* each peak is the squeezed vacuum with position wavefunction
  ``(pi Delta^2)^(-1/4) exp(-q^2 / (2 Delta^2))`` displaced to its lattice
  site, weighted by the envelope ``exp(-Delta^2 (2 n sqrt(pi))^2 / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .fock import FockTensor, single_mode_state, squeezer_matrix

CAT_TRUNC_TOL = 1e-4
GKP_TRUNC_TOL = 1e-8


class CutoffTooSmall(ValueError):
    """Raised when a target does not fit below the requested cutoff."""


def _check_deficit(deficit: float, tol: float, what: str, cutoff: int) -> None:
    if deficit > tol:
        raise CutoffTooSmall(
            f"{what} loses {deficit:.2e} of its norm at cutoff {cutoff}; raise the cutoff"
        )


def cat_state(alpha: complex, parity: str = "odd", r: float = 0.0, cutoff: int = 40,
              phi: float = 0.0) -> FockTensor:
    """Normalized ``S(r, phi) (|alpha> +/- |-alpha>)``.

    Raises:
        CutoffTooSmall: if more than ``1e-4`` of the norm lies above the cutoff.
    """
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    sign = 1.0 if parity == "even" else -1.0
    big = cutoff + int(4 * abs(alpha) ** 2 * np.exp(2 * abs(r))) + 60
    coh = single_mode_state(alpha=alpha, cutoff=big)
    n = np.arange(big)
    cat = coh * (1 + sign * (-1.0) ** n)
    norm = np.linalg.norm(cat)
    if norm == 0.0:
        raise ValueError("odd cat with alpha = 0 does not exist")
    cat = cat / norm
    if r != 0.0:
        cat = squeezer_matrix(r, phi, big) @ cat
    out = cat[:cutoff]
    _check_deficit(1 - np.linalg.norm(out) ** 2, CAT_TRUNC_TOL, "cat state", cutoff)
    return FockTensor(out / np.linalg.norm(out))


def delta_from_db(delta_db: float) -> float:
    if delta_db <= 0:
        raise ValueError("GKP damping in dB must be positive")
    return float(np.sqrt(10 ** (-delta_db / 10)))


def _gkp_peaks(delta: float):
    """Lattice sites (as coherent amplitudes) and envelope weights above 1e-18."""
    out = []
    k = 0
    while True:
        w = np.exp(-0.5 * delta**2 * (2 * k * np.sqrt(np.pi)) ** 2)
        if w < 1e-18:
            break
        for s in ({0} if k == 0 else {k, -k}):
            out.append((s * np.sqrt(2 * np.pi), w))
        k += 1
    return out


def gkp_delta_vector(delta_db: float, cutoff: int) -> np.ndarray:
    """Unnormalized-then-normalized Fock vector of the finite-energy GKP ``|0>``.

    No truncation check; see :func:`gkp_delta`.
    """
    delta = delta_from_db(delta_db)
    r = -np.log(delta)
    psi = np.zeros(cutoff, dtype=complex)
    for alpha, w in _gkp_peaks(delta):
        psi += w * single_mode_state(r=r, alpha=alpha, cutoff=cutoff)
    return psi / np.linalg.norm(psi)


def gkp_delta(delta_db: float, cutoff: int = 200) -> FockTensor:
    """Finite-energy GKP ``|0_Delta>``.

    Raises:
        CutoffTooSmall: if the state leaks more than ``1e-8`` above ``cutoff``.
    """
    big = max(2 * cutoff, 400)
    full = gkp_delta_vector(delta_db, big)
    out = full[:cutoff]
    _check_deficit(1 - np.linalg.norm(out) ** 2, GKP_TRUNC_TOL, "GKP state", cutoff)
    return FockTensor(out / np.linalg.norm(out))


def gkp_wavefunction(q, delta_db: float) -> np.ndarray:
    """Position wavefunction (hbar = 1) of the unnormalized peak sum."""
    delta = delta_from_db(delta_db)
    q = np.asarray(q, dtype=float)
    psi = np.zeros_like(q)
    for alpha, w in _gkp_peaks(delta):
        q0 = alpha * np.sqrt(2)
        psi += w * (np.pi * delta**2) ** -0.25 * np.exp(-((q - q0) ** 2) / (2 * delta**2))
    return psi


@dataclass(frozen=True, eq=False)
class CoreState:
    """Finite-support core ``sum_n c_n |n>`` and the squeezing ``r`` factored out."""

    coeffs: np.ndarray
    r: float
    overlap: float
    converged: bool
    delta_db: float
    state: FockTensor = field(repr=False)


def _core_overlap(r: float, gkp: np.ndarray, n_max: int, even_only: bool) -> tuple[float, np.ndarray]:
    # best core for fixed r is the projection of S(r)^dag |gkp> onto 0..n_max
    S_dag = squeezer_matrix(-r, 0.0, gkp.size)[: n_max + 1]
    proj = S_dag @ gkp
    if even_only:
        proj[1::2] = 0.0
    norm = np.linalg.norm(proj)
    return float(norm), proj / norm


def gkp_core_state(n_max: int = 4, delta_db: float = 10.0, cutoff: int = 300,
                   even_only: bool = False, r_bounds=(-3.0, 3.0), grid: int = 241) -> CoreState:
    """Core state maximizing ``|<0_Delta| S(r) core>|`` with support ``0..n_max``.

    For a fixed ``r`` the optimal core is the normalized projection of
    ``S(r)^dag |0_Delta>``, which leaves a one-dimensional search over ``r``.
    The overlap has several local maxima in ``r`` (a nearly-vacuum core with
    strong squeezing is one of them), so a fixed grid scan picks the basin
    and a bounded scalar minimization refines it.  Both steps are
    deterministic.
    """
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    gkp = gkp_delta_vector(delta_db, cutoff)
    rs = np.linspace(r_bounds[0], r_bounds[1], grid)
    scan = [_core_overlap(r, gkp, n_max, even_only)[0] for r in rs]
    k = int(np.argmax(scan))
    step = rs[1] - rs[0]
    lo, hi = max(r_bounds[0], rs[k] - step), min(r_bounds[1], rs[k] + step)
    res = minimize_scalar(
        lambda r: -_core_overlap(r, gkp, n_max, even_only)[0],
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-10, "maxiter": 500},
    )
    r = float(res.x) if -res.fun >= scan[k] else float(rs[k])
    overlap, coeffs = _core_overlap(r, gkp, n_max, even_only)
    coeffs = coeffs.real if np.allclose(coeffs.imag, 0, atol=1e-14) else coeffs
    return CoreState(np.asarray(coeffs), r, overlap, bool(res.success), delta_db,
                     FockTensor(np.asarray(coeffs, dtype=complex)))


def core_overlap(coeffs, r: float, delta_db: float = 10.0, cutoff: int = 300) -> float:
    """``|<0_Delta| S(r) sum c_n |n>|`` for arbitrary (normalized here) coefficients."""
    gkp = gkp_delta_vector(delta_db, cutoff)
    c = np.asarray(coeffs, dtype=complex)
    c = c / np.linalg.norm(c)
    S_dag = squeezer_matrix(-r, 0.0, cutoff)[: c.size]
    return float(abs(np.vdot(c, S_dag @ gkp)))


@dataclass(frozen=True)
class TargetSpec:
    """Declarative target: ``kind`` is ``cat``, ``gkp-delta`` or ``gkp-core``."""

    kind: str
    alpha: complex = 0.0
    parity: str = "odd"
    r: float = 0.0
    phi: float = 0.0
    delta_db: float = 10.0
    n_max: int = 4

    def __post_init__(self):
        if self.kind not in ("cat", "gkp-delta", "gkp-core"):
            raise ValueError(f"unknown target kind {self.kind!r}")

    def state(self, cutoff: int = 60) -> FockTensor:
        if self.kind == "cat":
            return cat_state(self.alpha, self.parity, self.r, cutoff, self.phi)
        if self.kind == "gkp-delta":
            return gkp_delta(self.delta_db, cutoff)
        core = gkp_core_state(self.n_max, self.delta_db)
        return core.state.padded((max(cutoff, self.n_max + 1),))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "cat":
            a = complex(self.alpha)
            d.update(alpha=[a.real, a.imag], parity=self.parity, r=self.r, phi=self.phi)
        else:
            d.update(delta_db=self.delta_db)
            if self.kind == "gkp-core":
                d.update(n_max=self.n_max)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TargetSpec":
        data = dict(data)
        alpha = data.pop("alpha", 0.0)
        if isinstance(alpha, (list, tuple)):
            alpha = complex(alpha[0], alpha[1])
        return cls(alpha=complex(alpha), **data)
