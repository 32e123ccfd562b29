"""Declarative heralding circuits and their evaluation into branch reports.

A circuit is a list of layers.  Each layer introduces fresh input modes
(squeezed displaced vacua or Fock states), applies Gaussian gates to every
live mode, and measures some modes with photon-number-resolving detectors.
Unmeasured modes carry over to the next layer; after the last layer exactly
one mode remains and holds the heralded state.

Evaluation compiles the whole Gaussian part of a layer (input squeezers,
gates, displacements) into one Fock-basis kernel whose elements are exact,
so the only approximation is the cutoff of the modes that are carried or
output.  Mixed states are kept as ensembles of unnormalized pure components
stacked along a trailing axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import bargmann
from .fock import FockTensor, single_mode_state
from .gaussian import (
    CovarianceState,
    apply_loss_cov,
    apply_symplectic,
    squeezed_state,
    symplectic_beamsplitter,
    symplectic_interferometer,
    symplectic_squeezer,
    tensor,
)
from .herald import DensityBlock, apply_loss_fock, detection_weights, fidelity
from .interferometer import is_unitary

POSITIONS = ("post-squeeze", "pre-detect", "output")


class SpecError(ValueError):
    """Raised for circuit descriptions that violate a structural invariant."""


# ---------------------------------------------------------------- inputs


@dataclass(frozen=True)
class SqueezedInput:
    """Displaced squeezed vacuum ``D(alpha) S(r, phi)|0>``."""

    r: float = 0.0
    phi: float = 0.0
    alpha: complex = 0.0


@dataclass(frozen=True)
class FockInput:
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise SpecError("Fock input occupation must be non-negative")


# ---------------------------------------------------------------- gates


@dataclass(frozen=True)
class Squeeze:
    mode: int
    r: float
    phi: float = 0.0

    @property
    def modes(self):
        return (self.mode,)

    def symplectic(self, loc, n):
        return symplectic_squeezer(self.r, self.phi, loc[self.mode], n)

    def squeezings(self):
        return (abs(self.r),)


@dataclass(frozen=True)
class Displace:
    mode: int
    alpha: complex

    @property
    def modes(self):
        return (self.mode,)

    def symplectic(self, loc, n):
        return np.eye(2 * n)

    def squeezings(self):
        return ()


@dataclass(frozen=True)
class Beamsplitter:
    modes: tuple[int, int]
    theta: float
    phi: float = 0.0

    def symplectic(self, loc, n):
        i, j = self.modes
        return symplectic_beamsplitter(self.theta, self.phi, (loc[i], loc[j]), n)

    def squeezings(self):
        return ()


@dataclass(frozen=True, eq=False)
class Interferometer:
    """Passive unitary ``U`` on ``modes`` (in the listed order)."""

    modes: tuple[int, ...]
    U: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=complex)
        if U.shape != (len(self.modes), len(self.modes)):
            raise SpecError("interferometer size does not match its mode list")
        if not is_unitary(U):
            raise SpecError("interferometer matrix is not unitary")
        U.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "modes", tuple(self.modes))

    def symplectic(self, loc, n):
        return symplectic_interferometer(self.U, tuple(loc[m] for m in self.modes), n)

    def squeezings(self):
        return ()


@dataclass(frozen=True, eq=False)
class SymplecticBlock:
    """Gaussian block in Bloch-Messiah form: ``U_out . squeeze(r) . U_in``.

    Storing the factors keeps the inline squeezers visible to the squeeze
    bound; ``U_in`` and ``U_out`` are passive unitaries on ``modes``.
    """

    modes: tuple[int, ...]
    U_in: np.ndarray
    r: tuple[float, ...]
    U_out: np.ndarray

    def __post_init__(self):
        k = len(self.modes)
        for name in ("U_in", "U_out"):
            U = np.array(getattr(self, name), dtype=complex)
            if U.shape != (k, k) or not is_unitary(U):
                raise SpecError(f"{name} must be a {k}x{k} unitary")
            U.setflags(write=False)
            object.__setattr__(self, name, U)
        if len(self.r) != k:
            raise SpecError("one inline squeezing per block mode is required")
        object.__setattr__(self, "r", tuple(float(x) for x in self.r))
        object.__setattr__(self, "modes", tuple(self.modes))

    def symplectic(self, loc, n):
        idx = tuple(loc[m] for m in self.modes)
        S = symplectic_interferometer(self.U_in, idx, n)
        for i, r in zip(idx, self.r):
            S = symplectic_squeezer(r, 0.0, i, n) @ S
        return symplectic_interferometer(self.U_out, idx, n) @ S

    def squeezings(self):
        return tuple(abs(r) for r in self.r)


Gate = Squeeze | Displace | Beamsplitter | Interferometer | SymplecticBlock


# ---------------------------------------------------------------- circuits


@dataclass(frozen=True)
class LossSite:
    """Pure loss of transmissivity ``eta`` on ``mode``.

    ``position`` is ``post-squeeze`` (right after the mode's input is
    prepared), ``pre-detect`` (in front of its detector) or ``output`` (on
    the heralded mode).
    """

    mode: int
    eta: float
    position: str

    def __post_init__(self):
        if self.position not in POSITIONS:
            raise SpecError(f"unknown loss position {self.position!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise SpecError(f"transmissivity {self.eta} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Layer:
    inputs: Mapping[int, SqueezedInput | FockInput]
    gates: tuple = ()
    measured: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", dict(sorted(dict(self.inputs).items())))
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "measured", tuple(int(m) for m in self.measured))


@dataclass(frozen=True, eq=False)
class CircuitSpec:
    """Layered heralding circuit on ``n_modes`` modes.

    Raises:
        SpecError: if a mode is prepared twice, measured twice, used before it
            is prepared, if a squeezing exceeds ``r_max``, or (when ``final``)
            if more or less than one mode is left unmeasured.
    """

    n_modes: int
    layers: tuple[Layer, ...]
    r_max: float | None = None
    loss: tuple[LossSite, ...] = ()
    final: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "loss", tuple(self.loss))
        self.validate(self.final)

    def validate(self, final: bool = True) -> None:
        n = self.n_modes
        live: set[int] = set()
        seen: set[int] = set()
        measured: set[int] = set()
        for k, layer in enumerate(self.layers):
            for m in layer.inputs:
                if not 0 <= m < n:
                    raise SpecError(f"input mode {m} out of range")
                if m in seen:
                    raise SpecError(f"mode {m} is prepared twice")
                seen.add(m)
                live.add(m)
            for g in layer.gates:
                for m in g.modes:
                    if m not in live:
                        raise SpecError(f"layer {k} gate touches mode {m}, which is not live")
                if len(set(g.modes)) != len(g.modes):
                    raise SpecError("gate modes must be distinct")
                for r in g.squeezings():
                    self._check_bound(r)
            for inp in layer.inputs.values():
                if isinstance(inp, SqueezedInput):
                    self._check_bound(abs(inp.r))
            for m in layer.measured:
                if m not in live:
                    raise SpecError(f"layer {k} measures mode {m}, which is not live")
                if m in measured:
                    raise SpecError(f"mode {m} is measured twice")
                measured.add(m)
                live.discard(m)
        if final and len(live) != 1:
            raise SpecError(f"exactly one unmeasured output mode is required, found {sorted(live)}")
        for site in self.loss:
            if not 0 <= site.mode < n:
                raise SpecError(f"loss site on mode {site.mode} out of range")

    def _check_bound(self, r: float) -> None:
        if self.r_max is not None and r > self.r_max + 1e-12:
            raise SpecError(f"squeezing {r:.4f} exceeds the bound r_max={self.r_max}")

    @property
    def output_mode(self) -> int:
        measured = {m for layer in self.layers for m in layer.measured}
        (out,) = [m for m in range(self.n_modes) if m not in measured]
        return out

    def eta(self, mode: int, position: str) -> float:
        """Combined transmissivity of every loss site at ``(mode, position)``."""
        e = 1.0
        for site in self.loss:
            if site.mode == mode and site.position == position:
                e *= site.eta
        return e

    def with_loss(self, loss) -> "CircuitSpec":
        return CircuitSpec(self.n_modes, self.layers, self.r_max, tuple(loss), self.final)

    def with_layers(self, layers, final=None) -> "CircuitSpec":
        final = self.final if final is None else final
        return CircuitSpec(self.n_modes, tuple(layers), self.r_max, self.loss, final)


def uniform_loss(n_modes: int, eta: float, positions=POSITIONS) -> tuple[LossSite, ...]:
    """The same transmissivity at every listed position of every mode."""
    return tuple(LossSite(m, eta, p) for p in positions for m in range(n_modes))


# ---------------------------------------------------------------- reports


@dataclass(frozen=True, eq=False)
class BranchReport:
    """One outcome branch: per-layer patterns, joint probability and fidelity.

    ``fidelity`` is ``None`` on abort branches.  ``deficit`` estimates the
    probability missing because of the Fock cutoff, relative to ``P``.
    """

    patterns: tuple[tuple[int, ...], ...]
    probability: float
    fidelity: float | None
    deficit: float = 0.0
    abort: bool = False
    state: DensityBlock | None = field(default=None, repr=False)

    def to_row(self) -> dict:
        return {
            "pattern": "|".join(",".join(str(n) for n in p) for p in self.patterns),
            "P": self.probability,
            "F": "" if self.fidelity is None else self.fidelity,
            "deficit": self.deficit,
            "abort": int(self.abort),
        }


@dataclass(frozen=True, eq=False)
class SchemeReport:
    branches: tuple[BranchReport, ...]

    @property
    def accepted(self) -> tuple[BranchReport, ...]:
        return tuple(b for b in self.branches if not b.abort)

    @property
    def total_probability(self) -> float:
        return float(sum(b.probability for b in self.accepted))

    @property
    def wasted_probability(self) -> float:
        return float(sum(b.probability for b in self.branches if b.abort))

    @property
    def min_fidelity(self) -> float | None:
        fs = [b.fidelity for b in self.accepted if b.fidelity is not None]
        return min(fs) if fs else None

    @property
    def max_fidelity(self) -> float | None:
        fs = [b.fidelity for b in self.accepted if b.fidelity is not None]
        return max(fs) if fs else None

    def summary(self) -> dict:
        return {
            "total_probability": self.total_probability,
            "wasted_probability": self.wasted_probability,
            "enumerated_probability": self.total_probability + self.wasted_probability,
            "min_fidelity": self.min_fidelity,
            "max_fidelity": self.max_fidelity,
            "n_branches": len(self.branches),
        }


# ---------------------------------------------------------------- engine


@dataclass(frozen=True)
class Truncation:
    """Cutoffs used by the evaluator.

    Args:
        carry: cutoff of modes carried to a later layer.
        out: cutoff of the heralded output mode.
        detect: largest photon number considered at a lossy detector.
        input: cutoff of lossy or Fock inputs expanded in the Fock basis.
        tail_tol: smallest component weight kept in mixtures.
        exact_check: compare first-layer probabilities with the exact
            covariance-based value to measure the truncation deficit.
    """

    carry: int = 40
    out: int = 40
    detect: int = 24
    input: int = 40
    tail_tol: float = 1e-16
    exact_check: bool = True


@dataclass
class _State:
    live: list[int]
    comps: np.ndarray  # shape (*dims of live modes, n_components)
    deficit: float = 0.0

    @property
    def probability(self) -> float:
        return float(np.vdot(self.comps, self.comps).real)


def _start() -> _State:
    return _State([], np.ones((1,), dtype=complex))


def _xi(alpha: complex, i: int, n: int) -> np.ndarray:
    d = np.zeros(2 * n)
    d[i] = 2 * np.real(alpha)
    d[i + n] = 2 * np.imag(alpha)
    return d


def _gates_affine(gates, loc, n, S=None, d=None):
    S = np.eye(2 * n) if S is None else S
    d = np.zeros(2 * n) if d is None else d
    for g in gates:
        if isinstance(g, Displace):
            d = d + _xi(g.alpha, loc[g.mode], n)
        else:
            Sg = g.symplectic(loc, n)
            S = Sg @ S
            d = Sg @ d
    return S, d


def _detect_dims(spec, layer, pattern, trunc):
    """Index window per measured mode: ``n`` alone, or ``n..`` when lossy."""
    dims, etas = [], []
    for m, n in zip(layer.measured, pattern):
        eta = spec.eta(m, "pre-detect")
        etas.append(eta)
        dims.append(n + 1 if eta == 1.0 else max(trunc.detect, n + 1))
    return dims, etas


def _measure(Y, meas_axes, pattern, etas, tol):
    """Project the measured axes of ``Y`` (last axis = components) onto ``pattern``.

    Lossy detectors turn each component into a family weighted by the
    probability that ``l`` extra photons were lost before the detector.
    """
    options = []
    for ax, n, eta in zip(meas_axes, pattern, etas):
        top = Y.shape[ax] - 1
        w = detection_weights(eta, n, top - n) if eta < 1.0 else np.ones(1)
        options.append([(n + l, np.sqrt(wl)) for l, wl in enumerate(w) if wl > tol])
    parts = []
    for choice in itertools.product(*options):
        index = [slice(None)] * Y.ndim
        scale = 1.0
        for ax, (k, s) in zip(meas_axes, choice):
            index[ax] = k
            scale *= s
        parts.append(scale * Y[tuple(index)])
    return np.concatenate(parts, axis=-1)


def _compress(comps: np.ndarray, tol: float) -> np.ndarray:
    """Re-express a mixture with at most ``dim`` orthogonal components."""
    shape = comps.shape[:-1]
    dim = int(np.prod(shape)) if shape else 1
    M = comps.shape[-1]
    flat = comps.reshape(dim, M)
    norms = np.einsum("ij,ij->j", flat.conj(), flat).real
    total = norms.sum()
    if total == 0.0:
        return comps[..., :1] * 0.0
    keep = norms > tol * total
    flat = flat[:, keep]
    if flat.shape[1] > dim:
        u, s, _ = np.linalg.svd(flat, full_matrices=False)
        good = s**2 > tol * total
        flat = u[:, good] * s[good]
    return flat.reshape(shape + (flat.shape[1],))


def _input_factors(spec, layer, trunc):
    """Per new mode: ``None`` when folded into the kernel, else a ``(dim, M)`` ensemble."""
    factors = {}
    for m, inp in layer.inputs.items():
        eta = spec.eta(m, "post-squeeze")
        if isinstance(inp, FockInput):
            v = np.zeros(max(inp.n + 1, 1), dtype=complex)
            v[inp.n] = 1.0
        elif eta == 1.0:
            factors[m] = None
            continue
        else:
            v = single_mode_state(inp.r, inp.phi, inp.alpha, trunc.input)
        if eta == 1.0:
            factors[m] = v[:, None]
            continue
        dim = max(v.size, trunc.input if isinstance(inp, SqueezedInput) else v.size)
        from .herald import loss_kraus

        ops = loss_kraus(eta, dim)
        vv = np.zeros(dim, dtype=complex)
        vv[: v.size] = v
        cols = [A @ vv for A in ops]
        cols = [c for c in cols if np.vdot(c, c).real > trunc.tail_tol]
        factors[m] = np.stack(cols, axis=1)
    return factors


def _gaussian_only(spec, layer, state) -> bool:
    return not state.live and all(isinstance(i, SqueezedInput) for i in layer.inputs.values())


def _layer_mixed_gaussian(spec, layer, pattern, out_dims, trunc):
    """First-layer route for lossy squeezed inputs: exact covariance, then Fock density.

    All loss of the layer (after the inputs and before the detectors) is a
    Gaussian channel, so the detectors are ideal here and each measured mode
    only needs the single index of its count.
    """
    cov, loc = _layer_covariance(spec, layer, detect_loss=True)
    act = sorted(layer.inputs)
    n = len(act)
    rho = bargmann.density_elements(cov, tuple(out_dims))
    index = [slice(None)] * (2 * n)
    for m, n_det in zip(layer.measured, pattern):
        index[loc[m]] = n_det
        index[loc[m] + n] = n_det
    rest = [m for m in act if m not in layer.measured]
    rest_dims = tuple(out_dims[loc[m]] for m in rest)
    D = int(np.prod(rest_dims)) if rest_dims else 1
    acc = rho[tuple(index)].reshape(D, D)
    acc = 0.5 * (acc + acc.conj().T)
    lam, vec = np.linalg.eigh(acc)
    total = max(lam.sum(), 0.0)
    keep = lam > trunc.tail_tol * max(total, 1e-300)
    comps = vec[:, keep] * np.sqrt(lam[keep])
    if not keep.any():
        comps = np.zeros((D, 1), dtype=complex)
    return rest, comps.reshape(rest_dims + (comps.shape[1],))


def _layer_covariance(spec, layer, detect_loss: bool = False) -> tuple[CovarianceState, dict]:
    """Covariance after a first layer of Gaussian inputs, with post-squeeze loss.

    With ``detect_loss`` the pre-detection loss of the measured modes (a
    Gaussian channel after the gates) is applied as well.
    """
    act = sorted(layer.inputs)
    loc = {m: i for i, m in enumerate(act)}
    n = len(act)
    cov = tensor(*[squeezed_state(i.r, i.phi, i.alpha) for i in layer.inputs.values()])
    for m in act:
        eta = spec.eta(m, "post-squeeze")
        if eta < 1.0:
            cov = apply_loss_cov(cov, eta, loc[m])
    S, d = _gates_affine(layer.gates, loc, n)
    cov = apply_symplectic(cov, S)
    cov = CovarianceState(cov.V, cov.xi + d)
    if detect_loss:
        for m in layer.measured:
            eta = spec.eta(m, "pre-detect")
            if eta < 1.0:
                cov = apply_loss_cov(cov, eta, loc[m])
    return cov, loc


def _exact_pattern_probability(cov: CovarianceState, meas_idx, pattern, etas, trunc) -> float:
    """Pattern probability from the measured modes' reduced covariance.

    Independent of the cutoff of the unmeasured modes.
    """
    red = cov.reduced(tuple(meas_idx))
    dims = tuple(n_det + 1 if e == 1.0 else max(trunc.detect, n_det + 1)
                 for n_det, e in zip(pattern, etas))
    rho = bargmann.density_elements(red, dims)
    D = int(np.prod(dims))
    diag = np.diagonal(rho.reshape(D, D)).real.reshape(dims)
    ranges = []
    for n_det, e, top in zip(pattern, etas, dims):
        w = detection_weights(e, n_det, top - 1 - n_det) if e < 1.0 else np.ones(1)
        ranges.append([(n_det + l, wl) for l, wl in enumerate(w)])
    p = 0.0
    for choice in itertools.product(*ranges):
        idx = tuple(c[0] for c in choice)
        p += np.prod([c[1] for c in choice]) * diag[idx]
    return float(p)


def _apply_layer(spec, state: _State, layer: Layer, pattern, last: bool, trunc: Truncation) -> _State:
    pattern = tuple(int(n) for n in pattern)
    if len(pattern) != len(layer.measured):
        raise SpecError("one photon count per measured mode is required")
    if any(n < 0 for n in pattern):
        raise SpecError("photon counts must be non-negative")
    new = list(layer.inputs)
    act = sorted(state.live + new)
    loc = {m: i for i, m in enumerate(act)}
    n = len(act)
    det_dims, etas = _detect_dims(spec, layer, pattern, trunc)
    keep_cut = trunc.out if last else trunc.carry
    out_dims = []
    for m in act:
        if m in layer.measured:
            out_dims.append(det_dims[layer.measured.index(m)])
        else:
            out_dims.append(keep_cut)

    lossy_inputs = any(spec.eta(m, "post-squeeze") < 1.0 for m in new
                       if isinstance(layer.inputs[m], SqueezedInput))
    if lossy_inputs and _gaussian_only(spec, layer, state):
        # detector loss goes into the covariance, so the detectors become ideal
        ideal = [1.0] * len(pattern)
        dims = [pattern[layer.measured.index(m)] + 1 if m in layer.measured else keep_cut
                for m in act]
        rest, comps = _layer_mixed_gaussian(spec, layer, pattern, dims, trunc)
        new_state = _State(rest, comps, state.deficit)
        cov, _ = _layer_covariance(spec, layer, detect_loss=True)
        p_exact = _exact_pattern_probability(cov, [loc[m] for m in layer.measured],
                                             pattern, ideal, trunc)
        return _finish(new_state, p_exact, trunc)

    factors = _input_factors(spec, layer, trunc)
    S = np.eye(2 * n)
    d = np.zeros(2 * n)
    for m, inp in layer.inputs.items():
        if factors[m] is None:
            S = symplectic_squeezer(inp.r, inp.phi, loc[m], n) @ S
            d = d + _xi(inp.alpha, loc[m], n)
    S, d = _gates_affine(layer.gates, loc, n, S, d)
    beta = 0.5 * (d[:n] + 1j * d[n:])

    # input ensemble laid out as (*live dims, *new dims, components)
    X = state.comps
    for m in new:
        f = factors[m]
        if f is None:
            f = np.ones((1, 1), dtype=complex)
        M0 = X.shape[-1]
        X = np.einsum("...a,ib->...iab", X, f).reshape(X.shape[:-1] + (f.shape[0], M0 * f.shape[1]))
    order = state.live + new
    perm = [order.index(m) for m in act]
    X = np.transpose(X, perm + [X.ndim - 1])
    in_dims = X.shape[:-1]
    K = bargmann.unitary_kernel(S, tuple(out_dims), tuple(in_dims), beta)
    M = X.shape[-1]
    Y = K.reshape(int(np.prod(out_dims)), int(np.prod(in_dims))) @ X.reshape(-1, M)
    Y = Y.reshape(tuple(out_dims) + (M,))
    meas_axes = [loc[m] for m in layer.measured]
    comps = _measure(Y, meas_axes, pattern, etas, trunc.tail_tol) if meas_axes else Y
    rest = [m for m in act if m not in layer.measured]
    comps = _compress(comps, trunc.tail_tol)
    new_state = _State(rest, comps, state.deficit)
    p_exact = None
    if _gaussian_only(spec, layer, state) and trunc.exact_check:
        # every input was folded into (S, d): the layer output is the pure state S|0>
        p_exact = _exact_pattern_probability(CovarianceState(S @ S.T, d), meas_axes,
                                             pattern, etas, trunc)
    return _finish(new_state, p_exact, trunc)


def _tail_weight(state: _State) -> float:
    """Weight in the top Fock level of each surviving mode, relative to the total."""
    p = state.probability
    if p == 0.0:
        return 0.0
    w = 0.0
    probs = np.sum(np.abs(state.comps) ** 2, axis=-1)
    for ax in range(probs.ndim):
        w += float(np.take(probs, -1, axis=ax).sum())
    return w / p


def _finish(state: _State, p_exact, trunc) -> _State:
    p = state.probability
    deficit = state.deficit
    if p_exact is not None and p_exact > 0:
        deficit = max(deficit, (p_exact - p) / p_exact)
    deficit = max(deficit, _tail_weight(state))
    state.deficit = deficit
    return state


def _output_density(spec, state: _State) -> DensityBlock:
    (mode,) = state.live
    V = state.comps.reshape(state.comps.shape[0], -1)
    block = DensityBlock(V @ V.conj().T, (V.shape[0],))
    eta = spec.eta(mode, "output")
    if eta < 1.0:
        block = apply_loss_fock(block, eta, 0)
    return block


def _branch(spec, state, patterns, target) -> BranchReport:
    block = _output_density(spec, state)
    p = block.trace
    if p <= 0.0:
        return BranchReport(tuple(patterns), 0.0, None, state.deficit, False, None)
    rho = block.normalized()
    return BranchReport(tuple(patterns), p, fidelity(rho, target), state.deficit, False, rho)


def evaluate_branch(spec: CircuitSpec, patterns: Sequence[Sequence[int]], target,
                    trunc: Truncation = Truncation()) -> BranchReport:
    """Joint probability and fidelity of one pattern per layer.

    Args:
        spec: validated circuit.
        patterns: one photon-count tuple per layer, matching its measured modes.
        target: single-mode pure target (FockTensor or amplitude vector).
        trunc: cutoffs.

    Returns:
        BranchReport: with the normalized output density, or an empty state and
        ``fidelity=None`` if the branch has zero probability.
    """
    if len(patterns) != len(spec.layers):
        raise SpecError("one pattern per layer is required")
    state = _start()
    for k, (layer, pat) in enumerate(zip(spec.layers, patterns)):
        state = _apply_layer(spec, state, layer, pat, k == len(spec.layers) - 1, trunc)
    return _branch(spec, state, [tuple(int(x) for x in p) for p in patterns], target)


def evaluate_non_adaptive(spec: CircuitSpec, pattern, target,
                          trunc: Truncation = Truncation()) -> BranchReport:
    if len(spec.layers) != 1:
        raise SpecError("a non-adaptive circuit has exactly one layer")
    return evaluate_branch(spec, [pattern], target, trunc)


# ---------------------------------------------------------------- adaptive


@dataclass(frozen=True, eq=False)
class PolicyNode:
    """Layer run after a given outcome of the previous layer.

    A final node lists the patterns that herald the target in ``accepted``; a
    non-final node hands its own outcomes to ``next``.
    """

    layer: Layer
    accepted: tuple[tuple[int, ...], ...] = ()
    next: "AdaptivePolicy | None" = None

    def __post_init__(self):
        object.__setattr__(self, "accepted", tuple(tuple(int(n) for n in p) for p in self.accepted))


@dataclass(frozen=True, eq=False)
class AdaptivePolicy:
    """Map from an observed pattern to the node that follows it."""

    branches: Mapping[tuple[int, ...], PolicyNode]

    def __post_init__(self):
        b = {tuple(int(n) for n in k): v for k, v in dict(self.branches).items()}
        object.__setattr__(self, "branches", dict(sorted(b.items())))


def enumerate_patterns(n_measured: int, n_max: int = 4, total_max: int = 6):
    """All patterns with per-mode counts ``<= n_max`` and total ``<= total_max``."""
    return [p for p in itertools.product(range(n_max + 1), repeat=n_measured)
            if sum(p) <= total_max]


def _copy(state: _State) -> _State:
    return _State(list(state.live), state.comps, state.deficit)


def _aborts(spec, state, layer, declared, history, trunc, n_max, total_max, out):
    for pat in enumerate_patterns(len(layer.measured), n_max, total_max):
        if pat in declared:
            continue
        st = _apply_layer(spec, _copy(state), layer, pat, False, trunc)
        p = st.probability
        if p > 0.0:
            out.append(BranchReport(tuple(history + [pat]), p, None, st.deficit, True, None))


def _descend(spec, state, node: PolicyNode, history, target, trunc, out, n_max, total_max):
    if node.next is None:
        if not node.accepted:
            raise SpecError("a final policy node needs at least one accepted pattern")
        for pat in node.accepted:
            st = _apply_layer(spec, _copy(state), node.layer, pat, True, trunc)
            out.append(_branch(spec, st, history + [pat], target))
        declared = set(node.accepted)
    else:
        for pat, child in node.next.branches.items():
            st = _apply_layer(spec, _copy(state), node.layer, pat, False, trunc)
            _descend(spec, st, child, history + [pat], target, trunc, out, n_max, total_max)
        declared = set(node.next.branches)
    _aborts(spec, state, node.layer, declared, history, trunc, n_max, total_max, out)


def _check_paths(spec: CircuitSpec, policy: AdaptivePolicy) -> None:
    """Validate every root-to-leaf circuit of the tree."""
    def rec(layers, pol):
        for node in pol.branches.values():
            path = layers + [node.layer]
            if node.next is None:
                CircuitSpec(spec.n_modes, tuple(path), spec.r_max, spec.loss)
            else:
                CircuitSpec(spec.n_modes, tuple(path), spec.r_max, spec.loss, final=False)
                rec(path, node.next)
    rec(list(spec.layers), policy)


def evaluate_adaptive(spec: CircuitSpec, policy: AdaptivePolicy, target,
                      trunc: Truncation = Truncation(), n_max: int = 4,
                      total_max: int = 6, shared_patterns=()) -> SchemeReport:
    """Evaluate a feed-forward tree.

    ``spec`` holds the shared leading layers (usually one).  The outcomes of
    the last shared layer select nodes of ``policy``.  At every node,
    outcomes that are not declared (or, at a final node, not accepted)
    become abort branches, enumerated up to ``n_max`` per mode and
    ``total_max`` in total, whose probability is reported as wasted.

    Args:
        shared_patterns: fixed patterns for all but the last shared layer.
    """
    if not spec.layers:
        raise SpecError("the shared part needs at least one layer")
    if len(shared_patterns) != len(spec.layers) - 1:
        raise SpecError("give patterns for every shared layer except the last")
    spec.validate(final=False)
    _check_paths(spec, policy)
    state = _start()
    for layer, pat in zip(spec.layers[:-1], shared_patterns):
        state = _apply_layer(spec, state, layer, pat, False, trunc)
    history = [tuple(p) for p in shared_patterns]
    last = spec.layers[-1]
    out: list[BranchReport] = []
    for pat, node in policy.branches.items():
        st = _apply_layer(spec, _copy(state), last, pat, False, trunc)
        _descend(spec, st, node, history + [pat], target, trunc, out, n_max, total_max)
    _aborts(spec, state, last, set(policy.branches), history, trunc, n_max, total_max, out)
    return SchemeReport(tuple(out))


def evaluate_concatenated(spec: CircuitSpec, policy: AdaptivePolicy, target,
                          trunc: Truncation = Truncation(), **kwargs) -> SchemeReport:
    """Branch tree over successive measurement layers (same engine as adaptive).

    A zero-photon outcome can simply point at a copy of a smaller scheme laid
    out on the surviving modes.
    """
    return evaluate_adaptive(spec, policy, target, trunc, **kwargs)


def policy_from_spec(spec: CircuitSpec, patterns) -> tuple[CircuitSpec, AdaptivePolicy]:
    """Degenerate policy: the layers of ``spec`` with one accepted path ``patterns``."""
    if len(spec.layers) < 2:
        raise SpecError("a policy needs at least two layers")
    node = PolicyNode(spec.layers[-1], accepted=(tuple(patterns[-1]),))
    for layer, pat in zip(reversed(spec.layers[1:-1]), reversed(patterns[1:-1])):
        node = PolicyNode(layer, next=AdaptivePolicy({tuple(pat): node}))
    shared = spec.with_layers(spec.layers[:1], final=False)
    return shared, AdaptivePolicy({tuple(patterns[0]): node})


# ---------------------------------------------------------------- composition


def rerun_probability(p_single: float, k_attempts: int = 2) -> float:
    """Success probability of ``k`` independent attempts: ``1 - (1 - P)^k``."""
    if not 0.0 <= p_single <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    if k_attempts < 1:
        raise ValueError("at least one attempt is required")
    return float(1.0 - (1.0 - p_single) ** k_attempts)


def evaluate_rerun(spec: CircuitSpec, pattern, target, k_attempts: int = 2,
                   trunc: Truncation = Truncation()) -> float:
    """Total success probability of rerunning a non-adaptive source ``k`` times."""
    report = evaluate_non_adaptive(spec, pattern, target, trunc)
    return rerun_probability(report.probability, k_attempts)


def concatenation_total(p_base: float, p_zero_first: float, p_extra: float) -> float:
    """Total of a scheme replicated after a zero-photon first outcome.

    ``P_base`` is the probability of the embedded smaller scheme, which is
    reached again with probability ``p_zero_first``; ``p_extra`` collects the
    other accepted branches.
    """
    for p in (p_base, p_zero_first, p_extra):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
    return p_base + p_zero_first * p_base + p_extra


def outcome_probabilities(spec: CircuitSpec, layer_index: int = 0, n_max: int = 4,
                          total_max: int = 6, patterns=(), trunc: Truncation = Truncation()):
    """Probabilities of every outcome of one layer, given patterns for earlier layers."""
    state = _start()
    for layer, pat in zip(spec.layers[:layer_index], patterns):
        state = _apply_layer(spec, state, layer, pat, False, trunc)
    layer = spec.layers[layer_index]
    out = {}
    for pat in enumerate_patterns(len(layer.measured), n_max, total_max):
        st = _apply_layer(spec, _copy(state), layer, pat, False, trunc)
        out[pat] = st.probability
    return out


def to_fock(report: BranchReport) -> FockTensor | None:
    """Dominant pure component of a branch's output (the state itself when pure)."""
    if report.state is None:
        return None
    lam, vec = np.linalg.eigh(report.state.rho)
    v = vec[:, -1] * np.sqrt(lam[-1])
    k = np.argmax(np.abs(v))
    v = v * np.exp(-1j * np.angle(v[k]))
    return FockTensor(v)
