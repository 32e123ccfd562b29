"""Derivative-free parameter search for heralding circuits.

The objective is ``reward = F + P``.  Circuits are produced from a flat
parameter vector by a :class:`Template`; templates are written once as a
builder function that asks for named, bounded parameters, so the same code
yields the bounds and the circuit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .interferometer import unitary_from_params
from .scheme import (
    AdaptivePolicy,
    BranchReport,
    CircuitSpec,
    FockInput,
    Interferometer,
    Layer,
    PolicyNode,
    SchemeReport,
    SqueezedInput,
    SymplecticBlock,
    Truncation,
    evaluate_adaptive,
    evaluate_branch,
    evaluate_concatenated,
)

log = logging.getLogger(__name__)

R_CAP = 2.5  # practical squeeze cap (about 21.7 dB) when no bound is configured
MATCH_TOL = 1e-3
PENALTY = 100.0
P_FLOOR = 1e-9


def reward(F: float, P: float) -> float:
    """Equal-weight reward ``F + P`` (``P`` as a fraction)."""
    return float(F + P)


# ---------------------------------------------------------------- templates


@dataclass(frozen=True)
class Slot:
    name: str
    lo: float
    hi: float
    kind: str  # squeeze | angle | phase | real


class _Recorder:
    def __init__(self):
        self.slots: list[Slot] = []

    def __call__(self, name, lo, hi, kind="real"):
        self.slots.append(Slot(name, float(lo), float(hi), kind))
        return 0.5 * (lo + hi)


class _Reader:
    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        self.i = 0

    def __call__(self, name, lo, hi, kind="real"):
        v = float(self.x[self.i])
        self.i += 1
        return v


@dataclass(frozen=True, eq=False)
class Template:
    """Parametrized circuit: ``build(take)`` asks ``take(name, lo, hi, kind)`` per parameter."""

    name: str
    builder: Callable
    slots: tuple[Slot, ...] = ()

    def __post_init__(self):
        if not self.slots:
            rec = _Recorder()
            self.builder(rec)
            object.__setattr__(self, "slots", tuple(rec.slots))

    @property
    def n_params(self) -> int:
        return len(self.slots)

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return [(s.lo, s.hi) for s in self.slots]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.slots]

    def build(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_params,):
            raise ValueError(f"{self.name} expects {self.n_params} parameters")
        return self.builder(_Reader(x))

    def clip(self, x) -> np.ndarray:
        lo, hi = np.array(self.bounds).T
        return np.clip(np.asarray(x, dtype=float), lo, hi)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform start inside the bounds; squeezes start in ``[0, min(0.5, hi)]``."""
        x = []
        for s in self.slots:
            if s.kind == "squeeze":
                x.append(rng.uniform(max(s.lo, 0.0), min(0.5, s.hi)))
            elif s.kind == "inline":
                b = min(0.5, s.hi)
                x.append(rng.uniform(-b, b))
            elif s.kind in ("phase", "detector-phase"):
                x.append(rng.uniform(0.0, 2 * np.pi))
            else:
                x.append(rng.uniform(s.lo, s.hi))
        return np.array(x)


def _squeeze_bound(r_max):
    return R_CAP if r_max is None else float(r_max)


def _take_squeezed(take, tag, r_max, displace=False):
    r = take(f"{tag}.r", 0.0, _squeeze_bound(r_max), "squeeze")
    phi = take(f"{tag}.phi", -np.pi, 3 * np.pi, "phase")
    alpha = 0.0
    if displace:
        alpha = complex(take(f"{tag}.re", -2.0, 2.0), take(f"{tag}.im", -2.0, 2.0))
    return SqueezedInput(r, phi, alpha)


def _take_unitary(take, tag, k, detected=()):
    """Mesh parameters; output phases of ``detected`` ports are pure gauge."""
    n_cells = k * (k - 1) // 2
    thetas = [take(f"{tag}.theta{i}", 0.0, np.pi / 2, "angle") for i in range(n_cells)]
    phis = [take(f"{tag}.phi{i}", -np.pi, 3 * np.pi, "phase") for i in range(n_cells)]
    outs = [take(f"{tag}.out{i}", -np.pi, 3 * np.pi,
                 "detector-phase" if i in detected else "phase") for i in range(k)]
    return unitary_from_params(np.array(thetas + phis + outs), k)


def _take_block(take, tag, modes, kind, r_max, measured=()):
    k = len(modes)
    detected = tuple(i for i, m in enumerate(modes) if m in measured)
    if kind == "passive":
        return Interferometer(tuple(modes), _take_unitary(take, tag, k, detected))
    if kind == "symplectic":
        U_in = _take_unitary(take, f"{tag}.in", k)
        bound = _squeeze_bound(r_max)
        r = tuple(take(f"{tag}.r{i}", -bound, bound, "inline") for i in range(k))
        U_out = _take_unitary(take, f"{tag}.out", k, detected)
        return SymplecticBlock(tuple(modes), U_in, r, U_out)
    raise ValueError(f"unknown block kind {kind!r}")


def _take_inputs(take, tag, modes, fock, r_max, displace):
    inputs = {}
    for m in modes:
        if m in fock:
            inputs[m] = FockInput(int(fock[m]))
        else:
            inputs[m] = _take_squeezed(take, f"{tag}.in{m}", r_max, displace)
    return inputs


def passive_template(n_modes: int, measured: Sequence[int], r_max=None, fock=None,
                     displace: bool = False, block: str = "passive", loss=()) -> Template:
    """Single-layer source: inputs on every mode, one ``n_modes`` block, PNRDs on ``measured``."""
    fock = {int(k): int(v) for k, v in (fock or {}).items()}
    modes = list(range(n_modes))

    def builder(take):
        inputs = _take_inputs(take, "L1", modes, fock, r_max, displace)
        gate = _take_block(take, "L1.U", modes, block, r_max, measured)
        return CircuitSpec(n_modes, (Layer(inputs, (gate,), tuple(measured)),), r_max, tuple(loss))

    return Template(f"single-layer-{n_modes}", builder)


@dataclass(frozen=True, eq=False)
class TwoStageLayout:
    """Two-layer feed-forward layout (passive or symplectic blocks).

    Layer 1 prepares ``first_modes`` (except ``carried`` ones, which arrive
    from an earlier stage), applies a block on them and measures
    ``first_measured``.  Layer 2 prepares ``second_new`` (the adaptive
    inputs), applies a block on ``second_modes`` and measures
    ``second_measured``.
    """

    n_modes: int = 3
    first_modes: tuple[int, ...] = (0, 1)
    first_measured: tuple[int, ...] = (0,)
    second_new: tuple[int, ...] = (2,)
    second_modes: tuple[int, ...] = (1, 2)
    second_measured: tuple[int, ...] = (1,)
    block: str = "passive"
    r_max: float | None = None
    fock: dict = field(default_factory=dict)
    displace: bool = False
    loss: tuple = ()
    carried: tuple[int, ...] = ()

    def take_first(self, take) -> Layer:
        fresh = [m for m in self.first_modes if m not in self.carried]
        inputs = _take_inputs(take, "L1", fresh, self.fock, self.r_max, self.displace)
        gate = _take_block(take, "L1.U", self.first_modes, self.block, self.r_max,
                           self.first_measured)
        return Layer(inputs, (gate,), self.first_measured)

    def take_second(self, take, tag: str = "L2") -> Layer:
        inputs = _take_inputs(take, tag, self.second_new, self.fock, self.r_max, self.displace)
        gate = _take_block(take, f"{tag}.U", self.second_modes, self.block, self.r_max,
                           self.second_measured)
        return Layer(inputs, (gate,), self.second_measured)

    def spec(self, layers, final: bool = True) -> CircuitSpec:
        return CircuitSpec(self.n_modes, tuple(layers), self.r_max, tuple(self.loss), final)

    def joint_template(self) -> Template:
        """Both layers free: used for the primary branch."""
        return Template("two-stage", lambda take: self.spec([self.take_first(take), self.take_second(take)]))

    def second_template(self, first: Layer) -> Template:
        """Layer 1 frozen; only the adaptive layer is free."""
        return Template("two-stage-second", lambda take: self.spec([first, self.take_second(take)]))

    def adaptive_template(self, first_outcomes) -> Template:
        """Layer 1 plus one adaptive layer per first-layer outcome, all free.

        Builds ``(layer1, {outcome: layer2})``.
        """
        keys = [tuple(k) for k in first_outcomes]

        def builder(take):
            first = self.take_first(take)
            return first, {k: self.take_second(take, f"L2{list(k)}") for k in keys}

        return Template("two-stage-adaptive", builder)

    def first_layer(self, x) -> Layer:
        return self.take_first(_Reader(x))

    def n_first(self) -> int:
        return len(self.first_names())

    def first_names(self) -> list[str]:
        rec = _Recorder()
        self.take_first(rec)
        return [s.name for s in rec.slots]

    def second_names(self, tag: str = "L2") -> list[str]:
        rec = _Recorder()
        self.take_second(rec, tag)
        return [s.name for s in rec.slots]

    def start_names(self, first_x, branch_params: dict) -> tuple[list[str], np.ndarray]:
        """Named start values from per-branch parameters, for :func:`embed_start`.

        Each branch's layer 2 is offered both under the joint tag of its
        first outcome and, for the first branch, under the staged tag.

        Raises:
            ValueError: if a vector does not match the layout's slot count.
        """
        names, vals = self.first_names(), [np.asarray(first_x, dtype=float)]
        if vals[0].size != len(names):
            raise ValueError("first-layer parameters do not fit this layout")
        for i, (b, x) in enumerate(branch_params.items()):
            tags = [f"L2{list(b[0])}"] + (["L2"] if i == 0 else [])
            for tag in tags:
                sec = self.second_names(tag)
                if len(x) != len(sec):
                    raise ValueError("layer-2 parameters do not fit this layout")
                names += sec
                vals.append(np.asarray(x, dtype=float))
        return names, np.concatenate(vals)

    def with_loss(self, loss) -> "TwoStageLayout":
        return replace(self, loss=tuple(loss))


@dataclass(frozen=True, eq=False)
class ConcatLayout:
    """A front layer feeding one carried mode into a copy of a two-stage scheme.

    The front layer prepares mode 0 and the carried mode 1, applies a block
    and measures mode 0.  Everything of ``base`` (laid out on modes
    ``0..n-1``, with its first input on mode 0) is shifted up by one mode,
    and the base's first input on its mode 0 is replaced by the carried mode.
    """

    base: TwoStageLayout
    front_block: str = "symplectic"

    @property
    def shifted(self) -> TwoStageLayout:
        b = self.base
        up = lambda ms: tuple(m + 1 for m in ms)
        if 0 not in b.first_modes:
            raise ValueError("the base scheme must prepare its mode 0 in layer 1")
        return replace(b, n_modes=b.n_modes + 1, first_modes=up(b.first_modes),
                       first_measured=up(b.first_measured), second_new=up(b.second_new),
                       second_modes=up(b.second_modes), second_measured=up(b.second_measured),
                       fock={m + 1: n for m, n in b.fock.items()}, carried=(1,),
                       loss=tuple(replace(s, mode=s.mode + 1) for s in b.loss))

    def take_front(self, take) -> Layer:
        b = self.base
        inputs = _take_inputs(take, "L0", (0, 1), {}, b.r_max, b.displace)
        gate = _take_block(take, "L0.U", (0, 1), self.front_block, b.r_max, (0,))
        return Layer(inputs, (gate,), (0,))

    def template(self, extra_first, base_firsts) -> Template:
        """Front layer plus, per extra front outcome, a free copy of the base tree.

        Builds ``(front, {outcome: (layer1, {base outcome: layer2})})``.
        """
        sh = self.shifted
        extra = [tuple(e) for e in extra_first]
        firsts = [tuple(f) for f in base_firsts]

        def builder(take):
            front = self.take_front(take)
            subs = {}
            for e in extra:
                tag = f"E{list(e)}"
                l1 = sh.take_first(lambda n, *a, **k: take(f"{tag}.{n}", *a, **k))
                subs[e] = (l1, {f: sh.take_second(take, f"{tag}.L2{list(f)}") for f in firsts})
            return front, subs

        return Template("concatenated", builder)

    def spec(self, layers, final: bool = True) -> CircuitSpec:
        return self.shifted.spec(layers, final)


# ---------------------------------------------------------------- problems


@dataclass(frozen=True, eq=False)
class OptimizationProblem:
    """What to optimize and how.

    Args:
        template: parameter-to-circuit map.
        target: single-mode pure target.
        patterns: one pattern per layer of the circuits the template builds.
        mode: ``reward`` (maximize F + P) or ``match-fidelity`` (maximize P
            subject to ``F >= f_star - 1e-3``).
        f_star: fidelity to match in ``match-fidelity`` mode.
        budget: objective evaluations per restart.
        restarts: number of independent starts.
        seed: master seed; restart ``k`` uses ``default_rng([seed, k])``.
        method: restart search, ``Nelder-Mead`` or ``Powell`` (scipy, bounded).
        polish_method: refinement search; ``L-BFGS-B`` with finite-difference
            gradients converges far faster than a simplex near an optimum.
        x0: optional extra start evaluated as restart 0.
        polish: number of best restarts refined afterwards.
        polish_budget: evaluations per refinement (default ``4 * budget``).
    """

    template: Template
    target: object
    patterns: tuple
    mode: str = "reward"
    f_star: float | None = None
    budget: int = 1500
    restarts: int = 16
    seed: int = 0
    method: str = "Nelder-Mead"
    trunc: Truncation = Truncation()
    x0: np.ndarray | None = None
    polish: int = 3
    polish_budget: int | None = None
    polish_method: str = "L-BFGS-B"

    def __post_init__(self):
        if self.mode not in ("reward", "match-fidelity"):
            raise ValueError(f"unknown optimization mode {self.mode!r}")
        if self.mode == "match-fidelity" and self.f_star is None:
            raise ValueError("match-fidelity mode needs f_star")
        if self.budget < 1 or self.restarts < 1:
            raise ValueError("budget and restarts must be at least 1")
        object.__setattr__(self, "patterns", tuple(tuple(int(n) for n in p) for p in self.patterns))


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    params: np.ndarray
    report: BranchReport
    objective: float
    trace: np.ndarray  # columns: evaluation, best objective, F, P at the best point
    feasible: bool
    restart_objectives: tuple[float, ...]
    spec: CircuitSpec

    @property
    def fidelity(self) -> float:
        return self.report.fidelity if self.report.fidelity is not None else 0.0

    @property
    def probability(self) -> float:
        return self.report.probability


def effective_fidelity(rep: BranchReport) -> float:
    """Fidelity scaled by the captured probability fraction (never above the truth)."""
    if rep.fidelity is None:
        return 0.0
    return rep.fidelity * max(0.0, 1.0 - rep.deficit)


def objective_value(rep: BranchReport, mode: str, f_star=None) -> float:
    F = effective_fidelity(rep)
    P = rep.probability
    if mode == "reward":
        return reward(F, P)
    short = max(0.0, f_star - MATCH_TOL - F)
    return P - PENALTY * short


class _Objective:
    """Counts evaluations and tracks the incumbent of a scoring function.

    ``score(x)`` returns ``(value, report, F, P)``; ``report`` is ``None``
    when the point could not be evaluated.
    """

    def __init__(self, score, bounds):
        self.score = score
        self.lo, self.hi = np.array(bounds, dtype=float).T
        self.best = -np.inf
        self.best_x = None
        self.best_rep = None
        self.best_fp = (0.0, 0.0)
        self.trace: list[tuple[int, float, float, float]] = []
        self.count = 0

    def __call__(self, x):
        x = np.clip(x, self.lo, self.hi)
        try:
            val, rep, F, P = self.score(x)
        except (np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError):
            val, rep, F, P = -np.inf, None, 0.0, 0.0
        self.count += 1
        if val > self.best:
            self.best, self.best_x, self.best_rep, self.best_fp = val, x, rep, (F, P)
        if self.best_rep is not None:
            self.trace.append((self.count, self.best, *self.best_fp))
        return -val if np.isfinite(val) else 1e6


def _branch_score(problem: OptimizationProblem):
    def score(x):
        spec = problem.template.build(x)
        rep = evaluate_branch(spec, problem.patterns, problem.target, problem.trunc)
        return (objective_value(rep, problem.mode, problem.f_star), rep,
                rep.fidelity or 0.0, rep.probability)
    return score


def _local_search(obj: _Objective, x0, budget, method):
    """Bounded local search from ``x0`` using at most ``budget`` evaluations.

    Simplex searches are restarted from the incumbent while budget remains,
    which keeps them from stalling on a collapsed simplex.
    """
    start = obj.count
    x = np.asarray(x0, dtype=float)
    bounds = list(zip(obj.lo, obj.hi))
    while obj.count - start < budget:
        remaining = budget - (obj.count - start)
        before = obj.count
        if method == "Nelder-Mead":
            opts = {"maxfev": remaining, "xatol": 1e-8, "fatol": 1e-12, "adaptive": True}
        elif method == "Powell":
            opts = {"maxfev": remaining, "xtol": 1e-8, "ftol": 1e-12}
        elif method == "L-BFGS-B":
            # finite-difference gradients; objective values are smooth away from bounds
            opts = {"maxfun": remaining, "ftol": 1e-15, "gtol": 1e-11}
        else:
            raise ValueError(f"unknown method {method!r}")
        res = minimize(obj, x, method=method, bounds=bounds, options=opts)
        x = obj.best_x if obj.best_x is not None else np.clip(res.x, obj.lo, obj.hi)
        if obj.count - before < 50 or method == "L-BFGS-B":
            break


def _multistart(score, template: Template, restarts, seed, budget, method, x0=None,
                polish=3, polish_budget=None, polish_method="L-BFGS-B"):
    trace = []
    offset = 0
    runs: list[_Objective] = []

    def absorb(obj):
        nonlocal offset
        for c, v, f, p in obj.trace:
            trace.append((offset + c, v, f, p))
        offset += obj.count

    for k in range(restarts):
        rng = np.random.default_rng([seed, k])
        start = template.clip(x0) if k == 0 and x0 is not None else template.sample(rng)
        obj = _Objective(score, template.bounds)
        _local_search(obj, start, budget, method)
        log.debug("restart %d objective %.6f", k, obj.best)
        runs.append(obj)
        absorb(obj)
    per_restart = tuple(float(o.best) for o in runs)
    ranked = sorted(range(len(runs)), key=lambda i: (-runs[i].best, i))
    finalists = []
    for i in ranked[:polish]:
        if runs[i].best_x is None:
            continue
        obj = _Objective(score, template.bounds)
        _local_search(obj, runs[i].best_x, polish_budget or 4 * budget, polish_method)
        if obj.best < runs[i].best:
            obj = runs[i]
        else:
            absorb(obj)
        finalists.append((obj.best, i, obj))
    if not finalists:
        finalists = [(runs[i].best, i, runs[i]) for i in ranked[:1] if runs[i].best_rep is not None]
    if not finalists:
        raise RuntimeError("no restart produced a finite objective")
    _, _, best = max(finalists, key=lambda t: (t[0], -t[1]))
    tr = np.array(trace, dtype=float)
    tr[:, 1] = np.maximum.accumulate(tr[:, 1])
    return best, tr, per_restart


def optimize(problem: OptimizationProblem) -> OptimizationResult:
    """Multi-start bounded local search followed by refinement of the best starts.

    Restarts are ranked by objective with the lowest index winning ties; the
    ``polish`` best are refined from their incumbents and the overall best is
    returned.

    Returns:
        OptimizationResult: ``feasible`` is False when match-fidelity mode
        could not reach ``f_star - 1e-3``.
    """
    best, tr, per_restart = _multistart(
        _branch_score(problem), problem.template, problem.restarts, problem.seed,
        problem.budget, problem.method, problem.x0, problem.polish,
        problem.polish_budget, problem.polish_method)
    rep = best.best_rep
    feasible = True
    if problem.mode == "match-fidelity":
        feasible = effective_fidelity(rep) >= problem.f_star - MATCH_TOL
    return OptimizationResult(best.best_x, rep, best.best, tr, feasible, per_restart,
                              problem.template.build(best.best_x))


# ---------------------------------------------------------------- adaptive


@dataclass(frozen=True, eq=False)
class AdaptiveResult:
    """Outcome of :func:`optimize_adaptive`.

    ``stage_a`` and ``stage_b`` hold the per-stage results of the staged
    strategy; the joint strategy leaves ``stage_b`` empty and stores its
    single run in ``stage_a``.
    """

    layout: TwoStageLayout
    first_params: np.ndarray
    branch_params: dict
    stage_a: object
    stage_b: dict
    shared: CircuitSpec
    policy: AdaptivePolicy
    report: SchemeReport


@dataclass(frozen=True, eq=False)
class JointResult:
    params: np.ndarray
    reports: dict  # branch -> BranchReport
    objective: float
    trace: np.ndarray
    restart_objectives: tuple[float, ...]


def _key(branch):
    return tuple(tuple(int(n) for n in p) for p in branch)


def joint_objective(reps, mode: str = "reward", f_star=None) -> float:
    """Total probability of the branches plus their worst effective fidelity.

    ``match-fidelity`` replaces the fidelity term by a penalty on every
    branch below ``f_star - 1e-3``.  A branch with ``P <= 1e-9`` carries no
    meaningful state and counts as fidelity 0, so switching a branch off
    never dodges the fidelity terms.
    """
    P = sum(r.probability for r in reps)
    Fs = [effective_fidelity(r) if r.probability > P_FLOOR else 0.0 for r in reps]
    if not Fs:
        return float(P)
    if mode == "reward":
        return float(P + min(Fs))
    return float(P - PENALTY * sum(max(0.0, f_star - MATCH_TOL - F) for F in Fs))


def _fp(reps):
    Fs = [effective_fidelity(r) for r in reps if r.probability > P_FLOOR]
    return (min(Fs) if Fs else 0.0), sum(r.probability for r in reps)


def _joint_score(layout, template, branches, target, trunc, mode, f_star):
    def score(x):
        first, seconds = template.build(x)
        reps = {}
        for b in branches:
            spec = layout.spec([first, seconds[b[0]]])
            reps[b] = evaluate_branch(spec, b, target, trunc)
        vals = list(reps.values())
        return (joint_objective(vals, mode, f_star), reps, *_fp(vals))
    return score


def optimize_adaptive(layout: TwoStageLayout, target, primary, alternatives=(),
                      budget: int = 2000, restarts: int = 16, seed: int = 0,
                      stage_b_mode: str = "match-fidelity", trunc: Truncation = Truncation(),
                      method: str = "Nelder-Mead", x0=None, evaluate_loss=None,
                      strategy: str = "staged", joint_mode: str = "reward",
                      f_star=None, joint_restarts: int = 1) -> AdaptiveResult:
    """Adaptive two-layer optimization.

    ``staged``: stage A optimizes layer 1 jointly with the adaptive layer of
    the ``primary`` branch (a ``(pattern1, pattern2)`` pair).  Stage B
    freezes layer 1 and, for every alternative, optimizes a fresh adaptive
    layer, by default maximizing P at the primary fidelity.

    ``joint``: layer 1 and one adaptive layer per distinct first outcome are
    optimized together under :func:`joint_objective`.  This lets layer 1
    trade some primary probability for alternatives that can be corrected.
    ``x0`` then refers to the joint parameter vector.

    ``staged-joint``: the staged result (``x0`` as for ``staged``) seeds a
    joint run with ``joint_restarts`` starts.  Stage B alternatives begin
    far from the primary fidelity; a joint penalty run started there cold
    tends to sacrifice the primary branch, so the staged pass comes first.

    Args:
        evaluate_loss: optional loss sites used for the final report only.
    """
    primary = _key(primary)
    alternatives = [_key(a) for a in alternatives]
    if strategy == "staged-joint":
        staged = optimize_adaptive(layout, target, primary, alternatives, budget, restarts, seed,
                                   stage_b_mode, trunc, method, x0, strategy="staged")
        firsts = list(dict.fromkeys(b[0] for b in [primary] + alternatives))
        names, vals = layout.start_names(staged.first_params, staged.branch_params)
        start = embed_start(layout.adaptive_template(firsts), names, vals)
        return optimize_adaptive(layout, target, primary, alternatives, budget, joint_restarts, seed,
                                 stage_b_mode, trunc, method, start, evaluate_loss, "joint",
                                 joint_mode, f_star)
    if strategy == "joint":
        branches = [primary] + alternatives
        firsts = list(dict.fromkeys(b[0] for b in branches))
        template = layout.adaptive_template(firsts)
        score = _joint_score(layout, template, branches, target, trunc, joint_mode, f_star)
        best, tr, per_restart = _multistart(score, template, restarts, seed, budget, method, x0)
        n1 = layout.n_first()
        first_x = best.best_x[:n1]
        n2 = (template.n_params - n1) // len(firsts)
        by_first = {k: best.best_x[n1 + i * n2: n1 + (i + 1) * n2] for i, k in enumerate(firsts)}
        branch_params = {b: by_first[b[0]] for b in branches}
        stage_a = JointResult(best.best_x, best.best_rep, best.best, tr, per_restart)
        stage_b = {}
    elif strategy == "staged":
        stage_a = optimize(OptimizationProblem(
            layout.joint_template(), target, primary, budget=budget, restarts=restarts,
            seed=seed, trunc=trunc, method=method, x0=x0))
        n1 = layout.n_first()
        first_x = stage_a.params[:n1]
        first = layout.first_layer(first_x)
        branch_params = {primary: stage_a.params[n1:]}
        stage_b = {}
        f_ref = effective_fidelity(stage_a.report)
        for k, alt in enumerate(alternatives):
            prob = OptimizationProblem(
                layout.second_template(first), target, alt, mode=stage_b_mode, f_star=f_ref,
                budget=budget, restarts=restarts, seed=seed + 1000 * (k + 1), trunc=trunc,
                method=method, x0=stage_a.params[n1:])
            res = optimize(prob)
            stage_b[alt] = res
            branch_params[alt] = res.params
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    shared, policy = build_policy(layout, first_x, branch_params)
    if evaluate_loss is not None:
        shared = shared.with_loss(evaluate_loss)
    report = evaluate_adaptive(shared, policy, target, trunc)
    return AdaptiveResult(layout, first_x, branch_params, stage_a, stage_b, shared, policy, report)


@dataclass(frozen=True, eq=False)
class ConcatResult:
    layout: ConcatLayout
    params: np.ndarray
    reports: dict  # (front, p1, p2) -> BranchReport
    objective: float
    trace: np.ndarray
    shared: CircuitSpec
    policy: AdaptivePolicy
    report: SchemeReport


def _base_split(layout: ConcatLayout, base: AdaptiveResult):
    """Carried-input slots of the base's layer 1 and the remaining parameters."""
    rec = _Recorder()
    _take_inputs(rec, "L1", (0,), {}, layout.base.r_max, layout.base.displace)
    k = len(rec.slots)
    return base.first_params[:k], base.first_params[k:]


def optimize_concatenated(layout: ConcatLayout, base: AdaptiveResult, target,
                          extra_first=((1,),), budget: int = 1500, restarts: int = 16,
                          seed: int = 0, trunc: Truncation = Truncation(),
                          method: str = "Nelder-Mead", mode: str = "reward", f_star=None,
                          x0=None) -> ConcatResult:
    """Optimize the front layer and the extra subtrees around a fixed base scheme.

    Front outcome 0 runs the base scheme unchanged on the shifted modes, so
    its branches keep the base parameters; each outcome in ``extra_first``
    gets a fresh copy of the base tree with free parameters.  Restart 0
    starts from an idle front layer (vacuum on mode 0, identity block, the
    base input on the carried mode) and base copies in the extra subtrees,
    which reproduces the base scheme exactly.
    """
    if layout.base.fock.get(0) is not None:
        raise ValueError("the carried base input must be a squeezed state")
    sh = layout.shifted
    carried_in, first_rest = _base_split(layout, base)
    l1_base = sh.take_first(_Reader(first_rest))
    branches = [tuple(b) for b in base.branch_params]
    firsts = list(dict.fromkeys(b[0] for b in branches))
    l2_base = {f: sh.take_second(_Reader(base.branch_params[b])) for f in firsts
               for b in branches if b[0] == f}
    extra = [tuple(e) for e in extra_first]
    if (0,) in extra:
        raise ValueError("front outcome 0 is reserved for the base scheme")
    template = layout.template(extra, firsts)

    def score(x):
        front, subs = template.build(x)
        reps = {}
        for p1, p2 in branches:
            spec = layout.spec([front, l1_base, l2_base[p1]])
            reps[((0,), p1, p2)] = evaluate_branch(spec, ((0,), p1, p2), target, trunc)
        for e in extra:
            l1, l2s = subs[e]
            for p1, p2 in branches:
                spec = layout.spec([front, l1, l2s[p1]])
                reps[(e, p1, p2)] = evaluate_branch(spec, (e, p1, p2), target, trunc)
        vals = list(reps.values())
        return (joint_objective(vals, mode, f_star), reps, *_fp(vals))

    if x0 is None:
        rec = _Recorder()
        layout.take_front(rec)
        n_front = len(rec.slots)
        front0 = np.zeros(n_front)
        front0[len(carried_in):2 * len(carried_in)] = carried_in
        parts = [front0]
        for _ in extra:
            parts.append(first_rest)
            for f in firsts:
                b = next(b for b in branches if b[0] == f)
                parts.append(base.branch_params[b])
        x0 = np.concatenate(parts)
    best, tr, _ = _multistart(score, template, restarts, seed, budget, method, x0)
    front, subs = template.build(best.best_x)
    node_base = {f: PolicyNode(l2_base[f], tuple(b[1] for b in branches if b[0] == f))
                 for f in firsts}
    top = {(0,): PolicyNode(l1_base, next=AdaptivePolicy(node_base))}
    for e in extra:
        l1, l2s = subs[e]
        top[e] = PolicyNode(l1, next=AdaptivePolicy(
            {f: PolicyNode(l2s[f], tuple(b[1] for b in branches if b[0] == f)) for f in firsts}))
    shared = layout.spec([front], final=False)
    policy = AdaptivePolicy(top)
    report = evaluate_concatenated(shared, policy, target, trunc)
    return ConcatResult(layout, best.best_x, best.best_rep, best.best, tr, shared, policy, report)


def build_policy(layout: TwoStageLayout, first_x, branch_params: dict):
    """Shared first layer and the policy implied by per-branch layer-2 parameters.

    Branches sharing a first-layer outcome must share the layer-2 parameters;
    they then contribute several accepted final patterns to one node.
    """
    first = layout.first_layer(first_x)
    nodes: dict = {}
    for (p1, p2), x in branch_params.items():
        layer2 = layout.take_second(_Reader(x))
        key = tuple(p1)
        if key in nodes:
            prev_layer, accepted = nodes[key]
            nodes[key] = (prev_layer, accepted + (tuple(p2),))
        else:
            nodes[key] = (layer2, (tuple(p2),))
    policy = AdaptivePolicy({k: PolicyNode(l2, acc) for k, (l2, acc) in nodes.items()})
    return layout.spec([first], final=False), policy


def optimize_loss_aware(problem: OptimizationProblem, loss) -> tuple[OptimizationResult, BranchReport]:
    """Optimize through the lossy evaluator; also report the lossless figures.

    ``problem.template`` must accept a ``loss`` override through
    :func:`with_template_loss`.
    """
    lossy = replace(problem, template=with_template_loss(problem.template, loss))
    res = optimize(lossy)
    lossless_spec = problem.template.build(res.params)
    lossless = evaluate_branch(lossless_spec, problem.patterns, problem.target, problem.trunc)
    return res, lossless


def with_template_loss(template: Template, loss) -> Template:
    """Same template, every built circuit carrying ``loss``."""
    loss = tuple(loss)
    return Template(template.name + "+loss",
                    lambda take: template.builder(take).with_loss(loss), template.slots)


def gauge_shift(template: Template, x, delta: float) -> np.ndarray:
    """Shift the output phase of every port that feeds a detector by ``delta``.

    Photon counting is blind to these phases, so the shift is a pure gauge.
    """
    x = np.array(x, dtype=float)
    for i, s in enumerate(template.slots):
        if s.kind == "detector-phase":
            x[i] += delta
    return x


def embed_start(template: Template, names: Sequence[str], x) -> np.ndarray:
    """Start vector for ``template`` copied by slot name from another template.

    Matching names take the given value.  A symplectic block's input mesh
    ``<tag>.U.in.*`` also accepts a passive ``<tag>.U.*`` value.  Every other
    slot is zero, which makes meshes the identity, inline squeezers off and
    added inputs vacuum, so a single-layer source embedded in a two-layer
    layout reproduces itself when its second block acts trivially.
    """
    given = dict(zip(names, np.asarray(x, dtype=float)))
    out = np.zeros(template.n_params)
    for i, name in enumerate(template.names):
        alias = name.replace(".U.in.", ".U.")
        if name in given:
            out[i] = given[name]
        elif alias in given:
            out[i] = given[alias]
    return template.clip(out)
