"""Acceptance criteria A1-A9, one pass/fail line each.

A4-A8 re-simulate the parameters stored under ``results/<config>/params.json``
(written by ``gbs-herald optimize`` from the matching file in ``configs/``).
Set ``GBS_HERALD_REOPTIMIZE=1`` to run those optimizations from scratch
first; that takes about half an hour on one core.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance
criteria" section of the summary, or ``python tests/test_acceptance.py``.
"""

import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gbs_herald.cli import cmd_optimize, cmd_simulate
from gbs_herald.config import circuit_from_dict, load_config
from gbs_herald.fock import (
    apply_beamsplitter_fock,
    apply_displacement_fock,
    apply_interferometer,
    apply_passive_direct,
    fock_input,
    gaussian_to_fock,
    vacuum,
)
from gbs_herald.gaussian import (
    CovarianceState,
    apply_symplectic,
    bloch_messiah,
    squeeze_layer,
    symplectic_beamsplitter,
    symplectic_error,
    symplectic_squeezer,
)
from gbs_herald.herald import apply_loss_fock, herald
from gbs_herald.interferometer import random_unitary
from gbs_herald.scheme import (
    CircuitSpec,
    Interferometer,
    Layer,
    LossSite,
    SqueezedInput,
    concatenation_total,
    evaluate_non_adaptive,
    evaluate_rerun,
    outcome_probabilities,
    rerun_probability,
    uniform_loss,
)

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = {}

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
RESULTS = ROOT / "results"
REOPTIMIZE = os.environ.get("GBS_HERALD_REOPTIMIZE") == "1"
# runs warm-started from another config's stored parameters
WARM = {"gkp3_passive": "gkp3_nonadaptive", "gkp3_symplectic": "gkp3_nonadaptive",
        "gkp3_nonadaptive_loss1": "gkp3_nonadaptive"}
SECONDS: dict[str, float] = {}


def record(key, ok, detail):
    line = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    assert ok, line


def result(name, tmp):
    """Summary of ``configs/<name>.json`` simulated with its stored parameters."""
    cfg = load_config(CONFIGS / f"{name}.json")
    params = RESULTS / name / "params.json"
    if REOPTIMIZE:
        t0 = time.time()
        warm = RESULTS / WARM[name] / "params.json" if name in WARM else None
        cmd_optimize(cfg, RESULTS / name, warm)
        SECONDS[name] = time.time() - t0
        print(f"{name}: optimized in {SECONDS[name]:.0f} s")
    if not params.exists():
        pytest.fail(f"{params} missing; run gbs-herald optimize --config configs/{name}.json "
                    f"--out-dir results/{name}")
    return cmd_simulate(cfg, params, tmp / name)


def stored_spec(name):
    data = json.loads((RESULTS / name / "params.json").read_text())
    return circuit_from_dict(data["circuit"]), load_config(CONFIGS / f"{name}.json")


def accepted(summary):
    return {b["pattern"]: b for b in summary["branches"] if not b["abort"]}


def fmt(b):
    return f"P={100 * b['P']:.3f}% F={100 * b['F']:.2f}%"


# ---------------------------------------------------------------- A1-A3


def test_a1_analytic_suite():
    t0 = time.time()
    errs = []
    r = 0.7
    S = symplectic_beamsplitter(np.pi / 4, 0.0, (0, 1), 2) @ symplectic_squeezer(r, 0, 0, 2) \
        @ symplectic_squeezer(r, np.pi, 1, 2)
    psi = gaussian_to_fock(apply_symplectic(CovarianceState.vacuum(2), S), [20, 20])
    for n in range(6):
        res = herald(psi, (1,), (n,))
        errs.append(abs(res.probability - np.tanh(r) ** (2 * n) / np.cosh(r) ** 2))
        errs.append(1 - abs(res.state.amps[n]) ** 2)
    hom = apply_beamsplitter_fock(fock_input([1, 1], [3, 3]), np.pi / 4, 0.0, (0, 1)).amps
    errs += [abs(hom[1, 1]), abs(abs(hom[2, 0]) - 2 ** -0.5), abs(hom[2, 0] + hom[0, 2])]
    alpha = 0.9 + 0.4j
    coh = apply_displacement_fock(vacuum(1, [30]), alpha, 0).amps
    n = np.arange(30)
    fact = np.cumprod(np.r_[1.0, np.arange(1, 30)])
    errs.append(np.max(np.abs(coh - np.exp(-abs(alpha) ** 2 / 2) * alpha ** n / np.sqrt(fact))))
    eta = 0.8
    rho = apply_loss_fock(fock_input([1], [2]), eta).rho
    errs.append(np.max(np.abs(rho - np.diag([1 - eta, eta]))))
    err = max(errs)
    dt = time.time() - t0
    record("A1", err < 1e-10 and dt < 1.0,
           f"analytic micro-suite max error {err:.1e} in {dt:.2f} s (limit 1e-10, 1 s)")


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


def random_passive_spec(rng, r_hi=0.5):
    inputs = {m: SqueezedInput(rng.uniform(0, r_hi), rng.uniform(0, 2 * np.pi)) for m in range(3)}
    return CircuitSpec(3, (Layer(inputs, (Interferometer((0, 1, 2), random_unitary(3, rng)),), (0, 1)),))


def test_a2_structural_suite():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    bm = sym = 0.0
    for _ in range(100):
        nm = int(rng.integers(1, 4))
        S = random_gate_product(rng, nm)
        O_in, rv, O_out = bloch_messiah(S)
        bm = max(bm, np.max(np.abs(O_out @ squeeze_layer(rv) @ O_in - S)))
        sym = max(sym, symplectic_error(S), symplectic_error(O_in), symplectic_error(O_out))
    mesh = 0.0
    for nm in (2, 3, 4, 5):
        U = random_unitary(nm, rng)
        for i in range(nm):
            occ = [0] * nm
            occ[i] = 1
            out = apply_interferometer(fock_input(occ, [2] * nm), U).amps
            for j in range(nm):
                idx = [0] * nm
                idx[j] = 1
                mesh = max(mesh, abs(out[tuple(idx)] - U[j, i]))
    U = random_unitary(3, rng)
    psi = fock_input([2, 1, 0], [4, 4, 4])
    mesh = max(mesh, np.max(np.abs(apply_interferometer(psi, U).amps - apply_passive_direct(psi, U).amps)))
    closure = 0.0
    for _ in range(3):
        probs = outcome_probabilities(random_passive_spec(rng, 0.3), n_max=14, total_max=28)
        closure = max(closure, abs(sum(probs.values()) - 1))
    dt = time.time() - t0
    ok = bm < 1e-9 and sym < 1e-9 and mesh < 1e-10 and closure < 1e-8 and dt < 10
    record("A2", ok, f"Bloch-Messiah {bm:.1e}, symplectic form {sym:.1e}, mesh {mesh:.1e}, "
                     f"branch closure {closure:.1e} in {dt:.1f} s")


def test_a3_loss_commutation():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        spec = random_passive_spec(rng)
        eta = rng.uniform(0.5, 1.0)
        pattern = tuple(int(k) for k in rng.integers(0, 3, 2))
        target = np.zeros(5)
        target[int(rng.integers(0, 5))] = 1
        a = evaluate_non_adaptive(spec.with_loss(uniform_loss(3, eta, ("post-squeeze",))), pattern, target)
        sites = (LossSite(0, eta, "pre-detect"), LossSite(1, eta, "pre-detect"), LossSite(2, eta, "output"))
        b = evaluate_non_adaptive(spec.with_loss(sites), pattern, target)
        worst = max(worst, abs(a.probability - b.probability), abs(a.fidelity - b.fidelity))
    record("A3", worst < 1e-9, f"max |dP|, |dF| over 50 circuits {worst:.1e} (limit 1e-9)")


# ---------------------------------------------------------------- A4-A8


def test_a4_cat_bounded(tmp_path):
    three = accepted(result("cat3_bounded", tmp_path))["1,2"]
    two = accepted(result("cat2_bounded", tmp_path))
    (two_b,) = two.values()
    ad = accepted(result("cat3_bounded_adaptive", tmp_path))
    prim, sec = ad["1|2"], ad["2|1"]
    ok = (three["F"] >= 0.970 and three["P"] >= 0.0045 and two_b["F"] >= 0.970 and two_b["P"] >= 0.0040
          and abs(sec["F"] - prim["F"]) <= 1e-2 and sec["P"] >= 0.0005)
    timing = ""
    if "cat3_bounded" in SECONDS:
        ok = ok and SECONDS["cat3_bounded"] <= 600
        timing = f"; 3-mode optimization {SECONDS['cat3_bounded']:.0f} s (limit 600 s)"
    record("A4", ok, f"3-mode {fmt(three)}; 2-mode {fmt(two_b)}; adaptive (1,2) {fmt(prim)}, "
                     f"(2,1) {fmt(sec)}{timing}")


def test_a5_cat_unbounded(tmp_path):
    (b,) = accepted(result("cat3_unbounded", tmp_path)).values()
    record("A5", b["F"] >= 0.99 and b["P"] >= 0.05, f"alpha=2 {fmt(b)} (need F>=99%, P>=5%)")


def test_a6_gkp(tmp_path):
    na = accepted(result("gkp3_nonadaptive", tmp_path))["2,2"]
    passive = result("gkp3_passive", tmp_path)
    sym = result("gkp3_symplectic", tmp_path)
    ok = (na["F"] >= 0.99 and na["P"] >= 0.020
          and passive["total_probability"] >= 0.035 and passive["min_fidelity"] >= 0.99 - 1e-3
          and sym["total_probability"] >= 0.050 and sym["min_fidelity"] >= 0.99 - 1e-3)
    record("A6", ok, f"non-adaptive {fmt(na)}; passive adaptive total P={100 * passive['total_probability']:.2f}% "
                     f"min F={100 * passive['min_fidelity']:.2f}%; symplectic total "
                     f"P={100 * sym['total_probability']:.2f}% min F={100 * sym['min_fidelity']:.2f}%")


def test_a7_fock_input(tmp_path):
    (na,) = accepted(result("cat_fock_input_nonadaptive", tmp_path)).values()
    ad = result("cat_fock_input", tmp_path)
    ok = (na["P"] >= 0.024 and na["F"] >= 0.95 and ad["total_probability"] >= 0.030
          and ad["min_fidelity"] >= 0.95 and ad["total_probability"] >= na["P"])
    record("A7", ok, f"non-adaptive {fmt(na)}; adaptive total P={100 * ad['total_probability']:.2f}% "
                     f"min F={100 * ad['min_fidelity']:.2f}%")


def test_a8_loss_trends(tmp_path):
    cat, cfg = stored_spec("cat3_bounded")
    target = cfg.target().state()
    pat = (1, 2)
    clean = evaluate_non_adaptive(cat, pat, target)
    lossy = evaluate_non_adaptive(cat.with_loss(uniform_loss(3, 0.9)), pat, target)
    ratio = lossy.probability / clean.probability
    cat_ok = 0.60 <= lossy.fidelity <= 0.72 and abs(ratio - 1) <= 0.25

    gkp, gcfg = stored_spec("gkp3_nonadaptive")
    gt = gcfg.target().state()
    blind = evaluate_non_adaptive(gkp.with_loss(uniform_loss(3, 0.99)), (2, 2), gt)
    aware = accepted(result("gkp3_nonadaptive_loss1", tmp_path))["2,2"]
    aware_ok = aware["F"] > blind.fidelity

    # herald-mode loss lowers P (output loss leaves it alone); output loss lowers F
    direction = []
    for spec, p, tg in ((cat, pat, target), (gkp, (2, 2), gt)):
        base = evaluate_non_adaptive(spec, p, tg)
        h = evaluate_non_adaptive(spec.with_loss(uniform_loss(3, 0.9, ("pre-detect",))), p, tg)
        o = evaluate_non_adaptive(spec.with_loss(uniform_loss(3, 0.9, ("output",))), p, tg)
        direction.append(h.probability < o.probability and o.fidelity < base.fidelity)
    ok = cat_ok and aware_ok and all(direction)
    record("A8", ok, f"cat 10%: F={100 * lossy.fidelity:.1f}% (window 60-72%), P ratio {ratio:.3f}; "
                     f"GKP 1%: loss-aware F={100 * aware['F']:.2f}% vs blind {100 * blind.fidelity:.2f}%; "
                     f"directional orderings {direction}")


# ---------------------------------------------------------------- A9


def test_a9_composition():
    p = rerun_probability(0.0043, 2)
    r = 0.5
    layer = Layer({0: SqueezedInput(r, 0.0), 1: SqueezedInput(r, np.pi)},
                  (Interferometer((0, 1), np.array([[1, -1], [1, 1]]) / np.sqrt(2)),), (1,))
    p1 = np.tanh(r) ** 2 / np.cosh(r) ** 2
    e = np.zeros(5)
    e[1] = 1
    via_spec = evaluate_rerun(CircuitSpec(2, (layer,)), (1,), e, 2)
    # four-mode GKP reference branch values in, composition out
    p3, p0, extra = 0.0529, 0.31, 0.0277
    total = concatenation_total(p3, p0, extra)
    ok = (abs(p - 0.00858) <= 1e-5 and abs(via_spec - (1 - (1 - p1) ** 2)) < 1e-12
          and abs(total - (p3 + p0 * p3 + extra)) <= 1e-6)
    record("A9", ok, f"rerun(0.43%, 2) = {100 * p:.4f}%; concatenation total {100 * total:.3f}%")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
