"""Batch front-end: ``gbs-herald {simulate,optimize,sweep-loss,report}``.

Every command reads one JSON config (see :mod:`gbs_herald.config`) and
writes flat files into ``--out-dir``:

* ``branches.csv``: one row per branch (pattern, P, F, deficit, abort);
* ``summary.json``: totals plus the config hash and tool version;
* ``params.json`` (optimize): parameters and the circuit/policy they build,
  reusable by ``simulate --params``;
* ``trace.csv`` (optimize): evaluation, reward, F, P of the incumbent;
* ``loss_sweep.csv`` (sweep-loss): eta, pattern, P, F, deficit, abort;
* ``wigner_<pattern>.csv``: heralded-state Wigner grid when configured.

File outputs use fractions; only ``report`` prints percentages.

Exit codes: 0 success, 2 config or input error, 3 numeric failure, 4 every
accepted branch has zero probability.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    ExperimentConfig,
    circuit_from_dict,
    circuit_to_dict,
    load_config,
    policy_from_dict,
    policy_to_dict,
)
from .herald import wigner_fock
from .optimize import (
    ConcatLayout,
    OptimizationProblem,
    TwoStageLayout,
    build_policy,
    embed_start,
    optimize,
    optimize_adaptive,
    optimize_concatenated,
    passive_template,
    with_template_loss,
)
from .scheme import (
    POSITIONS,
    BranchReport,
    CircuitSpec,
    SchemeReport,
    SpecError,
    evaluate_adaptive,
    evaluate_branch,
    rerun_probability,
    uniform_loss,
)
from .targets import CutoffTooSmall

log = logging.getLogger("gbs_herald")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_ZERO = 4


class ZeroProbability(RuntimeError):
    """No accepted branch has positive probability."""


# ---------------------------------------------------------------- building


def _layout(cfg: ExperimentConfig, sch: dict | None = None) -> TwoStageLayout:
    sch = cfg.scheme if sch is None else sch
    block = "symplectic" if sch["kind"] == "symplectic" else sch.get("block", "passive")
    kw = {k: tuple(v) for k, v in sch.get("layout", {}).items()}
    return TwoStageLayout(
        n_modes=sch.get("n_modes", 3), block=block, r_max=sch.get("r_max"),
        fock={int(k): v for k, v in sch.get("fock", {}).items()},
        displace=sch.get("displace", False), **kw)


def _branches(sch: dict):
    prim = tuple(tuple(p) for p in sch["primary"])
    alts = [tuple(tuple(p) for p in a) for a in sch.get("alternatives", [])]
    return prim, alts


def _non_adaptive_template(cfg: ExperimentConfig, loss=()):
    sch = cfg.scheme
    return passive_template(
        sch["n_modes"], tuple(sch["measured"]), sch.get("r_max"),
        {int(k): v for k, v in sch.get("fock", {}).items()},
        sch.get("displace", False), sch.get("block", "passive"), loss)


def _fixed_circuit(cfg: ExperimentConfig, params: dict | None):
    """Circuit (and policy) from a params file or the config's inline description."""
    src = params if params is not None else cfg.data
    if "circuit" not in src:
        raise ConfigError("no circuit: pass --params or give 'circuit' in the config")
    kind = cfg.scheme["kind"]
    if kind in ("non-adaptive", "rerun"):
        return circuit_from_dict(src["circuit"]), None
    if "policy" not in src:
        raise ConfigError(f"{kind} schemes need a 'policy' next to the circuit")
    return circuit_from_dict(src["circuit"], final=False), policy_from_dict(src["policy"])


def _with_config_loss(cfg: ExperimentConfig, spec: CircuitSpec, loss=None) -> CircuitSpec:
    if loss is None:
        if "loss" not in cfg.data:
            return spec
        loss = cfg.loss(spec.n_modes)
    return spec.with_loss(loss)


def _evaluate(cfg: ExperimentConfig, spec: CircuitSpec, policy) -> SchemeReport:
    target = cfg.target().state()
    trunc = cfg.truncation()
    if policy is None:
        rows = [evaluate_branch(spec, (tuple(p),), target, trunc) for p in cfg.scheme["patterns"]]
        return SchemeReport(tuple(rows))
    return evaluate_adaptive(spec, policy, target, trunc)


# ---------------------------------------------------------------- outputs


def _header(cfg: ExperimentConfig) -> dict:
    return {"tool": "gbs-herald", "version": __version__, "config_hash": cfg.hash,
            "name": cfg.name, "kind": cfg.scheme["kind"], "seed": cfg.seed}


def _fmt(x):
    return "" if x is None else repr(float(x))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _branch_rows(report: SchemeReport, prefix=()):
    for b in report.branches:
        r = b.to_row()
        yield list(prefix) + [r["pattern"], _fmt(b.probability), _fmt(b.fidelity),
                              _fmt(b.deficit), r["abort"]]


BRANCH_HEADER = ["pattern", "P", "F", "deficit", "abort"]


def _summary(cfg: ExperimentConfig, report: SchemeReport, extra=None) -> dict:
    out = _header(cfg)
    out.update(report.summary())
    out["branches"] = [
        {"pattern": b.to_row()["pattern"], "P": b.probability, "F": b.fidelity,
         "deficit": b.deficit, "abort": b.abort}
        for b in report.branches
    ]
    if cfg.scheme["kind"] == "rerun":
        k = cfg.scheme.get("attempts", 2)
        out["attempts"] = k
        out["rerun_probability"] = rerun_probability(report.total_probability, k)
    if extra:
        out.update(extra)
    return out


def _wigner_dumps(cfg: ExperimentConfig, report: SchemeReport, out_dir: Path) -> None:
    w = cfg.data.get("wigner")
    if w is None:
        return
    q = np.linspace(w["q"][0], w["q"][1], int(w["q"][2]))
    p = np.linspace(w["p"][0], w["p"][1], int(w["p"][2]))
    for b in report.accepted:
        if b.state is None or b.probability <= 0.0:
            continue
        W = wigner_fock(b.state.normalized(), q, p)
        name = b.to_row()["pattern"].replace(",", "-").replace("|", "_")
        rows = ([_fmt(qq), _fmt(pp), _fmt(W[i, j])] for i, pp in enumerate(p) for j, qq in enumerate(q))
        _write_csv(out_dir / f"wigner_{name}.csv", ["q", "p", "W"], rows)


def _emit(cfg: ExperimentConfig, report: SchemeReport, out_dir: Path, extra=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "branches.csv", BRANCH_HEADER, _branch_rows(report))
    summary = _summary(cfg, report, extra)
    _write_json(out_dir / "summary.json", summary)
    _wigner_dumps(cfg, report, out_dir)
    return summary


def _check_positive(report: SchemeReport) -> None:
    if not any(b.probability > 0.0 for b in report.accepted):
        raise ZeroProbability("every accepted branch has zero probability")


def _load_params(path) -> dict | None:
    if path is None:
        return None
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"parameter file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg: ExperimentConfig, params_path=None, out_dir: Path = Path("out")) -> dict:
    """Evaluate fixed parameters and write the branch table and summary."""
    spec, policy = _fixed_circuit(cfg, _load_params(params_path))
    spec = _with_config_loss(cfg, spec)
    report = _evaluate(cfg, spec, policy)
    summary = _emit(cfg, report, out_dir)
    _check_positive(report)
    return summary


def _optimizer_kw(cfg: ExperimentConfig) -> dict:
    o = cfg.optimizer()
    return {"budget": o.get("budget", 1500), "restarts": o.get("restarts", 16),
            "method": o.get("method", "Nelder-Mead"), "seed": cfg.seed,
            "trunc": cfg.truncation()}


def _trace_rows(trace):
    for c, v, f, p in trace:
        yield [int(c), _fmt(v), _fmt(f), _fmt(p)]


def _optimize_non_adaptive(cfg: ExperimentConfig, out_dir: Path, x0=None):
    o = cfg.optimizer()
    loss = cfg.loss(cfg.scheme["n_modes"])
    aware = o.get("loss_aware", True)
    template = _non_adaptive_template(cfg)
    if loss and aware:
        template = with_template_loss(template, loss)
    kw = _optimizer_kw(cfg)
    problem = OptimizationProblem(
        template, cfg.target().state(), (tuple(cfg.scheme["patterns"][0]),),
        mode=o.get("mode", "reward"), f_star=o.get("f_star"), x0=x0,
        polish=o.get("polish", 3), polish_budget=o.get("polish_budget"), **kw)
    res = optimize(problem)
    spec = template.build(res.params).with_loss(loss)
    params = {"names": template.names, "params": list(map(float, res.params)),
              "circuit": circuit_to_dict(spec)}
    return spec, None, params, res.trace, {"feasible": res.feasible, "loss_aware": bool(loss) and aware}


def _adaptive_params(layout, res) -> dict:
    return {"first": list(map(float, res.first_params)),
            "branches": [{"patterns": [list(p) for p in b], "params": list(map(float, x))}
                         for b, x in res.branch_params.items()]}


def _adaptive_start(layout: TwoStageLayout, sch: dict, prev: dict) -> np.ndarray:
    """Warm start for an adaptive run from a previous ``params.json``.

    A single-layer file (``names``/``params``) is embedded with an identity
    second layer; an adaptive file (``first``/``branches``) is reused by name.
    """
    prim, alts = _branches(sch)
    if sch.get("strategy", "staged") == "joint":
        firsts = list(dict.fromkeys(b[0] for b in [prim] + alts))
        template = layout.adaptive_template(firsts)
    else:
        template = layout.joint_template()
    if "first" in prev and "branches" in prev:
        bp = {tuple(tuple(p) for p in b["patterns"]): b["params"] for b in prev["branches"]}
        try:
            names, vals = layout.start_names(prev["first"], bp)
        except ValueError as exc:
            raise ConfigError(f"warm start: {exc}") from None
    elif "names" in prev and "params" in prev:
        names, vals = prev["names"], prev["params"]
    else:
        raise ConfigError("the warm-start file has neither names/params nor first/branches")
    if len(names) != len(vals):
        raise ConfigError("warm-start names and params differ in length")
    return embed_start(template, names, vals)


def _run_adaptive(cfg: ExperimentConfig, sch: dict, prev=None):
    o = cfg.optimizer()
    layout = _layout(cfg, sch)
    prim, alts = _branches(sch)
    loss = cfg.loss(layout.n_modes)
    if loss and o.get("loss_aware", True):
        layout = layout.with_loss(loss)
    x0 = None if prev is None else _adaptive_start(layout, sch, prev)
    kw = _optimizer_kw(cfg)
    return layout, optimize_adaptive(
        layout, cfg.target().state(), prim, alts, strategy=sch.get("strategy", "staged"),
        joint_mode=o.get("mode", "reward"), f_star=o.get("f_star"),
        stage_b_mode=o.get("stage_b_mode", "match-fidelity"),
        joint_restarts=o.get("joint_restarts", 1), evaluate_loss=loss or None, x0=x0, **kw)


def _optimize_adaptive(cfg: ExperimentConfig, out_dir: Path, prev=None):
    layout, res = _run_adaptive(cfg, cfg.scheme, prev)
    trace = res.stage_a.trace
    params = _adaptive_params(layout, res)
    params.update(circuit=circuit_to_dict(res.shared), policy=policy_to_dict(res.policy))
    return res.shared, res.policy, params, trace, {}


def _base_from_params(cfg: ExperimentConfig, sch: dict, params: dict):
    """Rebuild a base adaptive result from a params file written by ``optimize``."""
    import types

    if "first" not in params or "branches" not in params:
        raise ConfigError("the base parameter file lacks 'first'/'branches' vectors")
    layout = _layout(cfg, sch)
    bp = {tuple(tuple(p) for p in b["patterns"]): np.array(b["params"]) for b in params["branches"]}
    return layout, types.SimpleNamespace(first_params=np.array(params["first"]), branch_params=bp)


def _optimize_concatenated(cfg: ExperimentConfig, out_dir: Path, base_params=None):
    sch = cfg.scheme
    if "base" not in sch:
        raise ConfigError("scheme/base is required to optimize a concatenated scheme")
    base_sch = sch["base"]
    if base_params is not None:
        layout, base = _base_from_params(cfg, base_sch, base_params)
    else:
        layout, base = _run_adaptive(cfg, base_sch)
    o = cfg.optimizer()
    kw = _optimizer_kw(cfg)
    extra = [tuple(e) for e in sch.get("extra_first", [[1]])]
    res = optimize_concatenated(
        ConcatLayout(layout), base, cfg.target().state(), extra,
        mode=o.get("mode", "reward"), f_star=o.get("f_star"), **kw)
    shared = res.shared
    loss = cfg.loss(shared.n_modes)
    params = {"base": _adaptive_params(layout, base), "params": list(map(float, res.params)),
              "circuit": circuit_to_dict(shared.with_loss(loss)),
              "policy": policy_to_dict(res.policy)}
    return shared.with_loss(loss), res.policy, params, res.trace, {}


def cmd_optimize(cfg: ExperimentConfig, out_dir: Path = Path("out"), params_path=None) -> dict:
    """Optimize, then write params, trace, branch table and summary.

    ``params_path`` warm-starts from a previous ``params.json``: restart 0
    of a non-adaptive or adaptive run begins there (a single-layer file
    seeds an adaptive layout with an identity second layer).  For
    concatenated schemes it supplies the base scheme instead of optimizing
    it first.
    """
    kind = cfg.scheme["kind"]
    prev = _load_params(params_path)
    if kind in ("non-adaptive", "rerun"):
        x0 = None if prev is None else np.asarray(prev.get("params"), dtype=float)
        spec, policy, params, trace, extra = _optimize_non_adaptive(cfg, out_dir, x0)
    elif kind in ("adaptive", "symplectic"):
        spec, policy, params, trace, extra = _optimize_adaptive(cfg, out_dir, prev)
    else:
        spec, policy, params, trace, extra = _optimize_concatenated(cfg, out_dir, prev)
    report = _evaluate(cfg, spec, policy)
    out_dir.mkdir(parents=True, exist_ok=True)
    params.update(_header(cfg))
    _write_json(out_dir / "params.json", params)
    _write_csv(out_dir / "trace.csv", ["evaluation", "reward", "F", "P"], _trace_rows(trace))
    summary = _emit(cfg, report, out_dir, extra)
    _check_positive(report)
    return summary


def cmd_sweep_loss(cfg: ExperimentConfig, params_path=None, out_dir: Path = Path("out"),
                   etas=None) -> list:
    """Re-evaluate fixed parameters under uniform loss for every ``eta``."""
    sw = cfg.data.get("sweep", {})
    etas = list(etas if etas is not None else sw.get("eta", []))
    if not etas:
        raise ConfigError("sweep-loss needs sweep/eta in the config or --eta")
    positions = tuple(sw.get("positions", cfg.data.get("loss", {}).get(
        "positions", POSITIONS)))
    spec, policy = _fixed_circuit(cfg, _load_params(params_path))
    rows = []
    reports = []
    for eta in etas:
        lossy = spec.with_loss(uniform_loss(spec.n_modes, float(eta), positions) if eta < 1.0 else ())
        rep = _evaluate(cfg, lossy, policy)
        reports.append(rep)
        rows.extend(_branch_rows(rep, prefix=[_fmt(eta)]))
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "loss_sweep.csv", ["eta"] + BRANCH_HEADER, rows)
    summary = _header(cfg)
    summary["positions"] = list(positions)
    summary["sweep"] = [dict(eta=float(e), **r.summary()) for e, r in zip(etas, reports)]
    _write_json(out_dir / "loss_sweep.json", summary)
    if all(not any(b.probability > 0 for b in r.accepted) for r in reports):
        raise ZeroProbability("every accepted branch has zero probability at every eta")
    return rows


def _pct(x) -> str:
    return "-" if x is None else f"{100 * x:.3f}%"


def cmd_report(out_dir: Path) -> str:
    """Human-readable rendering (percentages) of ``summary.json``."""
    path = Path(out_dir) / "summary.json"
    try:
        s = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path} not found; run simulate or optimize first") from None
    lines = [f"{s['name']} ({s['kind']}), config {s['config_hash']}, version {s['version']}",
             f"{'pattern':<16}{'P':>12}{'F':>12}"]
    for b in s["branches"]:
        if not b["abort"]:
            lines.append(f"{b['pattern']:<16}{_pct(b['P']):>12}{_pct(b['F']):>12}")
    lines.append(f"total accepted P {_pct(s['total_probability'])}, wasted {_pct(s['wasted_probability'])}")
    if s.get("min_fidelity") is not None:
        lines.append(f"fidelity range {_pct(s['min_fidelity'])} .. {_pct(s['max_fidelity'])}")
    if "rerun_probability" in s:
        lines.append(f"{s['attempts']} attempts: P {_pct(s['rerun_probability'])}")
    return "\n".join(lines)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gbs-herald", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "optimize", "sweep-loss", "report"):
        p = sub.add_parser(name)
        p.add_argument("--out-dir", type=Path, default=Path("out"))
        if name == "report":
            continue
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--params", type=Path, default=None)
        if name == "sweep-loss":
            p.add_argument("--eta", type=float, nargs="+", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            print(cmd_report(args.out_dir))
            return 0
        cfg = load_config(args.config, args.seed)
        if args.command == "simulate":
            cmd_simulate(cfg, args.params, args.out_dir)
        elif args.command == "optimize":
            cmd_optimize(cfg, args.out_dir, args.params)
        else:
            cmd_sweep_loss(cfg, args.params, args.out_dir, args.eta)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError, CutoffTooSmall, ValueError, RuntimeError) as exc:
        if isinstance(exc, ZeroProbability):
            print(f"zero probability: {exc}", file=sys.stderr)
            return EXIT_ZERO
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
