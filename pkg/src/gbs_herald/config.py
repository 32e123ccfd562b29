"""Experiment configs and the JSON forms of circuits, policies and reports.

A config is one JSON document checked against :data:`CONFIG_SCHEMA` before
anything runs; unknown keys are rejected at every level.  Circuits and
policies round-trip through plain dicts so an optimizer's output can be fed
back to ``simulate``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .scheme import (
    POSITIONS,
    AdaptivePolicy,
    Beamsplitter,
    CircuitSpec,
    Displace,
    FockInput,
    Interferometer,
    Layer,
    LossSite,
    PolicyNode,
    Squeeze,
    SqueezedInput,
    SymplecticBlock,
    Truncation,
    uniform_loss,
)
from .targets import TargetSpec

SCHEME_KINDS = ("non-adaptive", "adaptive", "symplectic", "concatenated", "rerun")


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


# ---------------------------------------------------------------- schema

_num = {"type": "number"}
_int = {"type": "integer"}
_complex = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}
_modes = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_pattern = {"type": "array", "items": {"type": "integer", "minimum": 0}}
_branch = {"type": "array", "items": _pattern, "minItems": 2, "maxItems": 2}
_positions = {"type": "array", "items": {"enum": list(POSITIONS)}}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_layout = _obj({
    "first_modes": _modes, "first_measured": _modes, "second_new": _modes,
    "second_modes": _modes, "second_measured": _modes,
})

_scheme_props = {
    "kind": {"enum": list(SCHEME_KINDS)},
    "n_modes": {"type": "integer", "minimum": 1},
    "measured": _modes,
    "patterns": {"type": "array", "items": _pattern, "minItems": 1},
    "r_max": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
    "fock": {"type": "object", "patternProperties": {"^[0-9]+$": {"type": "integer", "minimum": 0}},
             "additionalProperties": False},
    "displace": {"type": "boolean"},
    "block": {"enum": ["passive", "symplectic"]},
    "layout": _layout,
    "primary": _branch,
    "alternatives": {"type": "array", "items": _branch},
    "strategy": {"enum": ["staged", "joint", "staged-joint"]},
    "attempts": {"type": "integer", "minimum": 1},
    "front_modes": _modes,
    "extra_first": {"type": "array", "items": _pattern},
}
_scheme = _obj({**_scheme_props, "base": _obj(dict(_scheme_props), ["kind"])}, ["kind"])

CONFIG_SCHEMA = _obj({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "target": _obj({
        "kind": {"enum": ["cat", "gkp-delta", "gkp-core"]},
        "alpha": _complex, "parity": {"enum": ["even", "odd"]}, "r": _num, "phi": _num,
        "delta_db": {"type": "number", "exclusiveMinimum": 0},
        "n_max": {"type": "integer", "minimum": 2},
    }, ["kind"]),
    "scheme": _scheme,
    "loss": _obj({
        "eta": {"type": "number", "minimum": 0, "maximum": 1},
        "positions": _positions,
        "sites": {"type": "array", "items": _obj({
            "mode": {"type": "integer", "minimum": 0},
            "eta": {"type": "number", "minimum": 0, "maximum": 1},
            "position": {"enum": list(POSITIONS)},
        }, ["mode", "eta", "position"])},
    }),
    "optimizer": _obj({
        "budget": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "method": {"enum": ["Nelder-Mead", "Powell"]},
        "mode": {"enum": ["reward", "match-fidelity"]},
        "f_star": _num,
        "polish": {"type": "integer", "minimum": 0},
        "polish_budget": {"type": "integer", "minimum": 1},
        "loss_aware": {"type": "boolean"},
        "stage_b_mode": {"enum": ["reward", "match-fidelity"]},
        "joint_restarts": {"type": "integer", "minimum": 1},
    }),
    "truncation": _obj({
        "carry": {"type": "integer", "minimum": 2}, "out": {"type": "integer", "minimum": 2},
        "detect": {"type": "integer", "minimum": 1}, "input": {"type": "integer", "minimum": 2},
        "tail_tol": _num, "exact_check": {"type": "boolean"},
    }),
    "seed": {"type": "integer", "minimum": 0},
    "wigner": _obj({
        "q": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
        "p": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
    }, ["q", "p"]),
    "sweep": _obj({
        "eta": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
        "positions": _positions,
    }, ["eta"]),
    "circuit": {"type": "object"},
    "policy": {"type": "object"},
}, ["target", "scheme"])


# ---------------------------------------------------------------- config object


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config plus its canonical hash."""

    data: dict
    path: Path | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    @property
    def name(self) -> str:
        if "name" in self.data:
            return self.data["name"]
        return self.path.stem if self.path is not None else "experiment"

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 0))

    @property
    def scheme(self) -> dict:
        return self.data["scheme"]

    def target(self) -> TargetSpec:
        return TargetSpec.from_dict(self.data["target"])

    def truncation(self) -> Truncation:
        return Truncation(**self.data.get("truncation", {}))

    def loss(self, n_modes: int) -> tuple[LossSite, ...]:
        return loss_from_dict(self.data.get("loss", {}), n_modes)

    def optimizer(self) -> dict:
        return dict(self.data.get("optimizer", {}))


def config_hash(data: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validate_config(data: dict) -> None:
    """Schema check plus the cross-field rules the schema cannot express.

    Raises:
        ConfigError: on any violation.
    """
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    sch = data["scheme"]
    kind = sch["kind"]
    if kind in ("non-adaptive", "rerun") and "circuit" not in data:
        for key in ("n_modes", "measured"):
            if key not in sch:
                raise ConfigError(f"scheme/{key} is required for {kind} schemes")
    if kind in ("non-adaptive", "rerun") and "patterns" not in sch:
        raise ConfigError(f"scheme/patterns is required for {kind} schemes")
    if kind in ("adaptive", "symplectic") and "primary" not in sch and "policy" not in data:
        raise ConfigError(f"scheme/primary is required for {kind} schemes")
    if kind == "concatenated" and "base" not in sch and "policy" not in data:
        raise ConfigError("scheme/base is required for concatenated schemes")
    opt = data.get("optimizer", {})
    if opt.get("mode") == "match-fidelity" and "f_star" not in opt:
        raise ConfigError("optimizer/f_star is required in match-fidelity mode")
    loss = data.get("loss", {})
    if "sites" in loss and ("eta" in loss or "positions" in loss):
        raise ConfigError("loss takes either sites or eta/positions, not both")
    t = data["target"]
    if t["kind"] == "cat" and "alpha" not in t:
        raise ConfigError("target/alpha is required for cat targets")
    w = data.get("wigner")
    if w is not None:
        for axis in ("q", "p"):
            lo, hi, n = w[axis]
            if not hi > lo or n < 2 or int(n) != n:
                raise ConfigError(f"wigner/{axis} must be [low, high, points>=2] with high > low")


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read, override the seed if given, and validate a config file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if seed is not None:
        data["seed"] = int(seed)
    validate_config(data)
    return ExperimentConfig(data, path)


def loss_from_dict(d: dict, n_modes: int) -> tuple[LossSite, ...]:
    if not d:
        return ()
    if "sites" in d:
        return tuple(LossSite(s["mode"], s["eta"], s["position"]) for s in d["sites"])
    return uniform_loss(n_modes, d.get("eta", 1.0), tuple(d.get("positions", POSITIONS)))


# ---------------------------------------------------------------- circuits


def _c(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _z(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def _mat(U) -> list:
    return [[_c(x) for x in row] for row in np.asarray(U)]


def _unmat(m) -> np.ndarray:
    return np.array([[_z(x) for x in row] for row in m], dtype=complex)


def _gate_to_dict(g) -> dict:
    if isinstance(g, Squeeze):
        return {"type": "squeeze", "mode": g.mode, "r": g.r, "phi": g.phi}
    if isinstance(g, Displace):
        return {"type": "displace", "mode": g.mode, "alpha": _c(g.alpha)}
    if isinstance(g, Beamsplitter):
        return {"type": "beamsplitter", "modes": list(g.modes), "theta": g.theta, "phi": g.phi}
    if isinstance(g, Interferometer):
        return {"type": "interferometer", "modes": list(g.modes), "U": _mat(g.U)}
    if isinstance(g, SymplecticBlock):
        return {"type": "symplectic-block", "modes": list(g.modes), "U_in": _mat(g.U_in),
                "r": list(g.r), "U_out": _mat(g.U_out)}
    raise TypeError(f"cannot serialize gate {g!r}")


def _gate_from_dict(d: dict):
    t = d["type"]
    if t == "squeeze":
        return Squeeze(int(d["mode"]), float(d["r"]), float(d.get("phi", 0.0)))
    if t == "displace":
        return Displace(int(d["mode"]), _z(d["alpha"]))
    if t == "beamsplitter":
        return Beamsplitter(tuple(d["modes"]), float(d["theta"]), float(d.get("phi", 0.0)))
    if t == "interferometer":
        return Interferometer(tuple(d["modes"]), _unmat(d["U"]))
    if t == "symplectic-block":
        return SymplecticBlock(tuple(d["modes"]), _unmat(d["U_in"]), tuple(d["r"]), _unmat(d["U_out"]))
    raise ConfigError(f"unknown gate type {t!r}")


def layer_to_dict(layer: Layer) -> dict:
    inputs = {}
    for m, inp in layer.inputs.items():
        if isinstance(inp, FockInput):
            inputs[str(m)] = {"type": "fock", "n": inp.n}
        else:
            inputs[str(m)] = {"type": "squeezed", "r": inp.r, "phi": inp.phi, "alpha": _c(inp.alpha)}
    return {"inputs": inputs, "gates": [_gate_to_dict(g) for g in layer.gates],
            "measured": list(layer.measured)}


def layer_from_dict(d: dict) -> Layer:
    inputs = {}
    for m, inp in d.get("inputs", {}).items():
        if inp.get("type", "squeezed") == "fock":
            inputs[int(m)] = FockInput(int(inp["n"]))
        else:
            inputs[int(m)] = SqueezedInput(float(inp.get("r", 0.0)), float(inp.get("phi", 0.0)),
                                           _z(inp.get("alpha", 0.0)))
    return Layer(inputs, tuple(_gate_from_dict(g) for g in d.get("gates", [])),
                 tuple(d.get("measured", [])))


def circuit_to_dict(spec: CircuitSpec) -> dict:
    return {
        "n_modes": spec.n_modes,
        "r_max": spec.r_max,
        "layers": [layer_to_dict(l) for l in spec.layers],
        "loss": [{"mode": s.mode, "eta": s.eta, "position": s.position} for s in spec.loss],
    }


def circuit_from_dict(d: dict, final: bool = True) -> CircuitSpec:
    """Inverse of :func:`circuit_to_dict`.

    ``final=False`` accepts the shared head of an adaptive tree, which may
    leave several modes unmeasured.
    """
    try:
        layers = tuple(layer_from_dict(l) for l in d["layers"])
        loss = tuple(LossSite(int(s["mode"]), float(s["eta"]), s["position"]) for s in d.get("loss", []))
        return CircuitSpec(int(d["n_modes"]), layers, d.get("r_max"), loss, final)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed circuit description: {exc}") from None


def _pkey(p) -> str:
    return ",".join(str(int(n)) for n in p)


def _unpkey(s: str) -> tuple[int, ...]:
    return tuple(int(n) for n in s.split(",")) if s else ()


def policy_to_dict(policy: AdaptivePolicy) -> dict:
    out = {}
    for pat, node in policy.branches.items():
        out[_pkey(pat)] = {
            "layer": layer_to_dict(node.layer),
            "accepted": [list(a) for a in node.accepted],
            "next": None if node.next is None else policy_to_dict(node.next),
        }
    return out


def policy_from_dict(d: dict) -> AdaptivePolicy:
    try:
        return AdaptivePolicy({
            _unpkey(k): PolicyNode(layer_from_dict(v["layer"]),
                                   tuple(tuple(a) for a in v.get("accepted", [])),
                                   None if v.get("next") is None else policy_from_dict(v["next"]))
            for k, v in d.items()
        })
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"malformed policy description: {exc}") from None
