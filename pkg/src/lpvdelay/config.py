"""JSON run configuration: schema, validation and object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .ddesim import DEFAULT_HORIZON, DEFAULT_STEP, Scenario, random_scenario, pulse_scenario
from .iqc import DEFAULT_C1, DEFAULT_DELTA, DEFAULT_EPSILON, make_multiplier, select_multipliers
from .model import DelayedLpvPlant, DelaySpec, example_plant
from .params import ParameterDomain, ParamMatrixFunction, monomial_basis, parse_basis
from .synthesis import SynthesisConfig

_MATRIX = {
    "oneOf": [
        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        {"type": "array", "items": {
            "type": "object",
            "required": ["exponents", "coeff"],
            "properties": {
                "exponents": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "coeff": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
            "additionalProperties": False,
        }, "minItems": 1},
    ]
}
_BASIS = {"type": "array", "minItems": 1,
          "items": {"oneOf": [{"type": "integer", "minimum": 0},
                              {"type": "array", "items": {"type": "integer", "minimum": 0}}]}}
_TRAJ = {"type": "object", "required": ["kind"],
         "properties": {"kind": {"enum": ["sinusoid", "pulse", "constant", "tabulated"]},
                        "params": {"type": "object"}},
         "additionalProperties": False}
_TRAJS = {"oneOf": [_TRAJ, {"type": "array", "items": _TRAJ, "minItems": 1}]}
_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "required": ["plant", "delay"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "plant": {
            "type": "object",
            "required": ["model"],
            "properties": {
                "model": {"enum": ["example", "explicit"]},
                "phi": {"type": "number"},
                "sigma": {"type": "number"},
                **{k: _MATRIX for k in ("A_p", "A_d", "B_p1", "B_p2", "C_p1", "C_d1", "D_p11", "D_p12")},
            },
            "additionalProperties": False,
        },
        "parameter": {
            "type": "object",
            "properties": {
                "box": {"type": "array", "items": _PAIR, "minItems": 1},
                "rate": {"oneOf": [{"type": "number", "minimum": 0},
                                   {"type": "array", "items": {"oneOf": [{"type": "number", "minimum": 0}, _PAIR]}}]},
            },
            "additionalProperties": False,
        },
        "delay": {
            "type": "object",
            "required": ["tau_bar", "r"],
            "properties": {"tau_bar": {"type": "number", "exclusiveMinimum": 0},
                           "r": {"type": "number", "minimum": 0}},
            "additionalProperties": False,
        },
        "multipliers": {
            "type": "object",
            "properties": {
                "use": {"oneOf": [{"const": "auto"},
                                  {"type": "array", "items": {"enum": ["pi1", "pi2"]}, "minItems": 1,
                                   "uniqueItems": True}]},
                "c1": {"type": "number", "exclusiveMinimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "synthesis": {
            "type": "object",
            "properties": {
                "lyapunov": {"enum": ["quadratic", "parameter_dependent"]},
                "r_basis": _BASIS,
                "x_basis": _BASIS,
                "grid": {"oneOf": [{"type": "integer", "minimum": 1},
                                   {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                "gamma_mode": {"enum": ["minimize", "fixed"]},
                "gamma": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "margin": {"type": "number", "minimum": 0},
                "condition": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "analysis": {
            "type": "object",
            "properties": {"form": {"enum": ["primal", "dual"]}, "p_basis": _BASIS, "x_basis": _BASIS},
            "additionalProperties": False,
        },
        "scenarios": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["rho", "tau", "d"],
                "properties": {"rho": _TRAJS, "tau": _TRAJ, "d": _TRAJS,
                               "T": {"type": "number", "exclusiveMinimum": 0},
                               "h": {"type": "number", "exclusiveMinimum": 0}},
                "additionalProperties": False,
            },
        },
        "simulation": {
            "type": "object",
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                           "h": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "table": {
            "type": "object",
            "properties": {
                "columns": {"type": "array", "items": _PAIR, "minItems": 1},
                "rates": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "grid": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
    },
}

TABLE_COLUMNS = ((0.0, 10.0), (0.5, 2.5), (0.9, 1.0), (1.5, 1.0), (1.7, 2.5))
TABLE_RATES = (0.1, 0.5, 1.0, 5.0, 10.0)


class ConfigError(ValueError):
    """Configuration rejected before any computation."""


@dataclass
class RunConfig:
    raw: dict
    plant: DelayedLpvPlant
    multipliers: list
    synthesis: SynthesisConfig
    analysis_form: str
    p_basis: tuple
    ax_basis: tuple
    output_dir: Path

    @property
    def name(self) -> str:
        return self.raw.get("name", "run")

    def scenario(self, name: str, seed: int | None = None) -> Scenario:
        sim = self.raw.get("simulation", {})
        T, h = sim.get("T", DEFAULT_HORIZON), sim.get("h", DEFAULT_STEP)
        custom = self.raw.get("scenarios", {})
        if name in custom:
            data = {"T": T, "h": h, **custom[name], "name": name}
            try:
                return Scenario.from_json(data)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"scenario {name!r}: {exc}") from exc
        if name == "pulse":
            return pulse_scenario(T=T, h=h)
        if name == "random":
            rng = np.random.default_rng(0 if seed is None else seed)
            return random_scenario(rng, self.plant, T=T, h=h, name=f"random-{seed or 0}")
        known = sorted(set(custom) | {"pulse", "random"})
        raise ConfigError(f"unknown scenario {name!r}; available: {known}")

    def plant_with(self, r: float, tau_bar: float, rate: float | None = None) -> DelayedLpvPlant:
        """Same plant matrices with another delay class and (optionally) symmetric rate bound."""
        p = self.plant
        domain = p.domain if rate is None else ParameterDomain.symmetric(p.domain.box, rate)
        return DelayedLpvPlant(p.A_p, p.A_d, p.B_p1, p.B_p2, p.C_p1, p.C_d1, p.D_p11, p.D_p12,
                               delay=DelaySpec(tau_bar, r), domain=domain)

    def multipliers_for(self, delay: DelaySpec) -> list:
        m = self.raw.get("multipliers", {})
        kw = {"c1": m.get("c1", DEFAULT_C1), "epsilon": m.get("epsilon", DEFAULT_EPSILON),
              "delta": m.get("delta", DEFAULT_DELTA)}
        use = m.get("use", "auto")
        if use == "auto":
            return select_multipliers(delay, **kw)
        return [make_multiplier(kind, delay, **kw) for kind in use]


def _rate_box(rate, dim: int):
    if isinstance(rate, (int, float)):
        rate = [rate] * dim
    if len(rate) != dim:
        raise ConfigError(f"rate bound has {len(rate)} entries, parameter dimension is {dim}")
    return tuple((-abs(v), abs(v)) if isinstance(v, (int, float)) else tuple(v) for v in rate)


def _basis(spec, dim: int):
    try:
        return tuple(parse_basis(spec, dim))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from exc
    pd = raw["plant"]
    par = raw.get("parameter", {})
    box = tuple(tuple(b) for b in par.get("box", [[-1.0, 1.0]]))
    dim = len(box)
    try:
        domain = ParameterDomain(box, _rate_box(par.get("rate", 0.0), dim))
        delay = DelaySpec(raw["delay"]["tau_bar"], raw["delay"]["r"])
        if pd["model"] == "example":
            if dim != 1:
                raise ConfigError("the example plant has one scheduling parameter")
            ex = example_plant(phi=pd.get("phi", 0.2), sigma=pd.get("sigma", 0.1),
                               tau_bar=delay.tau_bar, r=delay.r)
            plant = DelayedLpvPlant(ex.A_p, ex.A_d, ex.B_p1, ex.B_p2, ex.C_p1, ex.C_d1, ex.D_p11,
                                    ex.D_p12, delay=delay, domain=domain)
        else:
            names = ("A_p", "A_d", "B_p1", "B_p2", "C_p1", "C_d1", "D_p11", "D_p12")
            missing = [n for n in names if n not in pd]
            if missing:
                raise ConfigError(f"explicit plant is missing {missing}")
            mats = {n: ParamMatrixFunction.from_json(pd[n], dim) for n in names}
            plant = DelayedLpvPlant(**mats, delay=delay, domain=domain)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    run = RunConfig(raw=raw, plant=plant, multipliers=[], synthesis=None, analysis_form="dual",
                    p_basis=(), ax_basis=(), output_dir=Path(raw.get("output_dir", "out")))
    if base_dir is not None and not run.output_dir.is_absolute():
        run.output_dir = base_dir / run.output_dir
    try:
        run.multipliers = run.multipliers_for(delay)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sy = raw.get("synthesis", {})
    lyap = sy.get("lyapunov", "quadratic")
    if "r_basis" in sy or "x_basis" in sy:
        r_basis = _basis(sy.get("r_basis", [[0] * dim]), dim)
        x_basis = _basis(sy.get("x_basis", [[0] * dim]), dim)
    elif lyap == "quadratic":
        r_basis = x_basis = tuple(monomial_basis(dim, 0))
    else:
        r_basis, x_basis = tuple(monomial_basis(dim, 2)), tuple(monomial_basis(dim, 1))
    grid = sy.get("grid", 11)
    grid = [grid] * dim if isinstance(grid, int) else grid
    if len(grid) != dim:
        raise ConfigError(f"grid has {len(grid)} counts, parameter dimension is {dim}")
    try:
        run.synthesis = SynthesisConfig(r_basis=r_basis, x_basis=x_basis, grid_counts=tuple(grid),
                                        gamma_mode=sy.get("gamma_mode", "minimize"),
                                        gamma=sy.get("gamma"), margin=sy.get("margin", 0.01),
                                        condition=sy.get("condition", True))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    an = raw.get("analysis", {})
    run.analysis_form = an.get("form", "dual")
    run.p_basis = _basis(an["p_basis"], dim) if "p_basis" in an else r_basis
    run.ax_basis = _basis(an["x_basis"], dim) if "x_basis" in an else x_basis
    for name in raw.get("scenarios", {}):
        run.scenario(name)
    return run


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return build_config(raw)


def example_config_path() -> Path:
    return Path(str(resources.files("lpvdelay") / "data" / "example_plant.json"))
